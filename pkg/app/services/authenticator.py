"""Two-stage authentication: initialization -> Stage I (TCS) -> Stage II (BCSR).

Final decision is strict: accepted iff both stages accept. Stage II never
runs after a Stage I rejection. Only scores, thresholds and per-stage
outcomes are kept; raw signals are dropped once scored.
"""
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from app.errors import AirBoneError, EnrollmentError, NoVoicedContentError, StageError
from app.schemas.pipeline import AuthMode, PipelineConfig
from app.schemas.results import STAGE2_SKIPPED, DecisionRecord, Stage1Outcome, Stage2Outcome
from app.services.audio_io import AccelRecord, read_accel, read_wav
from app.services.bcsr.checkpoint import load_model
from app.services.bcsr.features import extract_feature
from app.services.bcsr.recognition import embed, identify, verify
from app.services.bcsr.spoof_detector import MachineDetector
from app.services.bcsr.templates import TemplateStore
from app.services.bcsr.training import TrainedModel
from app.services.pipeline_init import initialize
from app.services.signal_core import Waveform
from app.services.tcs import REJECT_SCORE, tcs_score

logger = logging.getLogger(__name__)


@dataclass
class AuthResources:
    """Stage II state loaded once and shared across attempts."""

    model: Optional[TrainedModel] = None
    store: Optional[TemplateStore] = None
    detector: Optional[MachineDetector] = None


def load_resources(cfg: PipelineConfig, *, need_stage2: bool = True) -> AuthResources:
    """Model, template store and (optional) machine detector from cfg.paths."""
    resources = AuthResources(store=TemplateStore(cfg.paths.template_store))
    if not need_stage2:
        return resources
    resources.model = load_model(cfg.paths.model_dir)
    detector_path = Path(cfg.paths.detector_path)
    if cfg.bcsr.machine_detector:
        if detector_path.exists():
            resources.detector = MachineDetector.load(detector_path)
        else:
            logger.warning(f"Machine detector enabled but {detector_path} does not exist; skipping it")
    return resources


def verification_threshold(cfg: PipelineConfig, model: TrainedModel) -> float:
    threshold = cfg.bcsr.verify_threshold
    if threshold is None:
        threshold = model.verify_threshold
    if threshold is None:
        raise StageError("stage2", "No verification threshold configured or stored with the model")
    return threshold


def run_stage2(
    bc: Waveform,
    user_id: Optional[str],
    cfg: PipelineConfig,
    resources: AuthResources,
    mode: AuthMode,
) -> Stage2Outcome:
    model = resources.model
    if model is None:
        raise StageError("stage2", "No trained model loaded")
    feature_cfg = model.feature_cfg
    if bc.duration_s < feature_cfg.segment_seconds:
        raise StageError(
            "stage2", f"BC signal of {bc.duration_s:.2f} s is shorter than {feature_cfg.segment_seconds} s"
        )
    feature = extract_feature(bc, cfg=feature_cfg)

    if mode == AuthMode.VERIFICATION:
        template = resources.store.get(user_id)
        outcome = verify(feature, template, model, verification_threshold(cfg, model))
    else:
        result = identify(feature, model)
        outcome = Stage2Outcome(
            mode=mode,
            user_id=user_id,
            predicted_id=result.user_id,
            score=result.probability,
            accepted=user_id is None or result.user_id == user_id,
        )

    if resources.detector is not None:
        machine_score = resources.detector.score(embed(feature, model, resources.detector.layer_tag))
        flagged = machine_score > 0
        outcome = outcome.model_copy(update={
            "machine_score": machine_score,
            "machine_flagged": flagged,
            "accepted": outcome.accepted and not flagged,
        })
    return outcome


def authenticate_signals(
    ac_raw: Waveform,
    bc_raw: Union[AccelRecord, Waveform],
    user_id: Optional[str],
    cfg: PipelineConfig,
    resources: Optional[AuthResources] = None,
    *,
    mode: Optional[AuthMode] = None,
    pair_id: Optional[str] = None,
) -> DecisionRecord:
    """Authenticate one raw capture.

    Raises:
        EnrollmentError: verification mode with an unenrolled user
        StageError: a stage failed; the stage name is on the error
    """
    mode = AuthMode(mode or cfg.mode)
    resources = resources or AuthResources()
    if mode == AuthMode.VERIFICATION:
        if user_id is None:
            raise EnrollmentError("Verification needs a user id")
        if resources.store is None:
            raise EnrollmentError("Verification needs a template store")
        resources.store.get(user_id)

    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    pair = initialize(ac_raw, bc_raw, cfg.init, pair_id=pair_id, speaker_id=user_id)
    timings["initialization"] = (time.perf_counter() - t0) * 1000

    t0 = time.perf_counter()
    try:
        result = tcs_score(pair, cfg.tcs)
        stage1 = Stage1Outcome(score=result.score, threshold=result.threshold, accepted=result.accepted)
    except NoVoicedContentError as e:
        logger.warning(f"Stage I: {e}; rejecting")
        stage1 = Stage1Outcome(score=REJECT_SCORE, threshold=cfg.tcs.threshold, accepted=False)
    except AirBoneError as e:
        raise StageError("stage1", str(e)) from e
    timings["stage1"] = (time.perf_counter() - t0) * 1000

    stage2: Union[Stage2Outcome, str] = STAGE2_SKIPPED
    if stage1.accepted:
        t0 = time.perf_counter()
        try:
            stage2 = run_stage2(pair.bc, user_id, cfg, resources, mode)
        except StageError:
            raise
        except AirBoneError as e:
            raise StageError("stage2", str(e)) from e
        timings["stage2"] = (time.perf_counter() - t0) * 1000

    final = stage1.accepted and isinstance(stage2, Stage2Outcome) and stage2.accepted
    record = DecisionRecord(
        pair_id=pair_id,
        user_id=user_id,
        stage1=stage1,
        stage2=stage2,
        final=final,
        timings_ms=timings,
    )
    logger.info(
        f"Authentication {pair_id or ''} user={user_id}: S={stage1.score:.3f} "
        f"stage1={'accept' if stage1.accepted else 'reject'} final={'accept' if final else 'deny'}"
    )
    return record


def authenticate(
    ac_file,
    bc_file,
    user_id: Optional[str],
    cfg: PipelineConfig,
    resources: Optional[AuthResources] = None,
    *,
    mode: Optional[AuthMode] = None,
) -> DecisionRecord:
    """Read an AC WAV and a BC accelerometer file, then authenticate them."""
    mode = AuthMode(mode or cfg.mode)
    if resources is None:
        resources = load_resources(cfg)
    ac_raw = read_wav(ac_file)
    bc_raw = read_accel(bc_file)
    return authenticate_signals(
        ac_raw, bc_raw, user_id, cfg, resources, mode=mode, pair_id=Path(ac_file).stem
    )
