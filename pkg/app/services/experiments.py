"""Evaluation protocols over a generated corpus.

Every protocol writes report.json, scores.csv (one row per scored pair)
and gnuplot-ready .dat files (score histograms, ROC curves) to its output
directory, and returns the same ExperimentReport that report.json holds.

Corpus conventions shared with training:
- Stage II uses genuine entries at least one feature segment long.
- The last `evaluation.new_users` speakers (sorted ids) never enter
  training; verification enrolls and probes them as unseen users.
- Within the training speakers, split_entries() holds out a seeded
  per-speaker test fraction for identification.
"""
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from app.errors import AirBoneError, ProtocolError, StageError
from app.schemas.pipeline import AuthMode, InitConfig, LayerTag, PipelineConfig, TcsGrid
from app.schemas.results import EerSummary, ExperimentReport, GridSearchResult
from app.schemas.signal import FilterSpec
from app.schemas.synth import AttackClass, CorpusEntry, ground_truth_for
from app.services import audio_io
from app.services.authenticator import AuthResources, authenticate_signals
from app.services.bcsr.features import BcFeature, extract_feature, split_segments
from app.services.bcsr.recognition import cosine, embed_many, enroll, identify
from app.services.bcsr.spoof_detector import MachineDetector, detect_machine
from app.services.bcsr.templates import MemoryTemplateStore
from app.services.bcsr.training import TrainedModel
from app.services.evalkit import (
    ScoreSet,
    compute_eer,
    far_frr_at,
    roc_curve,
    write_histogram_dat,
    write_roc_dat,
    write_scores_csv,
)
from app.services.pipeline_init import initialize, preprocess_ac, preprocess_bc, select_axis
from app.services.signal_core import Waveform, apply_filter
from app.services.synthgen import AirBonePair, Corpus, motion_noise, scale_to_snr
from app.services.tcs import score_or_reject, tcs_grid_search

logger = logging.getLogger(__name__)

GENUINE = "genuine"
FALSE_TRIGGER = "false_trigger"
ACOUSTIC_ATTACKS = (AttackClass.ACOUSTIC_IMPERSONATION, AttackClass.ACOUSTIC_REPLAY)
MACHINE = ground_truth_for(AttackClass.CROSSDOMAIN_MACHINE)


@dataclass
class ExperimentContext:
    corpus: Corpus
    cfg: PipelineConfig
    out_dir: Path
    model: Optional[TrainedModel] = None
    detector: Optional[MachineDetector] = None

    def require_model(self, protocol: str) -> TrainedModel:
        if self.model is None:
            raise ProtocolError(f"Protocol '{protocol}' needs a trained model")
        return self.model


# ============================================================================
# Corpus helpers
# ============================================================================


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.+-]+", "_", label).strip("_") or "all"


def corpus_speakers(corpus: Corpus) -> list[str]:
    return sorted({e.speaker_id for e in corpus.entries})


def new_user_ids(speaker_ids: Sequence[str], count: int) -> list[str]:
    """The last `count` speakers, if at least two others remain for training."""
    speaker_ids = sorted(speaker_ids)
    if len(speaker_ids) < count + 2:
        return []
    return speaker_ids[-count:]


def split_entries(
    entries: Sequence[CorpusEntry], test_fraction: float, seed: int
) -> tuple[list[CorpusEntry], list[CorpusEntry]]:
    """(train, test), a seeded per-speaker split; every speaker keeps one train entry."""
    by_speaker: dict[str, list[CorpusEntry]] = defaultdict(list)
    for e in entries:
        by_speaker[e.speaker_id].append(e)
    train, test = [], []
    for i, speaker in enumerate(sorted(by_speaker)):
        rows = sorted(by_speaker[speaker], key=lambda e: e.pair_id)
        order = np.random.default_rng([seed, i]).permutation(len(rows))
        k = min(int(math.ceil(test_fraction * len(rows))), len(rows) - 1)
        test.extend(rows[j] for j in order[:k])
        train.extend(rows[j] for j in order[k:])
    return train, test


def stage2_entries(corpus: Corpus, cfg: PipelineConfig) -> list[CorpusEntry]:
    """Genuine entries long enough for one feature segment."""
    need = cfg.bcsr.features.segment_seconds
    return [e for e in corpus.by_ground_truth(GENUINE) if e.duration_s >= need]


def training_entries(corpus: Corpus, cfg: PipelineConfig) -> list[CorpusEntry]:
    """Genuine entries used to train the network (new users and test split excluded)."""
    held_users = set(new_user_ids(corpus_speakers(corpus), cfg.evaluation.new_users))
    known = [e for e in stage2_entries(corpus, cfg) if e.speaker_id not in held_users]
    train, _ = split_entries(known, cfg.evaluation.test_fraction, cfg.evaluation.seed)
    return train


def entry_bc(corpus: Corpus, entry: CorpusEntry, init_cfg: InitConfig) -> Waveform:
    """Preprocessed BC speech of a corpus entry."""
    raw = audio_io.read_accel(corpus.root / entry.bc_path)
    return preprocess_bc(raw, init_cfg)


def entry_feature(corpus: Corpus, entry: CorpusEntry, cfg: PipelineConfig) -> BcFeature:
    return extract_feature(
        entry_bc(corpus, entry, cfg.init),
        condition=entry.condition.value,
        cfg=cfg.bcsr.features,
        speaker_label=entry.speaker_id,
    )


def corpus_features(corpus: Corpus, entries: Sequence[CorpusEntry], cfg: PipelineConfig) -> list[BcFeature]:
    features = [entry_feature(corpus, e, cfg) for e in entries]
    logger.info(f"Extracted {len(features)} BC features")
    return features


def pretraining_features(corpus: Corpus, cfg: PipelineConfig) -> list[BcFeature]:
    """CQT features of the clean AC side of genuine entries, for pretraining."""
    features = []
    for entry in stage2_entries(corpus, cfg):
        ac = preprocess_ac(audio_io.read_wav(corpus.root / entry.ac_path), cfg.init)
        features.append(extract_feature(ac, cfg=cfg.bcsr.features, speaker_label=entry.speaker_id))
    logger.info(f"Extracted {len(features)} AC pretraining features")
    return features


# ============================================================================
# Noise mixing for the SNR grid
# ============================================================================


def mix_ac_noise(ac: Waveform, snr_db: Optional[float], rng: np.random.Generator) -> Waveform:
    """White noise at snr_db relative to the recording's power."""
    if snr_db is None:
        return ac
    return ac.with_samples(ac.samples + scale_to_snr(ac.samples, rng.normal(size=len(ac)), snr_db))


def mix_bc_noise(
    raw: audio_io.AccelRecord,
    snr_db: Optional[float],
    entry: CorpusEntry,
    rng: np.random.Generator,
    init_cfg: InitConfig,
) -> audio_io.AccelRecord:
    """Body-motion noise on the selected axis at snr_db relative to its in-band content."""
    if snr_db is None:
        return raw
    axis = select_axis(raw, init_cfg)
    row = raw.axis_names.index(axis)
    in_band = apply_filter(raw.axis(axis), FilterSpec.highpass(init_cfg.highpass_cutoff)).samples
    noise = motion_noise(raw.n_samples, raw.sample_rate, entry.condition, rng)
    data = np.array(raw.data, copy=True)
    data[row] = data[row] + scale_to_snr(in_band, noise, snr_db)
    return audio_io.AccelRecord(data, raw.sample_rate, raw.axis_names)


def initialize_entry(
    corpus: Corpus,
    entry: CorpusEntry,
    cfg: PipelineConfig,
    ac_snr_db: Optional[float] = None,
    bc_snr_db: Optional[float] = None,
    noise_key: int = 0,
) -> AirBonePair:
    ac, bc = corpus.load_pair(entry)
    if ac_snr_db is not None or bc_snr_db is not None:
        rng = np.random.default_rng([entry.seed, 1000 + noise_key])
        ac = mix_ac_noise(ac, ac_snr_db, rng)
        bc = mix_bc_noise(bc, bc_snr_db, entry, rng, cfg.init)
    return initialize(
        ac, bc, cfg.init, pair_id=entry.pair_id, speaker_id=entry.speaker_id, scene=entry.scene
    )


# ============================================================================
# Report plumbing
# ============================================================================


class _Recorder:
    def __init__(self, ctx: ExperimentContext, protocol: str):
        self.ctx = ctx
        self.report = ExperimentReport(protocol=protocol)
        ctx.out_dir.mkdir(parents=True, exist_ok=True)

    def eer(self, label: str, scores: ScoreSet, write_files: bool = True) -> Optional[EerSummary]:
        if scores.genuine_scores.size == 0 or scores.impostor_scores.size == 0:
            logger.warning(f"Skipping EER for '{label}': one class is empty")
            return None
        eer, threshold = compute_eer(scores)
        summary = EerSummary(
            label=label,
            eer=eer,
            threshold=threshold,
            n_genuine=int(scores.genuine_scores.size),
            n_impostor=int(scores.impostor_scores.size),
        )
        self.report.eers.append(summary)
        if write_files:
            ev = self.ctx.cfg.evaluation
            slug = _slug(label)
            hist = write_histogram_dat(self.ctx.out_dir / f"hist_{slug}.dat", scores, ev.histogram_bins)
            points = roc_curve(scores, ev.roc_points)
            roc = write_roc_dat(self.ctx.out_dir / f"roc_{slug}.dat", points, label)
            self.report.files[f"hist_{slug}"] = hist.name
            self.report.files[f"roc_{slug}"] = roc.name
        logger.info(f"[{self.report.protocol}] {label}: EER {eer:.4f} at {threshold:.4f}")
        return summary

    def finish(self, rows: list[dict]) -> ExperimentReport:
        self.report.files["scores"] = write_scores_csv(self.ctx.out_dir / "scores.csv", rows).name
        self.report.files["report"] = "report.json"
        report_path = self.ctx.out_dir / "report.json"
        report_path.write_text(self.report.model_dump_json(indent=2))
        return self.report


def _stage1_scores(
    ctx: ExperimentContext,
    entries: Sequence[CorpusEntry],
    rec: _Recorder,
    ac_snr_db: Optional[float] = None,
    bc_snr_db: Optional[float] = None,
    noise_key: int = 0,
) -> dict[str, float]:
    scores = {}
    for entry in entries:
        try:
            pair = initialize_entry(ctx.corpus, entry, ctx.cfg, ac_snr_db, bc_snr_db, noise_key)
        except StageError as e:
            logger.warning(f"Skipping {entry.pair_id}: {e}")
            rec.report.skipped.append(entry.pair_id)
            continue
        scores[entry.pair_id] = score_or_reject(pair, ctx.cfg.tcs)
    return scores


def _score_set(
    entries: Sequence[CorpusEntry], scores: dict[str, float], impostor: Callable, label: str
) -> ScoreSet:
    genuine = [scores[e.pair_id] for e in entries if e.pair_id in scores and e.ground_truth == GENUINE]
    impostors = [scores[e.pair_id] for e in entries if e.pair_id in scores and impostor(e)]
    return ScoreSet(genuine, impostors, label=label)


# ============================================================================
# Stage I protocols
# ============================================================================


def stage1_normal_vs_false_trigger(ctx: ExperimentContext) -> ExperimentReport:
    rec = _Recorder(ctx, "stage1_normal_vs_false_trigger")
    entries = ctx.corpus.by_ground_truth(GENUINE, FALSE_TRIGGER)
    scores = _stage1_scores(ctx, entries, rec)
    is_trigger = lambda e: e.ground_truth == FALSE_TRIGGER  # noqa: E731

    overall = _score_set(entries, scores, is_trigger, "all")
    rec.eer("all", overall)
    by_duration = {}
    for duration in sorted({e.duration_s for e in entries}):
        subset = [e for e in entries if e.duration_s == duration]
        cell = _score_set(subset, scores, is_trigger, f"{duration:g}s")
        summary = rec.eer(f"duration_{duration:g}s", cell)
        if summary:
            by_duration[f"{duration:g}"] = summary.eer
    threshold = ctx.cfg.evaluation.stage1_threshold
    far = frr = None
    if overall.genuine_scores.size and overall.impostor_scores.size:
        far, frr = far_frr_at(overall, threshold)
    rec.report.metrics = {"eer_by_duration": by_duration, "threshold": threshold, "far": far, "frr": frr}
    rec.report.n_pairs = len(scores)
    rows = [
        {"pair_id": e.pair_id, "speaker_id": e.speaker_id, "ground_truth": e.ground_truth,
         "duration_s": e.duration_s, "condition": e.condition.value, "score": scores[e.pair_id]}
        for e in entries if e.pair_id in scores
    ]
    return rec.finish(rows)


def _snr_label(value: Optional[float]) -> str:
    return "clean" if value is None else f"{value:g}dB"


def stage1_noise_grid(ctx: ExperimentContext) -> ExperimentReport:
    """EER of genuine vs false-trigger pairs over the AC x BC noise grid."""
    rec = _Recorder(ctx, "stage1_noise_grid")
    ev = ctx.cfg.evaluation
    entries = ctx.corpus.by_ground_truth(GENUINE, FALSE_TRIGGER)
    is_trigger = lambda e: e.ground_truth == FALSE_TRIGGER  # noqa: E731
    grid, rows = [], []
    for i, ac_snr in enumerate(ev.ac_snr_grid):
        for j, bc_snr in enumerate(ev.bc_snr_grid):
            key = i * len(ev.bc_snr_grid) + j
            label = f"ac_{_snr_label(ac_snr)}_bc_{_snr_label(bc_snr)}"
            scores = _stage1_scores(ctx, entries, rec, ac_snr, bc_snr, noise_key=key)
            summary = rec.eer(label, _score_set(entries, scores, is_trigger, label))
            grid.append({
                "ac_snr_db": ac_snr,
                "bc_snr_db": bc_snr,
                "eer": summary.eer if summary else None,
            })
            rows.extend(
                {"pair_id": e.pair_id, "ground_truth": e.ground_truth, "ac_snr_db": _snr_label(ac_snr),
                 "bc_snr_db": _snr_label(bc_snr), "score": scores[e.pair_id]}
                for e in entries if e.pair_id in scores
            )
    rec.report.metrics = {"grid": grid}
    rec.report.n_pairs = len(entries)
    rec.report.skipped = sorted(set(rec.report.skipped))
    return rec.finish(rows)


def stage1_acoustic_attacks(ctx: ExperimentContext) -> ExperimentReport:
    """Genuine vs acoustic-only attacks, plus Stage I pass rates of every class."""
    rec = _Recorder(ctx, "stage1_acoustic_attacks")
    entries = ctx.corpus.entries
    scores = _stage1_scores(ctx, entries, rec)
    attack_labels = [ground_truth_for(a) for a in ACOUSTIC_ATTACKS]
    eers = {}
    for label in attack_labels:
        is_attack = lambda e, lab=label: e.ground_truth == lab  # noqa: E731
        summary = rec.eer(label, _score_set(entries, scores, is_attack, label))
        if summary:
            eers[label] = summary.eer
    any_attack = lambda e: e.ground_truth in attack_labels  # noqa: E731
    combined = rec.eer("acoustic_all", _score_set(entries, scores, any_attack, "acoustic_all"))
    if combined:
        eers["acoustic_all"] = combined.eer

    threshold = ctx.cfg.evaluation.stage1_threshold
    pass_rates = {}
    for gt in sorted({e.ground_truth for e in entries}):
        values = [scores[e.pair_id] for e in entries if e.ground_truth == gt and e.pair_id in scores]
        if values:
            pass_rates[gt] = float(np.mean(np.asarray(values) > threshold))
    rec.report.metrics = {"eer": eers, "threshold": threshold, "stage1_pass_rate": pass_rates}
    rec.report.n_pairs = len(scores)
    rows = [
        {"pair_id": e.pair_id, "ground_truth": e.ground_truth, "attacker_id": e.attacker_id or "",
         "score": scores[e.pair_id]}
        for e in entries if e.pair_id in scores
    ]
    return rec.finish(rows)


def grid_search_corpus(
    corpus: Corpus, grid: TcsGrid, cfg: PipelineConfig, max_pairs: Optional[int] = None
) -> GridSearchResult:
    """TCS grid search on a corpus: genuine vs false-trigger and acoustic attacks."""
    impostor_labels = {FALSE_TRIGGER, *(ground_truth_for(a) for a in ACOUSTIC_ATTACKS)}
    entries = [e for e in corpus.entries if e.ground_truth == GENUINE or e.ground_truth in impostor_labels]
    if max_pairs is not None:
        entries = entries[:max_pairs]
    labeled = []
    for entry in entries:
        try:
            labeled.append((initialize_entry(corpus, entry, cfg), entry.ground_truth == GENUINE))
        except StageError as e:
            logger.warning(f"Skipping {entry.pair_id}: {e}")
    return tcs_grid_search(labeled, grid, cfg.tcs)


# ============================================================================
# Stage II protocols
# ============================================================================


def stage2_identification(ctx: ExperimentContext) -> ExperimentReport:
    rec = _Recorder(ctx, "stage2_identification")
    model = ctx.require_model(rec.report.protocol)
    known = [e for e in stage2_entries(ctx.corpus, ctx.cfg) if e.speaker_id in set(model.speaker_ids)]
    _, test = split_entries(known, ctx.cfg.evaluation.test_fraction, ctx.cfg.evaluation.seed)
    if not test:
        raise ProtocolError("No held-out utterances of the model's speakers in this corpus")
    rows, correct = [], defaultdict(list)
    for entry in test:
        outcome = identify(entry_feature(ctx.corpus, entry, ctx.cfg), model)
        hit = outcome.user_id == entry.speaker_id
        correct[entry.speaker_id].append(hit)
        rows.append({"pair_id": entry.pair_id, "true_id": entry.speaker_id, "predicted_id": outcome.user_id,
                     "probability": outcome.probability, "correct": int(hit)})
    accuracy = float(np.mean([r["correct"] for r in rows]))
    rec.report.metrics = {
        "accuracy": accuracy,
        "per_speaker": {s: float(np.mean(v)) for s, v in sorted(correct.items())},
        "n_speakers": len(correct),
    }
    rec.report.n_pairs = len(rows)
    logger.info(f"Identification accuracy {accuracy:.4f} over {len(rows)} utterances")
    return rec.finish(rows)


def stage2_verification(ctx: ExperimentContext, repeats: int = 5) -> ExperimentReport:
    """Unseen-user verification: EER per enrollment length and layer.

    Each repeat reshuffles which utterances enroll and which probe. Every
    enrollment utterance contributes whole feature segments in order, the
    same segments enroll() would take from those clips.
    """
    rec = _Recorder(ctx, "stage2_verification")
    model = ctx.require_model(rec.report.protocol)
    ev = ctx.cfg.evaluation
    users = [s for s in corpus_speakers(ctx.corpus) if s not in set(model.speaker_ids)]
    if len(users) < 2:
        raise ProtocolError(
            f"Verification needs at least 2 speakers unseen in training, found {len(users)}"
        )
    seg_s = model.feature_cfg.segment_seconds
    by_user = {u: sorted((e for e in stage2_entries(ctx.corpus, ctx.cfg) if e.speaker_id == u),
                         key=lambda e: e.pair_id) for u in users}
    max_segments = int(max(ev.enrollment_seconds) // seg_s)

    segment_features: dict[str, list[BcFeature]] = {}
    for entry in (e for entries in by_user.values() for e in entries):
        bc = entry_bc(ctx.corpus, entry, ctx.cfg.init)
        segment_features[entry.pair_id] = [
            extract_feature(s, cfg=model.feature_cfg) for s in split_segments([bc], model.feature_cfg)
        ]
    embeddings = {
        tag: {
            pid: [e.vector for e in embed_many(feats, model, tag)]
            for pid, feats in segment_features.items()
        }
        for tag in ev.layer_tags
    }

    results: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    rows = []
    for r in range(repeats):
        enroll_sets, probe_sets = {}, {}
        for u_idx, user in enumerate(users):
            entries = by_user[user]
            order = np.random.default_rng([ev.seed, r, u_idx]).permutation(len(entries))
            shuffled = [entries[i] for i in order]
            taken, pool = 0, []
            while shuffled and taken < max_segments:
                entry = shuffled.pop(0)
                pool.append(entry)
                taken += len(segment_features[entry.pair_id])
            if not shuffled:
                raise ProtocolError(f"User {user} has no utterances left to probe after enrollment")
            enroll_sets[user], probe_sets[user] = pool, shuffled
        for tag in ev.layer_tags:
            emb = embeddings[tag]
            for seconds in ev.enrollment_seconds:
                n_seg = int(seconds // seg_s)
                templates = {
                    u: np.mean([v for e in enroll_sets[u] for v in emb[e.pair_id]][:n_seg], axis=0)
                    for u in users
                }
                genuine, impostor = [], []
                for claimed in users:
                    for owner in users:
                        for entry in probe_sets[owner]:
                            score = cosine(emb[entry.pair_id][0], templates[claimed])
                            (genuine if owner == claimed else impostor).append(score)
                            if r == 0:
                                rows.append({"repeat": r, "layer_tag": LayerTag(tag).value,
                                             "enrollment_seconds": seconds, "claimed_id": claimed,
                                             "pair_id": entry.pair_id, "genuine": int(owner == claimed),
                                             "score": score})
                label = f"{LayerTag(tag).value}_{seconds:g}s"
                scores = ScoreSet(genuine, impostor, label=label)
                eer = rec.eer(label, scores).eer if r == 0 else compute_eer(scores)[0]
                results[LayerTag(tag).value][f"{seconds:g}"].append(eer)

    rec.report.metrics = {
        "users": users,
        "repeats": repeats,
        "mean_eer": {
            tag: {s: float(np.mean(v)) for s, v in cells.items()} for tag, cells in results.items()
        },
        "std_eer": {tag: {s: float(np.std(v)) for s, v in cells.items()} for tag, cells in results.items()},
    }
    rec.report.n_pairs = sum(len(v) for v in by_user.values())
    return rec.finish(rows)


def machine_detection(ctx: ExperimentContext) -> ExperimentReport:
    """Human vs machine-driven BC on embeddings; saves the LDA detector."""
    rec = _Recorder(ctx, "machine_detection")
    model = ctx.require_model(rec.report.protocol)
    tag = ctx.cfg.bcsr.layer_tag
    need = model.feature_cfg.segment_seconds
    human = stage2_entries(ctx.corpus, ctx.cfg)
    machine = [e for e in ctx.corpus.by_ground_truth(MACHINE) if e.duration_s >= need]
    if not human or not machine:
        raise ProtocolError(f"Need human and machine BC entries, got {len(human)} and {len(machine)}")
    entries = human + machine
    features = corpus_features(ctx.corpus, entries, ctx.cfg)
    vectors = np.stack([e.vector for e in embed_many(features, model, tag)])
    labels = [e.ground_truth == MACHINE for e in entries]
    devices = [e.scene.device_profile for e in entries]
    result = detect_machine(
        vectors, labels, devices, layer_tag=tag, test_fraction=ctx.cfg.evaluation.test_fraction,
        seed=ctx.cfg.evaluation.seed,
    )
    detector_path = result.detector.save(ctx.out_dir / "machine_detector.json")
    rec.report.files["detector"] = detector_path.name
    rec.report.metrics = {"classifiers": [r.model_dump(mode="json") for r in result.reports]}
    rec.report.n_pairs = len(entries)
    rows = [
        {"pair_id": e.pair_id, "machine": int(lab), "device_profile": dev or "",
         "detector_score": result.detector.score(v)}
        for e, lab, dev, v in zip(entries, labels, devices, vectors)
    ]
    return rec.finish(rows)


def overall_strict_aggregation(ctx: ExperimentContext) -> ExperimentReport:
    """Both stages end to end; acceptance rates per ground-truth class."""
    rec = _Recorder(ctx, "overall_strict_aggregation")
    model = ctx.require_model(rec.report.protocol)
    ev = ctx.cfg.evaluation
    tcs_cfg = ctx.cfg.tcs.model_copy(update={"threshold": ev.stage1_threshold})
    cfg = ctx.cfg.model_copy(update={"tcs": tcs_cfg})

    store = MemoryTemplateStore()
    enrolled_pairs = set()
    n_clips = int(math.ceil(max(ev.enrollment_seconds) / model.feature_cfg.segment_seconds))
    for speaker in corpus_speakers(ctx.corpus):
        pool = [e for e in stage2_entries(ctx.corpus, ctx.cfg) if e.speaker_id == speaker][:n_clips]
        if not pool:
            continue
        clips = [entry_bc(ctx.corpus, e, ctx.cfg.init) for e in pool]
        enroll(
            speaker,
            clips,
            model,
            ctx.cfg.bcsr.layer_tag,
            store=store,
            max_seconds=max(ev.enrollment_seconds),
        )
        enrolled_pairs.update(e.pair_id for e in pool)

    resources = AuthResources(model=model, store=store, detector=ctx.detector)
    probes = [e for e in ctx.corpus.entries
              if e.pair_id not in enrolled_pairs and store.find(e.speaker_id) is not None]
    rows = []
    for entry in probes:
        ac, bc = ctx.corpus.load_pair(entry)
        try:
            record = authenticate_signals(ac, bc, entry.speaker_id, cfg, resources,
                                          mode=AuthMode.VERIFICATION, pair_id=entry.pair_id)
        except AirBoneError as e:
            logger.warning(f"Skipping {entry.pair_id}: {e}")
            rec.report.skipped.append(entry.pair_id)
            continue
        stage2 = record.stage2 if not isinstance(record.stage2, str) else None
        rows.append({
            "pair_id": entry.pair_id,
            "ground_truth": entry.ground_truth,
            "stage1_score": record.stage1.score,
            "stage1_accepted": int(record.stage1.accepted),
            "stage2_score": stage2.score if stage2 else "",
            "stage2_accepted": int(stage2.accepted) if stage2 else "",
            "machine_flagged": int(bool(stage2.machine_flagged)) if stage2 else "",
            "final": int(record.final),
        })

    per_class = {}
    for gt in sorted({r["ground_truth"] for r in rows}):
        subset = [r for r in rows if r["ground_truth"] == gt]
        per_class[gt] = {
            "n": len(subset),
            "stage1_accept_rate": float(np.mean([r["stage1_accepted"] for r in subset])),
            "final_accept_rate": float(np.mean([r["final"] for r in subset])),
        }
    genuine_rate = per_class.get(GENUINE, {}).get("final_accept_rate")
    attack_rows = [r for r in rows if r["ground_truth"] != GENUINE]
    rec.report.metrics = {
        "stage1_threshold": ev.stage1_threshold,
        "tar": genuine_rate,
        "frr": None if genuine_rate is None else 1.0 - genuine_rate,
        "far": float(np.mean([r["final"] for r in attack_rows])) if attack_rows else None,
        "per_class": per_class,
        "machine_detector": ctx.detector is not None,
    }
    rec.report.n_pairs = len(rows)
    return rec.finish(rows)


# ============================================================================
# Entry point
# ============================================================================


PROTOCOLS: dict[str, Callable[[ExperimentContext], ExperimentReport]] = {
    "stage1_normal_vs_false_trigger": stage1_normal_vs_false_trigger,
    "stage1_noise_grid": stage1_noise_grid,
    "stage1_acoustic_attacks": stage1_acoustic_attacks,
    "stage2_identification": stage2_identification,
    "stage2_verification": stage2_verification,
    "machine_detection": machine_detection,
    "overall_strict_aggregation": overall_strict_aggregation,
}


def run_experiment(
    corpus: Corpus,
    cfg: PipelineConfig,
    protocol: str,
    out_dir,
    *,
    model: Optional[TrainedModel] = None,
    detector: Optional[MachineDetector] = None,
) -> ExperimentReport:
    """Run one named protocol and write its report files under out_dir.

    Raises:
        ProtocolError: unknown protocol, or the corpus/model does not support it
    """
    if protocol not in PROTOCOLS:
        raise ProtocolError(f"Unknown protocol '{protocol}', expected one of {sorted(PROTOCOLS)}")
    if not corpus.entries:
        raise ProtocolError("Corpus is empty")
    ctx = ExperimentContext(corpus=corpus, cfg=cfg, out_dir=Path(out_dir), model=model, detector=detector)
    logger.info(f"Running {protocol} on {len(corpus.entries)} entries -> {ctx.out_dir}")
    return PROTOCOLS[protocol](ctx)
