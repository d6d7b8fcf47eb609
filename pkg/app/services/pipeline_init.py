"""Initialization stage: raw AC/BC recordings -> clean, rate-matched, aligned pair.

Delay convention: a positive delay d means BC leads AC, bc[n] ~ ac[n + d].
align() pads the earlier signal at its start, so after alignment both
domains share a time base. Nothing in this module is random.
"""
import logging
from typing import Optional, Union

import numpy as np
from scipy import signal as sps

from app.errors import AirBoneError, SignalError, SilentSyncError, StageError
from app.schemas.pipeline import InitConfig, SyncConfig
from app.schemas.results import InitRecord
from app.schemas.signal import FilterSpec
from app.schemas.synth import SceneSpec
from app.services.audio_io import AccelRecord
from app.services.signal_core import (
    Waveform,
    apply_filter,
    estimate_noise_profile,
    normalize,
    resample,
    wiener_denoise,
)
from app.services.synthgen import AirBonePair

logger = logging.getLogger(__name__)

STAGE = "initialization"


def select_axis(raw: AccelRecord, cfg: InitConfig) -> str:
    """Monoaxial rule: the axis with the highest in-band / out-of-band energy.

    The band is [highpass_cutoff, bc_band_max]. All-zero axes never win;
    ties go to the first axis.
    """
    freqs = np.fft.rfftfreq(raw.n_samples, d=1.0 / raw.sample_rate)
    in_band = (freqs >= cfg.highpass_cutoff) & (freqs <= cfg.bc_band_max)
    best_name, best_score = None, -np.inf
    for name, row in zip(raw.axis_names, raw.data):
        power = np.abs(np.fft.rfft(row)) ** 2
        inside, outside = float(power[in_band].sum()), float(power[~in_band].sum())
        if inside + outside == 0:
            score = -np.inf
        elif outside == 0:
            score = np.inf
        else:
            score = inside / outside
        logger.debug(f"Axis {name}: in/out band ratio {score:.4g}")
        if best_name is None or score > best_score:
            best_name, best_score = name, score
    return best_name


def preprocess_bc(raw: AccelRecord, cfg: InitConfig, axis: Optional[str] = None) -> Waveform:
    """Extract the BC speech signal: normalize, bandpass, Wiener, resample.

    Raises:
        SignalError: on an empty or all-zero record, or a sample rate below
            twice the BC band limit
    """
    if raw.n_samples == 0 or not np.any(raw.data):
        raise SignalError("Accelerometer record is empty or all zero")
    if raw.sample_rate < 2 * cfg.bc_band_max:
        raise SignalError(
            f"Accelerometer rate {raw.sample_rate} Hz is below 2 x bc_band_max ({2 * cfg.bc_band_max} Hz)"
        )
    axis = axis or select_axis(raw, cfg)
    w = normalize(raw.axis(axis))
    if cfg.bc_band_max < w.sample_rate / 2:
        w = apply_filter(w, FilterSpec.bandpass(cfg.highpass_cutoff, cfg.bc_band_max))
    else:
        w = apply_filter(w, FilterSpec.highpass(cfg.highpass_cutoff))
    if cfg.wiener:
        w = wiener_denoise(w, estimate_noise_profile(w))
    return resample(w, cfg.target_rate)


def preprocess_ac(ac_raw: Waveform, cfg: InitConfig) -> Waveform:
    """Downsample AC to the pipeline rate and Wiener-denoise it."""
    if len(ac_raw) == 0:
        raise SignalError("AC recording is empty")
    w = resample(ac_raw, cfg.target_rate)
    if cfg.wiener:
        w = wiener_denoise(w, estimate_noise_profile(w))
    return w


def _frame_energies(x: np.ndarray, frame: int) -> np.ndarray:
    n_frames = x.shape[0] // frame
    return np.sum(x[: n_frames * frame].reshape(n_frames, frame) ** 2, axis=1)


def estimate_delay(ac: Waveform, bc: Waveform, sync: SyncConfig) -> int:
    """Average the per-frame cross-correlation peak over the first K frames.

    Each AC frame (zero mean, unit norm) is slid against the BC recording over
    |tau| <= search_window, so every lag sees a full-overlap window. Frames
    silent in either domain are skipped.

    Raises:
        SignalError: on rate mismatch or inputs shorter than K*L
        SilentSyncError: if every one of the K frames is silent
    """
    if ac.sample_rate != bc.sample_rate:
        raise SignalError(f"Sample rate mismatch: AC {ac.sample_rate} Hz, BC {bc.sample_rate} Hz")
    K, L, W = sync.num_frames, sync.frame_length, sync.search_window
    if len(ac) < K * L or len(bc) < K * L:
        raise SignalError(f"Need at least K*L = {K * L} samples, got AC {len(ac)}, BC {len(bc)}")

    x, y = ac.samples, bc.samples
    mean_ac = float(np.mean(_frame_energies(x, L)))
    mean_bc = float(np.mean(_frame_energies(y, L)))
    padded = np.pad(y, (W, W))

    delays = []
    for k in range(K):
        start = k * L
        a = x[start:start + L]
        b_frame = y[start:start + L]
        if np.sum(a**2) < sync.silence_ratio * mean_ac or np.sum(b_frame**2) < sync.silence_ratio * mean_bc:
            logger.debug(f"Sync frame {k} is silent, skipping")
            continue
        a = a - a.mean()
        norm = np.linalg.norm(a)
        if norm == 0:
            continue
        a = a / norm
        # padded[start + j] == y[start - W + j]
        segment = padded[start:start + L + 2 * W]
        seg_norm = np.linalg.norm(segment)
        if seg_norm == 0:
            continue
        corr = sps.correlate(segment / seg_norm, a, mode="valid")
        delays.append(W - int(np.argmax(corr)))

    if not delays:
        raise SilentSyncError(f"All {K} synchronization frames are silent")
    if len(delays) < K:
        logger.warning(f"Delay estimated from {len(delays)} of {K} frames")
    return int(np.floor(np.mean(delays) + 0.5))


def align(ac: Waveform, bc: Waveform, delay: int) -> tuple[Waveform, Waveform]:
    """Zero-pad the earlier signal by |delay| and truncate to a common length.

    Raises:
        SignalError: if |delay| is not below the shorter length
    """
    delay = int(delay)
    if abs(delay) >= min(len(ac), len(bc)):
        raise SignalError(f"|delay| {abs(delay)} must be below the shorter length {min(len(ac), len(bc))}")
    x, y = ac.samples, bc.samples
    if delay > 0:
        y = np.concatenate([np.zeros(delay), y])
    elif delay < 0:
        x = np.concatenate([np.zeros(-delay), x])
    n = min(x.shape[0], y.shape[0])
    return ac.with_samples(x[:n]), bc.with_samples(y[:n])


def initialize(
    ac_raw: Waveform,
    bc_raw: Union[AccelRecord, Waveform],
    cfg: InitConfig,
    *,
    pair_id: Optional[str] = None,
    speaker_id: Optional[str] = None,
    scene: Optional[SceneSpec] = None,
) -> AirBonePair:
    """Run the whole initialization stage.

    Errors from any step are re-raised as StageError("initialization", ...).
    speaker_id and scene carry provenance labels through, if known.
    """
    if isinstance(bc_raw, Waveform):
        bc_raw = AccelRecord.from_waveform(bc_raw)
    step = "preprocess_ac"
    try:
        ac = preprocess_ac(ac_raw, cfg)
        step = "preprocess_bc"
        axis = select_axis(bc_raw, cfg) if bc_raw.n_samples else None
        bc = preprocess_bc(bc_raw, cfg, axis=axis)
        step = "estimate_delay"
        delay = estimate_delay(ac, bc, cfg.sync)
        step = "align"
        ac, bc = align(ac, bc, delay)
    except AirBoneError as e:
        logger.error(f"Initialization failed at {step}: {e}")
        raise StageError(STAGE, f"{step}: {e}") from e

    logger.info(f"Initialized pair {pair_id or ''}: delay {delay} samples, axis {axis}")
    record = InitRecord(estimated_delay_samples=delay, axis_selected=axis, config_used=cfg)
    return AirBonePair(
        ac=ac,
        bc=bc,
        speaker_id=speaker_id,
        scene=scene,
        ground_truth=scene.ground_truth if scene else None,
        pair_id=pair_id,
        metadata=record.model_dump(mode="json"),
    )
