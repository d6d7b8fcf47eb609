"""CQT features for BC speaker recognition, plus time-axis augmentation."""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.errors import SignalError
from app.schemas.pipeline import FeatureConfig
from app.schemas.synth import CONDITION_LABELS
from app.services.signal_core import Spectrogram, Waveform, cqt, resample

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BcFeature:
    """Log-frequency CQT magnitudes of one fixed-length BC segment."""

    cqt: Spectrogram
    condition_label: str = "still"
    speaker_label: Optional[str] = None

    def __post_init__(self):
        if self.cqt.scale != "log":
            raise SignalError("BcFeature needs a log-scale (CQT) spectrogram")
        if self.condition_label not in CONDITION_LABELS:
            raise SignalError(
                f"Unknown condition '{self.condition_label}', expected one of {CONDITION_LABELS}"
            )

    @property
    def values(self) -> np.ndarray:
        return self.cqt.magnitudes

    @property
    def shape(self) -> tuple[int, int]:
        return self.cqt.magnitudes.shape


def _at_rate(bc: Waveform, cfg: FeatureConfig) -> Waveform:
    if bc.sample_rate == cfg.sample_rate:
        return bc
    return resample(bc, cfg.sample_rate)


def center_crop(bc: Waveform, n: int) -> Waveform:
    start = (len(bc) - n) // 2
    return bc.with_samples(bc.samples[start:start + n])


def extract_feature(
    bc: Waveform,
    condition: str = "still",
    cfg: Optional[FeatureConfig] = None,
    speaker_label: Optional[str] = None,
) -> BcFeature:
    """CQT of the centered segment_seconds of a BC signal.

    Raises:
        SignalError: if the signal is shorter than one segment
    """
    cfg = cfg or FeatureConfig()
    bc = _at_rate(bc, cfg)
    need = cfg.segment_samples
    if len(bc) < need:
        raise SignalError(f"BC signal of {bc.duration_s:.2f} s is shorter than {cfg.segment_seconds} s")
    spec = cqt(center_crop(bc, need), cfg.bins_per_octave, cfg.f_min, cfg.f_max, cfg.hop_length)
    return BcFeature(cqt=spec, condition_label=condition, speaker_label=speaker_label)


def split_segments(clips: list[Waveform], cfg: Optional[FeatureConfig] = None) -> list[Waveform]:
    """Cut clips into whole segments.

    A clip of at least one segment yields floor(len / segment) segments from
    its centered span; shorter clips are concatenated in order and cut the
    same way.
    """
    cfg = cfg or FeatureConfig()
    need = cfg.segment_samples
    segments: list[Waveform] = []
    short: list[np.ndarray] = []
    for clip in (_at_rate(c, cfg) for c in clips):
        if len(clip) >= need:
            count = len(clip) // need
            span = center_crop(clip, count * need)
            segments.extend(span.with_samples(span.samples[k * need:(k + 1) * need]) for k in range(count))
        else:
            short.append(clip.samples)
    if short:
        joined = Waveform(np.concatenate(short), cfg.sample_rate)
        count = len(joined) // need
        segments.extend(
            joined.with_samples(joined.samples[k * need:(k + 1) * need]) for k in range(count)
        )
    return segments


def network_input(feature: BcFeature, cfg: Optional[FeatureConfig] = None) -> np.ndarray:
    """Log-compressed magnitudes standardized over the whole feature (float32)."""
    eps = (cfg or FeatureConfig()).log_eps
    logmag = np.log(feature.values + eps)
    std = float(logmag.std())
    if std < 1e-8:
        return np.zeros_like(logmag, dtype=np.float32)
    return ((logmag - logmag.mean()) / std).astype(np.float32)


# ============================================================================
# Augmentation
# ============================================================================


def augment_array(
    values: np.ndarray,
    rng: np.random.Generator,
    flip_prob: float = 0.5,
    crop: bool = True,
    translate: bool = True,
    pad_value: float = 0.0,
) -> np.ndarray:
    """Time-axis flip, crop-and-pad, and circular translation of [bin x frame] data.

    The frequency axis is never touched.
    """
    out = np.array(values, copy=True)
    n_frames = out.shape[-1]
    if rng.random() < flip_prob:
        out = out[..., ::-1].copy()
    if crop and n_frames > 1:
        width = int(rng.integers(max(int(0.8 * n_frames), 1), n_frames + 1))
        start = int(rng.integers(0, n_frames - width + 1))
        cropped = out[..., start:start + width]
        out = np.full_like(out, pad_value)
        out[..., :width] = cropped
    if translate and n_frames > 1:
        out = np.roll(out, int(rng.integers(0, n_frames)), axis=-1)
    return out


def augment(
    f: BcFeature,
    seed: int,
    flip_prob: float = 0.5,
    crop: bool = True,
    translate: bool = True,
) -> BcFeature:
    """Deterministic (per seed) time-axis augmentation of a feature."""
    values = augment_array(f.values, np.random.default_rng(seed), flip_prob, crop, translate)
    spec = Spectrogram(
        magnitudes=values,
        bin_frequencies=f.cqt.bin_frequencies,
        frame_times=f.cqt.frame_times,
        scale="log",
    )
    return BcFeature(cqt=spec, condition_label=f.condition_label, speaker_label=f.speaker_label)
