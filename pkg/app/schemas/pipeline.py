"""Pydantic schemas for the pipeline configuration file.

Every numeric default used by the pipeline lives here. A PipelineConfig
round-trips losslessly through model_dump_json()/model_validate_json().
"""
from enum import Enum
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.signal import FrameSpec


class LayerTag(str, Enum):
    """Which network layer a speaker embedding is read from."""
    FC512 = "layer-1"
    LOGITS = "layer-2"
    SOFTMAX = "layer-3"


class AuthMode(str, Enum):
    VERIFICATION = "verification"
    IDENTIFICATION = "identification"


# ============================================================================
# Initialization
# ============================================================================


class SyncConfig(BaseModel):
    """Frame-level cross-correlation synchronization."""

    model_config = ConfigDict(frozen=True)

    num_frames: int = Field(8, ge=1, description="K: leading frames averaged")
    frame_length: int = Field(2048, ge=16, description="L: samples per frame")
    search_window: int = Field(800, ge=0, description="Max |delay| searched, samples")
    silence_ratio: float = Field(
        0.01, ge=0, lt=1, description="Frames below this fraction of mean frame energy are skipped"
    )

    @model_validator(mode="after")
    def _window_fits(self):
        if self.search_window > self.frame_length / 2:
            raise ValueError(
                f"search_window {self.search_window} exceeds half the frame length {self.frame_length}"
            )
        return self


class InitConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    target_rate: int = Field(8000, gt=0, description="Hz")
    highpass_cutoff: float = Field(20.0, gt=0, description="Hz")
    bc_band_max: float = Field(2000.0, gt=0, description="Hz")
    wiener: bool = True
    sync: SyncConfig = Field(default_factory=SyncConfig)

    @model_validator(mode="after")
    def _band_order(self):
        if not self.highpass_cutoff < self.bc_band_max < self.target_rate / 2:
            raise ValueError(
                f"Need highpass_cutoff < bc_band_max < target_rate/2, got "
                f"{self.highpass_cutoff}, {self.bc_band_max}, {self.target_rate / 2}"
            )
        return self


# ============================================================================
# Stage I
# ============================================================================


class TcsConfig(BaseModel):
    """Temporal consistency scoring parameters (M, N, framing, thresholds)."""

    model_config = ConfigDict(frozen=True)

    m: int = Field(5, ge=1, description="Top AC frequency bins")
    n: int = Field(5, ge=1, description="Top BC frequency bins")
    frame: FrameSpec = Field(default_factory=lambda: FrameSpec.from_overlap(5.0, 1.0))
    silence_fraction: float = Field(0.02, gt=0, lt=1)
    threshold: float = Field(0.4, ge=0, le=1)
    marginal: Literal["power", "magnitude"] = "power"
    rows: Literal["magnitude", "power"] = "magnitude"


class TcsGrid(BaseModel):
    """Candidates for the M/N/window grid search."""

    m_values: list[int] = Field(default_factory=lambda: [3, 5, 8], min_length=1)
    n_values: list[int] = Field(default_factory=lambda: [3, 5, 8], min_length=1)
    window_ms_values: list[float] = Field(default_factory=lambda: [5.0, 10.0, 20.0], min_length=1)
    overlap_ms: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def _check_overlap(self):
        shortest = min(self.window_ms_values)
        if self.overlap_ms > 0.5 * shortest:
            raise ValueError(
                f"overlap {self.overlap_ms} ms exceeds half of the shortest window ({shortest} ms)"
            )
        return self


# ============================================================================
# Stage II
# ============================================================================


class FeatureConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    sample_rate: int = 8000
    segment_seconds: float = Field(8.0, gt=0)
    bins_per_octave: int = Field(48, ge=1)
    f_min: float = Field(32.7, gt=0)
    f_max: float = Field(2000.0, gt=0)
    hop_length: int = Field(64, ge=1, description="Samples; multiple of 2**(octaves-1)")
    log_eps: float = Field(1e-6, gt=0)

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))


class NetworkConfig(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    channels: tuple[int, ...] = (16, 32, 64)
    embedding_dim: int = Field(512, ge=1, description="Width of the FC-512 speaker layer")
    condition_hidden: int = Field(128, ge=1)
    lambda_: float = Field(0.1, ge=0, alias="lambda")


class TrainingConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(0.001, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epochs: int = Field(60, ge=1)
    batch_size: int = Field(64, ge=1)
    seed: int = 0
    augment: bool = True
    flip_prob: float = Field(0.5, ge=0, le=1)
    pretrain_epochs: int = Field(10, ge=0)
    validation_fraction: float = Field(
        0.2, ge=0, lt=1, description="Held out per speaker to calibrate the verification threshold"
    )
    num_threads: Optional[int] = Field(None, ge=1)


class BcsrConfig(BaseModel):
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    layer_tag: LayerTag = LayerTag.FC512
    verify_threshold: Optional[float] = Field(
        None, description="CSS threshold; None uses the dev-set EER point stored with the model"
    )
    machine_detector: bool = True


# ============================================================================
# Paths and evaluation
# ============================================================================


class PathsConfig(BaseModel):
    model_dir: Path = Path("models")
    template_store: Path = Path("templates.json")
    corpus_root: Optional[Path] = None
    machine_detector: Optional[Path] = None

    @property
    def detector_path(self) -> Path:
        return self.machine_detector or self.model_dir / "machine_detector.json"


class EvaluationConfig(BaseModel):
    stage1_threshold: float = Field(0.4, ge=0, le=1)
    roc_points: int = Field(101, ge=2)
    histogram_bins: int = Field(40, ge=1)
    ac_snr_grid: list[Optional[float]] = Field(default_factory=lambda: [None, 5.0, 0.0, -5.0, -10.0])
    bc_snr_grid: list[Optional[float]] = Field(default_factory=lambda: [None, 5.0, 0.0])
    enrollment_seconds: list[float] = Field(default_factory=lambda: [8.0, 24.0, 40.0])
    layer_tags: list[LayerTag] = Field(default_factory=lambda: list(LayerTag))
    new_users: int = Field(5, ge=1, description="Speakers held out of training for verification")
    test_fraction: float = Field(0.3, gt=0, lt=1)
    seed: int = 0


class PipelineConfig(BaseModel):
    init: InitConfig = Field(default_factory=InitConfig)
    tcs: TcsConfig = Field(default_factory=TcsConfig)
    bcsr: BcsrConfig = Field(default_factory=BcsrConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    mode: AuthMode = AuthMode.VERIFICATION
