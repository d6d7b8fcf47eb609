"""Pydantic schemas for everything the pipeline emits as JSON."""
from datetime import datetime, timezone
from typing import Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from app.schemas.pipeline import AuthMode, InitConfig, LayerTag, TcsConfig


# ============================================================================
# Initialization / Stage I
# ============================================================================


class InitRecord(BaseModel):
    estimated_delay_samples: int
    axis_selected: str
    config_used: InitConfig


class TcsResult(BaseModel):
    score: float = Field(..., ge=-1.0, le=1.0)
    selected_ac_bins: list[int]
    selected_bc_bins: list[int]
    selected_ac_hz: list[float] = Field(default_factory=list)
    selected_bc_hz: list[float] = Field(default_factory=list)
    correlation_matrix: list[list[float]]
    threshold: float
    accepted: bool
    frames_used: int

    @model_validator(mode="after")
    def _consistent(self):
        if len(self.correlation_matrix) != len(self.selected_ac_bins):
            raise ValueError("correlation_matrix rows must match the selected AC bins")
        if any(len(row) != len(self.selected_bc_bins) for row in self.correlation_matrix):
            raise ValueError("correlation_matrix columns must match the selected BC bins")
        if self.accepted != (self.score > self.threshold):
            raise ValueError("accepted must equal score > threshold")
        return self


class GridCandidate(BaseModel):
    m: int
    n: int
    window_ms: float
    eer: float
    threshold: float


class GridSearchResult(BaseModel):
    selected: TcsConfig
    candidates: list[GridCandidate]


# ============================================================================
# Stage II
# ============================================================================


class Template(BaseModel):
    user_id: str
    layer_tag: LayerTag
    vector: list[float]
    enrollment_seconds: float
    n_segments: int = Field(1, ge=1)
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))

    @field_validator("vector")
    @classmethod
    def _finite(cls, vector):
        if not vector or any(v != v or v in (float("inf"), float("-inf")) for v in vector):
            raise ValueError("Template vector must be nonempty and finite")
        return vector


class EpochRecord(BaseModel):
    epoch: int
    speaker_loss: float
    condition_loss: float
    total_loss: float
    speaker_accuracy: float
    condition_accuracy: float
    phase: Literal["pretrain", "train"] = "train"


class TrainingLog(BaseModel):
    epochs: list[EpochRecord] = Field(default_factory=list)
    first_batch_speaker_loss: Optional[float] = None
    speaker_ids: list[str] = Field(default_factory=list)
    condition_labels: list[str] = Field(default_factory=list)
    n_examples: int = 0
    lambda_: float = 0.0
    seed: int = 0
    verify_threshold: Optional[float] = None
    validation_eer: Optional[float] = None

    @property
    def final(self) -> Optional[EpochRecord]:
        return self.epochs[-1] if self.epochs else None


class IdentificationOutcome(BaseModel):
    user_id: str
    probability: float
    scores: dict[str, float]


class DeviceAccuracy(BaseModel):
    device_profile: str
    accuracy: float
    n_test: int


class MachineDetectionReport(BaseModel):
    classifier: str
    accuracy: float
    per_device: list[DeviceAccuracy] = Field(default_factory=list)
    n_train: int
    n_test: int


# ============================================================================
# Authentication
# ============================================================================


class Stage1Outcome(BaseModel):
    score: float
    threshold: float
    accepted: bool


class Stage2Outcome(BaseModel):
    mode: AuthMode
    user_id: Optional[str] = None
    score: Optional[float] = None
    predicted_id: Optional[str] = None
    threshold: Optional[float] = None
    layer_tag: Optional[LayerTag] = None
    machine_score: Optional[float] = None
    machine_flagged: Optional[bool] = None
    accepted: bool


STAGE2_SKIPPED = "skipped (stage1 rejected)"


class DecisionRecord(BaseModel):
    """Scores, thresholds and per-stage outcomes of one attempt."""

    pair_id: Optional[str] = None
    user_id: Optional[str] = None
    stage1: Stage1Outcome
    stage2: Union[Stage2Outcome, Literal["skipped (stage1 rejected)"]]
    final: bool
    timings_ms: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _strict_aggregation(self):
        if not self.stage1.accepted and self.stage2 != STAGE2_SKIPPED:
            raise ValueError("stage2 must be skipped when stage1 rejects")
        if self.stage1.accepted and self.stage2 == STAGE2_SKIPPED:
            raise ValueError("stage2 must run when stage1 accepts")
        stage2_ok = isinstance(self.stage2, Stage2Outcome) and self.stage2.accepted
        if self.final != (self.stage1.accepted and stage2_ok):
            raise ValueError("final must equal stage1.accepted AND stage2.accepted")
        return self

    def comparable(self) -> dict:
        """Everything except timings, for determinism checks."""
        return self.model_dump(mode="json", exclude={"timings_ms"})


# ============================================================================
# Evaluation
# ============================================================================


class EerSummary(BaseModel):
    label: str
    eer: float
    threshold: float
    n_genuine: int
    n_impostor: int


class ExperimentReport(BaseModel):
    protocol: str
    metrics: dict = Field(default_factory=dict)
    eers: list[EerSummary] = Field(default_factory=list)
    files: dict[str, str] = Field(default_factory=dict)
    n_pairs: int = 0
    skipped: list[str] = Field(default_factory=list)
