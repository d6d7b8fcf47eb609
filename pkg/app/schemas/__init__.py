"""Pydantic schemas for configuration, manifests and results."""
from .pipeline import (
    AuthMode,
    BcsrConfig,
    EvaluationConfig,
    FeatureConfig,
    InitConfig,
    LayerTag,
    NetworkConfig,
    PathsConfig,
    PipelineConfig,
    SyncConfig,
    TcsConfig,
    TcsGrid,
    TrainingConfig,
)
from .results import (
    STAGE2_SKIPPED,
    DecisionRecord,
    EerSummary,
    ExperimentReport,
    GridSearchResult,
    IdentificationOutcome,
    InitRecord,
    MachineDetectionReport,
    Stage1Outcome,
    Stage2Outcome,
    TcsResult,
    Template,
    TrainingLog,
)
from .signal import FilterKind, FilterSpec, FrameSpec, WindowFunction
from .synth import (
    AttackClass,
    BcChannel,
    Condition,
    CorpusEntry,
    SceneMix,
    SceneSpec,
    VocalModel,
)

__all__ = [
    # Signals
    "FilterKind",
    "FilterSpec",
    "FrameSpec",
    "WindowFunction",
    # Synthesis / manifest
    "AttackClass",
    "BcChannel",
    "Condition",
    "CorpusEntry",
    "SceneMix",
    "SceneSpec",
    "VocalModel",
    # Pipeline config
    "AuthMode",
    "BcsrConfig",
    "EvaluationConfig",
    "FeatureConfig",
    "InitConfig",
    "LayerTag",
    "NetworkConfig",
    "PathsConfig",
    "PipelineConfig",
    "SyncConfig",
    "TcsConfig",
    "TcsGrid",
    "TrainingConfig",
    # Results
    "STAGE2_SKIPPED",
    "DecisionRecord",
    "EerSummary",
    "ExperimentReport",
    "GridSearchResult",
    "IdentificationOutcome",
    "InitRecord",
    "MachineDetectionReport",
    "Stage1Outcome",
    "Stage2Outcome",
    "TcsResult",
    "Template",
    "TrainingLog",
]
