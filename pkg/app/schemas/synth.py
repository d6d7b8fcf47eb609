"""Pydantic schemas for the synthetic speaker, scene, and corpus manifest."""
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class AttackClass(str, Enum):
    NONE = "none"
    FALSE_TRIGGER = "false_trigger"
    ACOUSTIC_IMPERSONATION = "acoustic_impersonation"
    ACOUSTIC_REPLAY = "acoustic_replay"
    CROSSDOMAIN_IMPERSONATION = "crossdomain_impersonation"
    CROSSDOMAIN_MACHINE = "crossdomain_machine"


class Condition(str, Enum):
    """Wearer activity while speaking. Drives the BC motion-noise style."""
    STILL = "still"
    TURNING = "turning"
    NODDING = "nodding"
    MOVING = "moving"


CONDITION_LABELS: tuple[str, ...] = tuple(c.value for c in Condition)

DEVICE_PROFILES: tuple[str, ...] = ("laptop", "phone", "conference")


def ground_truth_for(attack: AttackClass) -> str:
    """Manifest label for an attack class: genuine, false_trigger, or attack:<class>."""
    if attack == AttackClass.NONE:
        return "genuine"
    if attack == AttackClass.FALSE_TRIGGER:
        return "false_trigger"
    return f"attack:{attack.value}"


# ============================================================================
# Speaker model
# ============================================================================


class BcChannel(BaseModel):
    """Per-speaker bone-conduction transfer: g = attenuation . lowpass . (x + c*x^2)."""

    model_config = ConfigDict(frozen=True)

    lowpass_cutoff: float = Field(..., gt=0, le=2000.0, description="Hz")
    attenuation_profile: tuple[float, ...] = Field(
        ..., min_length=1, description="Gain per equal-width band below the cutoff"
    )
    nonlinearity_coeff: float = Field(0.0, ge=0)

    @field_validator("attenuation_profile")
    @classmethod
    def _gains_in_range(cls, gains):
        if any(not 0 < g <= 1 for g in gains):
            raise ValueError(f"Band gains must be in (0, 1], got {gains}")
        return gains

    def signature(self) -> tuple:
        return (self.lowpass_cutoff, self.attenuation_profile, self.nonlinearity_coeff)


class VocalModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    speaker_id: str
    pitch_f0: float = Field(..., ge=60.0, le=400.0, description="Hz")
    formants: tuple[tuple[float, float], ...] = Field(
        ..., min_length=1, description="(center Hz, bandwidth Hz) pairs"
    )
    bc_channel: BcChannel

    @field_validator("formants")
    @classmethod
    def _formants_below_4k(cls, formants):
        for center, bandwidth in formants:
            if not 0 < center < 4000.0 or bandwidth <= 0:
                raise ValueError(f"Invalid formant ({center}, {bandwidth})")
        return formants


# ============================================================================
# Scenes
# ============================================================================


class SceneSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    ac_snr_db: Optional[float] = None
    bc_snr_db: Optional[float] = None
    background_speakers: int = Field(0, ge=0)
    background_level_db: float = Field(
        -15.0, description="Per background speaker, relative to the clear signal"
    )
    delay_samples: int = 0
    attack: AttackClass = AttackClass.NONE
    condition: Condition = Condition.STILL
    device_profile: Optional[str] = None

    @model_validator(mode="after")
    def _check_device(self):
        if self.device_profile is not None and self.device_profile not in DEVICE_PROFILES:
            raise ValueError(f"Unknown device profile '{self.device_profile}'")
        return self

    @property
    def ground_truth(self) -> str:
        return ground_truth_for(self.attack)


class SceneMix(BaseModel):
    """Distribution scenes are drawn from when building a corpus."""

    attacks: dict[AttackClass, float] = Field(default_factory=lambda: {AttackClass.NONE: 1.0})
    conditions: dict[Condition, float] = Field(default_factory=lambda: {Condition.STILL: 1.0})
    ac_snr_db: list[Optional[float]] = Field(default_factory=lambda: [None])
    bc_snr_db: list[Optional[float]] = Field(default_factory=lambda: [None])
    background_speakers: list[int] = Field(default_factory=lambda: [0])
    background_level_db: float = -15.0
    max_delay_samples: int = Field(0, ge=0)
    durations_s: list[float] = Field(default_factory=lambda: [9.0], min_length=1)
    device_profiles: list[str] = Field(default_factory=lambda: list(DEVICE_PROFILES), min_length=1)

    @field_validator("attacks", "conditions")
    @classmethod
    def _weights_positive(cls, weights):
        if not weights or any(w < 0 for w in weights.values()) or sum(weights.values()) <= 0:
            raise ValueError(f"Weights must be non-negative with a positive sum: {weights}")
        return weights

    @field_validator("durations_s")
    @classmethod
    def _durations_in_range(cls, durations):
        if any(not 1.0 <= d <= 30.0 for d in durations):
            raise ValueError(f"Utterance durations must be within [1, 30] s: {durations}")
        return durations


# ============================================================================
# Manifest
# ============================================================================


class CorpusEntry(BaseModel):
    """One manifest row. Paths are relative to the manifest directory."""

    pair_id: str
    speaker_id: str
    ac_path: str
    bc_path: str
    scene: SceneSpec
    ground_truth: str
    delay_samples: int
    condition: Condition
    duration_s: float
    bc_channel: BcChannel
    attacker_id: Optional[str] = None
    seed: int

    @model_validator(mode="after")
    def _consistent(self):
        if self.ground_truth != self.scene.ground_truth:
            raise ValueError(f"{self.pair_id}: ground_truth {self.ground_truth} contradicts scene")
        if self.delay_samples != self.scene.delay_samples:
            raise ValueError(f"{self.pair_id}: delay_samples does not match scene")
        return self

    @property
    def is_genuine(self) -> bool:
        return self.ground_truth == "genuine"
