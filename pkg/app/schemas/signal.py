"""Pydantic schemas for framing and filter parameters."""
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class WindowFunction(str, Enum):
    """Taper applied to each analysis frame."""
    HANN = "hann"
    HAMMING = "hamming"
    BLACKMAN = "blackman"
    RECTANGULAR = "boxcar"


class FilterKind(str, Enum):
    HIGHPASS = "highpass"
    LOWPASS = "lowpass"
    BANDPASS = "bandpass"
    WIENER = "wiener"


# ============================================================================
# Framing
# ============================================================================


class FrameSpec(BaseModel):
    """STFT framing, expressed in milliseconds so it is rate independent."""

    model_config = ConfigDict(frozen=True)

    window_ms: float = Field(5.0, gt=0, description="Window length in ms")
    hop_ms: float = Field(4.0, gt=0, description="Hop in ms (window minus overlap)")
    window_function: WindowFunction = WindowFunction.HANN

    @model_validator(mode="after")
    def _check_hop(self):
        if self.hop_ms > self.window_ms:
            raise ValueError(f"hop {self.hop_ms} ms exceeds window {self.window_ms} ms")
        return self

    @classmethod
    def from_overlap(cls, window_ms: float, overlap_ms: float, **kwargs) -> "FrameSpec":
        return cls(window_ms=window_ms, hop_ms=window_ms - overlap_ms, **kwargs)

    @property
    def overlap_ms(self) -> float:
        return self.window_ms - self.hop_ms

    def samples(self, sample_rate: int) -> tuple[int, int]:
        """Window and hop in samples at the given rate.

        Raises:
            ValueError: if either rounds to fewer than one sample
        """
        window = int(round(self.window_ms * sample_rate / 1000.0))
        hop = int(round(self.hop_ms * sample_rate / 1000.0))
        if window < 1 or hop < 1:
            raise ValueError(
                f"Frame {self.window_ms}/{self.hop_ms} ms is shorter than one sample at {sample_rate} Hz"
            )
        return window, hop


# ============================================================================
# Filters
# ============================================================================


class FilterSpec(BaseModel):
    """Filter request. Cutoffs are checked against Nyquist when applied."""

    model_config = ConfigDict(frozen=True)

    kind: FilterKind
    cutoffs: tuple[float, ...] = ()
    order: Optional[int] = Field(
        None, gt=0, description="FIR length (forced odd); derived from the lowest cutoff if omitted"
    )

    @model_validator(mode="after")
    def _check_cutoffs(self):
        expected = {
            FilterKind.HIGHPASS: 1,
            FilterKind.LOWPASS: 1,
            FilterKind.BANDPASS: 2,
            FilterKind.WIENER: 0,
        }[self.kind]
        if len(self.cutoffs) != expected:
            raise ValueError(
                f"{self.kind.value} filter takes {expected} cutoff(s), got {len(self.cutoffs)}"
            )
        if any(c <= 0 for c in self.cutoffs):
            raise ValueError(f"Cutoffs must be positive: {self.cutoffs}")
        if self.kind == FilterKind.BANDPASS and not self.cutoffs[0] < self.cutoffs[1]:
            raise ValueError(f"Bandpass needs low < high, got {self.cutoffs}")
        return self

    @classmethod
    def highpass(cls, cutoff: float, order: Optional[int] = None) -> "FilterSpec":
        return cls(kind=FilterKind.HIGHPASS, cutoffs=(cutoff,), order=order)

    @classmethod
    def lowpass(cls, cutoff: float, order: Optional[int] = None) -> "FilterSpec":
        return cls(kind=FilterKind.LOWPASS, cutoffs=(cutoff,), order=order)

    @classmethod
    def bandpass(cls, low: float, high: float, order: Optional[int] = None) -> "FilterSpec":
        return cls(kind=FilterKind.BANDPASS, cutoffs=(low, high), order=order)

    @classmethod
    def wiener(cls) -> "FilterSpec":
        return cls(kind=FilterKind.WIENER)
