"""Waveform and accelerometer file I/O.

Formats:
- WAV: PCM16 mono (soundfile). Written peaks above 1.0 are rescaled.
- Accelerometer CSV: header `t,x,y,z`, seconds and m/s^2.
- Accelerometer binary: one float32 file per axis (`<stem>.<axis>.f32`)
  next to a JSON sidecar `<stem>.json` holding sample_rate and axis names.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import soundfile as sf

from app.errors import CorpusIOError
from app.services.signal_core import Waveform

logger = logging.getLogger(__name__)

ACCEL_AXES = ("x", "y", "z")
CSV_HEADER = "t,x,y,z"


@dataclass(frozen=True, eq=False)
class AccelRecord:
    """Raw multi-axis accelerometer capture, shape [axis x sample]."""

    data: np.ndarray
    sample_rate: int
    axis_names: tuple[str, ...] = ACCEL_AXES

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[None, :]
        if data.shape[0] != len(self.axis_names):
            raise CorpusIOError("<record>", f"{data.shape[0]} axes but names {self.axis_names}")
        if self.sample_rate <= 0:
            raise CorpusIOError("<record>", f"Invalid sample rate {self.sample_rate}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "axis_names", tuple(self.axis_names))

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def axis(self, name: str) -> Waveform:
        return Waveform(self.data[self.axis_names.index(name)], self.sample_rate)

    @classmethod
    def from_waveform(cls, w: Waveform, axis_name: str = "x") -> "AccelRecord":
        return cls(w.samples[None, :], w.sample_rate, (axis_name,))


# ============================================================================
# WAV
# ============================================================================


def read_wav(path) -> Waveform:
    """Read a WAV file as a mono float Waveform (multi-channel is averaged)."""
    path = Path(path)
    try:
        data, sr = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as e:
        raise CorpusIOError(path, f"cannot read WAV: {e}") from e
    if data.shape[1] > 1:
        logger.warning(f"{path} has {data.shape[1]} channels, downmixing to mono")
    return Waveform(data.mean(axis=1), int(sr))


def write_wav(path, w: Waveform) -> Path:
    """Write PCM16 mono. Returns the path written."""
    path = Path(path)
    samples = w.samples
    peak = float(np.max(np.abs(samples))) if len(w) else 0.0
    if peak > 1.0:
        logger.warning(f"Peak {peak:.3f} exceeds full scale, rescaling before writing {path}")
        samples = samples / peak
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        sf.write(str(path), samples, w.sample_rate, subtype="PCM_16")
    except (RuntimeError, OSError) as e:
        raise CorpusIOError(path, f"cannot write WAV: {e}") from e
    return path


# ============================================================================
# Accelerometer
# ============================================================================


def write_accel_csv(path, record: AccelRecord) -> Path:
    path = Path(path)
    if record.axis_names != ACCEL_AXES:
        raise CorpusIOError(path, f"CSV needs axes {ACCEL_AXES}, record has {record.axis_names}")
    t = np.arange(record.n_samples) / record.sample_rate
    table = np.column_stack([t, record.data.T])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, table, delimiter=",", header=CSV_HEADER, comments="", fmt="%.9g")
    except OSError as e:
        raise CorpusIOError(path, f"cannot write CSV: {e}") from e
    return path


def read_accel_csv(path) -> AccelRecord:
    """Read `t,x,y,z` CSV; the sample rate is recovered from the time column."""
    path = Path(path)
    try:
        with open(path) as f:
            header = f.readline().strip().replace(" ", "")
        if header != CSV_HEADER:
            raise CorpusIOError(path, f"expected header '{CSV_HEADER}', got '{header}'")
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as e:
        raise CorpusIOError(path, f"cannot read CSV: {e}") from e
    except ValueError as e:
        if isinstance(e, CorpusIOError):
            raise
        raise CorpusIOError(path, f"malformed CSV: {e}") from e
    if table.shape[0] < 2:
        raise CorpusIOError(path, "need at least two rows to infer the sample rate")
    dt = float(np.median(np.diff(table[:, 0])))
    if dt <= 0:
        raise CorpusIOError(path, "time column is not increasing")
    return AccelRecord(table[:, 1:].T, int(round(1.0 / dt)))


def write_accel_bin(sidecar_path, record: AccelRecord) -> Path:
    """Write per-axis float32 files plus the JSON sidecar. Returns the sidecar path."""
    sidecar_path = Path(sidecar_path).with_suffix(".json")
    stem = sidecar_path.with_suffix("")
    files = {}
    try:
        sidecar_path.parent.mkdir(parents=True, exist_ok=True)
        for name, row in zip(record.axis_names, record.data):
            axis_path = stem.parent / f"{stem.name}.{name}.f32"
            row.astype("<f4").tofile(axis_path)
            files[name] = axis_path.name
        sidecar = {
            "sample_rate": record.sample_rate,
            "axes": list(record.axis_names),
            "files": files,
            "dtype": "float32-le",
            "units": "m/s^2",
        }
        sidecar_path.write_text(json.dumps(sidecar, indent=2))
    except OSError as e:
        raise CorpusIOError(sidecar_path, f"cannot write accelerometer binary: {e}") from e
    return sidecar_path


def read_accel_bin(sidecar_path) -> AccelRecord:
    sidecar_path = Path(sidecar_path)
    try:
        sidecar = json.loads(sidecar_path.read_text())
        rows = [
            np.fromfile(sidecar_path.parent / sidecar["files"][name], dtype="<f4")
            for name in sidecar["axes"]
        ]
    except (OSError, KeyError, json.JSONDecodeError) as e:
        raise CorpusIOError(sidecar_path, f"cannot read accelerometer binary: {e}") from e
    if len({row.shape[0] for row in rows}) != 1:
        raise CorpusIOError(sidecar_path, "axis files have different lengths")
    return AccelRecord(np.vstack(rows), int(sidecar["sample_rate"]), tuple(sidecar["axes"]))


def read_accel(path) -> AccelRecord:
    """Read any supported BC format, dispatching on the file extension."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".csv":
        return read_accel_csv(path)
    if suffix == ".json":
        return read_accel_bin(path)
    if suffix == ".wav":
        return AccelRecord.from_waveform(read_wav(path))
    raise CorpusIOError(path, f"unsupported accelerometer format '{suffix}'")


def write_accel(path, record: AccelRecord, fmt: str = "bin") -> Path:
    """Write a record as bin (sidecar), csv, or wav (first axis only)."""
    path = Path(path)
    if fmt == "bin":
        return write_accel_bin(path.with_suffix(".json"), record)
    if fmt == "csv":
        return write_accel_csv(path.with_suffix(".csv"), record)
    if fmt == "wav":
        return write_wav(path.with_suffix(".wav"), record.axis(record.axis_names[0]))
    raise CorpusIOError(path, f"unknown accelerometer format '{fmt}'")
