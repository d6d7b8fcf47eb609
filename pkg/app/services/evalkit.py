"""Biometric metrics: FAR/FRR sweeps, EER, ROC curves, score histograms.

Accept-if-score >= threshold semantics. The sweep runs over every distinct
score plus one point just above the maximum, so it always spans FAR = 1 to
FAR = 0. EER is the FAR/FRR crossing, linearly interpolated between the two
sweep points that bracket it.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from app.errors import CorpusIOError, ProtocolError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreSet:
    """Genuine and impostor scores for one experiment cell."""

    genuine_scores: Sequence[float]
    impostor_scores: Sequence[float]
    label: str = ""

    def __post_init__(self):
        genuine = np.asarray(self.genuine_scores, dtype=np.float64).reshape(-1)
        impostor = np.asarray(self.impostor_scores, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(genuine)) and np.all(np.isfinite(impostor))):
            raise ProtocolError(f"ScoreSet {self.label!r} has non-finite scores")
        object.__setattr__(self, "genuine_scores", genuine)
        object.__setattr__(self, "impostor_scores", impostor)

    def require_both(self) -> None:
        if self.genuine_scores.size == 0 or self.impostor_scores.size == 0:
            raise ProtocolError(
                f"ScoreSet {self.label!r} needs both classes "
                f"({self.genuine_scores.size} genuine, {self.impostor_scores.size} impostor)"
            )


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    far: float
    frr: float


@dataclass
class Sweep:
    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray = field(repr=False)


def threshold_sweep(s: ScoreSet) -> Sweep:
    """FAR and FRR at every distinct score and just above the maximum."""
    s.require_both()
    genuine = np.sort(s.genuine_scores)
    impostor = np.sort(s.impostor_scores)
    distinct = np.unique(np.concatenate([genuine, impostor]))
    thresholds = np.append(distinct, np.nextafter(distinct[-1], np.inf))
    # impostors accepted: score >= t; genuine rejected: score < t
    far = 1.0 - np.searchsorted(impostor, thresholds, side="left") / impostor.size
    frr = np.searchsorted(genuine, thresholds, side="left") / genuine.size
    return Sweep(thresholds=thresholds, far=far, frr=frr)


def _crossing(thresholds: np.ndarray, far: np.ndarray, frr: np.ndarray) -> tuple[float, float]:
    diff = far - frr
    i = int(np.argmax(diff <= 0))
    if diff[i] == 0 or i == 0:
        return float(far[i]), float(thresholds[i])
    alpha = diff[i - 1] / (diff[i - 1] - diff[i])
    eer = far[i - 1] + alpha * (far[i] - far[i - 1])
    threshold = thresholds[i - 1] + alpha * (thresholds[i] - thresholds[i - 1])
    return float(eer), float(threshold)


def compute_eer(s: ScoreSet) -> tuple[float, float]:
    """Equal error rate and the threshold where FAR and FRR cross.

    Raises:
        ProtocolError: if either class is empty
    """
    sweep = threshold_sweep(s)
    return _crossing(sweep.thresholds, sweep.far, sweep.frr)


def far_frr_at(s: ScoreSet, threshold: float) -> tuple[float, float]:
    s.require_both()
    far = float(np.mean(s.impostor_scores >= threshold))
    frr = float(np.mean(s.genuine_scores < threshold))
    return far, frr


def roc_curve(s: ScoreSet, n_points: int = 101) -> list[RocPoint]:
    """Sweep points, thinned to about n_points.

    Both extremes (FAR=1 and FAR=0) and the two points bracketing the EER
    crossing are always kept.

    Raises:
        ProtocolError: if either class is empty
    """
    sweep = threshold_sweep(s)
    total = sweep.thresholds.size
    if n_points >= total:
        keep = np.arange(total)
    else:
        keep = np.unique(np.round(np.linspace(0, total - 1, max(n_points, 2))).astype(int))
        crossing = int(np.argmax(sweep.far - sweep.frr <= 0))
        keep = np.union1d(keep, [max(crossing - 1, 0), crossing])
    return [
        RocPoint(threshold=float(sweep.thresholds[i]), far=float(sweep.far[i]), frr=float(sweep.frr[i]))
        for i in keep
    ]


def eer_from_roc(points: Sequence[RocPoint]) -> float:
    """EER read off a ROC curve (points ordered by increasing threshold)."""
    if not points:
        raise ProtocolError("Empty ROC curve")
    thresholds = np.array([p.threshold for p in points])
    far = np.array([p.far for p in points])
    frr = np.array([p.frr for p in points])
    return _crossing(thresholds, far, frr)[0]


def score_histogram(
    scores: Sequence[float], bins: int = 40, value_range: Optional[tuple[float, float]] = None
) -> tuple[np.ndarray, np.ndarray]:
    """(bin edges, counts)."""
    counts, edges = np.histogram(np.asarray(scores, dtype=np.float64), bins=bins, range=value_range)
    return edges, counts


# ============================================================================
# Report files
# ============================================================================


def write_histogram_dat(path, s: ScoreSet, bins: int = 40) -> Path:
    """Gnuplot columns: bin_center genuine_count impostor_count."""
    path = Path(path)
    all_scores = np.concatenate([s.genuine_scores, s.impostor_scores])
    lo, hi = (float(all_scores.min()), float(all_scores.max())) if all_scores.size else (0.0, 1.0)
    if hi <= lo:
        hi = lo + 1.0
    edges, genuine = score_histogram(s.genuine_scores, bins, (lo, hi))
    _, impostor = score_histogram(s.impostor_scores, bins, (lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    return _write_dat(
        path, f"# {s.label} score histogram\n# bin_center genuine impostor",
        np.column_stack([centers, genuine, impostor]), fmt=["%.6f", "%d", "%d"],
    )


def write_roc_dat(path, points: Sequence[RocPoint], label: str = "") -> Path:
    """Gnuplot columns: threshold far frr."""
    table = np.array([[p.threshold, p.far, p.frr] for p in points])
    return _write_dat(path, f"# {label} ROC\n# threshold far frr", table, fmt="%.8g")


def _write_dat(path, header: str, table: np.ndarray, fmt) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, table, header=header, comments="", fmt=fmt)
    except OSError as e:
        raise CorpusIOError(path, f"cannot write data file: {e}") from e
    return path


def write_scores_csv(path, rows: Sequence[dict]) -> Path:
    """Raw per-pair scores. Columns come from the first row."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            if not rows:
                return path
            writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    except OSError as e:
        raise CorpusIOError(path, f"cannot write CSV: {e}") from e
    return path
