"""Stage I: air/bone temporal consistency scoring.

Steps on an initialized pair:
1. BC marginal (power by default) over frequency, per frame.
2. Keep frames from the first to the last one at or above
   silence_fraction x the max marginal.
3. Per-bin marginals over the kept frames, for both domains.
4. Top-M AC bins and top-N BC bins by descending marginal. Ties go to the
   lower bin index.
5. C[m, n] = Pearson(AC row m, BC row n) over the kept frames.
6. S = max(C). Accept iff S > threshold.
"""
import logging
from typing import Optional, Sequence

import numpy as np

from app.errors import NoVoicedContentError, ProtocolError, SignalError
from app.schemas.pipeline import TcsConfig, TcsGrid
from app.schemas.results import GridCandidate, GridSearchResult, TcsResult
from app.schemas.signal import FrameSpec
from app.services.evalkit import ScoreSet, compute_eer
from app.services.signal_core import Spectrogram, Waveform, pearson_matrix, stft
from app.services.synthgen import AirBonePair

logger = logging.getLogger(__name__)

MIN_DURATION_S = 1.0

# Score recorded for pairs with no voiced content when a number is needed
REJECT_SCORE = -1.0


def _common_length(ac: Waveform, bc: Waveform) -> tuple[Waveform, Waveform]:
    if ac.sample_rate != bc.sample_rate:
        raise SignalError(f"Pair is not rate matched: AC {ac.sample_rate} Hz, BC {bc.sample_rate} Hz")
    n = min(len(ac), len(bc))
    return ac.with_samples(ac.samples[:n]), bc.with_samples(bc.samples[:n])


def spectrograms(pair: AirBonePair, frame: FrameSpec) -> tuple[Spectrogram, Spectrogram]:
    ac, bc = _common_length(pair.ac, pair.bc)
    if ac.duration_s < MIN_DURATION_S:
        logger.warning(f"Scoring a {ac.duration_s:.2f} s pair; Stage I expects at least {MIN_DURATION_S} s")
    return stft(ac, frame), stft(bc, frame)


def voiced_span(bc_marginal: np.ndarray, silence_fraction: float) -> slice:
    """Frames from the first to the last at or above silence_fraction x max."""
    peak = float(np.max(bc_marginal)) if bc_marginal.size else 0.0
    if peak <= 0:
        raise NoVoicedContentError("BC marginal is zero in every frame")
    loud = np.flatnonzero(bc_marginal >= silence_fraction * peak)
    span = slice(int(loud[0]), int(loud[-1]) + 1)
    if span.stop - span.start < 2:
        raise NoVoicedContentError(f"Only {span.stop - span.start} voiced frame(s) after trimming")
    return span


def top_bins(marginal: np.ndarray, count: int) -> np.ndarray:
    """Indices of the `count` largest entries, descending, ties to the lower index."""
    return np.argsort(-marginal, kind="stable")[:count]


def score_spectrograms(ac_spec: Spectrogram, bc_spec: Spectrogram, cfg: TcsConfig) -> TcsResult:
    """Score precomputed STFT magnitudes: trim silence, pick top bins, correlate rows."""
    A, B = ac_spec.magnitudes, bc_spec.magnitudes
    n_bins = A.shape[0]
    if not 1 <= cfg.m <= n_bins or not 1 <= cfg.n <= n_bins:
        raise SignalError(f"M={cfg.m}, N={cfg.n} must be within [1, {n_bins}] bins")

    def marginal_values(mags: np.ndarray) -> np.ndarray:
        return mags**2 if cfg.marginal == "power" else mags

    span = voiced_span(marginal_values(B).sum(axis=0), cfg.silence_fraction)
    A_t, B_t = A[:, span], B[:, span]
    m_idx = top_bins(marginal_values(A_t).sum(axis=1), cfg.m)
    n_idx = top_bins(marginal_values(B_t).sum(axis=1), cfg.n)

    rows_a, rows_b = A_t[m_idx], B_t[n_idx]
    if cfg.rows == "power":
        rows_a, rows_b = rows_a**2, rows_b**2
    C = pearson_matrix(rows_a, rows_b)
    score = float(C.max())
    return TcsResult(
        score=score,
        selected_ac_bins=[int(i) for i in m_idx],
        selected_bc_bins=[int(i) for i in n_idx],
        selected_ac_hz=[float(ac_spec.bin_frequencies[i]) for i in m_idx],
        selected_bc_hz=[float(bc_spec.bin_frequencies[i]) for i in n_idx],
        correlation_matrix=C.tolist(),
        threshold=cfg.threshold,
        accepted=score > cfg.threshold,
        frames_used=span.stop - span.start,
    )


def tcs_score(pair: AirBonePair, cfg: TcsConfig) -> TcsResult:
    """Score an initialized pair.

    Raises:
        NoVoicedContentError: if trimming leaves no voiced frames
        SignalError: if the pair is not rate matched or M/N exceed the bin count
    """
    ac_spec, bc_spec = spectrograms(pair, cfg.frame)
    result = score_spectrograms(ac_spec, bc_spec, cfg)
    logger.debug(f"TCS {pair.pair_id or ''}: S={result.score:.4f} accepted={result.accepted}")
    return result


def score_or_reject(pair: AirBonePair, cfg: TcsConfig) -> float:
    """Numeric score for batch evaluation; all-silent pairs get REJECT_SCORE."""
    try:
        return tcs_score(pair, cfg).score
    except NoVoicedContentError:
        logger.warning(f"No voiced content in {pair.pair_id or 'pair'}, scoring as {REJECT_SCORE}")
        return REJECT_SCORE


# ============================================================================
# Grid search
# ============================================================================


def tcs_grid_search(
    labeled_pairs: Sequence[tuple[AirBonePair, bool]],
    grid: TcsGrid,
    base: Optional[TcsConfig] = None,
) -> GridSearchResult:
    """Pick (M, N, window) minimizing dev-set EER (genuine vs impostor).

    Ties are broken by smaller M+N, then smaller window.

    Raises:
        ProtocolError: if the dev set lacks one of the two classes
    """
    base = base or TcsConfig()
    n_genuine = sum(1 for _, is_genuine in labeled_pairs if is_genuine)
    if n_genuine == 0 or n_genuine == len(labeled_pairs):
        raise ProtocolError("Grid search needs both genuine and impostor pairs (EER undefined)")

    candidates: list[GridCandidate] = []
    for window_ms in grid.window_ms_values:
        frame = FrameSpec.from_overlap(
            window_ms, grid.overlap_ms, window_function=base.frame.window_function
        )
        specs = [(spectrograms(pair, frame), is_genuine) for pair, is_genuine in labeled_pairs]
        for m in grid.m_values:
            for n in grid.n_values:
                cfg = base.model_copy(update={"m": m, "n": n, "frame": frame})
                genuine, impostor = [], []
                for (ac_spec, bc_spec), is_genuine in specs:
                    try:
                        score = score_spectrograms(ac_spec, bc_spec, cfg).score
                    except NoVoicedContentError:
                        score = REJECT_SCORE
                    (genuine if is_genuine else impostor).append(score)
                eer, threshold = compute_eer(ScoreSet(genuine, impostor, label=f"m{m}n{n}w{window_ms}"))
                candidates.append(
                    GridCandidate(m=m, n=n, window_ms=window_ms, eer=eer, threshold=threshold)
                )
                logger.debug(f"Grid M={m} N={n} window={window_ms} ms: EER {eer:.4f}")

    best = min(candidates, key=lambda c: (c.eer, c.m + c.n, c.window_ms))
    frame = FrameSpec.from_overlap(
        best.window_ms, grid.overlap_ms, window_function=base.frame.window_function
    )
    selected = base.model_copy(update={"m": best.m, "n": best.n, "frame": frame})
    logger.info(
        f"Grid search selected M={best.m} N={best.n} window={best.window_ms} ms (EER {best.eer:.4f})"
    )
    return GridSearchResult(selected=selected, candidates=candidates)
