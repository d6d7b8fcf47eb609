"""Tests for Stage I temporal consistency scoring."""
import numpy as np
import pytest

from app.errors import NoVoicedContentError, ProtocolError, SignalError
from app.schemas.pipeline import TcsConfig, TcsGrid
from app.schemas.synth import AttackClass
from app.services.signal_core import Spectrogram, Waveform, stft
from app.services.synthgen import AirBonePair, synth_utterance
from app.services.tcs import (
    REJECT_SCORE,
    score_or_reject,
    score_spectrograms,
    tcs_grid_search,
    tcs_score,
    top_bins,
)


def brute_force_score(ac: Waveform, bc: Waveform, cfg: TcsConfig) -> float:
    """Loop-by-loop reference for the power-marginal, magnitude-row score."""
    A = stft(ac, cfg.frame).magnitudes
    B = stft(bc, cfg.frame).magnitudes
    n_bins, n_frames = A.shape
    bc_energy = [sum(B[k, t] ** 2 for k in range(n_bins)) for t in range(n_frames)]
    peak = max(bc_energy)
    loud = [t for t in range(n_frames) if bc_energy[t] >= cfg.silence_fraction * peak]
    frames = list(range(loud[0], loud[-1] + 1))

    def top(mags, count):
        energy = [sum(mags[k, t] ** 2 for t in frames) for k in range(n_bins)]
        return sorted(range(n_bins), key=lambda k: (-energy[k], k))[:count]

    best = -1.0
    for i in top(A, cfg.m):
        for j in top(B, cfg.n):
            r = np.corrcoef(A[i, frames], B[j, frames])[0, 1]
            best = max(best, r)
    return best


@pytest.fixture
def speech(speakers):
    return synth_utterance(speakers[2], 2.0, seed=4)


def _pair(ac, bc):
    return AirBonePair(ac=ac, bc=bc)


# ============================================================================
# Scoring
# ============================================================================


class TestTcsScore:
    """tcs_score on hand-built pairs."""

    def test_identical_domains_score_one(self, speech):
        result = tcs_score(_pair(speech, speech), TcsConfig())
        assert result.score == pytest.approx(1.0, abs=1e-9)
        assert result.accepted
        assert result.selected_ac_bins == result.selected_bc_bins

    def test_matches_brute_force(self, pair_factory):
        pair = pair_factory(duration_s=2.0, ac_snr_db=10.0)
        cfg = TcsConfig(m=3, n=4)
        expected = brute_force_score(pair.ac, pair.bc, cfg)
        assert tcs_score(pair, cfg).score == pytest.approx(expected, abs=1e-9)

    def test_result_shape(self, pair_factory):
        result = tcs_score(pair_factory(duration_s=2.0), TcsConfig(m=3, n=4))
        assert len(result.correlation_matrix) == 3
        assert all(len(row) == 4 for row in result.correlation_matrix)
        assert result.score == pytest.approx(max(max(row) for row in result.correlation_matrix))
        assert all(f < 4000.0 for f in result.selected_bc_hz)

    def test_scale_invariant(self, pair_factory):
        pair = pair_factory(duration_s=2.0)
        scaled = _pair(
            pair.ac.with_samples(3.0 * pair.ac.samples), pair.bc.with_samples(0.2 * pair.bc.samples)
        )
        cfg = TcsConfig()
        assert tcs_score(scaled, cfg).score == pytest.approx(tcs_score(pair, cfg).score, abs=1e-9)

    @pytest.mark.parametrize("m, n", [(1, 1), (2, 3), (5, 5), (8, 2)])
    def test_monotone_in_m_and_n(self, pair_factory, m, n):
        pair = pair_factory(duration_s=2.0, ac_snr_db=5.0)
        base = tcs_score(pair, TcsConfig(m=m, n=n)).score
        assert tcs_score(pair, TcsConfig(m=m + 1, n=n)).score >= base
        assert tcs_score(pair, TcsConfig(m=m, n=n + 1)).score >= base

    def test_threshold_is_strict(self, speech):
        result = tcs_score(_pair(speech, speech), TcsConfig(threshold=1.0))
        assert not result.accepted

    def test_genuine_accepted_false_trigger_rejected(self, pair_factory):
        genuine = tcs_score(pair_factory(), TcsConfig())
        false_trigger = tcs_score(pair_factory(attack=AttackClass.FALSE_TRIGGER), TcsConfig())
        assert genuine.accepted
        assert not false_trigger.accepted
        assert genuine.score > false_trigger.score

    def test_appended_silence_does_not_change_score(self, pair_factory):
        pair = pair_factory(duration_s=2.0)
        # 5 ms windows with 1 ms overlap at 8 kHz: 40-sample window, 32-sample hop
        n = 40 + 32 * ((min(len(pair.ac), len(pair.bc)) - 40) // 32)
        silence = np.zeros(32 * 64)

        def trimmed(w):
            return w.with_samples(w.samples[:n])

        def padded(w):
            return w.with_samples(np.concatenate([silence, w.samples[:n], silence]))

        cfg = TcsConfig()
        base = tcs_score(_pair(trimmed(pair.ac), trimmed(pair.bc)), cfg)
        quiet = tcs_score(_pair(padded(pair.ac), padded(pair.bc)), cfg)
        assert quiet.score == pytest.approx(base.score, abs=1e-9)
        assert quiet.selected_ac_bins == base.selected_ac_bins
        assert quiet.frames_used == base.frames_used

    def test_permuting_tied_bins_does_not_change_score(self):
        rng = np.random.default_rng(3)
        # dyadic magnitudes keep the tied power sums exact
        ac = rng.integers(1, 9, size=(8, 30)) / 8.0
        ac[2] = ac[1][::-1]
        ac[1:3] *= 5.0
        bc = rng.uniform(0.1, 1.0, size=(8, 30))
        bc[4] += 3.0 * ac[1]

        def spectrogram(mags):
            return Spectrogram(
                magnitudes=mags,
                bin_frequencies=np.arange(8) * 100.0,
                frame_times=np.arange(30) * 0.004,
                scale="linear",
            )

        cfg = TcsConfig(m=3, n=3)
        swapped = ac[[0, 2, 1, 3, 4, 5, 6, 7]]
        base = score_spectrograms(spectrogram(ac), spectrogram(bc), cfg)
        permuted = score_spectrograms(spectrogram(swapped), spectrogram(bc), cfg)
        assert base.selected_ac_bins[:2] == [1, 2]
        assert permuted.score == pytest.approx(base.score, abs=1e-12)

    def test_silent_bc(self, speech):
        silent = speech.with_samples(np.zeros(len(speech)))
        with pytest.raises(NoVoicedContentError):
            tcs_score(_pair(speech, silent), TcsConfig())
        assert score_or_reject(_pair(speech, silent), TcsConfig()) == REJECT_SCORE

    def test_rejects_too_many_bins(self, speech):
        # 5 ms at 8 kHz -> 64-point FFT -> 33 bins
        with pytest.raises(SignalError):
            tcs_score(_pair(speech, speech), TcsConfig(m=34))

    def test_rejects_rate_mismatch(self, speech):
        other = Waveform(speech.samples, 16000)
        with pytest.raises(SignalError):
            tcs_score(_pair(speech, other), TcsConfig())


class TestTopBins:
    def test_descending_with_ties_to_lower_index(self):
        assert top_bins(np.array([1.0, 3.0, 3.0, 2.0, 0.5]), 3).tolist() == [1, 2, 3]

    def test_count_larger_than_input(self):
        assert top_bins(np.array([2.0, 1.0]), 5).tolist() == [0, 1]


# ============================================================================
# Grid search
# ============================================================================


class TestGridSearch:
    @pytest.fixture
    def dev_set(self, speech, noise_factory):
        impostor = _pair(speech, noise_factory(duration_s=2.0, scale=0.3, seed=5))
        return [(_pair(speech, speech), True), (impostor, False)]

    def test_ties_go_to_smallest_configuration(self, dev_set):
        grid = TcsGrid(m_values=[5, 3], n_values=[8, 3], window_ms_values=[20.0, 10.0])
        result = tcs_grid_search(dev_set, grid)
        assert len(result.candidates) == 8
        assert all(c.eer == 0.0 for c in result.candidates)
        assert (result.selected.m, result.selected.n) == (3, 3)
        assert result.selected.frame.window_ms == 10.0
        assert result.selected.frame.overlap_ms == pytest.approx(1.0)

    def test_selected_minimizes_eer(self, pair_factory):
        pairs = [(pair_factory(duration_s=2.0, seed=s), True) for s in range(3)]
        pairs += [
            (pair_factory(attack=AttackClass.FALSE_TRIGGER, duration_s=2.0, seed=s), False)
            for s in range(3)
        ]
        grid = TcsGrid(m_values=[1, 3], n_values=[1, 3], window_ms_values=[5.0])
        result = tcs_grid_search(pairs, grid)
        best = min(c.eer for c in result.candidates)
        selected = (result.selected.m, result.selected.n)
        chosen = [c for c in result.candidates if (c.m, c.n) == selected]
        assert chosen[0].eer == best

    def test_single_candidate(self, dev_set):
        grid = TcsGrid(m_values=[2], n_values=[2], window_ms_values=[5.0])
        result = tcs_grid_search(dev_set, grid)
        assert (result.selected.m, result.selected.n) == (2, 2)

    def test_overlap_beyond_half_window_rejected(self):
        with pytest.raises(ValueError):
            TcsGrid(window_ms_values=[20.0, 5.0], overlap_ms=3.0)

    def test_overlap_at_half_window_kept(self, dev_set):
        grid = TcsGrid(m_values=[2], n_values=[2], window_ms_values=[5.0], overlap_ms=2.5)
        result = tcs_grid_search(dev_set, grid)
        assert result.selected.frame.overlap_ms == pytest.approx(2.5)

    def test_needs_both_classes(self, dev_set):
        with pytest.raises(ProtocolError):
            tcs_grid_search([dev_set[0]], TcsGrid())
