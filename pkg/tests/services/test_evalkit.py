"""Tests for FAR/FRR sweeps, EER, ROC and report writers."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.errors import ProtocolError
from app.services.evalkit import (
    ScoreSet,
    compute_eer,
    eer_from_roc,
    far_frr_at,
    roc_curve,
    score_histogram,
    threshold_sweep,
    write_histogram_dat,
    write_roc_dat,
    write_scores_csv,
)

scores = st.lists(
    st.floats(min_value=-1.0, max_value=1.0, allow_nan=False), min_size=1, max_size=40
)


class TestComputeEer:
    """EER on hand-checked score sets."""

    def test_one_error_each_side(self):
        eer, threshold = compute_eer(ScoreSet([0.9, 0.8, 0.4], [0.5, 0.3, 0.1]))
        assert eer == pytest.approx(1 / 3)
        assert threshold == pytest.approx(0.5)

    def test_perfect_separation(self):
        eer, threshold = compute_eer(ScoreSet([0.8, 0.9], [0.1, 0.2]))
        assert eer == 0.0
        assert 0.2 < threshold <= 0.8

    def test_identical_scores(self):
        eer, _ = compute_eer(ScoreSet([0.5] * 4, [0.5] * 4))
        assert eer == pytest.approx(0.5)

    def test_fully_inverted(self):
        eer, _ = compute_eer(ScoreSet([0.1, 0.2], [0.8, 0.9]))
        assert eer == pytest.approx(1.0)

    @pytest.mark.parametrize("genuine, impostor", [([], [0.1]), ([0.9], [])])
    def test_empty_class(self, genuine, impostor):
        with pytest.raises(ProtocolError):
            compute_eer(ScoreSet(genuine, impostor))

    def test_non_finite_scores(self):
        with pytest.raises(ProtocolError):
            ScoreSet([float("nan")], [0.1])

    @given(
        genuine=st.lists(st.integers(-50, 50), min_size=1, max_size=30),
        impostor=st.lists(st.integers(-50, 50), min_size=1, max_size=30),
    )
    @settings(max_examples=100, deadline=None)
    def test_invariant_to_increasing_transforms(self, genuine, impostor):
        eer, _ = compute_eer(ScoreSet(genuine, impostor))
        for transform in (lambda x: x**3 + x, lambda x: np.exp(x / 10.0), lambda x: 0.01 * x - 7.0):
            mapped = ScoreSet(
                transform(np.asarray(genuine, float)), transform(np.asarray(impostor, float))
            )
            assert compute_eer(mapped)[0] == pytest.approx(eer, abs=1e-12)

    @given(genuine=scores, impostor=scores)
    @settings(max_examples=100, deadline=None)
    def test_invariant_to_duplicating_every_score(self, genuine, impostor):
        eer, threshold = compute_eer(ScoreSet(genuine, impostor))
        doubled = compute_eer(ScoreSet(genuine * 2, impostor * 2))
        assert doubled[0] == pytest.approx(eer, abs=1e-12)
        assert doubled[1] == pytest.approx(threshold, abs=1e-12)


class TestSweep:
    @given(genuine=scores, impostor=scores)
    @settings(max_examples=50, deadline=None)
    def test_far_falls_and_frr_rises(self, genuine, impostor):
        sweep = threshold_sweep(ScoreSet(genuine, impostor))
        assert np.all(np.diff(sweep.far) <= 0)
        assert np.all(np.diff(sweep.frr) >= 0)
        assert sweep.far[0] == 1.0 and sweep.far[-1] == 0.0
        assert sweep.frr[0] == 0.0 and sweep.frr[-1] == 1.0

    @given(genuine=scores, impostor=scores)
    @settings(max_examples=50, deadline=None)
    def test_eer_is_a_rate(self, genuine, impostor):
        eer, _ = compute_eer(ScoreSet(genuine, impostor))
        assert 0.0 <= eer <= 1.0

    def test_far_frr_at_threshold_is_inclusive(self):
        s = ScoreSet([0.9, 0.5, 0.2], [0.5, 0.1])
        far, frr = far_frr_at(s, 0.5)
        assert far == pytest.approx(0.5)
        assert frr == pytest.approx(1 / 3)


class TestRoc:
    def test_full_roc_reproduces_eer(self):
        rng = np.random.default_rng(0)
        s = ScoreSet(rng.normal(1.0, 0.5, 200), rng.normal(0.0, 0.5, 300))
        points = roc_curve(s, n_points=10_000)
        assert eer_from_roc(points) == pytest.approx(compute_eer(s)[0], abs=1e-12)

    def test_thinned_roc_keeps_extremes_and_crossing(self):
        rng = np.random.default_rng(1)
        s = ScoreSet(rng.normal(1.0, 0.5, 200), rng.normal(0.0, 0.5, 300))
        points = roc_curve(s, n_points=11)
        assert len(points) <= 13
        assert points[0].far == 1.0 and points[-1].far == 0.0
        assert eer_from_roc(points) == pytest.approx(compute_eer(s)[0], abs=1e-12)

    def test_thresholds_increase(self):
        points = roc_curve(ScoreSet([0.9, 0.7, 0.4], [0.5, 0.2]))
        thresholds = [p.threshold for p in points]
        assert thresholds == sorted(thresholds)

    def test_empty_roc(self):
        with pytest.raises(ProtocolError):
            eer_from_roc([])


class TestWriters:
    """Gnuplot .dat and CSV report files."""

    def test_histogram_counts(self, tmp_path):
        s = ScoreSet([0.9, 0.8, 0.7], [0.1, 0.2], label="cell")
        path = write_histogram_dat(tmp_path / "hist.dat", s, bins=5)
        table = np.loadtxt(path, comments="#")
        assert table.shape == (5, 3)
        assert table[:, 1].sum() == 3
        assert table[:, 2].sum() == 2
        assert path.read_text().startswith("# cell score histogram")

    def test_roc_file(self, tmp_path):
        points = roc_curve(ScoreSet([0.9, 0.8], [0.1, 0.5]))
        table = np.loadtxt(write_roc_dat(tmp_path / "roc.dat", points), comments="#")
        assert table.shape == (len(points), 3)

    def test_scores_csv(self, tmp_path):
        path = write_scores_csv(tmp_path / "out" / "scores.csv", [{"pair_id": "a", "score": 0.5}])
        assert path.read_text().splitlines() == ["pair_id,score", "a,0.5"]

    def test_score_histogram_range(self):
        edges, counts = score_histogram([0.0, 0.5, 1.0], bins=2, value_range=(0.0, 1.0))
        assert edges.tolist() == [0.0, 0.5, 1.0]
        assert counts.tolist() == [1, 2]
