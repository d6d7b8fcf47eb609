"""Corpus-scale acceptance checks. Deselected by default; run with `pytest -m slow`."""
import numpy as np
import pytest

from app.schemas.pipeline import EvaluationConfig, InitConfig, LayerTag, PipelineConfig, SyncConfig
from app.schemas.synth import AttackClass, SceneMix, ground_truth_for
from app.services.bcsr.spoof_detector import MachineDetector
from app.services.bcsr.training import train
from app.services.evalkit import ScoreSet, compute_eer
from app.services.experiments import corpus_features, run_experiment, training_entries
from app.services.pipeline_init import initialize
from app.services.synthgen import build_corpus, load_corpus

pytestmark = pytest.mark.slow

MACHINE = ground_truth_for(AttackClass.CROSSDOMAIN_MACHINE)


def train_on_corpus(corpus, cfg):
    entries = training_entries(corpus, cfg)
    return train(
        corpus_features(corpus, entries, cfg),
        sorted({e.speaker_id for e in entries}),
        cfg.bcsr.network,
        cfg.bcsr.training,
        cfg.bcsr.features,
        layer_tag=cfg.bcsr.layer_tag,
    )


def brute_force_eer(genuine, impostor):
    """Loop-by-loop sweep: accept on score >= t, first crossing, linear interpolation."""
    values = sorted(set(genuine) | set(impostor))
    thresholds = values + [float(np.nextafter(values[-1], np.inf))]
    far = [sum(s >= t for s in impostor) / len(impostor) for t in thresholds]
    frr = [sum(s < t for s in genuine) / len(genuine) for t in thresholds]
    for i, t in enumerate(thresholds):
        gap = far[i] - frr[i]
        if gap > 0:
            continue
        if gap == 0 or i == 0:
            return far[i]
        prev = far[i - 1] - frr[i - 1]
        alpha = prev / (prev - gap)
        return far[i - 1] + alpha * (far[i] - far[i - 1])
    raise AssertionError("FAR never meets FRR")


# ============================================================================
# Stage I
# ============================================================================


@pytest.fixture(scope="module")
def stage1_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance") / "stage1"
    mix = SceneMix(
        attacks={AttackClass.NONE: 0.5, AttackClass.FALSE_TRIGGER: 0.5},
        durations_s=[4.0, 6.0, 8.0],
    )
    build_corpus(20, 40, mix, seed=11, out_dir=out, workers=4)
    return load_corpus(out)


@pytest.fixture(scope="module")
def acceptance_cfg():
    return PipelineConfig(
        evaluation=EvaluationConfig(ac_snr_grid=[None], bc_snr_grid=[None, 5.0, 0.0])
    )


class TestStage1Acceptance:
    def test_false_trigger_eer_per_duration(self, stage1_corpus, acceptance_cfg, tmp_path):
        report = run_experiment(
            stage1_corpus, acceptance_cfg, "stage1_normal_vs_false_trigger", tmp_path
        )
        by_duration = report.metrics["eer_by_duration"]
        assert set(by_duration) == {"4", "6", "8"}
        assert all(eer <= 0.05 for eer in by_duration.values())

    def test_clean_grid_cell_matches_plain_protocol(
        self, stage1_corpus, acceptance_cfg, tmp_path
    ):
        plain = run_experiment(
            stage1_corpus, acceptance_cfg, "stage1_normal_vs_false_trigger", tmp_path / "plain"
        )
        grid = run_experiment(stage1_corpus, acceptance_cfg, "stage1_noise_grid", tmp_path / "grid")
        clean = next(
            c for c in grid.metrics["grid"] if c["ac_snr_db"] is None and c["bc_snr_db"] is None
        )
        overall = next(e for e in plain.eers if e.label == "all")
        assert clean["eer"] == pytest.approx(overall.eer)

    def test_eer_does_not_improve_as_bc_snr_drops(self, stage1_corpus, acceptance_cfg, tmp_path):
        grid = run_experiment(stage1_corpus, acceptance_cfg, "stage1_noise_grid", tmp_path)
        eers = [c["eer"] for c in grid.metrics["grid"]]
        assert eers[0] <= eers[1] + 0.01 <= eers[2] + 0.02

    def test_ac_noise_costs_at_most_two_points(self, stage1_corpus, tmp_path):
        cfg = PipelineConfig(
            evaluation=EvaluationConfig(
                ac_snr_grid=[None, 5.0, 0.0, -5.0, -10.0], bc_snr_grid=[None]
            )
        )
        grid = run_experiment(stage1_corpus, cfg, "stage1_noise_grid", tmp_path)
        eers = [c["eer"] for c in grid.metrics["grid"]]
        assert [c["ac_snr_db"] for c in grid.metrics["grid"]] == [None, 5.0, 0.0, -5.0, -10.0]
        assert max(eers) - eers[0] <= 0.02

    def test_acoustic_attack_batteries(self, tmp_path_factory, tmp_path):
        out = tmp_path_factory.mktemp("attacks") / "corpus"
        mix = SceneMix(
            attacks={
                AttackClass.NONE: 0.4,
                AttackClass.ACOUSTIC_IMPERSONATION: 0.3,
                AttackClass.ACOUSTIC_REPLAY: 0.3,
            },
            durations_s=[4.0],
        )
        build_corpus(10, 30, mix, seed=5, out_dir=out, workers=4)
        report = run_experiment(
            load_corpus(out), PipelineConfig(), "stage1_acoustic_attacks", tmp_path
        )
        eer = report.metrics["eer"]
        assert eer["attack:acoustic_impersonation"] <= 0.10
        assert eer["attack:acoustic_replay"] <= 0.10


class TestDelayAcceptance:
    """Injected delays on clean coupled pairs."""

    @pytest.fixture
    def delayed_pairs(self, pair_factory, speakers):
        rng = np.random.default_rng(17)
        delays = rng.integers(-400, 401, size=100)
        return [
            (
                int(d),
                pair_factory(
                    delay_samples=int(d), seed=i, speaker=i % len(speakers), duration_s=5.0
                ),
            )
            for i, d in enumerate(delays)
        ]

    @staticmethod
    def _errors(pairs, num_frames):
        cfg = InitConfig(sync=SyncConfig(num_frames=num_frames))
        return np.array([
            abs(initialize(pair.ac, pair.bc, cfg).metadata["estimated_delay_samples"] - delay)
            for delay, pair in pairs
        ])

    def test_every_delay_recovered_within_two_samples(self, delayed_pairs):
        errors = self._errors(delayed_pairs, SyncConfig().num_frames)
        assert np.all(errors <= 2), errors.max()

    def test_error_does_not_grow_with_more_frames(self, delayed_pairs):
        mae = {k: float(np.mean(self._errors(delayed_pairs, k))) for k in (1, 4, 16)}
        assert mae[16] <= mae[4] <= mae[1], mae


# ============================================================================
# Stage II
# ============================================================================


@pytest.fixture(scope="module")
def stage2_corpus(tmp_path_factory):
    """13 speakers: 8 for training, the last 5 held out as unseen users."""
    out = tmp_path_factory.mktemp("acceptance") / "stage2"
    mix = SceneMix(
        attacks={AttackClass.NONE: 0.75, AttackClass.CROSSDOMAIN_MACHINE: 0.25},
        durations_s=[9.0],
    )
    build_corpus(13, 16, mix, seed=23, out_dir=out, workers=4)
    return load_corpus(out)


@pytest.fixture(scope="module")
def stage2_cfg():
    return PipelineConfig(evaluation=EvaluationConfig(new_users=5))


@pytest.fixture(scope="module")
def stage2_model(stage2_corpus, stage2_cfg):
    return train_on_corpus(stage2_corpus, stage2_cfg)


class TestStage2Acceptance:
    def test_identification_on_eight_speakers(
        self, stage2_corpus, stage2_cfg, stage2_model, tmp_path
    ):
        assert len(stage2_model.speaker_ids) == 8
        report = run_experiment(
            stage2_corpus, stage2_cfg, "stage2_identification", tmp_path, model=stage2_model
        )
        assert report.metrics["n_speakers"] == 8
        assert report.metrics["accuracy"] >= 0.95

    def test_verification_improves_with_enrollment(
        self, stage2_corpus, stage2_cfg, stage2_model, tmp_path
    ):
        report = run_experiment(
            stage2_corpus, stage2_cfg, "stage2_verification", tmp_path, model=stage2_model
        )
        assert report.metrics["repeats"] == 5
        mean_eer = report.metrics["mean_eer"][LayerTag.FC512.value]
        assert mean_eer["40"] <= mean_eer["24"] <= mean_eer["8"]
        assert mean_eer["40"] <= 0.15

    def test_machine_detection_and_strict_aggregation(
        self, stage2_corpus, stage2_cfg, stage2_model, tmp_path
    ):
        detection = run_experiment(
            stage2_corpus, stage2_cfg, "machine_detection", tmp_path / "detect", model=stage2_model
        )
        lda = next(c for c in detection.metrics["classifiers"] if c["classifier"] == "lda")
        assert {d["device_profile"] for d in lda["per_device"]} == {"laptop", "phone", "conference"}
        assert all(d["accuracy"] >= 0.95 for d in lda["per_device"])

        detector = MachineDetector.load(tmp_path / "detect" / detection.files["detector"])
        overall = run_experiment(
            stage2_corpus, stage2_cfg, "overall_strict_aggregation", tmp_path / "overall",
            model=stage2_model, detector=detector,
        )
        machine = overall.metrics["per_class"][MACHINE]
        passed = machine["stage1_accept_rate"] * machine["n"]
        accepted = machine["final_accept_rate"] * machine["n"]
        assert passed > 0
        assert accepted <= 0.05 * passed


# ============================================================================
# Metrics and determinism
# ============================================================================


class TestMetricAcceptance:
    def test_compute_eer_matches_brute_force(self):
        rng = np.random.default_rng(29)
        for _ in range(1000):
            genuine = np.round(rng.normal(0.5, 0.3, size=rng.integers(1, 40)), 2).tolist()
            impostor = np.round(rng.normal(0.0, 0.3, size=rng.integers(1, 40)), 2).tolist()
            eer, _ = compute_eer(ScoreSet(genuine, impostor))
            assert eer == pytest.approx(brute_force_eer(genuine, impostor), abs=1e-9)

    def test_random_increasing_transforms(self):
        rng = np.random.default_rng(31)
        genuine = np.round(rng.normal(0.5, 0.3, size=60), 2)
        impostor = np.round(rng.normal(0.0, 0.3, size=60), 2)
        eer, _ = compute_eer(ScoreSet(genuine, impostor))
        for _ in range(100):
            a, b, c = rng.uniform(0.0, 2.0), rng.uniform(0.1, 2.0), rng.normal()

            def transform(x):
                return a * x**3 + b * x + c

            mapped = ScoreSet(transform(genuine), transform(impostor))
            assert compute_eer(mapped)[0] == pytest.approx(eer, abs=1e-9)


class TestDeterminism:
    def test_two_runs_are_byte_identical(self, corpus_factory, pipeline_cfg, tmp_path):
        attacks = {
            AttackClass.NONE: 0.6,
            AttackClass.FALSE_TRIGGER: 0.2,
            AttackClass.CROSSDOMAIN_MACHINE: 0.2,
        }
        runs = []
        for name in ("first", "second"):
            corpus = corpus_factory(n_speakers=5, utts=6, attacks=attacks, seed=41, name=name)
            model = train_on_corpus(corpus, pipeline_cfg)
            out = tmp_path / f"{name}_out"
            run_experiment(corpus, pipeline_cfg, "stage1_normal_vs_false_trigger", out / "stage1")
            overall = run_experiment(
                corpus, pipeline_cfg, "overall_strict_aggregation", out / "overall", model=model
            )
            runs.append((corpus.root, out, overall))

        (root_a, out_a, overall_a), (root_b, out_b, overall_b) = runs
        assert (root_a / "manifest.json").read_bytes() == (root_b / "manifest.json").read_bytes()
        for protocol in ("stage1", "overall"):
            assert (out_a / protocol / "scores.csv").read_bytes() == (
                out_b / protocol / "scores.csv"
            ).read_bytes()
        assert overall_a.metrics == overall_b.metrics
