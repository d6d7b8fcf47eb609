"""Test fixtures and configuration.

Configs here are shrunk (1 s feature segments, 12 CQT bins per octave, a
two-block network) so Stage II tests run in seconds on a CPU.
"""
import numpy as np
import pytest

from app.schemas.pipeline import (
    BcsrConfig,
    EvaluationConfig,
    FeatureConfig,
    NetworkConfig,
    PathsConfig,
    PipelineConfig,
    TrainingConfig,
)
from app.schemas.synth import AttackClass, SceneMix, SceneSpec
from app.services.bcsr.features import BcFeature
from app.services.bcsr.training import train
from app.services.signal_core import Spectrogram, Waveform, cqt_bin_count
from app.services.synthgen import (
    build_corpus,
    load_corpus,
    render_pair,
    sample_speakers,
    synth_utterance,
)

FS = 8000


# ---------------------------------------------------------------------------
# Signals
# ---------------------------------------------------------------------------


@pytest.fixture
def sine_factory():
    """Factory for pure tones."""
    def _create(freq=1000.0, duration_s=1.0, sample_rate=FS, amplitude=1.0, phase=0.0):
        t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
        return Waveform(amplitude * np.sin(2 * np.pi * freq * t + phase), sample_rate)
    return _create


@pytest.fixture
def noise_factory():
    """Factory for seeded white noise."""
    def _create(duration_s=1.0, sample_rate=FS, scale=1.0, seed=0):
        rng = np.random.default_rng(seed)
        return Waveform(scale * rng.normal(size=int(round(duration_s * sample_rate))), sample_rate)
    return _create


# ---------------------------------------------------------------------------
# Synthetic speakers and pairs
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def speakers():
    return sample_speakers(4, seed=7)


@pytest.fixture
def pair_factory(speakers):
    """Factory to render AirBonePairs for any attack class.

    Extra keyword arguments go to SceneSpec (ac_snr_db, delay_samples, ...).
    """
    def _create(attack=AttackClass.NONE, duration_s=4.0, seed=0, speaker=0, **scene_fields):
        model = speakers[speaker]
        attacker = speakers[(speaker + 1) % len(speakers)]
        if attack == AttackClass.CROSSDOMAIN_MACHINE:
            scene_fields.setdefault("device_profile", "laptop")
        scene = SceneSpec(attack=attack, **scene_fields)
        clear = synth_utterance(model, duration_s, seed)
        return render_pair(
            clear,
            model,
            scene,
            seed,
            attacker_model=attacker,
            attacker_clear=synth_utterance(attacker, duration_s, seed + 1),
            source=synth_utterance(model, duration_s, seed + 2),
            pair_id=f"{model.speaker_id}-{seed:03d}",
        )
    return _create


# ---------------------------------------------------------------------------
# Small configs
# ---------------------------------------------------------------------------


@pytest.fixture
def feature_cfg():
    # 47 bins over 4 octaves; hop must be a multiple of 8
    return FeatureConfig(
        segment_seconds=1.0, bins_per_octave=12, f_min=65.4, f_max=1000.0, hop_length=64
    )


@pytest.fixture
def network_cfg():
    return NetworkConfig(channels=(4, 8), embedding_dim=16, condition_hidden=8, lambda_=0.1)


@pytest.fixture
def training_cfg():
    return TrainingConfig(
        epochs=2, batch_size=8, validation_fraction=0.0, pretrain_epochs=1, seed=0
    )


@pytest.fixture
def pipeline_cfg(tmp_path, feature_cfg, network_cfg, training_cfg):
    """Pipeline config with small Stage II settings and stores under tmp_path."""
    return PipelineConfig(
        bcsr=BcsrConfig(features=feature_cfg, network=network_cfg, training=training_cfg),
        paths=PathsConfig(model_dir=tmp_path / "model", template_store=tmp_path / "templates.json"),
        evaluation=EvaluationConfig(
            enrollment_seconds=[1.0, 2.0],
            new_users=2,
            ac_snr_grid=[None, 0.0],
            bc_snr_grid=[None],
            roc_points=21,
            histogram_bins=10,
        ),
    )


# ---------------------------------------------------------------------------
# Stage II factories
# ---------------------------------------------------------------------------


@pytest.fixture
def feature_factory(feature_cfg):
    """Factory for synthetic CQT features.

    Each speaker index gets a bump on its own band of bins so a small
    network can tell speakers apart.
    """
    n_bins = cqt_bin_count(feature_cfg.bins_per_octave, feature_cfg.f_min, feature_cfg.f_max)
    n_frames = 1 + feature_cfg.segment_samples // feature_cfg.hop_length
    freqs = feature_cfg.f_min * 2.0 ** (np.arange(n_bins) / feature_cfg.bins_per_octave)
    times = np.arange(n_frames) * feature_cfg.hop_length / feature_cfg.sample_rate

    def _create(speaker=0, condition="still", seed=0, speaker_label=None):
        rng = np.random.default_rng([speaker, seed])
        values = rng.random((n_bins, n_frames)) + 1e-3
        band = slice((speaker * 8) % n_bins, (speaker * 8) % n_bins + 5)
        values[band] += 5.0
        spec = Spectrogram(magnitudes=values, bin_frequencies=freqs, frame_times=times, scale="log")
        label = speaker_label if speaker_label is not None else f"spk{speaker:02d}"
        return BcFeature(cqt=spec, condition_label=condition, speaker_label=label)
    return _create


@pytest.fixture
def tiny_model(feature_factory, feature_cfg, network_cfg, training_cfg):
    """A briefly trained network over three synthetic speakers."""
    conditions = ("still", "turning", "nodding", "moving")
    features = [
        feature_factory(speaker=s, condition=conditions[k % 4], seed=k)
        for s in range(3)
        for k in range(6)
    ]
    return train(features, ["spk00", "spk01", "spk02"], network_cfg, training_cfg, feature_cfg)


# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------


@pytest.fixture
def corpus_factory(tmp_path):
    """Factory to build a small corpus on disk and load it back."""
    def _create(
        n_speakers=3, utts=2, attacks=None, durations=(3.0,), seed=3, bc_format="bin", name="corpus"
    ):
        mix = SceneMix(
            attacks=attacks or {AttackClass.NONE: 1.0},
            durations_s=list(durations),
        )
        out = tmp_path / name
        build_corpus(n_speakers, utts, mix, seed, out, bc_format=bc_format)
        return load_corpus(out)
    return _create
