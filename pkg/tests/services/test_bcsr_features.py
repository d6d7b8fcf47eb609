"""Tests for CQT feature extraction, segmentation and augmentation."""
import numpy as np
import pytest

from app.errors import SignalError
from app.services.bcsr.features import (
    BcFeature,
    augment,
    augment_array,
    extract_feature,
    network_input,
    split_segments,
)
from app.services.signal_core import Spectrogram


class TestExtractFeature:
    def test_shape_and_peak_bin(self, sine_factory, feature_cfg):
        # bin 20 sits at 65.4 * 2**(20/12) ~ 207.6 Hz
        f = extract_feature(sine_factory(freq=207.6, duration_s=2.0), "still", feature_cfg)
        assert f.shape == (47, 126)
        assert int(np.argmax(f.values.mean(axis=1))) == 20

    def test_higher_rate_input_is_resampled(self, sine_factory, feature_cfg):
        tone = sine_factory(freq=415.2, duration_s=1.5, sample_rate=16000)
        f = extract_feature(tone, cfg=feature_cfg)
        assert f.shape == (47, 126)
        assert int(np.argmax(f.values.mean(axis=1))) == 32

    def test_labels_are_kept(self, sine_factory, feature_cfg):
        tone = sine_factory(duration_s=1.0)
        f = extract_feature(tone, "nodding", feature_cfg, speaker_label="spk03")
        assert (f.condition_label, f.speaker_label) == ("nodding", "spk03")

    def test_rejects_short_signal(self, sine_factory, feature_cfg):
        with pytest.raises(SignalError):
            extract_feature(sine_factory(duration_s=0.5), cfg=feature_cfg)

    def test_rejects_unknown_condition(self, sine_factory, feature_cfg):
        with pytest.raises(SignalError):
            extract_feature(sine_factory(duration_s=1.0), "jumping", feature_cfg)

    def test_rejects_linear_spectrogram(self):
        spec = Spectrogram(np.ones((3, 4)), np.arange(3.0), np.arange(4.0), scale="linear", nfft=4)
        with pytest.raises(SignalError):
            BcFeature(cqt=spec)


class TestSplitSegments:
    def test_long_clip_yields_whole_segments(self, noise_factory, feature_cfg):
        segments = split_segments([noise_factory(duration_s=2.5)], feature_cfg)
        assert len(segments) == 2
        assert all(len(s) == 8000 for s in segments)

    def test_short_clips_are_concatenated(self, noise_factory, feature_cfg):
        clips = [noise_factory(duration_s=0.6, seed=s) for s in range(3)]
        segments = split_segments(clips, feature_cfg)
        assert len(segments) == 1
        np.testing.assert_array_equal(segments[0].samples[:4800], clips[0].samples)

    def test_too_little_audio(self, noise_factory, feature_cfg):
        assert split_segments([noise_factory(duration_s=0.4)], feature_cfg) == []


class TestNetworkInput:
    def test_standardized(self, feature_factory, feature_cfg):
        x = network_input(feature_factory(), feature_cfg)
        assert x.dtype == np.float32
        assert float(x.mean()) == pytest.approx(0.0, abs=1e-5)
        assert float(x.std()) == pytest.approx(1.0, abs=1e-4)

    def test_constant_feature(self, feature_cfg):
        freqs = 65.4 * 2.0 ** (np.arange(47) / 12)
        spec = Spectrogram(np.ones((47, 126)), freqs, np.arange(126.0), scale="log")
        np.testing.assert_array_equal(network_input(BcFeature(cqt=spec), feature_cfg), 0.0)


class TestAugment:
    """Time-axis augmentation never touches the frequency axis."""

    def test_deterministic_per_seed(self, feature_factory):
        f = feature_factory()
        np.testing.assert_array_equal(augment(f, seed=3).values, augment(f, seed=3).values)

    def test_translation_preserves_frequency_marginals(self, feature_factory):
        f = feature_factory()
        out = augment(f, seed=1, flip_prob=0.0, crop=False)
        np.testing.assert_allclose(out.values.sum(axis=1), f.values.sum(axis=1))

    def test_flip_reverses_time(self, feature_factory):
        f = feature_factory()
        out = augment(f, seed=0, flip_prob=1.0, crop=False, translate=False)
        np.testing.assert_array_equal(out.values, f.values[:, ::-1])

    def test_rows_keep_their_values(self, feature_factory):
        f = feature_factory(speaker=2)
        out = augment(f, seed=7, crop=False)
        np.testing.assert_array_equal(np.sort(out.values, axis=1), np.sort(f.values, axis=1))
        np.testing.assert_array_equal(out.cqt.bin_frequencies, f.cqt.bin_frequencies)
        assert out.speaker_label == f.speaker_label

    def test_crop_pads_with_value(self):
        values = np.ones((2, 10))
        rng = np.random.default_rng(4)
        out = augment_array(values, rng, flip_prob=0.0, translate=False, pad_value=-1.0)
        assert out.shape == values.shape
        assert np.sum(out[0] == 1.0) >= 8
        np.testing.assert_array_equal(out[0], out[1])
