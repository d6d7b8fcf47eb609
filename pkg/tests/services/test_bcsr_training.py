"""Tests for adversarial training of the speaker network."""
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from app.errors import AirBoneError
from app.schemas.synth import CONDITION_LABELS
from app.services.bcsr.network import build_network
from app.services.bcsr.training import (
    cosine_rows,
    epoch_batches,
    label_examples,
    train,
    validation_split,
)

SPEAKERS = ["spk00", "spk01", "spk02"]


@pytest.fixture
def features(feature_factory):
    return [
        feature_factory(speaker=s, condition=CONDITION_LABELS[k % 4], seed=k)
        for s in range(3)
        for k in range(6)
    ]


class TestLabelExamples:
    def test_labels_and_shape(self, features, feature_cfg):
        data = label_examples(features, SPEAKERS, CONDITION_LABELS, feature_cfg)
        assert data.inputs.shape == (18, 47, 126)
        assert data.speaker_idx.tolist() == [0] * 6 + [1] * 6 + [2] * 6
        assert data.condition_idx[:4].tolist() == [0, 1, 2, 3]

    def test_unknown_speaker(self, feature_factory, feature_cfg):
        with pytest.raises(AirBoneError):
            label_examples([feature_factory(speaker=7)], SPEAKERS, CONDITION_LABELS, feature_cfg)

    def test_no_examples(self, feature_cfg):
        with pytest.raises(AirBoneError):
            label_examples([], SPEAKERS, CONDITION_LABELS, feature_cfg)


class TestValidationSplit:
    def test_stratified_per_speaker(self):
        speaker_idx = np.repeat([0, 1, 2], 6)
        train_idx, held_idx = validation_split(speaker_idx, 0.5, seed=0)
        assert np.bincount(speaker_idx[held_idx]).tolist() == [3, 3, 3]
        assert sorted(np.concatenate([train_idx, held_idx]).tolist()) == list(range(18))

    def test_singletons_stay_in_training(self):
        speaker_idx = np.array([0, 1, 1, 1])
        _, held_idx = validation_split(speaker_idx, 0.9, seed=0)
        assert 0 not in held_idx
        assert len(held_idx) == 2

    def test_zero_fraction(self):
        train_idx, held_idx = validation_split(np.arange(5), 0.0, seed=0)
        assert train_idx.tolist() == [0, 1, 2, 3, 4]
        assert held_idx.size == 0


class TestTrain:
    """train() on synthetic features with a small network."""

    def test_first_batch_loss_matches_fresh_network(
        self, features, network_cfg, training_cfg, feature_cfg
    ):
        model = train(features, SPEAKERS, network_cfg, training_cfg, feature_cfg)

        net = build_network(3, len(CONDITION_LABELS), network_cfg, training_cfg.seed)
        net.train()
        data = label_examples(features, SPEAKERS, CONDITION_LABELS, feature_cfg)
        x, ys, _ = next(epoch_batches(data, 0, training_cfg))
        with torch.no_grad():
            expected = float(F.cross_entropy(net(x).speaker_logits, ys))
        assert model.log.first_batch_speaker_loss == pytest.approx(expected, rel=1e-5)
        assert abs(expected - math.log(3)) < 2.0

    def test_batch_norm_sees_only_training_steps(self, tiny_model):
        # 18 examples in batches of 8 over 2 epochs
        tracked = [
            int(m.num_batches_tracked)
            for m in tiny_model.net.modules()
            if isinstance(m, torch.nn.BatchNorm2d)
        ]
        assert tracked
        assert set(tracked) == {6}

    def test_same_seed_is_bit_identical(self, features, network_cfg, training_cfg, feature_cfg):
        first = train(features, SPEAKERS, network_cfg, training_cfg, feature_cfg)
        second = train(features, SPEAKERS, network_cfg, training_cfg, feature_cfg)
        a, b = first.net.state_dict(), second.net.state_dict()
        assert a.keys() == b.keys()
        for name in a:
            assert torch.equal(a[name], b[name]), name
        assert first.log.epochs == second.log.epochs

    def test_log_records_each_epoch(self, tiny_model):
        log = tiny_model.log
        assert [e.epoch for e in log.epochs] == [1, 2]
        assert all(e.phase == "train" for e in log.epochs)
        assert all(np.isfinite(e.total_loss) for e in log.epochs)
        assert all(0.0 <= e.speaker_accuracy <= 1.0 for e in log.epochs)
        assert log.n_examples == 18
        assert log.lambda_ == pytest.approx(0.1)
        assert tiny_model.verify_threshold is None

    def test_validation_calibrates_threshold(
        self, features, network_cfg, training_cfg, feature_cfg
    ):
        cfg = training_cfg.model_copy(update={"validation_fraction": 0.34})
        model = train(features, SPEAKERS, network_cfg, cfg, feature_cfg)
        assert model.log.n_examples == 12
        assert model.verify_threshold is not None
        assert 0.0 <= model.log.validation_eer <= 1.0

    def test_pretraining_then_fine_tuning(
        self, features, feature_factory, network_cfg, training_cfg, feature_cfg
    ):
        pretrain = [feature_factory(speaker=s, seed=k) for s in (3, 4) for k in range(4)]
        model = train(
            features, SPEAKERS, network_cfg, training_cfg, feature_cfg, pretrain_features=pretrain
        )
        assert [e.phase for e in model.log.epochs] == ["pretrain", "train", "train"]
        assert model.net.n_speakers == 3
        assert not model.net.training

    def test_needs_two_speakers(self, features, network_cfg, training_cfg, feature_cfg):
        with pytest.raises(AirBoneError):
            train(features[:6], ["spk00"], network_cfg, training_cfg, feature_cfg)


def test_cosine_rows_handles_zero_rows():
    a = np.array([[1.0, 0.0], [0.0, 0.0]])
    b = np.array([[2.0, 0.0], [0.0, 3.0]])
    np.testing.assert_allclose(cosine_rows(a, b), [[1.0, 0.0], [0.0, 0.0]])
