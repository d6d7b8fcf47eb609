"""Domain-adversarial training of the BC speaker network.

Batches are drawn from a per-epoch seeded permutation, augmented on the
standardized network input (zero padding equals the feature mean), and fed
to dal_loss. A fraction of each speaker's examples can be held out to
calibrate the verification threshold at the equal error point.
"""
import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np
import torch

from app.errors import AirBoneError
from app.schemas.pipeline import FeatureConfig, LayerTag, NetworkConfig, TrainingConfig
from app.schemas.results import EpochRecord, TrainingLog
from app.schemas.synth import CONDITION_LABELS
from app.services.bcsr.features import BcFeature, augment_array, network_input
from app.services.bcsr.network import BcsrNet, build_network, dal_loss
from app.services.evalkit import ScoreSet, compute_eer

logger = logging.getLogger(__name__)


@dataclass
class TrainedModel:
    """A network together with everything needed to use it."""

    net: BcsrNet
    speaker_ids: list[str]
    condition_labels: list[str]
    feature_cfg: FeatureConfig
    network_cfg: NetworkConfig
    log: TrainingLog

    @property
    def verify_threshold(self) -> Optional[float]:
        return self.log.verify_threshold


@dataclass
class LabeledInputs:
    inputs: np.ndarray
    speaker_idx: np.ndarray
    condition_idx: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx: np.ndarray) -> "LabeledInputs":
        return LabeledInputs(self.inputs[idx], self.speaker_idx[idx], self.condition_idx[idx])


def label_examples(
    features: Sequence[BcFeature],
    speaker_ids: Sequence[str],
    condition_labels: Sequence[str] = CONDITION_LABELS,
    feature_cfg: Optional[FeatureConfig] = None,
) -> LabeledInputs:
    """Stack standardized inputs with integer labels.

    Raises:
        AirBoneError: if a feature has no speaker label or an unknown one
    """
    if not features:
        raise AirBoneError("No training examples", stage="training")
    speaker_index = {s: i for i, s in enumerate(speaker_ids)}
    condition_index = {c: i for i, c in enumerate(condition_labels)}
    speakers, conditions = [], []
    for f in features:
        if f.speaker_label not in speaker_index:
            raise AirBoneError(
                f"Feature speaker {f.speaker_label!r} not in the speaker set", stage="training"
            )
        speakers.append(speaker_index[f.speaker_label])
        conditions.append(condition_index[f.condition_label])
    inputs = np.stack([network_input(f, feature_cfg) for f in features])
    return LabeledInputs(inputs, np.array(speakers, dtype=np.int64), np.array(conditions, dtype=np.int64))


def to_tensor(inputs: np.ndarray) -> torch.Tensor:
    """[batch, bins, frames] -> float32 [batch, 1, bins, frames]."""
    return torch.from_numpy(np.ascontiguousarray(inputs, dtype=np.float32)).unsqueeze(1)


def epoch_batches(
    data: LabeledInputs, epoch: int, cfg: TrainingConfig
) -> Iterator[tuple[torch.Tensor, torch.Tensor, torch.Tensor]]:
    """Shuffled, augmented (x, speaker, condition) batches for one epoch."""
    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(data))
    for b, start in enumerate(range(0, len(data), cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        x = data.inputs[idx]
        if cfg.augment:
            rng = np.random.default_rng([cfg.seed, epoch, b])
            x = np.stack([augment_array(row, rng, flip_prob=cfg.flip_prob) for row in x])
        yield (
            to_tensor(x),
            torch.from_numpy(data.speaker_idx[idx]),
            torch.from_numpy(data.condition_idx[idx]),
        )


def validation_split(speaker_idx: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(train indices, validation indices), stratified per speaker.

    Speakers with a single example are never held out.
    """
    if fraction <= 0:
        return np.arange(speaker_idx.size), np.array([], dtype=np.int64)
    rng = np.random.default_rng([seed, 7])
    train, held = [], []
    for s in np.unique(speaker_idx):
        idx = rng.permutation(np.flatnonzero(speaker_idx == s))
        k = min(int(round(fraction * idx.size)), idx.size - 1)
        held.extend(idx[:k])
        train.extend(idx[k:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(held, dtype=np.int64))


def _run_epochs(
    net: BcsrNet,
    data: LabeledInputs,
    cfg: TrainingConfig,
    epochs: int,
    lambda_: float,
    phase: str,
    log: TrainingLog,
) -> None:
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    for epoch in range(epochs):
        net.train()
        totals = np.zeros(5)
        for x, ys, yv in epoch_batches(data, epoch, cfg):
            out = dal_loss(net, x, ys, yv, lambda_)
            if log.first_batch_speaker_loss is None and phase == "train":
                log.first_batch_speaker_loss = out.speaker_loss
            optimizer.step()
            n = ys.shape[0]
            totals += n * np.array([
                out.speaker_loss,
                out.condition_loss,
                out.loss,
                float((out.output.speaker_logits.argmax(1) == ys).float().mean()),
                float((out.output.condition_logits.argmax(1) == yv).float().mean()),
            ])
        mean = totals / len(data)
        record = EpochRecord(
            epoch=epoch + 1,
            speaker_loss=mean[0],
            condition_loss=mean[1],
            total_loss=mean[2],
            speaker_accuracy=mean[3],
            condition_accuracy=mean[4],
            phase=phase,
        )
        log.epochs.append(record)
        logger.info(
            f"[{phase}] epoch {record.epoch}/{epochs}: L_s={record.speaker_loss:.4f} "
            f"L_v={record.condition_loss:.4f} acc_s={record.speaker_accuracy:.3f} "
            f"acc_v={record.condition_accuracy:.3f}"
        )


def embed_inputs(net: BcsrNet, inputs: np.ndarray, tag: LayerTag, batch_size: int = 64) -> np.ndarray:
    """Eval-mode embeddings of standardized inputs, [n x width]."""
    net.eval()
    rows = []
    with torch.no_grad():
        for start in range(0, inputs.shape[0], batch_size):
            rows.append(net.layer_outputs(to_tensor(inputs[start:start + batch_size]))[tag].numpy())
    return np.concatenate(rows).astype(np.float64) if rows else np.zeros((0, net.layer_width(tag)))


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; zero rows score 0."""
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    a = np.divide(a, na, out=np.zeros_like(a), where=na > 0)
    b = np.divide(b, nb, out=np.zeros_like(b), where=nb > 0)
    return np.clip(a @ b.T, -1.0, 1.0)


def calibrate_threshold(
    net: BcsrNet, train: LabeledInputs, held: LabeledInputs, tag: LayerTag
) -> tuple[float, float]:
    """(EER, threshold) of held-out examples scored against per-speaker mean embeddings."""
    train_emb = embed_inputs(net, train.inputs, tag)
    speakers = np.unique(train.speaker_idx)
    centroids = np.stack([train_emb[train.speaker_idx == s].mean(axis=0) for s in speakers])
    scores = cosine_rows(embed_inputs(net, held.inputs, tag), centroids)
    genuine_mask = held.speaker_idx[:, None] == speakers[None, :]
    return compute_eer(ScoreSet(scores[genuine_mask], scores[~genuine_mask], label="validation"))


def train(
    features: Sequence[BcFeature],
    speaker_ids: Sequence[str],
    network_cfg: Optional[NetworkConfig] = None,
    training_cfg: Optional[TrainingConfig] = None,
    feature_cfg: Optional[FeatureConfig] = None,
    *,
    layer_tag: LayerTag = LayerTag.FC512,
    pretrain_features: Optional[Sequence[BcFeature]] = None,
    pretrain_speaker_ids: Optional[Sequence[str]] = None,
) -> TrainedModel:
    """Train the network on labeled BC features.

    With pretrain_features, the network is first trained (lambda = 0) on
    that corpus, then its speaker output layer is replaced and the whole
    network is fine-tuned on `features`.

    Raises:
        AirBoneError: on fewer than 2 speakers or unlabeled features
    """
    network_cfg = network_cfg or NetworkConfig()
    training_cfg = training_cfg or TrainingConfig()
    feature_cfg = feature_cfg or FeatureConfig()
    speaker_ids = list(speaker_ids)
    if len(speaker_ids) < 2:
        raise AirBoneError("Training needs at least 2 speakers", stage="training")
    if training_cfg.num_threads:
        torch.set_num_threads(training_cfg.num_threads)

    conditions = list(CONDITION_LABELS)
    data = label_examples(features, speaker_ids, conditions, feature_cfg)
    train_idx, held_idx = validation_split(
        data.speaker_idx, training_cfg.validation_fraction, training_cfg.seed
    )
    train_data = data.subset(train_idx)
    log = TrainingLog(
        speaker_ids=speaker_ids,
        condition_labels=conditions,
        n_examples=len(train_data),
        lambda_=network_cfg.lambda_,
        seed=training_cfg.seed,
    )

    if pretrain_features:
        pre_ids = list(pretrain_speaker_ids or sorted({f.speaker_label for f in pretrain_features}))
        net = build_network(len(pre_ids), len(conditions), network_cfg, training_cfg.seed)
        pre = label_examples(pretrain_features, pre_ids, conditions, feature_cfg)
        logger.info(f"Pretraining on {len(pre)} examples of {len(pre_ids)} speakers")
        _run_epochs(net, pre, training_cfg, training_cfg.pretrain_epochs, 0.0, "pretrain", log)
        torch.manual_seed(training_cfg.seed + 1)
        net.reset_speaker_layer(len(speaker_ids))
    else:
        net = build_network(len(speaker_ids), len(conditions), network_cfg, training_cfg.seed)

    torch.manual_seed(training_cfg.seed)
    logger.info(
        f"Training on {len(train_data)} examples of {len(speaker_ids)} speakers, "
        f"lambda={network_cfg.lambda_}, {training_cfg.epochs} epochs"
    )
    _run_epochs(net, train_data, training_cfg, training_cfg.epochs, network_cfg.lambda_, "train", log)

    if held_idx.size:
        eer, threshold = calibrate_threshold(net, train_data, data.subset(held_idx), layer_tag)
        log.validation_eer, log.verify_threshold = eer, threshold
        logger.info(f"Validation EER {eer:.4f} at threshold {threshold:.4f} ({layer_tag.value})")
    net.eval()
    return TrainedModel(
        net=net,
        speaker_ids=speaker_ids,
        condition_labels=conditions,
        feature_cfg=feature_cfg,
        network_cfg=network_cfg,
        log=log,
    )
