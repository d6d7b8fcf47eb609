"""Residual CNN with a speaker head and a gradient-reversed condition head.

Input: [batch, 1, CQT bins, frames]. The shared trunk (weights w_f) feeds
two heads:

- speaker head (w_s): FC-512 -> ReLU -> FC-n_speakers
- condition head (w_v): gradient reversal -> FC-128 -> ReLU -> FC-n_conditions

The gradient reversal layer is the identity going forward and multiplies the
gradient by -lambda going backward, so one backward pass of L_s + L_v gives
w_s <- dL_s, w_v <- dL_v and w_f <- dL_s - lambda * dL_v.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from app.errors import AirBoneError
from app.schemas.pipeline import LayerTag, NetworkConfig

logger = logging.getLogger(__name__)


class GradientReversal(torch.autograd.Function):
    """Identity forward, gradient times -lambda backward."""

    @staticmethod
    def forward(ctx, x, lambda_):
        ctx.lambda_ = lambda_
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.lambda_, None


def reverse_gradient(x: torch.Tensor, lambda_: float) -> torch.Tensor:
    return GradientReversal.apply(x, lambda_)


class ResidualBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 2):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


@dataclass
class NetOutput:
    embedding: torch.Tensor
    speaker_logits: torch.Tensor
    condition_logits: torch.Tensor


class BcsrNet(nn.Module):
    """Speaker classifier with an adversarial condition branch."""

    def __init__(self, n_speakers: int, n_conditions: int, cfg: Optional[NetworkConfig] = None):
        super().__init__()
        cfg = cfg or NetworkConfig()
        if n_speakers < 2 or n_conditions < 1:
            raise AirBoneError(
                f"Need at least 2 speakers and 1 condition, got {n_speakers} and {n_conditions}",
                stage="training",
            )
        self.n_speakers = n_speakers
        self.n_conditions = n_conditions
        self.lambda_ = cfg.lambda_

        first = cfg.channels[0]
        self.stem = nn.Sequential(
            nn.Conv2d(1, first, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(first),
            nn.ReLU(),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        blocks, in_channels = [], first
        for out_channels in cfg.channels:
            blocks.append(ResidualBlock(in_channels, out_channels, stride=2))
            in_channels = out_channels
        self.blocks = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)

        self.speaker_hidden = nn.Linear(in_channels, cfg.embedding_dim)
        self.speaker_out = nn.Linear(cfg.embedding_dim, n_speakers)
        self.condition_hidden = nn.Linear(in_channels, cfg.condition_hidden)
        self.condition_out = nn.Linear(cfg.condition_hidden, n_conditions)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return torch.flatten(self.pool(self.blocks(self.stem(x))), 1)

    def forward(
        self, x: torch.Tensor, lambda_: Optional[float] = None, reverse: bool = True
    ) -> NetOutput:
        z = self.features(x)
        embedding = F.relu(self.speaker_hidden(z))
        speaker_logits = self.speaker_out(embedding)
        lam = self.lambda_ if lambda_ is None else lambda_
        z_v = reverse_gradient(z, lam) if reverse else z
        condition_logits = self.condition_out(F.relu(self.condition_hidden(z_v)))
        return NetOutput(embedding, speaker_logits, condition_logits)

    def layer_outputs(self, x: torch.Tensor) -> dict[LayerTag, torch.Tensor]:
        out = self.forward(x)
        return {
            LayerTag.FC512: out.embedding,
            LayerTag.LOGITS: out.speaker_logits,
            LayerTag.SOFTMAX: torch.softmax(out.speaker_logits, dim=1),
        }

    def layer_width(self, tag: LayerTag) -> int:
        if tag == LayerTag.FC512:
            return self.speaker_hidden.out_features
        return self.n_speakers

    def reset_speaker_layer(self, n_speakers: int) -> None:
        """Fresh output layer for a new speaker set (after pretraining)."""
        self.speaker_out = nn.Linear(self.speaker_hidden.out_features, n_speakers)
        self.n_speakers = n_speakers


def build_network(
    n_speakers: int, n_conditions: int, cfg: Optional[NetworkConfig] = None, seed: int = 0
) -> BcsrNet:
    """Construct with a seeded initialization."""
    torch.manual_seed(seed)
    return BcsrNet(n_speakers, n_conditions, cfg)


# ============================================================================
# Domain-adversarial objective
# ============================================================================


@dataclass
class DalOutput:
    loss: float
    speaker_loss: float
    condition_loss: float
    gradients: dict[str, torch.Tensor]
    output: NetOutput


def _check_labels(labels: torch.Tensor, count: int, name: str) -> None:
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= count):
        raise AirBoneError(
            f"{name} labels must lie in [0, {count}), got [{int(labels.min())}, {int(labels.max())}]",
            stage="training",
        )


def dal_loss(
    net: nn.Module,
    x: torch.Tensor,
    speaker_labels: torch.Tensor,
    condition_labels: torch.Tensor,
    lambda_: float,
    reverse_gradient: bool = True,
) -> DalOutput:
    """L = L_s - lambda * L_v and the gradients of one backward pass.

    Gradients are left in each parameter's .grad (ready for an optimizer step)
    and returned as detached copies keyed by parameter name. With
    reverse_gradient=False the condition branch back-propagates unreversed.

    Raises:
        AirBoneError: if a label is out of range
    """
    _check_labels(speaker_labels, net.n_speakers, "Speaker")
    _check_labels(condition_labels, net.n_conditions, "Condition")
    out = net(x, lambda_=lambda_, reverse=reverse_gradient)
    speaker_loss = F.cross_entropy(out.speaker_logits, speaker_labels)
    condition_loss = F.cross_entropy(out.condition_logits, condition_labels)

    net.zero_grad(set_to_none=True)
    (speaker_loss + condition_loss).backward()
    gradients = {
        name: p.grad.detach().clone()
        for name, p in net.named_parameters()
        if p.grad is not None
    }
    ls, lv = float(speaker_loss.detach()), float(condition_loss.detach())
    return DalOutput(
        loss=ls - lambda_ * lv,
        speaker_loss=ls,
        condition_loss=lv,
        gradients=gradients,
        output=out,
    )
