"""Tests for the speaker network and the domain-adversarial objective."""
import pytest
import torch
import torch.nn.functional as F
from torch import nn

from app.errors import AirBoneError
from app.schemas.pipeline import LayerTag
from app.services.bcsr.network import BcsrNet, NetOutput, build_network, dal_loss, reverse_gradient


class ToyNet(nn.Module):
    """Trunk plus two linear heads, float64, for finite differences."""

    n_speakers = 3
    n_conditions = 2

    def __init__(self):
        super().__init__()
        torch.manual_seed(0)
        self.trunk = nn.Linear(4, 5).double()
        self.speaker = nn.Linear(5, self.n_speakers).double()
        self.condition = nn.Linear(5, self.n_conditions).double()

    def forward(self, x, lambda_=None, reverse=True):
        z = torch.tanh(self.trunk(x))
        z_v = reverse_gradient(z, lambda_) if reverse else z
        return NetOutput(z, self.speaker(z), self.condition(z_v))


def _losses(net, x, ys, yv):
    with torch.no_grad():
        out = net(x, lambda_=0.0, reverse=False)
        ls = F.cross_entropy(out.speaker_logits, ys)
        lv = F.cross_entropy(out.condition_logits, yv)
        return float(ls), float(lv)


def finite_difference(net, objective, name, h=1e-6):
    param = dict(net.named_parameters())[name]
    grad = torch.zeros_like(param)
    flat, flat_grad = param.data.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        original = float(flat[i])
        flat[i] = original + h
        plus = objective()
        flat[i] = original - h
        minus = objective()
        flat[i] = original
        flat_grad[i] = (plus - minus) / (2 * h)
    return grad


@pytest.fixture
def toy_batch():
    gen = torch.Generator().manual_seed(1)
    x = torch.randn(6, 4, generator=gen, dtype=torch.float64)
    return x, torch.tensor([0, 1, 2, 0, 1, 2]), torch.tensor([0, 1, 1, 0, 0, 1])


class TestGradientReversal:
    def test_identity_forward(self):
        x = torch.randn(3, 4)
        torch.testing.assert_close(reverse_gradient(x, 0.7), x)

    def test_scales_gradient_by_minus_lambda(self):
        x = torch.randn(3, 4, requires_grad=True)
        (2.0 * reverse_gradient(x, 0.5)).sum().backward()
        torch.testing.assert_close(x.grad, torch.full((3, 4), -1.0))


class TestDalLoss:
    """One backward pass gives the three adversarial update directions."""

    LAMBDA = 0.3

    def test_loss_value(self, toy_batch):
        net = ToyNet()
        out = dal_loss(net, *toy_batch, lambda_=self.LAMBDA)
        ls, lv = _losses(net, *toy_batch)
        assert out.loss == pytest.approx(ls - self.LAMBDA * lv, rel=1e-12)
        assert (out.speaker_loss, out.condition_loss) == (pytest.approx(ls), pytest.approx(lv))

    @pytest.mark.parametrize("name", ["trunk.weight", "trunk.bias", "speaker.weight"])
    def test_trunk_and_speaker_follow_adversarial_objective(self, toy_batch, name):
        net = ToyNet()
        grads = dal_loss(net, *toy_batch, lambda_=self.LAMBDA).gradients

        def objective():
            ls, lv = _losses(net, *toy_batch)
            return ls - self.LAMBDA * lv

        fd = finite_difference(net, objective, name)
        torch.testing.assert_close(grads[name], fd, atol=1e-6, rtol=1e-5)

    @pytest.mark.parametrize("name", ["condition.weight", "condition.bias"])
    def test_condition_head_minimizes_condition_loss(self, toy_batch, name):
        net = ToyNet()
        grads = dal_loss(net, *toy_batch, lambda_=self.LAMBDA).gradients
        fd = finite_difference(net, lambda: _losses(net, *toy_batch)[1], name)
        torch.testing.assert_close(grads[name], fd, atol=1e-6, rtol=1e-5)

    def test_without_reversal_trunk_minimizes_both(self, toy_batch):
        net = ToyNet()
        grads = dal_loss(net, *toy_batch, lambda_=self.LAMBDA, reverse_gradient=False).gradients
        fd = finite_difference(net, lambda: sum(_losses(net, *toy_batch)), "trunk.weight")
        torch.testing.assert_close(grads["trunk.weight"], fd, atol=1e-6, rtol=1e-5)

    @pytest.mark.parametrize("ys, yv", [([0, 3], [0, 0]), ([0, 1], [0, 2]), ([-1, 0], [0, 0])])
    def test_rejects_out_of_range_labels(self, ys, yv):
        x = torch.randn(2, 4, dtype=torch.float64)
        with pytest.raises(AirBoneError):
            dal_loss(ToyNet(), x, torch.tensor(ys), torch.tensor(yv), lambda_=0.1)


class TestBcsrNet:
    @pytest.fixture
    def net(self, network_cfg):
        return build_network(3, 4, network_cfg, seed=0).eval()

    def test_layer_outputs(self, net):
        x = torch.randn(2, 1, 47, 126)
        with torch.no_grad():
            layers = net.layer_outputs(x)
        assert layers[LayerTag.FC512].shape == (2, 16)
        assert layers[LayerTag.LOGITS].shape == (2, 3)
        torch.testing.assert_close(layers[LayerTag.SOFTMAX].sum(dim=1), torch.ones(2))
        assert all(net.layer_width(tag) == layers[tag].shape[1] for tag in LayerTag)

    def test_condition_head_width(self, net):
        with torch.no_grad():
            out = net(torch.randn(2, 1, 47, 126))
        assert out.condition_logits.shape == (2, 4)

    def test_seeded_construction(self, network_cfg):
        a = build_network(3, 4, network_cfg, seed=5).state_dict()
        b = build_network(3, 4, network_cfg, seed=5).state_dict()
        for key in a:
            torch.testing.assert_close(a[key], b[key])

    def test_reset_speaker_layer(self, net):
        net.reset_speaker_layer(5)
        assert net.n_speakers == 5
        with torch.no_grad():
            assert net(torch.randn(1, 1, 47, 126)).speaker_logits.shape == (1, 5)

    def test_needs_two_speakers(self, network_cfg):
        with pytest.raises(AirBoneError):
            BcsrNet(1, 4, network_cfg)
