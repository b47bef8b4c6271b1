"""Tests for the unrolled proximal gradient network."""

import numpy as np
import pytest
import torch
import torch.nn as nn

from config import NetworkConfig
from mrcine.signal_model import ForwardModel, apply_A, apply_A_adjoint
from mrcine.training import l1_loss
from mrcine.unrolled_net import (
    MIN_STEP,
    ConvSpec,
    ResNetBlock,
    SpatioTemporalConv,
    TorchForwardModel,
    UnrolledNet,
    channels_to_complex,
    complex_to_channels,
    compute_fs,
    count_params,
    dc_update,
    run_unrolled,
)
from mrcine.validation import InvalidArgumentError
from tests.helpers import random_complex


def tiny_config(**overrides) -> NetworkConfig:
    values = dict(iterations=1, layers=2, channels=4, nsets=1, conv_kind="conv2p1d", kernel=3)
    values.update(overrides)
    return NetworkConfig(**values)


@pytest.fixture
def problem(rng, double_precision):
    """Random unit-norm single-set maps on an 8x8 grid with a random line mask."""
    maps = random_complex(rng, (8, 8, 2, 1))
    maps /= np.linalg.norm(maps, axis=2, keepdims=True)
    lines = (rng.uniform(size=(8, 4)) < 0.5).astype(np.float32)
    mask = np.broadcast_to(lines[None], (8, 8, 4)).copy()
    model = ForwardModel(maps=maps, mask=mask)
    y = apply_A(random_complex(rng, model.image_shape), model)
    return model, y


def randomize_output(net_or_block, std=0.1):
    blocks = net_or_block.blocks if isinstance(net_or_block, UnrolledNet) else [net_or_block]
    with torch.no_grad():
        for block in blocks:
            nn.init.normal_(block.convs[-1].output_conv().weight, std=std)


class TestConvSpec:
    """Test the (2+1)D parameter-matching rule."""

    def test_intermediate_channels(self):
        """Given-When-Then: A 3x3x3 96->96 layer factorizes through 216 channels."""
        spec = ConvSpec("conv2p1d", (3, 3, 3), 96, 96)
        assert compute_fs(spec) == 216
        assert spec.f_s == 216
        assert ConvSpec("conv3d", (3, 3, 3), 96, 96).f_s is None

    @pytest.mark.parametrize("kind,expected", [("conv3d", 248928), ("conv2p1d", 249144)])
    def test_param_count_matches_module(self, kind, expected):
        spec = ConvSpec(kind, (3, 3, 3), 96, 96)
        assert spec.param_count() == expected
        assert count_params(SpatioTemporalConv(spec)) == expected

    def test_invalid_extents(self):
        with pytest.raises(InvalidArgumentError):
            compute_fs(ConvSpec("conv2p1d", (3, 0, 3), 4, 4))

    def test_network_parameter_count(self):
        """Given-When-Then: Two conv3d blocks 2->8->8->2 plus two step sizes."""
        net = UnrolledNet(tiny_config(iterations=2, layers=3, channels=8, conv_kind="conv3d"))
        assert count_params(net) == 2 * (440 + 1736 + 434) + 2

    def test_whole_network_parity_between_conv_kinds(self):
        """Given-When-Then: (2+1)D and 3D networks differ only by flooring and extra biases.

        Per layer the (2+1)D count is the 3D count plus ``f_s`` hidden biases, minus
        less than ``d_x d_y f_in + d_t f_out`` lost to flooring ``f_s``.
        """
        # Given: Two M=2 networks of the default width, one per convolution kind
        shape = dict(iterations=2, layers=5, channels=96, nsets=2)
        factored = UnrolledNet(tiny_config(conv_kind="conv2p1d", **shape))
        full = UnrolledNet(tiny_config(conv_kind="conv3d", **shape))

        # When: Bounding the difference layer by layer
        low = high = 0
        for block in factored.blocks:
            for conv in block.convs:
                spec = conv.spec
                high += spec.f_s
                low += spec.f_s - (9 * spec.f_in + 3 * spec.f_out - 1)
        difference = count_params(factored) - count_params(full)

        # Then: The totals agree within the slack and to well under one percent
        assert low <= difference <= high
        assert abs(difference) / count_params(full) < 0.01
        assert difference == 2 * (32 + 3 * 216 - 721)


class TestConvolution:
    """Test padding and receptive field."""

    def test_circular_phase_and_time_zero_readout(self):
        """Given-When-Then: Impulses wrap along y and t but not along x."""
        # Given: An all-ones 3x3x3 kernel without bias
        conv = SpatioTemporalConv(ConvSpec("conv3d", (3, 3, 3), 1, 1, bias=False))
        with torch.no_grad():
            conv.conv.weight.fill_(1.0)
        inside = torch.zeros(1, 1, 8, 8, 8)
        inside[0, 0, 4, 0, 0] = 1.0
        edge = torch.zeros(1, 1, 8, 8, 8)
        edge[0, 0, 0, 4, 4] = 1.0

        # When: Convolving
        out_inside, out_edge = conv(inside), conv(edge)

        # Then: PE and time wrap around, readout does not
        assert out_inside[0, 0, 4, 7, 7] == 1.0
        assert out_inside[0, 0, 4, 1, 0] == 1.0
        assert not out_edge[0, 0, 7].any()
        assert out_edge[0, 0, 1, 4, 4] == 1.0
        assert out_inside.shape == inside.shape

    @pytest.mark.parametrize("kind", ["conv3d", "conv2p1d"])
    def test_receptive_field_of_linearized_block(self, kind):
        """Given-When-Then: Five 3-tap layers see an 11x11x11 neighbourhood."""
        # Given: A linearized block with a random output layer
        torch.manual_seed(0)
        block = ResNetBlock(1, tiny_config(layers=5, conv_kind=kind)).double()
        randomize_output(block)
        block.linearize()
        delta = torch.zeros(1, 2, 16, 16, 16, dtype=torch.float64)
        delta[0, 0, 8, 8, 8] = 1.0

        # When: Taking the impulse response of the residual branch
        with torch.no_grad():
            response = block(delta) - block(torch.zeros_like(delta)) - delta
        support = response.abs().sum(dim=(0, 1)) > 1e-12

        # Then: It spans exactly eleven samples along every axis
        for axis in range(3):
            other = tuple(a for a in range(3) if a != axis)
            hit = torch.nonzero(support.any(dim=other[1]).any(dim=other[0])).flatten()
            assert int(hit.max() - hit.min()) + 1 == 11

    def test_new_block_is_identity(self):
        block = ResNetBlock(2, tiny_config(nsets=2))
        x = torch.randn(1, 4, 6, 6, 5)
        torch.testing.assert_close(block(x), x)

    def test_wrong_channel_count(self):
        conv = SpatioTemporalConv(ConvSpec("conv3d", (3, 3, 3), 2, 4))
        with pytest.raises(InvalidArgumentError):
            conv(torch.zeros(1, 3, 4, 4, 4))


class TestChannelPacking:
    """Test complex <-> real channel conversion."""

    def test_channel_order(self, rng):
        """Given-When-Then: Channels run set1-real, set1-imag, set2-real, set2-imag."""
        x = torch.from_numpy(random_complex(rng, (5, 6, 2, 3)))
        features = complex_to_channels(x)

        assert features.shape == (1, 4, 5, 6, 3)
        torch.testing.assert_close(features[0, 1], x[:, :, 0, :].imag)
        torch.testing.assert_close(features[0, 2], x[:, :, 1, :].real)
        torch.testing.assert_close(channels_to_complex(features), x)

    def test_odd_channels(self):
        with pytest.raises(InvalidArgumentError):
            channels_to_complex(torch.zeros(1, 3, 4, 4, 2))


class TestForwardOperator:
    """Test the differentiable forward model."""

    def test_matches_numpy_operator(self, problem, rng):
        model, y = problem
        op = TorchForwardModel.from_model(model)
        x = random_complex(rng, model.image_shape)
        np.testing.assert_allclose(op.forward(torch.from_numpy(x)).numpy(), apply_A(x, model), atol=1e-12)
        np.testing.assert_allclose(op.adjoint(torch.from_numpy(y)).numpy(), apply_A_adjoint(y, model), atol=1e-12)

    def test_dc_update_checks_sets(self, problem):
        model, y = problem
        op = TorchForwardModel.from_model(model)
        with pytest.raises(InvalidArgumentError):
            dc_update(torch.zeros(8, 8, 2, 4, dtype=torch.complex128), torch.from_numpy(y), op, torch.tensor(0.5))


class TestUnrolledNet:
    """Test the full network."""

    def test_fresh_network_is_one_gradient_step(self, problem):
        """Given-When-Then: With identity blocks, one iteration is x0 + 2t A^H(y - A x0)."""
        # Given: K=1 with the default zeroed output layer and t = 0.5
        model, y = problem
        net = UnrolledNet(tiny_config(), seed=0)

        # When: Running inference
        out = run_unrolled(net, y, model)

        # Then: The output equals the closed-form data-consistency step
        x0 = apply_A_adjoint(y, model)
        expected = x0 + apply_A_adjoint(y - apply_A(x0, model), model)
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_zero_iterations_return_adjoint(self, problem):
        model, y = problem
        out = run_unrolled(UnrolledNet(tiny_config(iterations=0)), y, model)
        np.testing.assert_allclose(out, apply_A_adjoint(y, model), atol=1e-12)

    def test_output_shape_and_dtype(self, problem):
        model, y = problem
        out = run_unrolled(UnrolledNet(tiny_config(iterations=2), seed=1), y, model)
        assert out.shape == model.image_shape
        assert out.dtype == np.complex128

    def test_set_count_mismatch(self, problem):
        model, y = problem
        with pytest.raises(InvalidArgumentError, match="M=2"):
            run_unrolled(UnrolledNet(tiny_config(nsets=2)), y, model)

    def test_seed_makes_weights_reproducible(self):
        a, b = UnrolledNet(tiny_config(), seed=7), UnrolledNet(tiny_config(), seed=7)
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            torch.testing.assert_close(pa, pb)

    def test_invalid_config(self):
        with pytest.raises(InvalidArgumentError):
            UnrolledNet(tiny_config(kernel=4))

    def test_negative_step_sizes_are_floored(self, problem):
        """Given-When-Then: Learned step sizes below zero act as the minimum positive step."""
        # Given: A fresh K=1 network whose step size went negative
        model, y = problem
        net = UnrolledNet(tiny_config(), seed=0)
        with torch.no_grad():
            net.step_sizes.fill_(-1.0)

        # When: Running inference
        out = run_unrolled(net, y, model)

        # Then: The step is MIN_STEP, so the output barely leaves the adjoint
        assert torch.equal(net.steps(), torch.full_like(net.step_sizes, MIN_STEP))
        x0 = apply_A_adjoint(y, model)
        expected = x0 + 2 * MIN_STEP * apply_A_adjoint(y - apply_A(x0, model), model)
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_steps_keep_gradient_above_the_floor(self):
        net = UnrolledNet(tiny_config(iterations=2))
        with torch.no_grad():
            net.step_sizes.copy_(torch.tensor([0.3, -0.2]))
        (grad,) = torch.autograd.grad(net.steps().sum(), [net.step_sizes])
        assert grad.tolist() == [1.0, 0.0]

    def test_inference_is_scale_equivariant(self, problem):
        """Given-When-Then: Scaling the data scales the output, since inputs are peak-normalized."""
        # Given: A network whose CNN is not the identity
        model, y = problem
        net = UnrolledNet(tiny_config(iterations=2), seed=4)
        randomize_output(net)

        # When: Reconstructing y and 7y
        base = run_unrolled(net, y, model)
        scaled = run_unrolled(net, 7.0 * y, model)

        # Then: Outputs differ by the same factor
        np.testing.assert_allclose(scaled, 7.0 * base, rtol=1e-9, atol=1e-12)


@pytest.fixture
def gradient_problem(double_precision):
    """16x16 grid, two coils, four frames, with a random target image."""

    def build(seed: int):
        rng = np.random.default_rng(seed)
        maps = random_complex(rng, (16, 16, 2, 1))
        maps /= np.linalg.norm(maps, axis=2, keepdims=True)
        lines = (rng.uniform(size=(16, 4)) < 0.4).astype(np.float64)
        lines[8] = 1.0
        mask = np.broadcast_to(lines[None], (16, 16, 4)).copy()
        model = ForwardModel(maps=maps, mask=mask)
        x_true = random_complex(rng, model.image_shape)
        y = apply_A(x_true, model)
        return TorchForwardModel.from_model(model), torch.from_numpy(y), torch.from_numpy(x_true)

    return build


class TestGradients:
    """Test reverse-mode gradients against central finite differences."""

    @pytest.mark.parametrize("kind", ["conv2p1d", "conv3d"])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_every_parameter_matches_finite_difference(self, gradient_problem, kind, seed):
        """Given-When-Then: The l1 training loss gradient agrees with central differences.

        Every parameter tensor of a K=2, F=8 network is checked entry by entry in
        double precision; the relative vector-norm error must stay below 1e-3.
        """
        # Given: A double-precision network with non-trivial CNN output layers
        op, y, x_gt = gradient_problem(seed)
        net = UnrolledNet(tiny_config(iterations=2, channels=8, conv_kind=kind), seed=seed)
        randomize_output(net)

        def loss() -> torch.Tensor:
            return l1_loss(net(y, op), x_gt)

        # When: Differentiating by autograd and by central differences
        names, params = zip(*net.named_parameters())
        grads = torch.autograd.grad(loss(), params)
        h = 1e-6
        for name, param, grad in zip(names, params, grads):
            numeric = torch.zeros_like(param)
            flat, flat_numeric = param.data.view(-1), numeric.view(-1)
            with torch.no_grad():
                for i in range(flat.numel()):
                    original = float(flat[i])
                    flat[i] = original + h
                    upper = float(loss())
                    flat[i] = original - h
                    lower = float(loss())
                    flat[i] = original
                    flat_numeric[i] = (upper - lower) / (2 * h)

            # Then: Each tensor's gradient matches
            error = float(torch.linalg.vector_norm(grad - numeric) / torch.linalg.vector_norm(numeric))
            assert error < 1e-3, f"{name}: relative error {error:.2e}"
