"""Tests for the multi-set ESPIRiT forward model and proximal helpers."""

import numpy as np
import pytest

from config import config
from mrcine.sampling import make_vd_mask
from mrcine.signal_model import (
    ForwardModel,
    IdentityTransform,
    SpatialFiniteDifference,
    TemporalDFT,
    apply_A,
    apply_A_adjoint,
    apply_E,
    apply_E_adjoint,
    normal,
    operator_norm,
    power_iteration,
    soft_threshold,
    tv_axis,
    tv_diff,
)
from mrcine.tensor_core import fftc, inner, norm
from mrcine.validation import InvalidArgumentError
from tests.helpers import random_complex


def orthonormal_maps(rng, nx=16, ny=16, ncoils=4, nsets=2):
    """Per-pixel maps with orthonormal set columns, as ESPIRiT produces."""
    q, _ = np.linalg.qr(random_complex(rng, (nx, ny, ncoils, nsets)))
    return q


@pytest.fixture
def model(rng, double_precision):
    mask = make_vd_mask(16, 6, 2.0, seed=5, nx=16)
    return ForwardModel.from_calibration(orthonormal_maps(rng), mask)


class TestCoilOperator:
    """Test E and its adjoint."""

    def test_matches_explicit_loops(self, rng):
        """Given-When-Then: The einsum contraction equals the per-coil sum over sets."""
        # Given: Random maps and a two-set image
        maps = random_complex(rng, (5, 6, 3, 2))
        x = random_complex(rng, (5, 6, 2, 4))

        # When: Applying E
        coils = apply_E(x, maps)

        # Then: Each coil image is sum_m S_m^i x_m
        expected = np.zeros((5, 6, 3, 4), dtype=np.complex128)
        for i in range(3):
            for t in range(4):
                for m in range(2):
                    expected[:, :, i, t] += maps[:, :, i, m] * x[:, :, m, t]
        np.testing.assert_allclose(coils, expected, atol=1e-12)

    def test_adjoint_identity(self, rng):
        maps = random_complex(rng, (6, 6, 3, 2))
        x = random_complex(rng, (6, 6, 2, 3))
        c = random_complex(rng, (6, 6, 3, 3))
        lhs = inner(apply_E(x, maps), c)
        rhs = inner(x, apply_E_adjoint(c, maps))
        assert abs(lhs - rhs) < 1e-10 * norm(x) * norm(c)

    def test_shape_mismatch(self, rng):
        maps = random_complex(rng, (6, 6, 3, 2))
        with pytest.raises(InvalidArgumentError):
            apply_E(random_complex(rng, (6, 6, 1, 3)), maps)
        with pytest.raises(InvalidArgumentError):
            apply_E_adjoint(random_complex(rng, (6, 6, 2, 3)), maps)


class TestForwardModel:
    """Test A = P F E."""

    def test_shapes(self, model):
        assert model.image_shape == (16, 16, 2, 6)
        assert model.kspace_shape == (16, 16, 4, 6)
        assert model.nsets == 2 and model.ncoils == 4 and model.nframes == 6

    def test_grid_mismatch(self, rng):
        with pytest.raises(InvalidArgumentError):
            ForwardModel(maps=random_complex(rng, (8, 8, 2, 1)), mask=np.ones((8, 6, 3), np.float32))

    def test_matches_frame_by_frame_oracle(self, rng, model):
        """Given-When-Then: A x equals masked centered FFTs of the coil images."""
        # Given: A random image
        x = random_complex(rng, model.image_shape)

        # When: Applying A
        y = apply_A(x, model)

        # Then: Every coil and frame matches the direct construction
        for i in range(model.ncoils):
            for t in range(model.nframes):
                coil_image = np.sum(model.maps[:, :, i, :] * x[:, :, :, t], axis=-1)
                expected = fftc(coil_image, axes=(0, 1)) * model.mask[:, :, t]
                np.testing.assert_allclose(y[:, :, i, t], expected, atol=1e-12)

    def test_unsampled_locations_are_zero(self, rng, model):
        y = apply_A(random_complex(rng, model.image_shape), model)
        unsampled = np.broadcast_to((model.mask == 0)[:, :, None, :], y.shape)
        assert not np.any(y[unsampled])

    @pytest.mark.parametrize("precision", ["single", "double"])
    def test_adjoint_identity(self, precision):
        """Given-When-Then: <A x, y> = <x, A^H y> to 1e-5 relative on 100 random instances."""
        config.runtime.precision = precision
        for seed in range(100):
            # Given: Random grid, coils, sets, frames, maps and mask for this seed
            rng = np.random.default_rng(seed)
            nx, ny = (int(n) for n in rng.integers(4, 13, size=2))
            ncoils, nsets, nframes = int(rng.integers(1, 5)), int(rng.integers(1, 3)), int(rng.integers(1, 5))
            maps = random_complex(rng, (nx, ny, ncoils, nsets))
            mask = (rng.uniform(size=(nx, ny, nframes)) < 0.5).astype(np.float32)
            model = ForwardModel(maps=maps, mask=mask)
            x = random_complex(rng, model.image_shape)
            y = random_complex(rng, model.kspace_shape)

            # When: Evaluating both inner products
            lhs = inner(apply_A(x, model), y)
            rhs = inner(x, apply_A_adjoint(y, model))

            # Then: They agree
            assert abs(lhs - rhs) < 1e-5 * norm(x) * norm(y), f"seed {seed}"

    def test_normal_operator_is_positive(self, rng, model):
        x = random_complex(rng, model.image_shape)
        value = inner(x, normal(x, model))
        assert value.real >= 0
        assert abs(value.imag) < 1e-8 * abs(value.real)

    def test_operator_norm_is_at_most_one(self, model):
        """Given-When-Then: Orthonormal maps and a binary mask give ||A|| <= 1."""
        assert operator_norm(model, iters=60) <= 1.001

    def test_full_sampling_single_set_is_identity(self, small_phantom, double_precision, rng):
        """Given-When-Then: Unit-RSS coils with a full mask make A^H A the identity."""
        # Given: True coils as one map set and every line sampled
        maps = small_phantom.coils.astype(np.complex128)[..., None]
        model = ForwardModel.from_calibration(maps, np.ones((32, 32, 3), np.uint8))
        x = random_complex(rng, model.image_shape)

        # When/Then: The normal operator returns its input
        np.testing.assert_allclose(normal(x, model), x, atol=1e-5)

    def test_wrong_shapes(self, rng, model):
        with pytest.raises(InvalidArgumentError):
            apply_A(random_complex(rng, (16, 16, 1, 6)), model)
        with pytest.raises(InvalidArgumentError):
            apply_A_adjoint(random_complex(rng, (16, 16, 4, 5)), model)


class TestPowerIteration:
    """Test the spectral-norm estimate."""

    def test_diagonal_operator(self):
        weights = np.linspace(0.1, 3.0, 20).reshape(4, 5)
        assert power_iteration(lambda v: weights * v, (4, 5), iters=300) == pytest.approx(3.0, rel=1e-3)

    def test_zero_operator(self):
        assert power_iteration(lambda v: 0 * v, (3, 3)) == 0.0


class TestSoftThreshold:
    """Test the complex soft-threshold prox."""

    def test_shrinks_magnitude_keeps_phase(self):
        """Given-When-Then: 3 e^{i phi} with lambda 1 becomes 2 e^{i phi}."""
        phase = np.exp(1j * 0.7)
        np.testing.assert_allclose(soft_threshold(np.array([3.0 * phase]), 1.0), [2.0 * phase], atol=1e-12)

    def test_small_values_and_zero_vanish(self):
        out = soft_threshold(np.array([0.5j, 0.0, -0.99]), 1.0)
        assert not out.any()

    def test_matches_grid_search_prox(self):
        """Given-When-Then: The closed form minimizes 1/2 |z - v|^2 + lambda |z|."""
        # Given: A complex value and a fine grid of candidates
        v, lam = 1.3 - 0.6j, 0.4
        axis = np.arange(-2.0, 2.0, 0.005)
        z = axis[:, None] + 1j * axis[None, :]

        # When: Minimizing the prox objective by brute force
        objective = 0.5 * np.abs(z - v) ** 2 + lam * np.abs(z)
        best = z.ravel()[objective.argmin()]

        # Then: The grid minimizer sits next to the closed form
        assert abs(best - soft_threshold(np.array([v]), lam)[0]) < 0.01

    def test_negative_threshold(self):
        with pytest.raises(InvalidArgumentError):
            soft_threshold(np.ones(2), -0.1)


class TestFiniteDifferences:
    """Test circular TV differences."""

    @pytest.mark.parametrize("axis", ["x", "y", "t"])
    def test_adjoint_identity(self, rng, axis):
        x = random_complex(rng, (5, 6, 2, 4))
        y = random_complex(rng, (5, 6, 2, 4))
        lhs = inner(tv_diff(x, axis), y)
        rhs = inner(x, tv_diff(y, axis, "adjoint"))
        assert abs(lhs - rhs) < 1e-10 * norm(x) * norm(y)

    def test_constant_has_zero_differences(self):
        assert not tv_diff(np.ones((4, 4, 1, 3), np.complex64), "t").any()

    def test_circular_wrap(self):
        x = np.arange(4, dtype=np.complex128).reshape(4, 1, 1, 1)
        np.testing.assert_array_equal(tv_diff(x, "x").ravel(), [1, 1, 1, -3])

    @pytest.mark.parametrize("axis", ["x", "t"])
    def test_norm_is_at_most_two(self, axis):
        """Given-When-Then: ||D|| <= 2 for circular first differences."""
        gram = power_iteration(lambda v: tv_diff(tv_diff(v, axis), axis, "adjoint"), (8, 8, 1, 8), iters=200)
        assert np.sqrt(gram) <= 2.0 + 1e-6

    def test_axis_names(self):
        assert tv_axis("temporal") == 3 and tv_axis("spatial-y") == 1
        with pytest.raises(InvalidArgumentError):
            tv_axis("z")
        with pytest.raises(InvalidArgumentError):
            tv_axis(2)
        with pytest.raises(InvalidArgumentError):
            tv_diff(np.zeros((2, 2, 1, 2)), "x", "sideways")


class TestTransforms:
    """Test sparsifying transforms."""

    def test_temporal_dft_is_unitary(self, rng):
        x = random_complex(rng, (4, 4, 2, 8))
        transform = TemporalDFT()
        assert norm(transform.forward(x)) == pytest.approx(norm(x), rel=1e-12)
        np.testing.assert_allclose(transform.adjoint(transform.forward(x)), x, atol=1e-12)

    def test_temporally_constant_image_is_sparse(self):
        x = np.ones((4, 4, 1, 8), np.complex128)
        coefficients = TemporalDFT().forward(x)
        assert np.count_nonzero(np.abs(coefficients) > 1e-12) == 16

    def test_unitary_flags(self):
        assert TemporalDFT.unitary and IdentityTransform.unitary
        assert not SpatialFiniteDifference.unitary
