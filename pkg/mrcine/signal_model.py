"""Multi-set ESPIRiT signal model ``A = P F E`` and shared proximal machinery."""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .calibration import EspiritMaps
from .sampling import KTMask
from .tensor_core import complex_dtype, fftc, ifftc, inner, norm
from .validation import InvalidArgumentError

logger = logging.getLogger(__name__)

TV_AXES = {"x": 0, "y": 1, "t": 3, "spatial-x": 0, "spatial-y": 1, "temporal": 3}


def _check_image(x: np.ndarray, maps: np.ndarray) -> None:
    if x.ndim != 4 or x.shape[:2] != maps.shape[:2] or x.shape[2] != maps.shape[3]:
        raise InvalidArgumentError(
            f"image {x.shape} does not match maps {maps.shape} (x, y, coil, set)"
        )


def _check_coils(c: np.ndarray, maps: np.ndarray) -> None:
    if c.ndim != 4 or c.shape[:3] != maps.shape[:3]:
        raise InvalidArgumentError(
            f"coil data {c.shape} does not match maps {maps.shape} (x, y, coil, set)"
        )


def apply_E(x: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """Coil images ``sum_m S_m * x_m`` with layout (x, y, coil, frame)."""
    _check_image(x, maps)
    return np.einsum("xycm,xymt->xyct", maps, x)


def apply_E_adjoint(c: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """Per-set coil combination ``sum_i conj(S_m^i) * c^i``."""
    _check_coils(c, maps)
    return np.einsum("xycm,xyct->xymt", maps.conj(), c)


@dataclass
class ForwardModel:
    """Maps (x, y, coil, set) with a binary mask (kx, ky, frame)."""

    maps: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        if self.maps.ndim != 4 or self.mask.ndim != 3:
            raise InvalidArgumentError(
                f"forward model needs 4-D maps and a 3-D mask (got {self.maps.shape}, {self.mask.shape})"
            )
        if self.maps.shape[:2] != self.mask.shape[:2]:
            raise InvalidArgumentError(
                f"maps grid {self.maps.shape[:2]} differs from mask grid {self.mask.shape[:2]}"
            )

    @classmethod
    def from_calibration(cls, maps: Union[EspiritMaps, np.ndarray], mask: Union[KTMask, np.ndarray]) -> "ForwardModel":
        map_array = maps.maps if isinstance(maps, EspiritMaps) else maps
        pattern = mask.pattern if isinstance(mask, KTMask) else mask
        return cls(maps=map_array, mask=np.asarray(pattern).astype(np.float32))

    @property
    def nsets(self) -> int:
        return self.maps.shape[3]

    @property
    def ncoils(self) -> int:
        return self.maps.shape[2]

    @property
    def nframes(self) -> int:
        return self.mask.shape[2]

    @property
    def image_shape(self):
        return (self.maps.shape[0], self.maps.shape[1], self.nsets, self.nframes)

    @property
    def kspace_shape(self):
        return (self.maps.shape[0], self.maps.shape[1], self.ncoils, self.nframes)


def apply_A(x: np.ndarray, model: ForwardModel) -> np.ndarray:
    if x.shape != model.image_shape:
        raise InvalidArgumentError(f"image {x.shape} does not match model {model.image_shape}")
    return fftc(apply_E(x, model.maps), axes=(0, 1)) * model.mask[:, :, None, :]


def apply_A_adjoint(y: np.ndarray, model: ForwardModel) -> np.ndarray:
    if y.shape != model.kspace_shape:
        raise InvalidArgumentError(f"k-space {y.shape} does not match model {model.kspace_shape}")
    return apply_E_adjoint(ifftc(y * model.mask[:, :, None, :], axes=(0, 1)), model.maps)


def normal(x: np.ndarray, model: ForwardModel) -> np.ndarray:
    """``A^H A x``."""
    return apply_A_adjoint(apply_A(x, model), model)


def power_iteration(
    op: Callable[[np.ndarray], np.ndarray],
    shape: Sequence[int],
    iters: int = 50,
    seed: int = 0,
) -> float:
    """Largest eigenvalue of a Hermitian positive semi-definite operator."""
    rng = np.random.default_rng(seed)
    v = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(np.complex128)
    v /= norm(v)
    estimate = 0.0
    for _ in range(iters):
        w = op(v)
        estimate = inner(v, w).real
        w_norm = norm(w)
        if w_norm == 0:
            return 0.0
        v = w / w_norm
    return float(estimate)


def operator_norm(model: ForwardModel, iters: int = 50, seed: int = 0) -> float:
    """Spectral norm of ``A`` by power iteration on ``A^H A``."""
    return float(np.sqrt(max(power_iteration(lambda v: normal(v, model), model.image_shape, iters, seed), 0.0)))


def soft_threshold(v: np.ndarray, lam: float) -> np.ndarray:
    """Complex soft thresholding ``v * max(|v| - lam, 0) / |v|``."""
    if lam < 0:
        raise InvalidArgumentError(f"threshold must be non-negative (got {lam})")
    magnitude = np.abs(v)
    shrink = np.maximum(magnitude - lam, 0.0) / np.where(magnitude > 0, magnitude, 1.0)
    return v * shrink


def tv_axis(axis: Union[str, int]) -> int:
    if isinstance(axis, str):
        if axis not in TV_AXES:
            raise InvalidArgumentError(f"unknown TV axis '{axis}'")
        return TV_AXES[axis]
    if axis not in (0, 1, 3):
        raise InvalidArgumentError(f"TV axis index must be 0, 1 or 3 (got {axis})")
    return axis


def tv_diff(x: np.ndarray, axis: Union[str, int], direction: str = "forward") -> np.ndarray:
    """Circular first differences along one image axis, or their adjoint."""
    ax = tv_axis(axis)
    if direction == "forward":
        return np.roll(x, -1, axis=ax) - x
    if direction == "adjoint":
        return np.roll(x, 1, axis=ax) - x
    raise InvalidArgumentError(f"direction must be forward or adjoint (got '{direction}')")


class UnitaryTransform:
    """Sparsifying transform applied per map set."""

    unitary = True

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class TemporalDFT(UnitaryTransform):
    """Centered orthonormal DFT along the frame axis."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        return fftc(x, axes=(3,))

    def adjoint(self, x: np.ndarray) -> np.ndarray:
        return ifftc(x, axes=(3,))


class IdentityTransform(UnitaryTransform):
    def forward(self, x: np.ndarray) -> np.ndarray:
        return x

    def adjoint(self, x: np.ndarray) -> np.ndarray:
        return x


class SpatialFiniteDifference(UnitaryTransform):
    """Readout differences; not unitary, so the soft-threshold prox does not apply."""

    unitary = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        return tv_diff(x, "x")

    def adjoint(self, x: np.ndarray) -> np.ndarray:
        return tv_diff(x, "x", "adjoint")


def zeros_image(model: ForwardModel, dtype: Optional[np.dtype] = None) -> np.ndarray:
    return np.zeros(model.image_shape, dtype=dtype or complex_dtype())
