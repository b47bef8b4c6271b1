"""Centered unitary Fourier transforms and small linear-algebra helpers.

Arrays are plain numpy arrays laid out row-major. Canonical axis orders:
k-space ``(kx, ky, coil, frame)``, cine images ``(x, y, set, frame)``,
sensitivity maps ``(x, y, coil, set)`` and masks ``(kx, ky, frame)``.
"""

from typing import Sequence, Tuple

import numpy as np
import scipy.fft

from config import config
from .validation import InvalidArgumentError, ensure_same_shape


def complex_dtype() -> np.dtype:
    """Complex dtype selected by the runtime precision."""
    return np.dtype(np.complex128 if config.runtime.precision == "double" else np.complex64)


def real_dtype() -> np.dtype:
    return np.dtype(np.float64 if config.runtime.precision == "double" else np.float32)


def workers() -> int:
    return 1 if config.runtime.deterministic else config.runtime.threads


def _normalize_axes(ndim: int, axes: Sequence[int]) -> Tuple[int, ...]:
    normalized = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise InvalidArgumentError(f"axis {axis} out of range for a {ndim}-D tensor")
        normalized.append(axis % ndim)
    if len(set(normalized)) != len(normalized):
        raise InvalidArgumentError(f"repeated axes in {tuple(axes)}")
    return tuple(normalized)


def fftc(t: np.ndarray, axes: Sequence[int], direction: str = "forward") -> np.ndarray:
    """Centered orthonormal FFT along ``axes``.

    The zero frequency sits at index ``n // 2`` of every transformed axis;
    centering is done with index shifts so it is exact for odd extents too.
    """
    axes = _normalize_axes(t.ndim, axes)
    if direction == "forward":
        transform = scipy.fft.fftn
    elif direction == "inverse":
        transform = scipy.fft.ifftn
    else:
        raise InvalidArgumentError(f"direction must be forward or inverse (got '{direction}')")
    if not np.iscomplexobj(t):
        t = t.astype(complex_dtype())
    shifted = scipy.fft.ifftshift(t, axes=axes)
    out = transform(shifted, axes=axes, norm="ortho", workers=workers())
    return scipy.fft.fftshift(out, axes=axes)


def ifftc(t: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    return fftc(t, axes, direction="inverse")


def svd_econ(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Economy SVD returning ``(U, s, V)`` with ``m = U @ diag(s) @ V^H``."""
    if m.ndim != 2:
        raise InvalidArgumentError(f"svd_econ expects a 2-D matrix, got {m.ndim}-D")
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    return u, s, vh.conj().T


def inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Inner product ``sum(conj(a) * b)``."""
    ensure_same_shape(a, b, "inner")
    return complex(np.vdot(a, b))


def norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a.ravel()))
