"""Coil compression and multi-set ESPIRiT sensitivity estimation.

Maps come from the time-averaged central k-space region: the block-Hankel
matrix of kernel-sized patches gives a signal subspace, whose kernels are
moved to the image domain to form a per-pixel coil operator. Its dominant
eigenvectors are the map sets.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from config import CalibrationConfig, config
from .container import read_container, write_container
from .sampling import KTMask, undersample
from .tensor_core import complex_dtype, ifftc, svd_econ
from .validation import (
    CalibrationInfeasibleError,
    ConfigValidator,
    InvalidArgumentError,
)

logger = logging.getLogger(__name__)

KERNEL_CHUNK = 32


@dataclass
class CoilCompression:
    kspace: np.ndarray
    singular_values: np.ndarray
    retained_energy: float


@dataclass
class CalibRegion:
    """Time-averaged central k-space (kx_c, ky_c, coil)."""

    data: np.ndarray

    @property
    def extents(self) -> Tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]


@dataclass
class EspiritMaps:
    """Map sets (x, y, coil, set) and their per-pixel eigenvalues (x, y, set)."""

    maps: np.ndarray
    calib_width: int
    kernel: Tuple[int, int]
    sv_threshold: float
    eig_crop: float
    eigenvalues: Optional[np.ndarray] = None

    @property
    def nsets(self) -> int:
        return self.maps.shape[3]

    @property
    def ncoils(self) -> int:
        return self.maps.shape[2]

    def overlap_mask(self) -> np.ndarray:
        """Pixels where the second map set survives the eigenvalue crop."""
        if self.nsets < 2:
            return np.zeros(self.maps.shape[:2], dtype=bool)
        if self.eigenvalues is not None:
            return self.eigenvalues[:, :, 1] >= self.eig_crop
        return np.sum(np.abs(self.maps[:, :, :, 1]) ** 2, axis=-1) > 0.5


@dataclass
class CalibrationResult:
    kspace: np.ndarray
    maps: EspiritMaps
    compression: Optional[CoilCompression] = None


def compress_coils(y: np.ndarray, n_virtual: int) -> CoilCompression:
    """Project the coil axis onto the top ``n_virtual`` right-singular vectors."""
    ncoils = y.shape[2]
    if n_virtual < 1:
        raise InvalidArgumentError(f"n_virtual must be >= 1 (got {n_virtual})")
    if n_virtual > ncoils:
        raise InvalidArgumentError(f"n_virtual {n_virtual} exceeds the {ncoils} physical coils")

    samples = np.moveaxis(y, 2, -1).reshape(-1, ncoils)
    acquired = samples[np.any(samples != 0, axis=1)]
    if acquired.shape[0] == 0:
        raise CalibrationInfeasibleError("coil compression: k-space holds no acquired samples")
    _, s, v = svd_econ(acquired)
    energy = s.astype(np.float64) ** 2
    retained = float(energy[:n_virtual].sum() / energy.sum()) if energy.sum() > 0 else 1.0

    compressed = np.einsum("xyct,cv->xyvt", y, v[:, :n_virtual]).astype(y.dtype)
    logger.info(
        "Compressed %d coils to %d virtual coils (%.4f energy retained)",
        ncoils, n_virtual, retained,
    )
    return CoilCompression(kspace=compressed, singular_values=s, retained_energy=retained)


def _pattern(mask: Union[KTMask, np.ndarray]) -> np.ndarray:
    return mask.pattern if isinstance(mask, KTMask) else np.asarray(mask)


def extract_calib(y: np.ndarray, mask: Union[KTMask, np.ndarray], width: int) -> CalibRegion:
    """Temporal mean of the sampled entries over the central calibration window.

    Along ky the window is ``width`` lines wide; along kx it is the largest
    symmetric window of at most ``width`` rows that avoids partial-echo rows.
    """
    pattern = _pattern(mask).astype(bool)
    nx, ny = pattern.shape[:2]
    if width < 1 or width > ny or width > nx:
        raise InvalidArgumentError(f"calibration width {width} does not fit a {nx}x{ny} grid")

    counts = pattern.sum(axis=-1)
    sampled_rows = np.flatnonzero(pattern.any(axis=(1, 2)))
    if sampled_rows.size == 0:
        raise CalibrationInfeasibleError("mask samples no k-space at all")
    echo_rows = int(sampled_rows[0])
    width_x = min(width, 2 * (nx // 2 - echo_rows))
    if width_x < 1:
        raise CalibrationInfeasibleError(
            f"partial echo removes {echo_rows} of {nx} readout rows; no symmetric window remains"
        )

    kx0, ky0 = nx // 2 - width_x // 2, ny // 2 - width // 2
    window = counts[kx0 : kx0 + width_x, ky0 : ky0 + width]
    uncovered = np.flatnonzero(~(window > 0).all(axis=0))
    if uncovered.size:
        raise CalibrationInfeasibleError(
            f"calibration line ky={ky0 + int(uncovered[0])} is never sampled "
            f"within the central {width}-line region"
        )

    summed = undersample(y, pattern.astype(np.uint8)).sum(axis=-1)
    region = summed[kx0 : kx0 + width_x, ky0 : ky0 + width] / window[:, :, None]
    logger.debug("Extracted %dx%d calibration region", width_x, width)
    return CalibRegion(data=region)


def _signal_kernels(calib: np.ndarray, kernel: Tuple[int, int], sv_threshold: float) -> np.ndarray:
    patches = sliding_window_view(calib, kernel, axis=(0, 1))
    # (positions, coil, kx, ky) rows of the block-Hankel matrix
    hankel = patches.reshape(-1, calib.shape[2] * kernel[0] * kernel[1])
    _, s, v = svd_econ(hankel.astype(np.complex128))
    if s.size == 0 or s[0] <= 0:
        raise CalibrationInfeasibleError("calibration data is identically zero")
    keep = int(np.count_nonzero(s >= sv_threshold * s[0]))
    # rows of V^H span the patch space
    kernels = v[:, :keep].conj().T
    return kernels.reshape(keep, calib.shape[2], kernel[0], kernel[1])


def _coil_operator(kernels: np.ndarray, image_shape: Tuple[int, int]) -> np.ndarray:
    nkernels, ncoils, kx, ky = kernels.shape
    nx, ny = image_shape
    x0, y0 = nx // 2 - kx // 2, ny // 2 - ky // 2
    scale = np.sqrt(nx * ny) / np.sqrt(kx * ky)
    operator = np.zeros((nx, ny, ncoils, ncoils), dtype=np.complex128)
    for start in range(0, nkernels, KERNEL_CHUNK):
        chunk = kernels[start : start + KERNEL_CHUNK]
        padded = np.zeros((chunk.shape[0], ncoils, nx, ny), dtype=np.complex128)
        padded[:, :, x0 : x0 + kx, y0 : y0 + ky] = chunk
        w = scale * ifftc(padded, axes=(2, 3))
        operator += np.einsum("jcxy,jdxy->xycd", w, w.conj())
    return operator


def estimate_espirit_maps(
    calib: CalibRegion,
    image_shape: Tuple[int, int],
    nsets: int = 2,
    kernel: Tuple[int, int] = (6, 6),
    sv_threshold: float = 0.02,
    eig_crop: float = 0.9,
) -> EspiritMaps:
    """Top-``nsets`` eigenvectors of the per-pixel calibration operator, hard-cropped."""
    cfg = CalibrationConfig(
        nsets=nsets,
        calib_width=max(calib.extents),
        kernel=tuple(kernel),
        sv_threshold=sv_threshold,
        eig_crop=eig_crop,
    )
    ConfigValidator.validate_calibration(cfg).raise_if_invalid("calibration parameters")
    if calib.extents[0] < kernel[0] or calib.extents[1] < kernel[1]:
        raise InvalidArgumentError(
            f"calibration region {calib.extents} is smaller than the kernel {tuple(kernel)}"
        )
    ncoils = calib.data.shape[2]
    if nsets > ncoils:
        raise InvalidArgumentError(f"{nsets} map sets requested from {ncoils} coils")

    kernels = _signal_kernels(calib.data, tuple(kernel), sv_threshold)
    operator = _coil_operator(kernels, image_shape)
    values, vectors = np.linalg.eigh(operator)
    values = values[..., ::-1][..., :nsets]
    vectors = vectors[..., ::-1][..., :nsets]

    phase = np.exp(-1j * np.angle(vectors[:, :, :1, :]))
    vectors = vectors * phase
    maps = vectors * (values >= eig_crop)[:, :, None, :]
    values = np.clip(values, 0.0, None)
    logger.info(
        "ESPIRiT: %d of %d kernels in the signal subspace, %d set(s), %.1f%% of pixels in set 1",
        kernels.shape[0], kernels.shape[1] * kernel[0] * kernel[1], nsets,
        100.0 * float(np.mean(values[:, :, 0] >= eig_crop)),
    )
    return EspiritMaps(
        maps=maps.astype(complex_dtype()),
        calib_width=cfg.calib_width,
        kernel=tuple(kernel),
        sv_threshold=sv_threshold,
        eig_crop=eig_crop,
        eigenvalues=values,
    )


def calibrate(
    y: np.ndarray,
    mask: Union[KTMask, np.ndarray],
    cfg: Optional[CalibrationConfig] = None,
) -> CalibrationResult:
    """Optional coil compression, calibration extraction and map estimation."""
    cfg = cfg or config.calibration
    ConfigValidator.validate_calibration(cfg).raise_if_invalid("calibration config")
    compression = None
    if cfg.virtual_coils is not None and cfg.virtual_coils < y.shape[2]:
        compression = compress_coils(undersample(y, _pattern(mask)), cfg.virtual_coils)
        y = compression.kspace
    region = extract_calib(y, mask, cfg.calib_width)
    maps = estimate_espirit_maps(
        region,
        image_shape=(y.shape[0], y.shape[1]),
        nsets=cfg.nsets,
        kernel=cfg.kernel,
        sv_threshold=cfg.sv_threshold,
        eig_crop=cfg.eig_crop,
    )
    return CalibrationResult(kspace=y, maps=maps, compression=compression)


def save_maps(path: Union[str, Path], maps: EspiritMaps) -> Path:
    return write_container(
        path,
        maps.maps,
        {
            "axes": "x,y,coil,set",
            "nsets": maps.nsets,
            "calib_width": maps.calib_width,
            "kernel_x": maps.kernel[0],
            "kernel_y": maps.kernel[1],
            "sv_threshold": maps.sv_threshold,
            "eig_crop": maps.eig_crop,
        },
    )


def load_maps(path: Union[str, Path]) -> EspiritMaps:
    array, meta = read_container(path)
    if array.ndim != 4 or not np.iscomplexobj(array):
        raise InvalidArgumentError(f"{path} does not hold (x, y, coil, set) maps")
    defaults = config.calibration
    return EspiritMaps(
        maps=array,
        calib_width=int(meta.get("calib_width", defaults.calib_width)),
        kernel=(
            int(meta.get("kernel_x", defaults.kernel[0])),
            int(meta.get("kernel_y", defaults.kernel[1])),
        ),
        sv_threshold=float(meta.get("sv_threshold", defaults.sv_threshold)),
        eig_crop=float(meta.get("eig_crop", defaults.eig_crop)),
    )
