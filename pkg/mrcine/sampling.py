"""k-t undersampling masks, retrospective undersampling and training augmentations."""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from config import SamplingConfig, config
from .container import read_container, write_container
from .tensor_core import fftc, ifftc
from .validation import InvalidArgumentError

logger = logging.getLogger(__name__)

MAX_PARTIAL_ECHO = 0.3
MAX_FOV_REDUCTION = 0.3


@dataclass
class KTMask:
    """Binary sampling pattern over (kx, ky, frame)."""

    pattern: np.ndarray
    accel: float
    partial_echo_frac: float = 0.0
    seed: int = 0
    density_power: float = 3.0

    @property
    def shape(self):
        return self.pattern.shape

    def lines_per_frame(self) -> np.ndarray:
        """Number of sampled ky lines in each frame (a line counts if any kx is sampled)."""
        return np.count_nonzero(self.pattern.any(axis=0), axis=0)


def _band_start(ny: int, frame: int, band: int, calib_width: int) -> int:
    width = min(calib_width, ny)
    positions = max(1, math.ceil(width / band))
    start = ny // 2 - width // 2 + band * (frame % positions)
    return int(np.clip(start, 0, ny - band))


def central_band(ny: int, frame: int, cfg: Optional[SamplingConfig] = None, band: Optional[int] = None) -> np.ndarray:
    """Indices of the contiguous central band forced in ``frame``.

    The band sweeps across the calibration width so the time average of
    ``ceil(calib_width / band)`` consecutive frames covers it completely.
    """
    cfg = cfg or config.sampling
    band = cfg.center_lines if band is None else band
    start = _band_start(ny, frame, band, cfg.calib_width)
    return np.arange(start, start + band)


def vd_density(ny: int, power: float) -> np.ndarray:
    """Unnormalized density ``(1 - |ky - ny/2| / (ny/2))^p`` per ky line."""
    distance = np.abs(np.arange(ny) - ny // 2) / (ny / 2)
    return np.clip(1.0 - distance, 0.0, None) ** power


def _inclusion_probabilities(weights: np.ndarray, k: int) -> np.ndarray:
    """First-order inclusion probabilities ``pi_i = min(1, c * w_i)`` summing to ``k``."""
    pi = np.zeros_like(weights, dtype=np.float64)
    if k == 0:
        return pi
    positive = weights > 0
    if np.count_nonzero(positive) < k:
        raise InvalidArgumentError(
            f"only {np.count_nonzero(positive)} lines have nonzero density, {k} requested"
        )
    capped = np.zeros_like(positive)
    while True:
        free = positive & ~capped
        remaining = k - np.count_nonzero(capped)
        pi[capped] = 1.0
        pi[free] = remaining * weights[free] / weights[free].sum()
        over = free & (pi > 1.0)
        if not over.any():
            return pi
        capped |= over


def _frame_setup(ny: int, frame: int, accel: float, cfg: SamplingConfig, band: int):
    n_lines = int(math.floor(ny / accel + 1e-9))
    forced = central_band(ny, frame, cfg, band)
    weights = vd_density(ny, cfg.density_power)
    weights[forced] = 0.0
    return n_lines, forced, weights


def _check_budget(ny: int, accel: float, band: int) -> int:
    if not 1.0 <= accel <= 20.0:
        raise InvalidArgumentError(f"accel must lie in [1, 20] (got {accel})")
    n_lines = int(math.floor(ny / accel + 1e-9))
    if accel > 1.0 and n_lines < band:
        raise InvalidArgumentError(
            f"floor({ny}/{accel}) = {n_lines} lines cannot hold the {band}-line central band"
        )
    return n_lines


def line_inclusion_probabilities(
    ny: int,
    nframes: int,
    accel: float,
    cfg: Optional[SamplingConfig] = None,
    center_lines: Optional[int] = None,
) -> np.ndarray:
    """Exact per-frame probability that each ky line is sampled, shape (ny, nframes)."""
    cfg = cfg or config.sampling
    band = cfg.center_lines if center_lines is None else center_lines
    _check_budget(ny, accel, band)
    probabilities = np.ones((ny, nframes))
    if accel == 1.0:
        return probabilities
    for frame in range(nframes):
        n_lines, forced, weights = _frame_setup(ny, frame, accel, cfg, band)
        pi = _inclusion_probabilities(weights, n_lines - band)
        pi[forced] = 1.0
        probabilities[:, frame] = pi
    return probabilities


def _systematic_draw(pi: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Randomized systematic sampling: exactly ``k`` distinct indices with marginals ``pi``."""
    order = rng.permutation(pi.size)
    cumulative = np.cumsum(pi[order])
    cumulative[-1] = k
    points = rng.uniform() + np.arange(k)
    picked = np.searchsorted(cumulative, points, side="right")
    return order[picked]


def make_vd_mask(
    ny: int,
    nframes: int,
    accel: float,
    seed: int,
    nx: Optional[int] = None,
    cfg: Optional[SamplingConfig] = None,
    center_lines: Optional[int] = None,
) -> KTMask:
    """Variable-density Cartesian line mask with ``floor(ny / accel)`` lines per frame."""
    cfg = cfg or config.sampling
    nx = ny if nx is None else nx
    band = cfg.center_lines if center_lines is None else center_lines
    if ny < 1 or nx < 1 or nframes < 1:
        raise InvalidArgumentError(f"mask extents must be positive (got {nx}x{ny}x{nframes})")
    _check_budget(ny, accel, band)

    lines = np.zeros((ny, nframes), dtype=np.uint8)
    if accel == 1.0:
        lines[:] = 1
    else:
        rng = np.random.default_rng(seed)
        for frame in range(nframes):
            n_lines, forced, weights = _frame_setup(ny, frame, accel, cfg, band)
            extra = n_lines - band
            pi = _inclusion_probabilities(weights, extra)
            lines[forced, frame] = 1
            if extra:
                lines[_systematic_draw(pi, extra, rng), frame] = 1

    pattern = np.broadcast_to(lines[None, :, :], (nx, ny, nframes)).copy()
    logger.debug("Mask %dx%dx%d at R=%.2f (seed %d)", nx, ny, nframes, accel, seed)
    return KTMask(
        pattern=pattern, accel=float(accel), seed=seed, density_power=cfg.density_power
    )


def partial_echo_rows(nx: int, frac: float) -> int:
    return int(math.floor(frac * nx + 1e-9))


def apply_partial_echo(mask: KTMask, frac: float) -> KTMask:
    """Zero the first ``floor(frac * nx)`` readout rows of the pattern."""
    if not 0.0 <= frac <= MAX_PARTIAL_ECHO:
        raise InvalidArgumentError(f"partial echo fraction must lie in [0, 0.3] (got {frac})")
    pattern = mask.pattern.copy()
    pattern[: partial_echo_rows(pattern.shape[0], frac)] = 0
    return KTMask(
        pattern=pattern,
        accel=mask.accel,
        partial_echo_frac=frac,
        seed=mask.seed,
        density_power=mask.density_power,
    )


def _pattern_of(mask: Union[KTMask, np.ndarray]) -> np.ndarray:
    return mask.pattern if isinstance(mask, KTMask) else np.asarray(mask)


def undersample(y_full: np.ndarray, mask: Union[KTMask, np.ndarray]) -> np.ndarray:
    """Multiply k-space (kx, ky, coil, frame) by the mask broadcast over coils."""
    pattern = _pattern_of(mask)
    if y_full.ndim != 4 or pattern.shape != (y_full.shape[0], y_full.shape[1], y_full.shape[3]):
        raise InvalidArgumentError(
            f"undersample: k-space {y_full.shape} does not match mask {pattern.shape}"
        )
    return y_full * pattern[:, :, None, :].astype(y_full.real.dtype)


def reduced_extent(ny: int, factor: float) -> int:
    return int(math.ceil((1.0 - factor) * ny - 1e-9))


def fold_index(ny: int, ny_reduced: int) -> np.ndarray:
    """Destination of each source PE pixel when the FOV shrinks to ``ny_reduced``."""
    centered = np.arange(ny) - ny // 2
    return (centered + ny_reduced // 2) % ny_reduced


def reduce_fov(y_full: np.ndarray, factor: float) -> np.ndarray:
    """Shrink the phase-encode FOV at fixed resolution so anatomy outside it wraps.

    Image content is folded modulo the new extent, which is what dropping
    k-space lines at the coarser spacing produces.
    """
    if not 0.0 <= factor <= MAX_FOV_REDUCTION:
        raise InvalidArgumentError(f"FOV reduction must lie in [0, 0.3] (got {factor})")
    ny = y_full.shape[1]
    ny_reduced = reduced_extent(ny, factor)
    if ny_reduced == ny:
        return y_full.copy()
    image = ifftc(y_full, axes=(1,))
    folded_shape = list(image.shape)
    folded_shape[1] = ny_reduced
    folded = np.zeros(folded_shape, dtype=image.dtype)
    destination = fold_index(ny, ny_reduced)
    for source in range(ny):
        folded[:, destination[source]] += image[:, source]
    return fftc(folded, axes=(1,))


@dataclass
class KSpaceExample:
    """Fully-sampled k-space (kx, ky, coil, frame) with its maps (x, y, coil, set)."""

    kspace: np.ndarray
    maps: np.ndarray


@dataclass
class AugmentParams:
    flip_x: bool = False
    flip_y: bool = False
    pe_shift: int = 0
    frame_shift: int = 0


def draw_augment_params(seed: int, cfg: Optional[SamplingConfig] = None) -> AugmentParams:
    cfg = cfg or config.sampling
    rng = np.random.default_rng(seed)
    return AugmentParams(
        flip_x=bool(rng.uniform() < cfg.flip_probability),
        flip_y=bool(rng.uniform() < cfg.flip_probability),
        pe_shift=int(rng.integers(-cfg.max_pe_shift, cfg.max_pe_shift + 1)),
        frame_shift=int(rng.integers(-cfg.max_frame_shift, cfg.max_frame_shift + 1)),
    )


def apply_augmentation(
    example: KSpaceExample, params: AugmentParams, crop: Optional[int] = None
) -> KSpaceExample:
    """Flip, shift, rotate in time, crop the readout and rescale to unit peak RSS.

    Without a mask the zero-filled image is the fully-sampled one; once a mask
    is drawn, ``training.build_example`` rescales against the masked data.
    """
    coil_images = ifftc(example.kspace, axes=(0, 1))
    maps = example.maps
    nx = coil_images.shape[0]
    if crop is not None and crop > nx:
        raise InvalidArgumentError(f"readout crop {crop} exceeds extent {nx}")

    if params.flip_x:
        coil_images, maps = coil_images[::-1], maps[::-1]
    if params.flip_y:
        coil_images, maps = coil_images[:, ::-1], maps[:, ::-1]
    if params.pe_shift:
        coil_images = np.roll(coil_images, params.pe_shift, axis=1)
        maps = np.roll(maps, params.pe_shift, axis=1)
    if params.frame_shift:
        coil_images = np.roll(coil_images, params.frame_shift, axis=3)
    if crop is not None and crop < nx:
        start = (nx - crop) // 2
        coil_images = coil_images[start : start + crop]
        maps = maps[start : start + crop]

    kspace, _ = normalize_kspace(fftc(np.ascontiguousarray(coil_images), axes=(0, 1)))
    return KSpaceExample(kspace=kspace, maps=np.ascontiguousarray(maps))


def zero_filled_peak(y: np.ndarray) -> float:
    """Peak of the RSS-combined zero-filled magnitude of (kx, ky, coil, frame) data."""
    coil_images = ifftc(y, axes=(0, 1))
    rss = np.sqrt(np.sum(np.abs(coil_images) ** 2, axis=2))
    return float(rss.max()) if rss.size else 0.0


def normalize_kspace(y: np.ndarray) -> Tuple[np.ndarray, float]:
    """Scale k-space to a unit zero-filled RSS peak; returns the data and the scale removed."""
    peak = zero_filled_peak(y)
    if peak <= 0.0:
        return y, 1.0
    return y / peak, peak


def augment(example: KSpaceExample, seed: int, cfg: Optional[SamplingConfig] = None) -> KSpaceExample:
    cfg = cfg or config.sampling
    return apply_augmentation(example, draw_augment_params(seed, cfg), cfg.readout_crop)


def temporal_resample(y_full: np.ndarray, target_frames: int, mode: str = "nearest") -> np.ndarray:
    """Nearest-neighbour regating of the last (frame) axis to ``target_frames``."""
    if mode != "nearest":
        raise InvalidArgumentError(f"unsupported resampling mode '{mode}'")
    if target_frames < 2:
        raise InvalidArgumentError(f"target_frames must be >= 2 (got {target_frames})")
    nframes = y_full.shape[-1]
    index = np.floor(np.arange(target_frames) * nframes / target_frames + 0.5).astype(int) % nframes
    return y_full[..., index]


def save_mask(path: Union[str, Path], mask: KTMask) -> Path:
    return write_container(
        path,
        mask.pattern.astype(np.uint8),
        {
            "axes": "kx,ky,frame",
            "accel": mask.accel,
            "seed": mask.seed,
            "density_power": mask.density_power,
            "partial_echo_frac": mask.partial_echo_frac,
        },
    )


def load_mask(path: Union[str, Path]) -> KTMask:
    pattern, meta = read_container(path)
    if pattern.dtype != np.uint8 or pattern.ndim != 3:
        raise InvalidArgumentError(f"{path} does not hold a (kx, ky, frame) uint8 mask")
    return KTMask(
        pattern=pattern,
        accel=float(meta.get("accel", 1.0)),
        partial_echo_frac=float(meta.get("partial_echo_frac", 0.0)),
        seed=int(meta.get("seed", 0)),
        density_power=float(meta.get("density_power", 3.0)),
    )
