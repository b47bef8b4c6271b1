"""Synthetic dynamic cardiac phantom with multi-coil k-space.

Geometry uses normalized coordinates in [-1, 1) along both axes. The image is
a torso ellipse containing a myocardial annulus around a pulsating blood pool
with a few papillary discs, multiplied by a smooth low-order phase.
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from config import PhantomConfig
from .container import write_container
from .tensor_core import complex_dtype, fftc
from .validation import ConfigValidator, InvalidArgumentError

logger = logging.getLogger(__name__)

TORSO_SEMI_AXES = (0.85, 0.8)
TORSO_INTENSITY = 0.35
MYOCARDIUM_INTENSITY = 0.55
BLOOD_INTENSITY = 1.0
PAPILLARY_INTENSITY = 0.6
HEART_CENTER = (0.05, -0.05)
POOL_SEMI_AXES = (0.22, 0.18)
MYOCARDIUM_THICKNESS = 0.08
PAPILLARY_RADIUS = 0.035
COIL_RING_RADIUS = 1.3
COIL_WIDTH = 0.9


@dataclass
class GroundTruth:
    """Fully-sampled phantom data."""

    image: np.ndarray  # (x, y, 1, frame)
    coils: np.ndarray  # (x, y, coil)
    kspace: np.ndarray  # (kx, ky, coil, frame)


def _grid(nx: int, ny: int) -> Tuple[np.ndarray, np.ndarray]:
    u = (np.arange(nx) - nx // 2) / (nx / 2)
    v = (np.arange(ny) - ny // 2) / (ny / 2)
    return np.meshgrid(u, v, indexing="ij")


def _ellipse(u: np.ndarray, v: np.ndarray, center, axes) -> np.ndarray:
    return ((u - center[0]) / axes[0]) ** 2 + ((v - center[1]) / axes[1]) ** 2 <= 1.0


def torso_semi_axes(cfg: PhantomConfig) -> Tuple[float, float]:
    """Torso extent; a positive wrap_fraction stretches it along phase encoding."""
    return TORSO_SEMI_AXES[0], min(TORSO_SEMI_AXES[1] + cfg.wrap_fraction, 0.98)


def pulsation(cfg: PhantomConfig, frame: int) -> float:
    """Blood pool scale factor ``1 + A sin(2 pi frame / nframes)``."""
    return 1.0 + cfg.motion_amplitude * np.sin(2.0 * np.pi * frame / cfg.nframes)


def torso_support(cfg: PhantomConfig) -> np.ndarray:
    u, v = _grid(cfg.nx, cfg.ny)
    return _ellipse(u, v, (0.0, 0.0), torso_semi_axes(cfg))


def blood_pool_mask(cfg: PhantomConfig, frame: int) -> np.ndarray:
    """Pixels inside the blood pool ellipse (papillary discs included)."""
    u, v = _grid(cfg.nx, cfg.ny)
    s = pulsation(cfg, frame)
    return _ellipse(u, v, HEART_CENTER, (POOL_SEMI_AXES[0] * s, POOL_SEMI_AXES[1] * s))


def _papillary_angles(rng: np.random.Generator) -> np.ndarray:
    count = int(rng.integers(2, 5))
    return rng.uniform(0.0, 2.0 * np.pi, size=count)


def _frame_magnitude(cfg: PhantomConfig, frame: int, angles: np.ndarray) -> np.ndarray:
    u, v = _grid(cfg.nx, cfg.ny)
    s = pulsation(cfg, frame)
    pool_axes = (POOL_SEMI_AXES[0] * s, POOL_SEMI_AXES[1] * s)
    wall_axes = (pool_axes[0] + MYOCARDIUM_THICKNESS, pool_axes[1] + MYOCARDIUM_THICKNESS)

    magnitude = np.zeros((cfg.nx, cfg.ny))
    magnitude[_ellipse(u, v, (0.0, 0.0), torso_semi_axes(cfg))] = TORSO_INTENSITY
    magnitude[_ellipse(u, v, HEART_CENTER, wall_axes)] = MYOCARDIUM_INTENSITY
    magnitude[_ellipse(u, v, HEART_CENTER, pool_axes)] = BLOOD_INTENSITY
    for angle in angles:
        # discs ride the pool wall at 70% of its current radius
        center = (
            HEART_CENTER[0] + 0.7 * pool_axes[0] * np.cos(angle),
            HEART_CENTER[1] + 0.7 * pool_axes[1] * np.sin(angle),
        )
        magnitude[_ellipse(u, v, center, (PAPILLARY_RADIUS, PAPILLARY_RADIUS))] = PAPILLARY_INTENSITY
    return magnitude


def _smooth_phase(cfg: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    u, v = _grid(cfg.nx, cfg.ny)
    c = rng.uniform(-0.5, 0.5, size=4) * (np.pi / 2)
    return c[0] + c[1] * u + c[2] * v + c[3] * u * v


def generate_phantom(cfg: PhantomConfig) -> GroundTruth:
    """Generate the cine image, true coils and fully-sampled k-space."""
    ConfigValidator.validate_phantom(cfg).raise_if_invalid("phantom config")
    rng = np.random.default_rng(cfg.seed)
    angles = _papillary_angles(rng)
    phase = np.exp(1j * _smooth_phase(cfg, rng))

    image = np.empty((cfg.nx, cfg.ny, 1, cfg.nframes), dtype=np.complex128)
    for frame in range(cfg.nframes):
        image[:, :, 0, frame] = _frame_magnitude(cfg, frame, angles) * phase
    image = image.astype(complex_dtype())
    coils = generate_coils(cfg)
    kspace = simulate_kspace(image, coils)
    logger.info(
        "Generated phantom %dx%d, %d frames, %d coils (seed %d)",
        cfg.nx, cfg.ny, cfg.nframes, cfg.ncoils, cfg.seed,
    )
    return GroundTruth(image=image, coils=coils, kspace=kspace)


def generate_coils(cfg: PhantomConfig) -> np.ndarray:
    """Smooth complex coil sensitivities with unit root-sum-of-squares.

    Coil ``i`` is a Gaussian centered on a ring outside the FOV at angle
    ``2 pi i / N`` with a linear phase pointing along the same direction.
    """
    if cfg.ncoils < 1:
        raise InvalidArgumentError(f"ncoils must be >= 1 (got {cfg.ncoils})")
    u, v = _grid(cfg.nx, cfg.ny)
    coils = np.empty((cfg.nx, cfg.ny, cfg.ncoils), dtype=np.complex128)
    for i in range(cfg.ncoils):
        theta = 2.0 * np.pi * i / cfg.ncoils
        cu, cv = COIL_RING_RADIUS * np.cos(theta), COIL_RING_RADIUS * np.sin(theta)
        envelope = np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2.0 * COIL_WIDTH**2))
        ramp = np.exp(1j * 0.25 * np.pi * (np.cos(theta) * u + np.sin(theta) * v))
        coils[:, :, i] = envelope * ramp
    rss = np.sqrt(np.sum(np.abs(coils) ** 2, axis=-1, keepdims=True))
    return (coils / rss).astype(complex_dtype())


def simulate_kspace(image: np.ndarray, coils: np.ndarray) -> np.ndarray:
    """Fully-sampled k-space ``fftc(S_i * x)`` per coil and frame."""
    if image.ndim == 4:
        if image.shape[2] != 1:
            raise InvalidArgumentError(f"simulate_kspace expects a single set, got {image.shape[2]}")
        image = image[:, :, 0, :]
    if image.ndim != 3 or coils.ndim != 3 or image.shape[:2] != coils.shape[:2]:
        raise InvalidArgumentError(
            f"simulate_kspace: image {image.shape} and coils {coils.shape} disagree"
        )
    coil_images = coils[:, :, :, None] * image[:, :, None, :]
    return fftc(coil_images, axes=(0, 1))


def save_ground_truth(gt: GroundTruth, cfg: PhantomConfig, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write image, coils and k-space containers with sidecars recording cfg."""
    out_dir = Path(out_dir)
    meta = {f"phantom_{k}": v for k, v in asdict(cfg).items()}
    return {
        "image": write_container(out_dir / "image.ckt", gt.image, {**meta, "axes": "x,y,set,frame"}),
        "coils": write_container(out_dir / "coils.ckt", gt.coils, {**meta, "axes": "x,y,coil"}),
        "kspace": write_container(
            out_dir / "kspace.ckt", gt.kspace, {**meta, "axes": "kx,ky,coil,frame"}
        ),
    }
