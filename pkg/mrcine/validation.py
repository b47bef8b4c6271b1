"""Error types and configuration validation for the reconstruction pipeline."""

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from config import (
    CalibrationConfig,
    DatasetConfig,
    NetworkConfig,
    PhantomConfig,
    ReconConfig,
    TrainConfig,
)


class MrcineError(Exception):
    """Base class for every error raised by the pipeline."""


class InvalidArgumentError(MrcineError, ValueError):
    """An argument violates an operation's preconditions."""


class CalibrationInfeasibleError(MrcineError):
    """Calibration data is missing or degenerate."""


class TrainingDivergedError(MrcineError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"Training diverged at step {step}: loss is {loss}")
        self.step = step
        self.loss = loss


@dataclass
class ValidationResult:
    """Result of validation with success status and detailed messages."""

    is_valid: bool = True
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def add_error(self, message: str) -> None:
        """Add an error message."""
        self.errors.append(message)
        self.is_valid = False

    def add_warning(self, message: str) -> None:
        """Add a warning message."""
        self.warnings.append(message)

    def merge(self, other: "ValidationResult") -> None:
        self.errors.extend(other.errors)
        self.warnings.extend(other.warnings)
        self.is_valid = self.is_valid and other.is_valid

    def raise_if_invalid(self, context: str) -> None:
        """Raise InvalidArgumentError listing every collected error."""
        if not self.is_valid:
            raise InvalidArgumentError(f"Invalid {context}: {'; '.join(self.errors)}")


class ConfigValidator:
    """Validator for the pipeline's configuration dataclasses."""

    @classmethod
    def validate_phantom(cls, cfg: PhantomConfig) -> ValidationResult:
        result = ValidationResult()
        if cfg.nx < 16 or cfg.ny < 16:
            result.add_error(f"extents must be >= 16 (got nx={cfg.nx}, ny={cfg.ny})")
        if cfg.nframes < 4:
            result.add_error(f"nframes must be >= 4 (got {cfg.nframes})")
        if cfg.ncoils < 1:
            result.add_error(f"ncoils must be >= 1 (got {cfg.ncoils})")
        if not 0.0 <= cfg.motion_amplitude <= 0.5:
            result.add_error(f"motion_amplitude must lie in [0, 0.5] (got {cfg.motion_amplitude})")
        if not 0.0 <= cfg.wrap_fraction <= 0.3:
            result.add_error(f"wrap_fraction must lie in [0, 0.3] (got {cfg.wrap_fraction})")
        return result

    @classmethod
    def validate_calibration(cls, cfg: CalibrationConfig) -> ValidationResult:
        result = ValidationResult()
        if cfg.nsets not in (1, 2):
            result.add_error(f"nsets must be 1 or 2 (got {cfg.nsets})")
        if any(k < 1 for k in cfg.kernel):
            result.add_error(f"kernel extents must be positive (got {cfg.kernel})")
        if cfg.calib_width < max(cfg.kernel):
            result.add_error(
                f"calib_width {cfg.calib_width} is smaller than the kernel {cfg.kernel}"
            )
        if not 0.0 < cfg.sv_threshold < 1.0:
            result.add_error(f"sv_threshold must lie in (0, 1) (got {cfg.sv_threshold})")
        if not 0.0 <= cfg.eig_crop <= 1.0:
            result.add_error(f"eig_crop must lie in [0, 1] (got {cfg.eig_crop})")
        if cfg.virtual_coils is not None and cfg.virtual_coils < 1:
            result.add_error(f"virtual_coils must be >= 1 (got {cfg.virtual_coils})")
        return result

    @classmethod
    def validate_recon(cls, cfg: ReconConfig) -> ValidationResult:
        result = ValidationResult()
        if cfg.method not in ("zero-filled", "cg", "pgd", "l1-espirit"):
            result.add_error(f"unknown method '{cfg.method}'")
        if cfg.iters < 1:
            result.add_error(f"iters must be >= 1 (got {cfg.iters})")
        for name in ("lambda_pgd", "lambda_spatial", "lambda_temporal"):
            if getattr(cfg, name) < 0:
                result.add_error(f"{name} must be non-negative (got {getattr(cfg, name)})")
        if not 0.0 < cfg.step <= 1.0:
            result.add_error(f"step must lie in (0, 1] (got {cfg.step})")
        elif cfg.step > 0.5:
            result.add_warning(f"step {cfg.step} exceeds 0.5; the PGD objective may not decrease")
        if cfg.admm_rho <= 0:
            result.add_error(f"admm_rho must be positive (got {cfg.admm_rho})")
        return result

    @classmethod
    def validate_network(cls, cfg: NetworkConfig) -> ValidationResult:
        result = ValidationResult()
        if cfg.iterations < 0:
            result.add_error(f"iterations must be >= 0 (got {cfg.iterations})")
        if cfg.layers < 2:
            result.add_error(f"layers must be >= 2 (got {cfg.layers})")
        if cfg.channels < 1:
            result.add_error(f"channels must be >= 1 (got {cfg.channels})")
        if cfg.nsets < 1:
            result.add_error(f"nsets must be >= 1 (got {cfg.nsets})")
        if cfg.conv_kind not in ("conv3d", "conv2p1d"):
            result.add_error(f"conv_kind must be conv3d or conv2p1d (got '{cfg.conv_kind}')")
        if cfg.kernel < 1 or cfg.kernel % 2 == 0:
            result.add_error(f"kernel must be a positive odd extent (got {cfg.kernel})")
        if cfg.step_init <= 0:
            result.add_error(f"step_init must be positive (got {cfg.step_init})")
        return result

    @classmethod
    def validate_train(cls, cfg: TrainConfig) -> ValidationResult:
        result = ValidationResult()
        if cfg.steps < 1:
            result.add_error(f"steps must be >= 1 (got {cfg.steps})")
        if cfg.lr < 0:
            result.add_error(f"lr must be non-negative (got {cfg.lr})")
        elif cfg.lr == 0:
            result.add_warning("lr is 0; parameters will not change")
        if cfg.restart_step >= cfg.steps and cfg.steps > 1:
            result.add_error(f"restart_at ({cfg.restart_step}) must be < steps ({cfg.steps})")
        if cfg.batch != 1:
            result.add_error(f"only batch size 1 is supported (got {cfg.batch})")
        if cfg.loss not in ("l1", "l1-channel"):
            result.add_error(f"loss must be l1 or l1-channel (got '{cfg.loss}')")
        if cfg.val_every < 1:
            result.add_error(f"val_every must be >= 1 (got {cfg.val_every})")
        return result

    @classmethod
    def validate_dataset(cls, cfg: DatasetConfig) -> ValidationResult:
        result = ValidationResult()
        if cfg.pool_size < 1 or cfg.val_size < 1:
            result.add_error("pool_size and val_size must be >= 1")
        lo, hi = cfg.accel_range
        if not 1.0 <= lo <= hi <= 20.0:
            result.add_error(f"accel_range must satisfy 1 <= lo <= hi <= 20 (got {cfg.accel_range})")
        lo, hi = cfg.partial_echo_range
        if not 0.0 <= lo <= hi <= 0.3:
            result.add_error(f"partial_echo_range must lie in [0, 0.3] (got {cfg.partial_echo_range})")
        lo, hi = cfg.fov_reduction_range
        if not 0.0 <= lo <= hi <= 0.3:
            result.add_error(f"fov_reduction_range must lie in [0, 0.3] (got {cfg.fov_reduction_range})")
        lo, hi = cfg.frame_range
        if not 2 <= lo <= hi:
            result.add_error(f"frame_range must satisfy 2 <= lo <= hi (got {cfg.frame_range})")
        return result


def ensure_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def ensure_shape(array: np.ndarray, expected: Sequence[int], what: str) -> None:
    if tuple(array.shape) != tuple(expected):
        raise InvalidArgumentError(
            f"{what}: expected shape {tuple(expected)}, got {tuple(array.shape)}"
        )
