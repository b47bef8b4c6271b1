"""Configuration module for the mrcine reconstruction pipeline."""

import os
from dataclasses import dataclass, field
from typing import Optional, Tuple


def _threads_from_env() -> int:
    value = os.environ.get("MRCINE_THREADS", "")
    try:
        return max(1, int(value))
    except ValueError:
        return os.cpu_count() or 1


@dataclass
class RuntimeConfig:
    """Configuration for numerical precision and parallelism."""

    precision: str = "single"  # "single" (complex64) or "double" (complex128)
    threads: int = field(default_factory=_threads_from_env)
    deterministic: bool = False  # If True, everything runs single-threaded


@dataclass
class PhantomConfig:
    """Configuration for the synthetic dynamic cardiac phantom."""

    nx: int = 64
    ny: int = 64
    nframes: int = 16
    ncoils: int = 8
    seed: int = 0
    motion_amplitude: float = 0.2  # Fractional pulsation of the blood pool radius
    wrap_fraction: float = 0.0  # Extends the torso along PE so a reduced FOV wraps


@dataclass
class SamplingConfig:
    """Configuration for k-t undersampling masks and training augmentations."""

    density_power: float = 3.0
    center_lines: int = 4  # Contiguous band forced in every frame
    calib_width: int = 24  # Region the sweeping central band covers over time
    readout_crop: int = 64
    max_pe_shift: int = 20
    max_frame_shift: int = 4
    flip_probability: float = 0.5


@dataclass
class CalibrationConfig:
    """Configuration for coil compression and ESPIRiT map estimation."""

    nsets: int = 2
    calib_width: int = 24
    kernel: Tuple[int, int] = (6, 6)
    sv_threshold: float = 0.02
    eig_crop: float = 0.9
    virtual_coils: Optional[int] = None  # None keeps every coil


@dataclass
class ReconConfig:
    """Configuration for classical reconstructions."""

    method: str = "l1-espirit"  # zero-filled | cg | pgd | l1-espirit
    iters: int = 200
    step: float = 0.5  # PGD step t
    lambda_pgd: float = 0.01  # l1 weight in the temporal DFT domain
    lambda_spatial: float = 0.002
    lambda_temporal: float = 0.01
    admm_rho: float = 0.1
    tol: float = 1e-6
    cg_inner_iters: int = 10
    cg_inner_tol: float = 1e-5


@dataclass
class NetworkConfig:
    """Configuration for the unrolled proximal gradient network."""

    iterations: int = 4  # K; the full-scale network uses 10
    layers: int = 5
    channels: int = 96
    nsets: int = 2
    conv_kind: str = "conv2p1d"  # conv3d | conv2p1d
    kernel: int = 3
    step_init: float = 0.5


@dataclass
class DatasetConfig:
    """Configuration for the on-the-fly phantom training stream."""

    nx: int = 64
    ny: int = 64
    nframes: int = 16
    ncoils: int = 8
    pool_size: int = 8
    val_size: int = 4
    accel_range: Tuple[float, float] = (10.0, 15.0)
    val_accel: float = 12.0
    partial_echo_range: Tuple[float, float] = (0.2, 0.3)
    fov_reduction_range: Tuple[float, float] = (0.0, 0.15)
    frame_range: Tuple[int, int] = (12, 20)
    motion_range: Tuple[float, float] = (0.1, 0.3)


@dataclass
class TrainConfig:
    """Configuration for training the unrolled network."""

    steps: int = 2000  # The full-scale schedule uses 200 000
    lr: float = 1e-3
    restart_at: Optional[int] = None  # None means steps // 2
    restart_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 1
    seed: int = 0
    loss: str = "l1"  # l1 (complex modulus) or l1-channel (per real channel)
    val_every: int = 50
    checkpoint_every: int = 500
    clip_grad_norm: Optional[float] = None
    progress: bool = True

    @property
    def restart_step(self) -> int:
        return self.steps // 2 if self.restart_at is None else self.restart_at


@dataclass
class EvaluationConfig:
    """Configuration for image quality metrics."""

    ssim_sigma: float = 1.5
    ssim_window: int = 11
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03


@dataclass
class PipelineConfig:
    """Main configuration combining all subsystem configs."""

    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)


# Global configuration instance
config = PipelineConfig()
