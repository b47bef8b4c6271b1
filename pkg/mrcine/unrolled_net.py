"""Unrolled proximal gradient network with 3D or (2+1)D convolutional ResNet blocks.

Features are channels-first ``(batch, 2M, x, y, frame)`` with channel order
``set1-real, set1-imag, set2-real, ...``. Padding is circular along phase
encoding and time and zero along the readout.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from config import NetworkConfig, config
from .sampling import normalize_kspace
from .signal_model import ForwardModel
from .tensor_core import complex_dtype
from .validation import ConfigValidator, InvalidArgumentError

logger = logging.getLogger(__name__)

MIN_STEP = 1e-6

Activation = Callable[[torch.Tensor], torch.Tensor]


def torch_real_dtype() -> torch.dtype:
    return torch.float64 if config.runtime.precision == "double" else torch.float32


def torch_complex_dtype() -> torch.dtype:
    return torch.complex128 if config.runtime.precision == "double" else torch.complex64


def complex_of(real_dtype: torch.dtype) -> torch.dtype:
    return torch.complex128 if real_dtype == torch.float64 else torch.complex64


def fftc(x: torch.Tensor, dims: Tuple[int, ...], inverse: bool = False) -> torch.Tensor:
    transform = torch.fft.ifftn if inverse else torch.fft.fftn
    shifted = torch.fft.ifftshift(x, dim=dims)
    return torch.fft.fftshift(transform(shifted, dim=dims, norm="ortho"), dim=dims)


class TorchForwardModel:
    """Differentiable ``A = P F E`` on complex tensors (x, y, set, frame)."""

    def __init__(self, maps: torch.Tensor, mask: torch.Tensor):
        self.maps = maps
        self.mask = mask

    @classmethod
    def from_model(cls, model: ForwardModel, real_dtype: Optional[torch.dtype] = None) -> "TorchForwardModel":
        real_dtype = real_dtype or torch_real_dtype()
        maps = torch.from_numpy(np.ascontiguousarray(model.maps)).to(complex_of(real_dtype))
        mask = torch.from_numpy(np.ascontiguousarray(model.mask)).to(real_dtype)
        return cls(maps, mask)

    @property
    def nsets(self) -> int:
        return self.maps.shape[3]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        coils = torch.einsum("xycm,xymt->xyct", self.maps, x)
        return fftc(coils, (0, 1)) * self.mask[:, :, None, :]

    def adjoint(self, y: torch.Tensor) -> torch.Tensor:
        coils = fftc(y * self.mask[:, :, None, :], (0, 1), inverse=True)
        return torch.einsum("xycm,xyct->xymt", self.maps.conj(), coils)


def complex_to_channels(x: torch.Tensor) -> torch.Tensor:
    """(x, y, set, frame) complex -> (1, 2M, x, y, frame) real."""
    nx, ny, nsets, nframes = x.shape
    stacked = torch.view_as_real(x).permute(2, 4, 0, 1, 3)
    return stacked.reshape(1, 2 * nsets, nx, ny, nframes)


def channels_to_complex(features: torch.Tensor) -> torch.Tensor:
    """Inverse of ``complex_to_channels``."""
    if features.ndim != 5 or features.shape[0] != 1:
        raise InvalidArgumentError(f"expected features of shape (1, 2M, x, y, frame), got {tuple(features.shape)}")
    channels = features.shape[1]
    if channels % 2:
        raise InvalidArgumentError(f"odd channel count {channels} cannot be paired into real/imag")
    nx, ny, nframes = features.shape[2:]
    paired = features.reshape(channels // 2, 2, nx, ny, nframes).permute(2, 3, 0, 4, 1)
    return torch.view_as_complex(paired.contiguous())


@dataclass
class ConvSpec:
    kind: str  # conv3d | conv2p1d
    kernel: Tuple[int, int, int]  # (d_x, d_y, d_t)
    f_in: int
    f_out: int
    bias: bool = True

    @property
    def f_s(self) -> Optional[int]:
        return compute_fs(self) if self.kind == "conv2p1d" else None

    def param_count(self) -> int:
        dx, dy, dt = self.kernel
        b = 1 if self.bias else 0
        if self.kind == "conv3d":
            return dx * dy * dt * self.f_in * self.f_out + b * self.f_out
        fs = compute_fs(self)
        return dx * dy * self.f_in * fs + b * fs + dt * fs * self.f_out + b * self.f_out


def compute_fs(spec: ConvSpec) -> int:
    """Intermediate channels making a (2+1)D conv match its 3D parameter count."""
    dx, dy, dt = spec.kernel
    if min(dx, dy, dt, spec.f_in, spec.f_out) < 1:
        raise InvalidArgumentError(f"ConvSpec extents must be positive (got {spec})")
    return (dt * dx * dy * spec.f_in * spec.f_out) // (dx * dy * spec.f_in + dt * spec.f_out)


def _pad(x: torch.Tensor, px: int, py: int, pt: int) -> torch.Tensor:
    if py or pt:
        x = F.pad(x, (pt, pt, py, py, 0, 0), mode="circular")
    if px:
        x = F.pad(x, (0, 0, 0, 0, px, px))
    return x


def conv_forward(
    features: torch.Tensor,
    spec: ConvSpec,
    weights: Dict[str, torch.Tensor],
    activation: Activation = F.relu,
) -> torch.Tensor:
    """Cross-correlation with circular PE/time padding and zero readout padding.

    ``weights`` holds ``conv.weight``/``conv.bias`` for conv3d and
    ``spatial.*``/``temporal.*`` for conv2p1d.
    """
    if features.ndim != 5 or features.shape[1] != spec.f_in:
        raise InvalidArgumentError(
            f"conv expects (batch, {spec.f_in}, x, y, frame), got {tuple(features.shape)}"
        )
    dx, dy, dt = spec.kernel
    if spec.kind == "conv3d":
        padded = _pad(features, dx // 2, dy // 2, dt // 2)
        return F.conv3d(padded, weights["conv.weight"], weights.get("conv.bias"))
    if spec.kind != "conv2p1d":
        raise InvalidArgumentError(f"unknown conv kind '{spec.kind}'")
    hidden = F.conv3d(
        _pad(features, dx // 2, dy // 2, 0), weights["spatial.weight"], weights.get("spatial.bias")
    )
    hidden = activation(hidden)
    return F.conv3d(_pad(hidden, 0, 0, dt // 2), weights["temporal.weight"], weights.get("temporal.bias"))


class SpatioTemporalConv(nn.Module):
    """One 3D or (2+1)D convolution layer; default init is uniform in +-1/sqrt(fan_in)."""

    def __init__(self, spec: ConvSpec):
        super().__init__()
        self.spec = spec
        dx, dy, dt = spec.kernel
        if spec.kind == "conv3d":
            self.conv = nn.Conv3d(spec.f_in, spec.f_out, spec.kernel, bias=spec.bias)
        else:
            fs = compute_fs(spec)
            self.spatial = nn.Conv3d(spec.f_in, fs, (dx, dy, 1), bias=spec.bias)
            self.temporal = nn.Conv3d(fs, spec.f_out, (1, 1, dt), bias=spec.bias)
        self.activation: nn.Module = nn.ReLU()

    def output_conv(self) -> nn.Conv3d:
        return self.conv if self.spec.kind == "conv3d" else self.temporal

    def zero_output_(self) -> None:
        """Zero the last convolution so the layer starts as a constant zero map."""
        last = self.output_conv()
        with torch.no_grad():
            last.weight.zero_()
            if last.bias is not None:
                last.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv_forward(x, self.spec, dict(self.named_parameters()), self.activation)


class ResNetBlock(nn.Module):
    """Conv stack ``2M -> F -> ... -> F -> 2M`` with ReLU pre-activation and a global skip.

    The first convolution sees the raw real/imag channels without activation.
    """

    def __init__(self, nsets: int, cfg: NetworkConfig):
        super().__init__()
        k = cfg.kernel
        widths = [2 * nsets] + [cfg.channels] * (cfg.layers - 1) + [2 * nsets]
        self.convs = nn.ModuleList(
            SpatioTemporalConv(ConvSpec(cfg.conv_kind, (k, k, k), f_in, f_out))
            for f_in, f_out in zip(widths[:-1], widths[1:])
        )
        self.activation: nn.Module = nn.ReLU()
        self.convs[-1].zero_output_()

    def linearize(self) -> None:
        """Drop every ReLU, leaving an affine stack."""
        self.activation = nn.Identity()
        for conv in self.convs:
            conv.activation = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.convs[0](x)
        for conv in self.convs[1:]:
            h = conv(self.activation(h))
        return x + h


def dc_update(x: torch.Tensor, y: torch.Tensor, op: TorchForwardModel, t: torch.Tensor) -> torch.Tensor:
    """Data-consistency step ``x + 2t A^H (y - A x)``."""
    if x.shape[2] != op.nsets:
        raise InvalidArgumentError(f"image has {x.shape[2]} sets, operator has {op.nsets}")
    return x + 2.0 * t * op.adjoint(y - op.forward(x))


class UnrolledNet(nn.Module):
    """K unrolled iterations of data consistency followed by CNN refinement."""

    def __init__(self, cfg: Optional[NetworkConfig] = None, seed: Optional[int] = None):
        super().__init__()
        cfg = cfg or config.network
        ConfigValidator.validate_network(cfg).raise_if_invalid("network config")
        if seed is not None:
            torch.manual_seed(seed)
        self.cfg = cfg
        self.blocks = nn.ModuleList(ResNetBlock(cfg.nsets, cfg) for _ in range(cfg.iterations))
        self.step_sizes = nn.Parameter(torch.full((cfg.iterations,), float(cfg.step_init)))
        self.to(torch_real_dtype())

    @property
    def nsets(self) -> int:
        return self.cfg.nsets

    @property
    def dtype(self) -> torch.dtype:
        return self.step_sizes.dtype

    def steps(self) -> torch.Tensor:
        """Step sizes as used in the data-consistency updates, floored at ``MIN_STEP``."""
        return self.step_sizes.clamp_min(MIN_STEP)

    def forward(self, y: torch.Tensor, op: TorchForwardModel) -> torch.Tensor:
        if op.nsets != self.cfg.nsets:
            raise InvalidArgumentError(
                f"model was built for M={self.cfg.nsets} map sets but the maps hold M={op.nsets}"
            )
        steps = self.steps()
        x = op.adjoint(y)
        for k, block in enumerate(self.blocks):
            x = dc_update(x, y, op, steps[k])
            x = channels_to_complex(block(complex_to_channels(x)))
        return x


def count_params(model: nn.Module) -> int:
    """Exact number of learnable scalars (weights, biases and step sizes)."""
    return sum(p.numel() for p in model.parameters())


def run_unrolled(net: UnrolledNet, y: np.ndarray, model: ForwardModel) -> np.ndarray:
    """Inference on numpy arrays.

    Runs in the network's own precision on data scaled to a unit zero-filled
    RSS peak, then undoes the scaling and returns the runtime precision.
    """
    y_unit, scale = normalize_kspace(y)
    op = TorchForwardModel.from_model(model, net.dtype)
    y_t = torch.from_numpy(np.ascontiguousarray(y_unit)).to(complex_of(net.dtype))
    net.eval()
    with torch.no_grad():
        x = net(y_t, op)
    logger.info("Unrolled network: K=%d, %d parameters", net.cfg.iterations, count_params(net))
    return (scale * x.cpu().numpy()).astype(complex_dtype())
