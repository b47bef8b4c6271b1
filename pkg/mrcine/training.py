"""Training of the unrolled network on an on-the-fly phantom stream."""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from config import (
    CalibrationConfig,
    DatasetConfig,
    PhantomConfig,
    SamplingConfig,
    TrainConfig,
    config,
)
from .calibration import estimate_espirit_maps, extract_calib
from .checkpoint import save_checkpoint
from .phantom import generate_phantom
from .sampling import (
    AugmentParams,
    KSpaceExample,
    KTMask,
    apply_augmentation,
    apply_partial_echo,
    draw_augment_params,
    make_vd_mask,
    reduce_fov,
    temporal_resample,
    undersample,
    zero_filled_peak,
)
from .signal_model import ForwardModel, apply_E_adjoint
from .tensor_core import ifftc, workers
from .unrolled_net import TorchForwardModel, UnrolledNet, torch_complex_dtype
from .utils import derive_seed
from .validation import ConfigValidator, InvalidArgumentError, TrainingDivergedError

logger = logging.getLogger(__name__)


@dataclass
class TrainExample:
    kspace_full: np.ndarray
    maps: np.ndarray
    mask: KTMask
    x_gt: np.ndarray

    @property
    def kspace(self) -> np.ndarray:
        return undersample(self.kspace_full, self.mask)

    def forward_model(self) -> ForwardModel:
        return ForwardModel.from_calibration(self.maps, self.mask)

    def tensors(self) -> Tuple[torch.Tensor, TorchForwardModel, torch.Tensor]:
        """``(y, A, x_gt)`` as torch objects in the runtime precision."""
        y = torch.from_numpy(np.ascontiguousarray(self.kspace)).to(torch_complex_dtype())
        x_gt = torch.from_numpy(np.ascontiguousarray(self.x_gt)).to(torch_complex_dtype())
        return y, TorchForwardModel.from_model(self.forward_model()), x_gt


def build_example(kspace_full: np.ndarray, maps: np.ndarray, mask: KTMask) -> TrainExample:
    """Pair data with its target ``E^H F^-1 y_full`` under the same maps.

    Both are scaled so the RSS-combined zero-filled magnitude of the
    undersampled data peaks at 1, the scaling inference applies to its input.
    """
    peak = zero_filled_peak(undersample(kspace_full, mask))
    if peak > 0.0:
        kspace_full = kspace_full / peak
    x_gt = apply_E_adjoint(ifftc(kspace_full, axes=(0, 1)), maps)
    return TrainExample(kspace_full=kspace_full, maps=maps, mask=mask, x_gt=x_gt)


@dataclass
class LossRecord:
    step: int
    train_loss: Optional[float] = None
    val_loss: Optional[float] = None


@dataclass
class TrainResult:
    net: UnrolledNet
    history: List[LossRecord] = field(default_factory=list)

    def validation_curve(self) -> List[Tuple[int, float]]:
        return [(r.step, r.val_loss) for r in self.history if r.val_loss is not None]

    @property
    def improved(self) -> Optional[bool]:
        """Whether the last validation loss is below the first; None with fewer than two."""
        curve = self.validation_curve()
        if len(curve) < 2:
            return None
        return curve[-1][1] < curve[0][1]

    @property
    def relative_improvement(self) -> Optional[float]:
        """``1 - last/first`` of the validation curve."""
        curve = self.validation_curve()
        if len(curve) < 2 or curve[0][1] == 0:
            return None
        return 1.0 - curve[-1][1] / curve[0][1]


def l1_loss(x_out: torch.Tensor, x_gt: torch.Tensor, mode: str = "l1") -> torch.Tensor:
    """Sum of complex-modulus differences; batched inputs are averaged over the batch.

    ``l1-channel`` sums absolute real and imaginary differences instead.
    """
    if x_out.shape != x_gt.shape:
        raise InvalidArgumentError(f"l1_loss: shape mismatch {tuple(x_out.shape)} vs {tuple(x_gt.shape)}")
    diff = x_out - x_gt
    if mode == "l1":
        magnitude = diff.abs()
    elif mode == "l1-channel":
        magnitude = torch.view_as_real(diff).abs() if diff.is_complex() else diff.abs()
    else:
        raise InvalidArgumentError(f"unknown loss '{mode}'")
    if x_out.ndim == 5:
        return magnitude.reshape(x_out.shape[0], -1).sum(dim=1).mean()
    return magnitude.sum()


def compute_gradients(
    net: UnrolledNet, example: TrainExample, mode: str = "l1"
) -> Tuple[float, Dict[str, torch.Tensor]]:
    """Loss and reverse-mode gradients for every named parameter."""
    y, op, x_gt = example.tensors()
    loss = l1_loss(net(y, op), x_gt, mode)
    names, params = zip(*net.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return float(loss.detach()), {
        name: torch.zeros_like(p) if g is None else g for name, p, g in zip(names, params, grads)
    }


class WarmRestartAdam:
    """Adam whose learning rate drops to ``restart_lr`` at ``restart_step``.

    The restart rebuilds the optimizer, so both moment estimates start again from zero.
    """

    def __init__(self, params, cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.restarted = False
        self.optimizer = self._build(cfg.lr)

    def _build(self, lr: float) -> torch.optim.Adam:
        return torch.optim.Adam(
            self.params, lr=lr, betas=(self.cfg.beta1, self.cfg.beta2), eps=self.cfg.eps
        )

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def zero_grad(self) -> None:
        self.optimizer.zero_grad(set_to_none=True)

    def step(self, step_index: int) -> None:
        if not self.restarted and 0 < self.cfg.restart_step <= step_index:
            logger.info("Warm restart at step %d with lr %.1e", step_index, self.cfg.restart_lr)
            self.optimizer = self._build(self.cfg.restart_lr)
            self.restarted = True
        self.optimizer.step()


class PhantomStream:
    """Deterministic stream of training examples drawn from a pool of phantoms.

    Each pool phantom is FOV-reduced and calibrated once from its fully-sampled
    data; every step then applies a fresh augmentation, temporal regating and
    undersampling mask.
    """

    def __init__(
        self,
        dataset: Optional[DatasetConfig] = None,
        calibration: Optional[CalibrationConfig] = None,
        sampling: Optional[SamplingConfig] = None,
        seed: int = 0,
        nsets: Optional[int] = None,
    ):
        self.dataset = dataset or config.dataset
        self.calibration = calibration or config.calibration
        self.sampling = sampling or config.sampling
        self.seed = seed
        self.nsets = self.calibration.nsets if nsets is None else nsets
        ConfigValidator.validate_dataset(self.dataset).raise_if_invalid("dataset config")
        self._pool: Optional[List[KSpaceExample]] = None
        self._validation: Optional[List[TrainExample]] = None

    def _member(self, member_seed: int) -> KSpaceExample:
        ds = self.dataset
        rng = np.random.default_rng(member_seed)
        motion = float(rng.uniform(*ds.motion_range))
        factor = float(rng.uniform(*ds.fov_reduction_range))
        gt = generate_phantom(
            PhantomConfig(
                nx=ds.nx,
                ny=ds.ny,
                nframes=ds.nframes,
                ncoils=ds.ncoils,
                seed=member_seed,
                motion_amplitude=motion,
                wrap_fraction=factor,
            )
        )
        kspace = reduce_fov(gt.kspace, factor)
        nx, ny = kspace.shape[:2]
        full = np.ones((nx, ny, kspace.shape[3]), dtype=np.uint8)
        width = min(self.calibration.calib_width, nx, ny)
        maps = estimate_espirit_maps(
            extract_calib(kspace, full, width),
            image_shape=(nx, ny),
            nsets=self.nsets,
            kernel=self.calibration.kernel,
            sv_threshold=self.calibration.sv_threshold,
            eig_crop=self.calibration.eig_crop,
        )
        return KSpaceExample(kspace=kspace, maps=maps.maps)

    @property
    def pool(self) -> List[KSpaceExample]:
        if self._pool is None:
            self._pool = [
                self._member(derive_seed(self.seed, 0, i)) for i in range(self.dataset.pool_size)
            ]
            logger.info("Built phantom pool of %d members", len(self._pool))
        return self._pool

    def _crop(self, nx: int) -> int:
        return min(self.sampling.readout_crop, nx)

    def _mask(self, nx: int, ny: int, nframes: int, accel: float, partial_echo: float, seed: int) -> KTMask:
        n_lines = int(math.floor(ny / accel + 1e-9))
        band = max(1, min(self.sampling.center_lines, n_lines))
        mask = make_vd_mask(ny, nframes, accel, seed, nx=nx, cfg=self.sampling, center_lines=band)
        return apply_partial_echo(mask, partial_echo)

    def example(self, step: int) -> TrainExample:
        ds = self.dataset
        rng = np.random.default_rng(derive_seed(self.seed, 1, step))
        member = self.pool[int(rng.integers(len(self.pool)))]
        params = draw_augment_params(derive_seed(self.seed, 2, step), self.sampling)
        augmented = apply_augmentation(member, params, self._crop(member.kspace.shape[0]))

        frames = int(rng.integers(ds.frame_range[0], ds.frame_range[1] + 1))
        kspace = temporal_resample(augmented.kspace, frames)
        accel = float(rng.uniform(*ds.accel_range))
        partial_echo = float(rng.uniform(*ds.partial_echo_range))
        nx, ny = kspace.shape[:2]
        mask = self._mask(nx, ny, frames, accel, partial_echo, derive_seed(self.seed, 3, step))
        return build_example(kspace, augmented.maps, mask)

    def __iter__(self) -> Iterator[TrainExample]:
        step = 0
        while True:
            yield self.example(step)
            step += 1

    def validation_set(self) -> List[TrainExample]:
        """Fixed held-out examples from phantoms outside the training pool."""
        if self._validation is None:
            ds = self.dataset
            examples = []
            for i in range(ds.val_size):
                member = self._member(derive_seed(self.seed, 4, i))
                scaled = apply_augmentation(member, AugmentParams(), self._crop(member.kspace.shape[0]))
                nx, ny, _, nframes = scaled.kspace.shape
                mask = self._mask(
                    nx, ny, nframes, ds.val_accel, ds.partial_echo_range[0], derive_seed(self.seed, 5, i)
                )
                examples.append(build_example(scaled.kspace, scaled.maps, mask))
            self._validation = examples
        return self._validation


def evaluate_loss(net: UnrolledNet, examples: List[TrainExample], mode: str = "l1") -> float:
    if not examples:
        raise InvalidArgumentError("no validation examples")
    losses = []
    with torch.no_grad():
        for example in examples:
            y, op, x_gt = example.tensors()
            losses.append(float(l1_loss(net(y, op), x_gt, mode)))
    return float(np.mean(losses))


def _configure_torch() -> None:
    torch.set_num_threads(workers())
    if config.runtime.deterministic:
        torch.use_deterministic_algorithms(True)


def train(
    net: UnrolledNet,
    stream: PhantomStream,
    cfg: Optional[TrainConfig] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """Minimize the l1 loss over the stream with warm-restart Adam."""
    cfg = cfg or config.train
    ConfigValidator.validate_train(cfg).raise_if_invalid("training config")
    _configure_torch()
    torch.manual_seed(cfg.seed)
    optimizer = WarmRestartAdam(net.parameters(), cfg)
    validation = stream.validation_set()
    result = TrainResult(net=net)

    net.train()
    progress = tqdm(range(cfg.steps), desc="train", disable=not cfg.progress)
    for step in progress:
        record = LossRecord(step=step)
        if step % cfg.val_every == 0:
            record.val_loss = evaluate_loss(net, validation, cfg.loss)
            logger.info("step %d: validation loss %.6g", step, record.val_loss)

        y, op, x_gt = stream.example(step).tensors()
        optimizer.zero_grad()
        loss = l1_loss(net(y, op), x_gt, cfg.loss)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(step, value)
        loss.backward()
        if cfg.clip_grad_norm is not None:
            torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.clip_grad_norm)
        optimizer.step(step)

        record.train_loss = value
        result.history.append(record)
        progress.set_postfix(loss=f"{value:.4g}", lr=f"{optimizer.lr:.1e}")
        if out_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(Path(out_dir) / f"step_{step + 1:07d}.dle", net)

    final = evaluate_loss(net, validation, cfg.loss)
    result.history.append(LossRecord(step=cfg.steps, val_loss=final))
    curve = result.validation_curve()
    if result.improved is False:
        logger.warning("validation loss did not decrease: %.6g -> %.6g", curve[0][1], curve[-1][1])
    logger.info("Training finished after %d steps, validation loss %.6g", cfg.steps, final)
    return result


def write_loss_history(path: Union[str, Path], history: List[LossRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "train_loss", "val_loss"])
        for r in history:
            writer.writerow(
                [
                    r.step,
                    "" if r.train_loss is None else repr(r.train_loss),
                    "" if r.val_loss is None else repr(r.val_loss),
                ]
            )
    return path
