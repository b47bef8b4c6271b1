"""Image quality metrics and method comparison reports.

Metrics use the magnitude of the first map set inside an optional bounding box.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import stats
from skimage.metrics import structural_similarity

from config import EvaluationConfig, config
from .validation import InvalidArgumentError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BBox:
    """Pixel bounds, inclusive start and exclusive end."""

    x0: int
    y0: int
    x1: int
    y1: int

    @classmethod
    def parse(cls, text: str) -> "BBox":
        try:
            x0, y0, x1, y1 = (int(v) for v in text.split(","))
        except ValueError:
            raise InvalidArgumentError(f"bbox must be 'x0,y0,x1,y1' (got '{text}')")
        return cls(x0, y0, x1, y1)

    @classmethod
    def full(cls, nx: int, ny: int) -> "BBox":
        return cls(0, 0, nx, ny)

    def validate(self, nx: int, ny: int) -> None:
        if not (0 <= self.x0 < self.x1 <= nx and 0 <= self.y0 < self.y1 <= ny):
            raise InvalidArgumentError(f"bbox {self} does not fit a {nx}x{ny} image")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


def magnitude(image: np.ndarray) -> np.ndarray:
    """First-set magnitude (x, y, frame) of a cine image; 3-D input is taken as magnitude."""
    if image.ndim == 4:
        return np.abs(image[:, :, 0, :]).astype(np.float64)
    if image.ndim == 3:
        return np.abs(image).astype(np.float64)
    raise InvalidArgumentError(f"expected a (x, y, set, frame) image, got shape {image.shape}")


def _crop_pair(rec: np.ndarray, ref: np.ndarray, bbox: Optional[BBox]):
    rec_mag, ref_mag = magnitude(rec), magnitude(ref)
    if rec_mag.shape != ref_mag.shape:
        raise InvalidArgumentError(f"shape mismatch {rec_mag.shape} vs {ref_mag.shape}")
    bbox = bbox or BBox.full(*ref_mag.shape[:2])
    bbox.validate(*ref_mag.shape[:2])
    window = (slice(bbox.x0, bbox.x1), slice(bbox.y0, bbox.y1))
    return rec_mag[window], ref_mag[window], bbox


def psnr(rec: np.ndarray, ref: np.ndarray, bbox: Optional[BBox] = None) -> float:
    """``20 log10(peak / sqrt(MSE))``; identical images give ``math.inf``."""
    rec_mag, ref_mag, _ = _crop_pair(rec, ref, bbox)
    peak = float(ref_mag.max())
    if peak == 0.0:
        raise InvalidArgumentError("reference is identically zero inside the bounding box")
    mse = float(np.mean((rec_mag - ref_mag) ** 2))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(peak / math.sqrt(mse))


def ssim(
    rec: np.ndarray,
    ref: np.ndarray,
    bbox: Optional[BBox] = None,
    data_range: Optional[float] = None,
    cfg: Optional[EvaluationConfig] = None,
) -> float:
    """Frame-averaged Gaussian-window SSIM; ``data_range`` defaults to the reference peak."""
    cfg = cfg or config.evaluation
    rec_mag, ref_mag, bbox = _crop_pair(rec, ref, bbox)
    if bbox.width < cfg.ssim_window or bbox.height < cfg.ssim_window:
        raise InvalidArgumentError(
            f"bbox {bbox.width}x{bbox.height} is smaller than the {cfg.ssim_window}-pixel SSIM window"
        )
    if data_range is None:
        data_range = float(ref_mag.max())
    if data_range <= 0:
        raise InvalidArgumentError("SSIM data range must be positive")
    scores = [
        structural_similarity(
            ref_mag[:, :, t],
            rec_mag[:, :, t],
            win_size=cfg.ssim_window,
            gaussian_weights=True,
            sigma=cfg.ssim_sigma,
            use_sample_covariance=False,
            K1=cfg.ssim_k1,
            K2=cfg.ssim_k2,
            data_range=data_range,
        )
        for t in range(ref_mag.shape[2])
    ]
    return float(np.mean(scores))


def format_metric(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.6f}"


def _delta(a: float, b: float) -> float:
    # inf - inf is defined as no difference
    return 0.0 if a == b else a - b


@dataclass
class MethodScore:
    method: str
    psnr_db: float
    ssim: float


@dataclass
class ComparisonReport:
    rows: List[MethodScore] = field(default_factory=list)

    @property
    def methods(self) -> List[str]:
        return [r.method for r in self.rows]

    def score(self, method: str) -> MethodScore:
        for row in self.rows:
            if row.method == method:
                return row
        raise InvalidArgumentError(f"no method named '{method}' in report")

    def header(self) -> List[str]:
        columns = ["method", "psnr_db", "ssim"]
        for other in self.methods:
            columns += [f"dpsnr_vs_{other}", f"dssim_vs_{other}"]
        return columns

    def table(self) -> List[List[str]]:
        lines = []
        for row in self.rows:
            cells = [row.method, format_metric(row.psnr_db), format_metric(row.ssim)]
            for other in self.rows:
                cells += [
                    format_metric(_delta(row.psnr_db, other.psnr_db)),
                    format_metric(_delta(row.ssim, other.ssim)),
                ]
            lines.append(cells)
        return lines

    def to_csv(self, path: Optional[Union[str, Path]] = None) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.header())
        writer.writerows(self.table())
        text = buffer.getvalue()
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_text(self) -> str:
        lines = ["**Reconstruction Comparison:**"]
        for row in self.rows:
            lines.append(f"{row.method}: PSNR {format_metric(row.psnr_db)} dB, SSIM {format_metric(row.ssim)}")
        if len(self.rows) > 1:
            lines.append("\n**Pairwise Differences (row - column):**")
            for row in self.rows:
                for other in self.rows:
                    if other is row:
                        continue
                    lines.append(
                        f"{row.method} vs {other.method}: "
                        f"dPSNR {format_metric(_delta(row.psnr_db, other.psnr_db))} dB, "
                        f"dSSIM {format_metric(_delta(row.ssim, other.ssim))}"
                    )
        return "\n".join(lines)


def compare(recs: Dict[str, np.ndarray], ref: np.ndarray, bbox: Optional[BBox] = None) -> ComparisonReport:
    """PSNR and SSIM of every named reconstruction against ``ref``, in insertion order."""
    report = ComparisonReport()
    for name, rec in recs.items():
        report.rows.append(MethodScore(name, psnr(rec, ref, bbox), ssim(rec, ref, bbox)))
        logger.info("%s: PSNR %s dB, SSIM %s", name, format_metric(report.rows[-1].psnr_db),
                    format_metric(report.rows[-1].ssim))
    return report


@dataclass
class PairedTest:
    t_statistic: float
    p_value: float
    mean_difference: float
    n: int


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> PairedTest:
    """Two-tailed paired t-test on per-slice metric values."""
    a_arr, b_arr = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a_arr.shape != b_arr.shape or a_arr.ndim != 1:
        raise InvalidArgumentError(f"paired samples must be equal-length vectors ({a_arr.shape} vs {b_arr.shape})")
    if a_arr.size < 2:
        raise InvalidArgumentError("paired t-test needs at least two pairs")
    result = stats.ttest_rel(a_arr, b_arr)
    return PairedTest(
        t_statistic=float(result.statistic),
        p_value=float(result.pvalue),
        mean_difference=float(np.mean(a_arr - b_arr)),
        n=int(a_arr.size),
    )
