"""MCP tools for reconstruction and evaluation."""

from dataclasses import replace
from typing import Dict, Optional

from fastmcp import FastMCP

from config import config
from .calibration import load_maps
from .checkpoint import load_checkpoint
from .container import write_container
from .cs_recon import reconstruct as run_reconstruction
from .evaluation import BBox, compare
from .sampling import load_mask, undersample
from .signal_model import ForwardModel
from .unrolled_net import run_unrolled
from .utils import format_array_info, load_cached
from .validation import InvalidArgumentError, MrcineError

recon_server: FastMCP = FastMCP("Mrcine Reconstruction Server")

# Tool-facing names mapped to ReconConfig.method
METHODS = {
    "zerofill": "zero-filled",
    "cg": "cg",
    "pgd": "pgd",
    "l1espirit": "l1-espirit",
}


def run_method(
    method: str,
    kspace_path: str,
    mask_path: str,
    maps_path: str,
    iters: Optional[int] = None,
    lambda_s: Optional[float] = None,
    lambda_t: Optional[float] = None,
    checkpoint_path: Optional[str] = None,
):
    """Load inputs, undersample and reconstruct; shared by the tool and the CLI."""
    kspace, _ = load_cached(kspace_path)
    mask = load_mask(mask_path)
    maps = load_maps(maps_path)
    model = ForwardModel.from_calibration(maps, mask)
    y = undersample(kspace, mask)

    if method == "dl":
        if checkpoint_path is None:
            raise InvalidArgumentError("method 'dl' needs a checkpoint")
        return run_unrolled(load_checkpoint(checkpoint_path), y, model)
    if method not in METHODS:
        raise InvalidArgumentError(
            f"unknown method '{method}' (expected one of {', '.join([*METHODS, 'dl'])})"
        )
    cfg = replace(config.recon, method=METHODS[method])
    if iters is not None:
        cfg = replace(cfg, iters=iters)
    if lambda_s is not None:
        cfg = replace(cfg, lambda_spatial=lambda_s)
    if lambda_t is not None:
        cfg = replace(cfg, lambda_temporal=lambda_t)
    return run_reconstruction(y, model, cfg)


@recon_server.tool()
async def reconstruct(
    method: str,
    kspace_path: str,
    mask_path: str,
    maps_path: str,
    out_path: str,
    iters: Optional[int] = None,
    lambda_s: Optional[float] = None,
    lambda_t: Optional[float] = None,
    checkpoint_path: Optional[str] = None,
) -> str:
    """
    Reconstruct a multi-set cine image from undersampled multi-coil k-space.

    WHEN TO USE: After calibration, to produce an image for evaluation or export.
    USE FOR: "zero-filled baseline", "CG-SENSE", "l1-ESPIRiT with TV", "run the trained network"

    Args:
        method: zerofill | cg | pgd | l1espirit | dl
        kspace_path: (kx, ky, coil, frame) k-space container; the mask is applied before solving
        mask_path: Mask container
        maps_path: ESPIRiT maps container
        out_path: Container path for the (x, y, set, frame) image
        iters: Iteration count (defaults to 200)
        lambda_s: Spatial TV weight for l1espirit (default 0.002)
        lambda_t: Temporal TV weight for l1espirit (default 0.01)
        checkpoint_path: DLE1 checkpoint, required for method dl

    Returns: Markdown summary of the reconstructed image
    """
    try:
        image = run_method(
            method, kspace_path, mask_path, maps_path, iters, lambda_s, lambda_t, checkpoint_path
        )
        path = write_container(out_path, image, {"axes": "x,y,set,frame", "method": method})
    except MrcineError as e:
        return f"Error reconstructing: {e}"
    except OSError as e:
        return f"Error reading or writing reconstruction data: {e}"

    info = format_array_info(method, image)
    return "\n".join(
        [
            f"**Reconstruction ({method}):**",
            f"Output: {path}",
            f"Shape: {tuple(info['shape'])} {info['dtype']}",
            f"Peak magnitude: {info.get('max_abs', 0.0):.6g}",
        ]
    )


@recon_server.tool()
async def evaluate(ref_path: str, rec_paths: Dict[str, str], bbox: Optional[str] = None) -> str:
    """
    Compare reconstructions against a reference by PSNR and SSIM.

    WHEN TO USE: To rank methods on phantom data with a known ground truth.
    USE FOR: "which method is best", "PSNR of l1-ESPIRiT vs the network", region-of-interest scores

    Args:
        ref_path: Reference image container (e.g. the phantom's image.ckt)
        rec_paths: Method name to reconstruction container path
        bbox: Optional "x0,y0,x1,y1" region; defaults to the whole image

    Returns: Markdown table of metrics and pairwise differences
    """
    if not rec_paths:
        return "No reconstructions provided."
    try:
        ref, _ = load_cached(ref_path)
        recs = {name: load_cached(path)[0] for name, path in rec_paths.items()}
        report = compare(recs, ref, BBox.parse(bbox) if bbox else None)
    except MrcineError as e:
        return f"Error evaluating: {e}"
    except OSError as e:
        return f"Error reading images: {e}"
    return report.to_text()
