"""MCP tools for phantom generation, mask design and calibration."""

import json
from dataclasses import replace
from pathlib import Path
from typing import Optional

from fastmcp import FastMCP

from config import PhantomConfig, config
from .calibration import calibrate as run_calibration
from .calibration import save_maps
from .container import write_container
from .phantom import generate_phantom as build_phantom
from .phantom import save_ground_truth
from .sampling import apply_partial_echo, load_mask, make_vd_mask, save_mask
from .utils import format_array_info, load_cached
from .validation import MrcineError

data_server: FastMCP = FastMCP("Mrcine Data Server")


@data_server.tool()
async def generate_phantom(
    out_dir: str,
    nx: int = 64,
    ny: int = 64,
    frames: int = 16,
    coils: int = 8,
    seed: int = 0,
    motion_amplitude: float = 0.2,
    wrap_fraction: float = 0.0,
) -> str:
    """
    Generate a synthetic dynamic cardiac phantom with multi-coil k-space.

    WHEN TO USE: To create ground-truth data before masking, calibration or reconstruction.
    USE FOR: "make test data", "simulate a cine acquisition", wrapped-anatomy studies (wrap_fraction > 0)

    Args:
        out_dir: Directory receiving image.ckt, coils.ckt and kspace.ckt
        nx, ny: Image extents (>= 16)
        frames: Cardiac phases (>= 4)
        coils: Number of receive coils
        seed: Generator seed
        motion_amplitude: Fractional blood-pool pulsation in [0, 0.5]
        wrap_fraction: Torso extension along phase encoding in [0, 0.3]

    Returns: JSON with the written paths and array summaries
    """
    cfg = PhantomConfig(
        nx=nx, ny=ny, nframes=frames, ncoils=coils, seed=seed,
        motion_amplitude=motion_amplitude, wrap_fraction=wrap_fraction,
    )
    try:
        gt = build_phantom(cfg)
        paths = save_ground_truth(gt, cfg, out_dir)
    except MrcineError as e:
        return f"Error generating phantom: {e}"
    except OSError as e:
        return f"Error writing phantom: {e}"
    result = {
        "paths": {k: str(v) for k, v in paths.items()},
        "arrays": [
            format_array_info("image", gt.image),
            format_array_info("coils", gt.coils),
            format_array_info("kspace", gt.kspace),
        ],
    }
    return json.dumps(result, indent=2)


@data_server.tool()
async def make_mask(
    out_path: str,
    ny: int,
    frames: int,
    accel: float,
    seed: int = 0,
    nx: Optional[int] = None,
    partial_echo: float = 0.0,
) -> str:
    """
    Design a variable-density k-t line mask with a constant line count per frame.

    WHEN TO USE: Before undersampling k-space for calibration or reconstruction.
    USE FOR: "R=12 mask", "undersample my phantom", partial-echo training masks

    Args:
        out_path: Container path for the (kx, ky, frame) uint8 mask
        ny: Phase-encode lines
        frames: Number of frames
        accel: Acceleration R in [1, 20]
        seed: Mask seed
        nx: Readout extent (defaults to ny)
        partial_echo: Fraction of leading readout rows to drop, in [0, 0.3]

    Returns: JSON with the lines per frame and the written path
    """
    try:
        mask = make_vd_mask(ny, frames, accel, seed, nx=nx)
        if partial_echo:
            mask = apply_partial_echo(mask, partial_echo)
        path = save_mask(out_path, mask)
    except MrcineError as e:
        return f"Error creating mask: {e}"
    except OSError as e:
        return f"Error writing mask: {e}"
    result = {
        "path": str(path),
        "shape": list(mask.pattern.shape),
        "accel": mask.accel,
        "lines_per_frame": int(mask.lines_per_frame()[0]),
        "sampled_fraction": float(mask.pattern.mean()),
    }
    return json.dumps(result, indent=2)


@data_server.tool()
async def calibrate(
    kspace_path: str,
    mask_path: str,
    out_path: str,
    nsets: int = 2,
    kernel: int = 6,
    eig_crop: float = 0.9,
    calib_width: int = 24,
    virtual_coils: Optional[int] = None,
) -> str:
    """
    Estimate multi-set ESPIRiT sensitivity maps from time-averaged k-space.

    WHEN TO USE: After masking, before any reconstruction.
    USE FOR: "estimate coil maps", wrapped anatomy (nsets=2), coil compression

    Args:
        kspace_path: Fully-sampled or undersampled (kx, ky, coil, frame) k-space container
        mask_path: Mask container matching the k-space grid
        out_path: Container path for the (x, y, coil, set) maps
        nsets: Number of map sets (1 or 2)
        kernel: Square calibration kernel extent
        eig_crop: Eigenvalue crop threshold
        calib_width: Calibration region width in lines
        virtual_coils: Compress to this many coils first (compressed k-space is written beside the maps)

    Returns: JSON summary of the maps, including the overlap fraction
    """
    cfg = replace(
        config.calibration,
        nsets=nsets,
        kernel=(kernel, kernel),
        eig_crop=eig_crop,
        calib_width=calib_width,
        virtual_coils=virtual_coils,
    )
    try:
        kspace, _ = load_cached(kspace_path)
        mask = load_mask(mask_path)
        result = run_calibration(kspace, mask, cfg)
        path = save_maps(out_path, result.maps)
        outputs = {"maps": str(path)}
        if result.compression is not None:
            compressed = Path(out_path).with_name(Path(out_path).stem + "_kspace.ckt")
            outputs["kspace"] = str(
                write_container(compressed, result.kspace, {"axes": "kx,ky,coil,frame"})
            )
    except MrcineError as e:
        return f"Error calibrating: {e}"
    except OSError as e:
        return f"Error reading or writing calibration data: {e}"
    summary = {
        "paths": outputs,
        "maps": format_array_info("maps", result.maps.maps),
        "nsets": result.maps.nsets,
        "overlap_fraction": float(result.maps.overlap_mask().mean()),
    }
    if result.compression is not None:
        summary["retained_energy"] = result.compression.retained_energy
    return json.dumps(summary, indent=2)
