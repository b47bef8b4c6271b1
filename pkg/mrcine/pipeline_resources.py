"""Resources and prompts for driving the reconstruction pipeline."""

import json
from dataclasses import asdict

from fastmcp import FastMCP

from config import config

pipeline_resources_server: FastMCP = FastMCP("Mrcine Resources Server")


@pipeline_resources_server.resource("file://pipeline-defaults")
def get_pipeline_defaults() -> str:
    """
    Default configuration of every pipeline stage as JSON.

    Covers phantom size, sampling density, calibration kernel and thresholds,
    reconstruction weights, network shape, training schedule and metric settings.
    """
    return json.dumps(asdict(config), indent=2)


@pipeline_resources_server.prompt("reconstruct-cine")
def reconstruct_cine_prompt(accel: float = 12.0, wrap_fraction: float = 0.15, workdir: str = "run") -> str:
    """
    Step-by-step workflow for a phantom study comparing reconstruction methods.

    Walks through phantom generation, masking, two-set calibration, several
    reconstructions and a metric comparison with the MCP tools.
    """
    return f"""You are running a dynamic cardiac MRI reconstruction study on a synthetic phantom.
Work in the directory `{workdir}` and use acceleration R={accel}.

## Workflow

1. **Ground truth**: call `data_generate_phantom` with `out_dir="{workdir}/phantom"` and
   `wrap_fraction={wrap_fraction}`. A non-zero wrap fraction extends the torso past the
   phase-encode field of view, so a single set of coil maps cannot explain the data.

2. **Mask**: call `data_make_mask` with the phantom's `ny` and `frames`, `accel={accel}` and
   `out_path="{workdir}/mask.ckt"`. Every frame samples the same number of lines.

3. **Calibration**: call `data_calibrate` on `{workdir}/phantom/kspace.ckt` and the mask
   with `nsets=2`. Report the overlap fraction: it is the share of pixels where the
   second map set is active. Repeat with `nsets=1` into a second file to compare.

4. **Reconstruction**: call `recon_reconstruct` for `zerofill`, `cg` and `l1espirit`
   (and `dl` if a checkpoint is available), writing one container per method.

5. **Evaluation**: call `recon_evaluate` with `ref_path="{workdir}/phantom/image.ckt"` and
   all reconstructions. Optionally pass a bounding box around the heart.

## Reporting

- Tabulate PSNR (dB) and SSIM per method.
- State whether l1-ESPIRiT beats zero-filling and whether two map sets beat one.
- If any tool returns text starting with "Error", report the message and stop
  instead of guessing parameters.

Expected ordering at R={accel}: zero-filled < CG-SENSE < l1-ESPIRiT. The trained network
is expected to match or beat l1-ESPIRiT when it was trained at a similar acceleration."""
