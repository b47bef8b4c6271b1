"""Command-line interface for the mrcine reconstruction pipeline.

Every run writes one manifest JSON beside its outputs recording the command
line, configuration snapshot, seeds, paths and per-stage timings.
"""

import argparse
import copy
import json
import logging
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from config import PhantomConfig, config
from mrcine import __version__
from mrcine.calibration import calibrate, save_maps
from mrcine.checkpoint import save_checkpoint
from mrcine.container import read_container, write_container
from mrcine.evaluation import BBox, compare, magnitude
from mrcine.phantom import generate_phantom, save_ground_truth
from mrcine.recon_server import run_method
from mrcine.sampling import apply_partial_echo, load_mask, make_vd_mask, save_mask
from mrcine.training import PhantomStream, train, write_loss_history
from mrcine.unrolled_net import UnrolledNet, count_params
from mrcine.validation import InvalidArgumentError, MrcineError

logger = logging.getLogger("mrcine.cli")

RECON_METHODS = ["zerofill", "cg", "pgd", "l1espirit", "dl"]
FULL_SCALE = {"iterations": 10, "steps": 200_000, "restart_at": 100_000}


class RunManifest:
    """Collects what a run did and writes it as JSON."""

    def __init__(self, argv: Sequence[str], command: str):
        self.data: Dict[str, Any] = {
            "command": command,
            "argv": list(argv),
            "version": __version__,
            "seeds": {},
            "inputs": {},
            "outputs": {},
            "timings_s": {},
        }

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.data["timings_s"][name] = time.perf_counter() - start

    def write(self, path: Path) -> Path:
        self.data["config"] = asdict(config)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.data, indent=2, default=str), encoding="utf-8")
        return path


def manifest_beside(output: Path) -> Path:
    """``DIR/manifest.json`` for directory outputs, ``FILE.manifest.json`` otherwise."""
    if output.suffix == "":
        return output / "manifest.json"
    return output.with_name(output.name + ".manifest.json")


def _common_options() -> argparse.ArgumentParser:
    # SUPPRESS lets the options appear before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS,
                        help="single-threaded, bit-reproducible execution")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS,
                        help="debug logging")
    common.add_argument("--precision", choices=["single", "double"], default=argparse.SUPPRESS)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="mrcine", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"mrcine {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common], help="generate a synthetic cine phantom")
    p.add_argument("--nx", type=int, default=64)
    p.add_argument("--ny", type=int, default=64)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--coils", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--motion", type=float, default=0.2, help="blood-pool pulsation amplitude")
    p.add_argument("--wrap", type=float, default=0.0, help="torso extension along phase encoding")
    p.add_argument("-o", "--output", type=Path, required=True, help="output directory")

    p = sub.add_parser("mask", parents=[common], help="design a variable-density k-t mask")
    p.add_argument("--ny", type=int, required=True)
    p.add_argument("--nx", type=int, default=None)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--accel", type=float, required=True)
    p.add_argument("--partial-echo", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("calib", parents=[common], help="estimate ESPIRiT maps")
    p.add_argument("--input", type=Path, required=True, help="k-space container")
    p.add_argument("--mask", type=Path, required=True)
    p.add_argument("--maps", type=int, choices=[1, 2], default=2, help="number of map sets")
    p.add_argument("--kernel", type=int, default=6)
    p.add_argument("--crop", type=float, default=0.9, help="eigenvalue crop threshold")
    p.add_argument("--calib-width", type=int, default=24)
    p.add_argument("--virtual-coils", type=int, default=None)
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("recon", parents=[common], help="reconstruct undersampled k-space")
    p.add_argument("method", choices=RECON_METHODS)
    p.add_argument("--kspace", type=Path, required=True)
    p.add_argument("--mask", type=Path, required=True)
    p.add_argument("--maps", type=Path, required=True)
    p.add_argument("--lambda-s", type=float, default=None)
    p.add_argument("--lambda-t", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("train", parents=[common], help="train the unrolled network on phantoms")
    p.add_argument("--config", type=Path, default=None,
                   help="JSON with optional train, network, dataset, calibration and sampling sections")
    p.add_argument("--paper-scale", dest="full_scale", action="store_true",
                   help="K=10, 200000 steps, restart at 100000")
    p.add_argument("-o", "--output", type=Path, required=True, help="output directory")

    p = sub.add_parser("eval", parents=[common], help="compare reconstructions by PSNR and SSIM")
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--rec", required=True, help="comma-separated reconstruction containers")
    p.add_argument("--bbox", default=None, help="x0,y0,x1,y1")
    p.add_argument("-o", "--output", type=Path, required=True, help="report CSV")

    p = sub.add_parser("export", parents=[common], help="write per-frame PNGs of a cine image")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    return parser


def configure_runtime(args: argparse.Namespace) -> None:
    if getattr(args, "precision", None):
        config.runtime.precision = args.precision
    if getattr(args, "deterministic", False):
        config.runtime.deterministic = True
        config.runtime.threads = 1
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )


def cmd_phantom(args: argparse.Namespace, manifest: RunManifest) -> Path:
    cfg = PhantomConfig(
        nx=args.nx, ny=args.ny, nframes=args.frames, ncoils=args.coils,
        seed=args.seed, motion_amplitude=args.motion, wrap_fraction=args.wrap,
    )
    config.phantom = cfg
    manifest.data["seeds"]["phantom"] = args.seed
    with manifest.stage("phantom"):
        gt = generate_phantom(cfg)
    with manifest.stage("write"):
        paths = save_ground_truth(gt, cfg, args.output)
    manifest.data["outputs"] = {k: str(v) for k, v in paths.items()}
    return args.output


def cmd_mask(args: argparse.Namespace, manifest: RunManifest) -> Path:
    manifest.data["seeds"]["mask"] = args.seed
    with manifest.stage("mask"):
        mask = make_vd_mask(args.ny, args.frames, args.accel, args.seed, nx=args.nx)
        if args.partial_echo:
            mask = apply_partial_echo(mask, args.partial_echo)
    manifest.data["outputs"]["mask"] = str(save_mask(args.output, mask))
    return args.output


def cmd_calib(args: argparse.Namespace, manifest: RunManifest) -> Path:
    config.calibration = replace(
        config.calibration,
        nsets=args.maps,
        kernel=(args.kernel, args.kernel),
        eig_crop=args.crop,
        calib_width=args.calib_width,
        virtual_coils=args.virtual_coils,
    )
    manifest.data["inputs"] = {"kspace": str(args.input), "mask": str(args.mask)}
    kspace, _ = read_container(args.input)
    mask = load_mask(args.mask)
    with manifest.stage("calibration"):
        result = calibrate(kspace, mask, config.calibration)
    manifest.data["outputs"]["maps"] = str(save_maps(args.output, result.maps))
    if result.compression is not None:
        compressed = args.output.with_name(args.output.stem + "_kspace.ckt")
        write_container(compressed, result.kspace, {"axes": "kx,ky,coil,frame"})
        manifest.data["outputs"]["kspace"] = str(compressed)
    return args.output


def cmd_recon(args: argparse.Namespace, manifest: RunManifest) -> Path:
    manifest.data["inputs"] = {
        "kspace": str(args.kspace),
        "mask": str(args.mask),
        "maps": str(args.maps),
        "checkpoint": None if args.checkpoint is None else str(args.checkpoint),
    }
    with manifest.stage(args.method):
        image = run_method(
            args.method,
            str(args.kspace),
            str(args.mask),
            str(args.maps),
            iters=args.iters,
            lambda_s=args.lambda_s,
            lambda_t=args.lambda_t,
            checkpoint_path=None if args.checkpoint is None else str(args.checkpoint),
        )
    write_container(args.output, image, {"axes": "x,y,set,frame", "method": args.method})
    manifest.data["outputs"]["image"] = str(args.output)
    return args.output


def _section(cls_instance, overrides: Dict[str, Any], name: str):
    known = {f.name for f in fields(cls_instance)}
    unknown = set(overrides) - known
    if unknown:
        raise InvalidArgumentError(f"unknown {name} keys in config file: {', '.join(sorted(unknown))}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    return replace(cls_instance, **values)


def load_train_config(path: Optional[Path], full_scale: bool) -> None:
    """Apply a JSON training config and the full-scale preset to the global config."""
    sections: Dict[str, Any] = {}
    if path is not None:
        try:
            sections = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise InvalidArgumentError(f"{path} is not valid JSON: {e}")
        unknown = set(sections) - {"train", "network", "dataset", "calibration", "sampling"}
        if unknown:
            raise InvalidArgumentError(f"unknown config sections: {', '.join(sorted(unknown))}")
    if full_scale:
        config.network = replace(config.network, iterations=FULL_SCALE["iterations"])
        config.train = replace(
            config.train, steps=FULL_SCALE["steps"], restart_at=FULL_SCALE["restart_at"]
        )
    for name in ("train", "network", "dataset", "calibration", "sampling"):
        if name in sections:
            setattr(config, name, _section(getattr(config, name), sections[name], name))


def cmd_train(args: argparse.Namespace, manifest: RunManifest) -> Path:
    load_train_config(args.config, args.full_scale)
    out_dir: Path = args.output
    manifest.data["seeds"]["train"] = config.train.seed
    if args.config is not None:
        manifest.data["inputs"]["config"] = str(args.config)

    net = UnrolledNet(config.network, seed=config.train.seed)
    logger.info("Training %s network with %d parameters", config.network.conv_kind, count_params(net))
    stream = PhantomStream(
        config.dataset, config.calibration, config.sampling,
        seed=config.train.seed, nsets=config.network.nsets,
    )
    with manifest.stage("train"):
        result = train(net, stream, config.train, out_dir)
    manifest.data["outputs"]["checkpoint"] = str(save_checkpoint(out_dir / "final.dle", net))
    manifest.data["outputs"]["loss_history"] = str(
        write_loss_history(out_dir / "loss_history.csv", result.history)
    )
    manifest.data["validation"] = {
        "improved": result.improved,
        "relative_improvement": result.relative_improvement,
    }
    return out_dir


def cmd_eval(args: argparse.Namespace, manifest: RunManifest) -> Path:
    rec_paths = [Path(p) for p in args.rec.split(",") if p]
    if not rec_paths:
        raise InvalidArgumentError("--rec needs at least one file")
    ref, _ = read_container(args.ref)
    recs = {}
    for path in rec_paths:
        array, meta = read_container(path)
        name = str(meta.get("method", path.stem))
        recs[name if name not in recs else path.stem] = array
    manifest.data["inputs"] = {"ref": str(args.ref), "rec": [str(p) for p in rec_paths]}
    with manifest.stage("eval"):
        report = compare(recs, ref, BBox.parse(args.bbox) if args.bbox else None)
    report.to_csv(args.output)
    manifest.data["outputs"]["report"] = str(args.output)
    print(report.to_text())
    return args.output


def sequence_to_uint8(image: np.ndarray) -> np.ndarray:
    """First-set magnitude scaled to 0..255 with one min/max over all frames."""
    mag = magnitude(image)
    lo, hi = float(mag.min()), float(mag.max())
    if hi <= lo:
        return np.zeros(mag.shape, dtype=np.uint8)
    return np.round(255.0 * (mag - lo) / (hi - lo)).astype(np.uint8)


def cmd_export(args: argparse.Namespace, manifest: RunManifest) -> Path:
    image, _ = read_container(args.input)
    frames = sequence_to_uint8(image)
    args.output.mkdir(parents=True, exist_ok=True)
    written: List[str] = []
    with manifest.stage("export"):
        for t in range(frames.shape[2]):
            path = args.output / f"frame_{t:03d}.png"
            Image.fromarray(np.ascontiguousarray(frames[:, :, t])).save(path)
            written.append(str(path))
    manifest.data["inputs"]["image"] = str(args.input)
    manifest.data["outputs"]["frames"] = written
    return args.output


COMMANDS = {
    "phantom": cmd_phantom,
    "mask": cmd_mask,
    "calib": cmd_calib,
    "recon": cmd_recon,
    "train": cmd_train,
    "eval": cmd_eval,
    "export": cmd_export,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    # Subcommands mutate the global config; restored on return
    saved = copy.deepcopy(vars(config))
    configure_runtime(args)
    manifest = RunManifest(argv, args.command)
    try:
        output = COMMANDS[args.command](args, manifest)
        manifest.write(manifest_beside(output))
    except (MrcineError, OSError) as e:
        print(f"mrcine {args.command}: {e}", file=sys.stderr)
        return 1
    finally:
        vars(config).update(saved)
    return 0


if __name__ == "__main__":
    sys.exit(main())
