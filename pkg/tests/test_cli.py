"""Tests for the mrcine command-line interface."""

import copy
import csv
import json

import numpy as np
import pytest
from PIL import Image

from cli import load_train_config, main, manifest_beside, sequence_to_uint8
from config import NetworkConfig, config
from mrcine.checkpoint import save_checkpoint
from mrcine.container import read_container
from mrcine.unrolled_net import UnrolledNet
from mrcine.validation import InvalidArgumentError


@pytest.fixture(autouse=True)
def restore_config():
    saved = copy.deepcopy(vars(config))
    yield
    vars(config).update(saved)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Phantom, R=4 mask and one-set maps written through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    phantom = root / "phantom"
    assert main(["phantom", "--nx", "32", "--ny", "32", "--frames", "8", "--coils", "4",
                 "--seed", "1", "-o", str(phantom)]) == 0
    assert main(["mask", "--ny", "32", "--nx", "32", "--frames", "8", "--accel", "4",
                 "--seed", "2", "-o", str(root / "mask.ckt")]) == 0
    assert main(["calib", "--input", str(phantom / "kspace.ckt"), "--mask", str(root / "mask.ckt"),
                 "--maps", "1", "-o", str(root / "maps.ckt")]) == 0
    return root


def recon_args(root, method, out, *extra):
    return [
        "recon", method,
        "--kspace", str(root / "phantom" / "kspace.ckt"),
        "--mask", str(root / "mask.ckt"),
        "--maps", str(root / "maps.ckt"),
        "-o", str(out), *extra,
    ]


class TestManifest:
    """Test manifest placement and contents."""

    def test_manifest_paths(self, tmp_path):
        assert manifest_beside(tmp_path / "out") == tmp_path / "out" / "manifest.json"
        assert manifest_beside(tmp_path / "m.ckt") == tmp_path / "m.ckt.manifest.json"

    def test_phantom_manifest(self, workdir):
        """Given-When-Then: The phantom run records seeds, outputs and the config snapshot."""
        manifest = json.loads((workdir / "phantom" / "manifest.json").read_text())
        assert manifest["command"] == "phantom"
        assert manifest["seeds"] == {"phantom": 1}
        assert set(manifest["outputs"]) == {"image", "coils", "kspace"}
        assert manifest["config"]["phantom"]["nx"] == 32
        assert "phantom" in manifest["timings_s"]

    def test_global_config_is_restored(self, workdir):
        assert config.phantom.nx == 64
        assert config.calibration.nsets == 2


class TestMaskCommand:
    """Test mask generation."""

    def test_same_seed_same_bytes(self, tmp_path):
        """Given-When-Then: Two runs with one seed write identical masks."""
        args = ["mask", "--ny", "64", "--frames", "6", "--accel", "8", "--seed", "3"]
        assert main([*args, "-o", str(tmp_path / "a.ckt")]) == 0
        assert main([*args, "-o", str(tmp_path / "b.ckt")]) == 0
        assert (tmp_path / "a.ckt").read_bytes() == (tmp_path / "b.ckt").read_bytes()

    def test_partial_echo(self, tmp_path):
        out = tmp_path / "pe.ckt"
        assert main(["mask", "--ny", "32", "--nx", "40", "--frames", "4", "--accel", "2",
                     "--partial-echo", "0.25", "-o", str(out)]) == 0
        pattern, _ = read_container(out)
        assert not pattern[:10].any()

    def test_infeasible_budget_fails(self, tmp_path, capsys):
        code = main(["mask", "--ny", "30", "--frames", "4", "--accel", "10", "-o", str(tmp_path / "x.ckt")])
        assert code == 1
        assert "mrcine mask:" in capsys.readouterr().err


class TestPipeline:
    """Test reconstruction, evaluation and export end to end."""

    def test_l1_espirit_beats_zero_filled(self, workdir, capsys):
        """Given-When-Then: TV-regularized ADMM scores a higher PSNR than the adjoint."""
        # Given: Zero-filled and l1-ESPIRiT reconstructions
        assert main(recon_args(workdir, "zerofill", workdir / "zf.ckt")) == 0
        assert main(recon_args(workdir, "l1espirit", workdir / "l1.ckt", "--iters", "40")) == 0

        # When: Evaluating both against the phantom
        code = main(["eval", "--ref", str(workdir / "phantom" / "image.ckt"),
                     "--rec", f"{workdir / 'zf.ckt'},{workdir / 'l1.ckt'}",
                     "-o", str(workdir / "report.csv")])

        # Then: The report ranks l1-ESPIRiT above zero-filled
        assert code == 0
        with open(workdir / "report.csv", newline="") as f:
            rows = {row["method"]: row for row in csv.DictReader(f)}
        assert float(rows["l1espirit"]["psnr_db"]) > float(rows["zerofill"]["psnr_db"])
        assert "**Reconstruction Comparison:**" in capsys.readouterr().out

    def test_recon_sidecar_names_method(self, workdir):
        out = workdir / "cg.ckt"
        assert main(recon_args(workdir, "cg", out, "--iters", "5")) == 0
        image, meta = read_container(out)
        assert image.shape == (32, 32, 1, 8)
        assert meta["method"] == "cg"
        assert (workdir / "cg.ckt.manifest.json").exists()

    def test_dl_with_mismatched_sets_fails(self, workdir, tmp_path, capsys):
        """Given-When-Then: A two-set network cannot run on one-set maps."""
        checkpoint = save_checkpoint(
            tmp_path / "net.dle", UnrolledNet(NetworkConfig(iterations=1, layers=2, channels=2, nsets=2))
        )
        code = main(recon_args(workdir, "dl", tmp_path / "dl.ckt", "--checkpoint", str(checkpoint)))
        assert code == 1
        assert "M=2" in capsys.readouterr().err

    def test_dl_needs_checkpoint(self, workdir, tmp_path):
        assert main(recon_args(workdir, "dl", tmp_path / "dl.ckt")) == 1

    def test_unknown_method_is_usage_error(self, workdir, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(recon_args(workdir, "magic", tmp_path / "m.ckt"))
        assert excinfo.value.code == 2

    def test_missing_input_fails(self, tmp_path):
        code = main(["calib", "--input", str(tmp_path / "none.ckt"), "--mask", str(tmp_path / "none.ckt"),
                     "-o", str(tmp_path / "maps.ckt")])
        assert code == 1

    def test_export_frames(self, workdir, tmp_path):
        """Given-When-Then: Export writes one 8-bit PNG per frame."""
        out = tmp_path / "frames"
        assert main(["export", "--input", str(workdir / "phantom" / "image.ckt"), "-o", str(out)]) == 0
        pngs = sorted(out.glob("frame_*.png"))
        assert [p.name for p in pngs[:2]] == ["frame_000.png", "frame_001.png"]
        assert len(pngs) == 8
        with Image.open(pngs[0]) as png:
            assert png.size == (32, 32)
            assert png.mode == "L"
        assert (out / "manifest.json").exists()


class TestSequenceScaling:
    """Test PNG intensity scaling."""

    def test_shared_min_max(self):
        image = np.zeros((2, 2, 1, 2), dtype=np.complex64)
        image[0, 0, 0, 1] = 4.0
        frames = sequence_to_uint8(image)
        assert frames.max() == 255 and frames[..., 0].max() == 0

    def test_constant_image(self):
        assert not sequence_to_uint8(np.ones((2, 2, 1, 3))).any()


class TestTrainCommand:
    """Test training from a JSON config."""

    def test_tiny_run(self, tmp_path):
        """Given-When-Then: A two-step run writes the final checkpoint and loss history."""
        # Given: A tiny configuration file
        settings = {
            "train": {"steps": 2, "val_every": 1, "checkpoint_every": 0, "progress": False},
            "network": {"iterations": 1, "layers": 2, "channels": 4, "nsets": 1},
            "dataset": {
                "nx": 16, "ny": 16, "nframes": 4, "ncoils": 2, "pool_size": 1, "val_size": 1,
                "accel_range": [2.0, 2.5], "val_accel": 2.0, "partial_echo_range": [0.0, 0.0],
                "fov_reduction_range": [0.0, 0.0], "frame_range": [4, 4],
            },
            "calibration": {"nsets": 1, "calib_width": 12},
        }
        path = tmp_path / "train.json"
        path.write_text(json.dumps(settings))

        # When: Training
        code = main(["train", "--config", str(path), "-o", str(tmp_path / "run")])

        # Then: Outputs exist and the history has a header plus three rows
        assert code == 0
        assert (tmp_path / "run" / "final.dle").exists()
        lines = (tmp_path / "run" / "loss_history.csv").read_text().splitlines()
        assert lines[0] == "step,train_loss,val_loss" and len(lines) == 4
        assert config.train.steps == 2000
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert set(manifest["validation"]) == {"improved", "relative_improvement"}
        assert manifest["validation"]["improved"] in (True, False)

    def test_full_scale_preset(self):
        load_train_config(None, full_scale=True)
        assert config.network.iterations == 10
        assert (config.train.steps, config.train.restart_step) == (200_000, 100_000)

    def test_unknown_keys_are_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"train": {"stepz": 3}}))
        with pytest.raises(InvalidArgumentError, match="stepz"):
            load_train_config(path, full_scale=False)
        path.write_text(json.dumps({"optimizer": {}}))
        with pytest.raises(InvalidArgumentError, match="optimizer"):
            load_train_config(path, full_scale=False)
