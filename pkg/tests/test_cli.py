import os

import numpy as np
import pytest

from pepsi.cli import main
from pepsi.checkpoint import save_checkpoint
from pepsi.nets import build_generator
from pepsi.ppm import read_pgm, read_ppm, write_pgm, write_ppm


class TestSynthCommand:
    def test_writes_dataset(self, tmp_path):
        out = tmp_path / "data"
        rc = main(["synth", "--pattern", "stripes", "--size", "16",
                   "--count", "3", "--seed", "2", "--out-dir", str(out)])
        assert rc == 0
        ppms = [n for n in os.listdir(out) if n.endswith(".ppm")]
        assert len(ppms) == 3
        assert read_ppm(out / ppms[0]).shape == (3, 16, 16)


class TestMaskgenCommand:
    def test_writes_binary_pgm_masks(self, tmp_path):
        out = tmp_path / "masks"
        rc = main(["maskgen", "--h", "32", "--w", "32", "--mode", "freeform",
                   "--seed", "4", "--count", "2", "--out-dir", str(out)])
        assert rc == 0
        masks = sorted(os.listdir(out))
        assert len(masks) == 2
        m = read_pgm(out / masks[0])
        assert m.shape == (32, 32)
        assert set(np.unique(m)) <= {0, 1}

    def test_square_mode_reproducible(self, tmp_path):
        for sub in ("a", "b"):
            main(["maskgen", "--h", "16", "--w", "16", "--mode", "square",
                  "--seed", "7", "--count", "1", "--out-dir",
                  str(tmp_path / sub)])
        assert (tmp_path / "a" / "mask_00000.pgm").read_bytes() == \
            (tmp_path / "b" / "mask_00000.pgm").read_bytes()


class TestAuditParamsCommand:
    def test_diet_subtotal_line(self, capsys):
        rc = main(["audit-params", "--variant", "diet_pepsi", "--g", "1",
                   "--bias", "off"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "dpu-stack subtotal: 1376256" in out

    def test_pepsi_subtotal_line(self, capsys):
        rc = main(["audit-params", "--variant", "pepsi", "--bias", "off"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "dilated-stack subtotal: 2359296" in out
        assert "total: 3521840" in out


class TestInferCommand:
    def test_zero_hole_mask_is_bit_exact(self, rng, tmp_path):
        net = build_generator("pepsi", rng, channel_div=8)
        ckpt = tmp_path / "g.peps"
        save_checkpoint(ckpt, net)
        raw = rng.integers(0, 256, size=(3, 32, 32), dtype=np.uint8)
        img = (raw.astype(np.float32) / 255.0) * 2.0 - 1.0
        img_path = tmp_path / "in.ppm"
        write_ppm(img_path, img)
        mask_path = tmp_path / "empty.pgm"
        write_pgm(mask_path, np.zeros((32, 32), np.uint8))
        out_path = tmp_path / "out.ppm"
        rc = main(["infer", "--checkpoint", str(ckpt), "--image", str(img_path),
                   "--mask", str(mask_path), "--out", str(out_path)])
        assert rc == 0
        assert out_path.read_bytes() == img_path.read_bytes()

    def test_discriminator_checkpoint_rejected(self, rng, tmp_path):
        from pepsi.nets import build_red
        ckpt = tmp_path / "d.peps"
        save_checkpoint(ckpt, build_red(rng, input_size=32, channel_div=8))
        rc = main(["infer", "--checkpoint", str(ckpt),
                   "--image", "x.ppm", "--mask", "m.pgm", "--out", "o.ppm"])
        assert rc == 1


class TestEvalCommand:
    def test_emits_csv_and_figure(self, rng, tmp_path, capsys):
        refs = tmp_path / "refs"
        results = tmp_path / "results"
        masks = tmp_path / "masks"
        for d in (refs, results, masks):
            d.mkdir()
        for i in range(2):
            img = rng.uniform(-1, 1, size=(3, 16, 16)).astype(np.float32)
            write_ppm(refs / f"im{i}.ppm", img)
            noisy = np.clip(img + rng.normal(0, 0.05, img.shape), -1, 1)
            write_ppm(results / f"im{i}.ppm", noisy.astype(np.float32))
            mask = np.zeros((16, 16), np.uint8)
            mask[4:8, 4:8] = 1
            write_pgm(masks / f"im{i}.pgm", mask)
        out_csv = tmp_path / "report.csv"
        rc = main(["eval", "--results-dir", str(results), "--refs-dir",
                   str(refs), "--masks-dir", str(masks), "--out", str(out_csv)])
        assert rc == 0
        lines = out_csv.read_text().strip().splitlines()
        assert lines[0].startswith("file,psnr_local,psnr_global,ssim")
        assert len(lines) == 3
        assert (tmp_path / "report.png").exists()
        assert "im0.ppm" in capsys.readouterr().out


class TestTrainCommand:
    def test_tiny_run_produces_artifacts(self, tmp_path):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text(
            "image_size = 16\nbatch_size = 2\nk_max = 2\nchannel_div = 8\n"
            "train_count = 4\neval_count = 2\neval_interval = 1\n"
            "checkpoint_interval = 2\nmask_mode = square\nseed = 3\n")
        out = tmp_path / "run"
        rc = main(["train", "--config", str(cfg_path), "--out-dir", str(out)])
        assert rc == 0
        files = set(os.listdir(out))
        assert {"metrics.csv", "metrics.png", "config.used",
                "ckpt_000002.g.peps", "ckpt_000002.d.peps"} <= files

    def test_resume_flag(self, tmp_path):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text(
            "image_size = 16\nbatch_size = 2\nk_max = 3\nchannel_div = 8\n"
            "train_count = 4\neval_count = 0\neval_interval = 10\n"
            "checkpoint_interval = 2\nmask_mode = square\nseed = 3\n")
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg_path), "--out-dir",
                     str(out)]) == 0
        rc = main(["train", "--config", str(cfg_path), "--out-dir", str(out),
                   "--resume", str(out / "ckpt_000002")])
        assert rc == 0
        assert (out / "ckpt_000003.g.peps").exists()

    def test_resume_extends_horizon_from_config(self, tmp_path):
        base = ("image_size = 16\nbatch_size = 2\nchannel_div = 8\n"
                "train_count = 4\neval_count = 0\neval_interval = 10\n"
                "checkpoint_interval = 2\nmask_mode = square\nseed = 3\n")
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text(base + "k_max = 2\n")
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg_path), "--out-dir",
                     str(out)]) == 0
        cfg_path.write_text(base + "k_max = 4\n")
        rc = main(["train", "--config", str(cfg_path), "--out-dir", str(out),
                   "--resume", str(out / "ckpt_000002")])
        assert rc == 0
        assert (out / "ckpt_000004.g.peps").exists()


class TestGradcheckCommand:
    def test_primitives_exit_zero(self, capsys):
        rc = main(["gradcheck", "--skip-e2e"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out


class TestUsageErrors:
    def test_unknown_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_flag_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["maskgen", "--h", "8"])
        assert exc.value.code == 2

    def test_runtime_failure_exits_one(self, tmp_path):
        rc = main(["train", "--config", str(tmp_path / "missing.cfg")])
        assert rc == 1
