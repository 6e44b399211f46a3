import hashlib
import json

import numpy as np
import pytest
from PIL import Image

from highlightnet.checkpoint import Checkpoint, save_checkpoint
from highlightnet.cli import run
from highlightnet.enhancer import ModelWeights
from highlightnet.imageio import read_image, to_uint8, write_image
from highlightnet.synthetic import dark_image, translating_square
from highlightnet.tracking import write_ground_truth


@pytest.fixture
def weights_file(tmp_path):
    path = tmp_path / "w.ckpt"
    save_checkpoint(Checkpoint(weights=ModelWeights.init(0)), path)
    return path


@pytest.fixture
def dark_png(tmp_path):
    path = tmp_path / "in.png"
    write_image(path, dark_image(3, size=48)[:, :40])
    return path


def parse(out):
    return dict(line.split("=", 1) for line in out.strip().splitlines() if "=" in line and " " not in line)


def test_gradcheck_passes(capsys):
    assert run(["gradcheck", "--size", "16"]) == 0
    vals = parse(capsys.readouterr().out)
    assert float(vals["max_rel_error"]) < 1e-3
    assert vals["status"] == "pass"


def test_gradcheck_rejects_small_size(capsys):
    assert run(["gradcheck", "--size", "8"]) == 1


def test_missing_flag_is_named(capsys):
    assert run(["enhance"]) == 1
    assert "--input" in capsys.readouterr().err


def test_unknown_flag_and_command(capsys):
    assert run(["enhance", "--bogus"]) == 1
    assert run(["frobnicate"]) == 1
    assert run([]) == 1


def test_enhance_writes_output(tmp_path, weights_file, dark_png, capsys):
    digest = hashlib.sha256(dark_png.read_bytes()).hexdigest()
    out = tmp_path / "out.png"
    assert run(["enhance", "--input", str(dark_png), "--output", str(out), "--weights", str(weights_file)]) == 0
    assert read_image(out).shape == read_image(dark_png).shape
    assert hashlib.sha256(dark_png.read_bytes()).hexdigest() == digest
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]  # no temp leftovers
    vals = parse(capsys.readouterr().out)
    assert 0.1 <= float(vals["alpha"]) <= 1


def test_enhance_is_deterministic(tmp_path, weights_file, dark_png):
    outs = []
    for name in ("a.png", "b.png"):
        assert run(["enhance", "--input", str(dark_png), "--output", str(tmp_path / name),
                    "--weights", str(weights_file)]) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def test_diagnostic_maps_are_8bit(tmp_path, weights_file, dark_png):
    from highlightnet.enhancer import enhance

    args = ["enhance", "--input", str(dark_png), "--output", str(tmp_path / "o.png"), "--weights", str(weights_file),
            "--save-mask", str(tmp_path / "m.png"), "--save-gray", str(tmp_path / "g.pgm"),
            "--save-tmap", str(tmp_path / "t.png")]
    assert run(args) == 0
    _, diag = enhance(read_image(dark_png), ModelWeights.init(0))
    for name, values in (("m.png", diag.mask), ("g.pgm", diag.gray_out), ("t.png", -diag.anti_noise)):
        with Image.open(tmp_path / name) as im:
            assert im.mode == "L"
            np.testing.assert_array_equal(np.asarray(im), to_uint8(values))


def test_ablation_flags_change_output(tmp_path, weights_file, dark_png):
    base = ["--input", str(dark_png), "--weights", str(weights_file)]
    assert run(["enhance", *base, "--output", str(tmp_path / "a.png")]) == 0
    assert run(["enhance", *base, "--output", str(tmp_path / "b.png"), "--no-tpa"]) == 0
    assert (tmp_path / "a.png").read_bytes() != (tmp_path / "b.png").read_bytes()


def test_config_file_and_flag_precedence(tmp_path, weights_file, dark_png):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# defaults\ninput={dark_png}\nweights={weights_file}\noutput={tmp_path / 'cfg.png'}\nno_tpa=true\n")
    assert run(["enhance", "--config", str(cfg)]) == 0
    assert (tmp_path / "cfg.png").exists()
    assert run(["enhance", "--config", str(cfg), "--output", str(tmp_path / "flag.png")]) == 0
    assert (tmp_path / "flag.png").read_bytes() == (tmp_path / "cfg.png").read_bytes()
    cfg.write_text("nonsense_key=1\n")
    assert run(["enhance", "--config", str(cfg)]) == 1


def test_runtime_errors_exit_2(tmp_path, dark_png, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"HLN1garbage")
    assert run(["enhance", "--input", str(dark_png), "--output", str(tmp_path / "o.png"), "--weights", str(bad)]) == 2
    assert run(["enhance", "--input", str(tmp_path / "missing.png"), "--output", str(tmp_path / "o.png"),
                "--weights", str(bad)]) == 2


def test_train_then_enhance(tmp_path, capsys):
    data = tmp_path / "data"
    data.mkdir()
    for s in range(2):
        write_image(data / f"{s}.png", dark_image(s, size=40))
    ckpt = tmp_path / "m.ckpt"
    assert run(["train", "--data-dir", str(data), "--epochs", "2", "--batch", "2", "--resize", "32",
                "--out", str(ckpt)]) == 0
    out = capsys.readouterr().out
    assert "epoch=2" in out and ckpt.exists()
    assert run(["train", "--data-dir", str(data), "--epochs", "3", "--batch", "2", "--resize", "32",
                "--out", str(ckpt), "--resume", str(ckpt)]) == 0
    assert "epochs=3" in capsys.readouterr().out
    assert run(["train", "--data-dir", str(data), "--epochs", "0"]) == 2


def test_eval_pairs(tmp_path, weights_file, capsys):
    low, ref = tmp_path / "low", tmp_path / "ref"
    low.mkdir(), ref.mkdir()
    for s in range(2):
        img = dark_image(s, size=40)
        write_image(low / f"{s}.png", img)
        write_image(ref / f"{s}.png", np.clip(img * 4, 0, 1))
    report = tmp_path / "r.json"
    assert run(["eval", "--low-dir", str(low), "--ref-dir", str(ref), "--weights", str(weights_file),
                "--report", str(report)]) == 0
    vals = parse(capsys.readouterr().out)
    assert "mean_psnr" in vals and "mean_ssim" in vals
    assert len(json.loads(report.read_text())["images"]) == 2


def test_track_sequence(tmp_path, weights_file, capsys):
    frames, gt = translating_square(n_frames=5)
    fdir = tmp_path / "frames"
    fdir.mkdir()
    for k, f in enumerate(frames):
        write_image(fdir / f"{k:03d}.png", f)
    write_ground_truth(tmp_path / "gt.txt", gt)
    assert run(["track", "--frames", str(fdir), "--gt", str(tmp_path / "gt.txt")]) == 0
    vals = parse(capsys.readouterr().out)
    assert float(vals["precision"]) == 1.0 and float(vals["mean_cle"]) == 0.0
    assert run(["track", "--frames", str(fdir), "--gt", str(tmp_path / "gt.txt"), "--enhance",
                "--weights", str(weights_file)]) == 0
    assert run(["track", "--frames", str(fdir), "--gt", str(tmp_path / "gt.txt"), "--enhance"]) == 1
    assert run(["track", "--frames", str(fdir), "--gt", str(tmp_path / "gt.txt"), "--weights", str(weights_file)]) == 1


def test_thread_env_validated(monkeypatch):
    monkeypatch.setenv("HLN_THREADS", "zero")
    assert run(["gradcheck"]) == 1
