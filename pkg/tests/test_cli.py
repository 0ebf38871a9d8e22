import csv
import json

from uvenet import cli
from uvenet import engine as E
from uvenet import frames as fio
from uvenet import gradcheck
from uvenet import model as M
from uvenet import synth as S

MICRO_MODEL = {"T": 3, "dims": [16, 32, 64, 128], "depths": [1, 0, 0, 0], "shift_len": 1, "decoder_dim": 8, "grm_dim": 8}


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_procedural_pairs(tmp_path, capsys):
    assert cli.main(["synth", "--out", str(tmp_path / "a"), "--procedural", "2", "--styles", "3", "--split", "1:1",
                     "--frames", "3", "--size", "32", "32", "--seed", "3"]) == 0
    man = S.DatasetManifest.load(tmp_path / "a/manifest.json")
    assert len(man.entries) == 6
    assert "6 pairs" in capsys.readouterr().out


def test_synth_rerun_byte_identical(tmp_path):
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps({"procedural": 3, "frames": 2, "size": [16, 16], "split": "2:1", "seed": 1}))
    for d in ("a", "b"):
        assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_synth_flag_overrides_config(tmp_path):
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps({"procedural": 1, "styles": 2, "frames": 2, "size": [16, 16], "split": 1.0}))
    cli.main(["synth", "--config", str(cfg), "--styles", "1", "--out", str(tmp_path / "o")])
    assert len(S.DatasetManifest.load(tmp_path / "o/manifest.json").entries) == 1


def test_synth_from_clean_root(tmp_path, rng):
    clip = tmp_path / "root/c1"
    fio.write_frames(rng.random((2, 3, 12, 12)), clip)
    fio.write_depths(rng.uniform(1, 3, (2, 12, 12)), clip / "depth")
    assert cli.main(["synth", "--clean-root", str(tmp_path / "root"), "--crop", "10", "10", "--split", "1.0",
                     "--out", str(tmp_path / "o")]) == 0
    assert fio.read_frames(tmp_path / "o/underwater/c1_s1").shape == (2, 3, 10, 10)


def test_train_enhance_evaluate_roundtrip(tmp_path):
    cli.main(["synth", "--out", str(tmp_path / "ds"), "--procedural", "2", "--styles", "1", "--split", "1:1",
              "--frames", "4", "--size", "32", "32"])
    cfg = tmp_path / "train.json"
    cfg.write_text(json.dumps({"model": MICRO_MODEL, "total_iters": 2, "batch_size": 1, "crop_size": 32, "log_every": 1}))
    ckpt, report = tmp_path / "m.uvew", tmp_path / "run.json"
    assert cli.main(["train", "--config", str(cfg), "--manifest", str(tmp_path / "ds/manifest.json"),
                     "--checkpoint", str(ckpt), "--report", str(report), "--seed", "2"]) == 0
    rep = json.loads(report.read_text())
    assert rep["config"]["seed"] == 2 and len(rep["loss_log"]) == 2
    man = S.DatasetManifest.load(tmp_path / "ds/manifest.json")
    e = man.split("test")[0]
    assert cli.main(["enhance", "--checkpoint", str(ckpt), "--input", str(tmp_path / "ds" / e.underwater),
                     "--output", str(tmp_path / "enh")]) == 0
    assert len(fio.list_frames(tmp_path / "enh")) == 4
    assert cli.main(["evaluate", "--enhanced", str(tmp_path / "enh"), "--gt", str(tmp_path / "ds" / e.clean),
                     "--out", str(tmp_path / "rep/metrics")]) == 0
    with open(tmp_path / "rep/metrics.csv", newline="") as fh:
        header, row = list(csv.reader(fh))
    assert header == ["video", "psnr", "ssim", "uiqm", "uciqe", "mse_mabd", "cdc"]
    summary = json.loads((tmp_path / "rep/metrics.json").read_text())["summary"]
    assert [float(v) for v in row[1:]] == [summary[k] for k in header[1:]]


def test_train_cli_model_flags(tmp_path):
    S.build_dataset([S.gen_procedural_clip(0, 3, 32, 32, clip_id="x")], tmp_path / "ds", styles_per_clip=1, split_ratio=1.0)
    cfg = tmp_path / "train.json"
    cfg.write_text(json.dumps({"model": MICRO_MODEL, "total_iters": 1, "batch_size": 1, "crop_size": 32}))
    assert cli.main(["train", "--config", str(cfg), "--manifest", str(tmp_path / "ds/manifest.json"),
                     "--checkpoint", str(tmp_path / "m.uvew"), "--T", "1", "--aggregation", "dsc", "--faam-scales", "0", "3"]) == 0
    _, mcfg = M.load_checkpoint(tmp_path / "m.uvew")
    assert (mcfg.T, mcfg.aggregation, mcfg.faam_scales) == (1, "dsc", (0, 3))


def test_gradcheck_passes_and_is_deterministic(tmp_path, capsys):
    assert cli.main(["gradcheck", "--seed", "1", "--json", str(tmp_path / "a.json")]) == 0
    first = capsys.readouterr().out
    cli.main(["gradcheck", "--seed", "1", "--json", str(tmp_path / "b.json")])
    assert capsys.readouterr().out == first
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert "FAIL" not in first


def test_gradcheck_reports_corrupted_conv_backward(monkeypatch, capsys):
    real = E._conv_backward

    def corrupted(*args):
        gx, gw = real(*args)
        return gx * 1.01, gw

    monkeypatch.setattr(E, "_conv_backward", corrupted)
    assert cli.main(["gradcheck", "--seed", "0"]) == 1
    out = capsys.readouterr().out
    assert "FAIL conv2d" in out
    failed = {r.op for r in gradcheck.run_suite(0) if not r.passed}
    assert "conv2d" in failed


def test_module_entry_point_help():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "uvenet", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("synth", "train", "enhance", "evaluate", "gradcheck"):
        assert cmd in res.stdout
