import csv
import json

import numpy as np
import pytest

from dancer import checkpoint as ckpt, synthdance as sd
from dancer.cli import main

TINY = {
    "codec_widths": [8, 16, 16],
    "enc_dim": 16,
    "token_dim": 16,
    "pose_dim": 8,
    "time_dim": 16,
    "aem_depth": 1,
    "codec_steps": 3,
    "codec_batch": 4,
    "diffusion_steps": 4,
    "ablation_steps": 2,
    "sampling_steps": 2,
    "num_clips": 2,
    "checkpoint_every": 2,
    "lr": 1e-3,
}


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps(TINY))
    return str(p)


@pytest.fixture
def data(tmp_path, cfg):
    out = tmp_path / "data"
    assert main(["synth", "--config", cfg, "--out", str(out)]) == 0
    return out


@pytest.fixture
def trained(tmp_path, cfg, data):
    codec = tmp_path / "codec"
    assert main(["train", "--config", cfg, "--stage", "codec", "--out", str(codec), "--data", str(data)]) == 0
    diff = tmp_path / "diff"
    args = ["train", "--config", cfg, "--stage", "diffusion", "--checkpoint", str(codec), "--out", str(diff), "--data", str(data)]
    assert main(args) == 0
    return diff


def test_synth_layout_and_manifest(tmp_path, cfg):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(dict(TINY, num_clips=10, jitter=1.5)))
    out = tmp_path / "d"
    assert main(["synth", "--config", str(p), "--out", str(out)]) == 0
    clips = sd.list_clips(out)
    assert len(clips) == 10
    for c in clips:
        assert (c / "ref.png").exists()
        assert len(list((c / "frames").glob("*.png"))) == 8
        for m in ("ske", "seg", "dep", "norm"):
            assert len(list((c / "pose" / m).glob("*.png"))) == 8
    assert json.loads((clips[0] / "meta.json").read_text())["jitter"] == 1.5
    assert json.loads((out / "config.json").read_text())["jitter"] == 1.5
    regen = sd.regenerate_from_manifest(out / "manifest.json", tmp_path / "regen")
    for a in sorted(out.rglob("*.png")):
        assert a.read_bytes() == (regen / a.relative_to(out)).read_bytes()


def test_synth_is_reproducible(tmp_path, cfg):
    for name in ("a", "b"):
        assert main(["synth", "--config", cfg, "--seed", "77", "--out", str(tmp_path / name)]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_diffusion_before_codec_is_usage_error(tmp_path, cfg, data, capsys):
    code = main(["train", "--config", cfg, "--stage", "diffusion", "--out", str(tmp_path / "x"), "--data", str(data)])
    assert code == 1
    assert "codec" in capsys.readouterr().err


def test_bad_arguments_exit_one(cfg):
    assert main(["train", "--stage", "nonsense"]) == 1
    assert main([]) == 1


def test_missing_data_exit_two(tmp_path, cfg):
    assert main(["stats", str(tmp_path / "nowhere")]) == 2


def test_train_outputs_and_resume(tmp_path, cfg, data, trained):
    log = list(csv.DictReader(open(trained / "train_log.csv")))
    assert [r["step"] for r in log] == ["0", "1", "2", "3"]
    _, meta = ckpt.read_container(trained / "checkpoint.dncr")
    assert meta["stages"] == ["codec", "diffusion"] and meta["step"] == 4
    assert meta["config"]["lr"] == 1e-3

    # interrupted run: stop after 2 steps, then resume to 4
    p = tmp_path / "short.json"
    p.write_text(json.dumps(dict(TINY, diffusion_steps=2)))
    part = tmp_path / "part"
    args = ["train", "--config", str(p), "--stage", "diffusion", "--checkpoint", str(tmp_path / "codec"), "--out", str(part), "--data", str(data)]
    assert main(args) == 0
    args = ["train", "--config", cfg, "--stage", "diffusion", "--checkpoint", str(part), "--out", str(tmp_path / "rest"), "--data", str(data)]
    assert main(args) == 0
    rest = list(csv.DictReader(open(tmp_path / "rest" / "train_log.csv")))
    assert [r["loss"] for r in rest] == [r["loss"] for r in log[2:]]
    a, _ = ckpt.read_container(trained / "checkpoint.dncr")
    b, _ = ckpt.read_container(tmp_path / "rest" / "checkpoint.dncr")
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_generate_and_evaluate(tmp_path, cfg, data, trained):
    clip = sd.list_clips(data)[0]
    outs = []
    for name in ("g1", "g2"):
        out = tmp_path / name
        args = ["generate", "--config", cfg, "--checkpoint", str(trained), "--ref", str(clip / "ref.png"), "--source", str(clip), "--out", str(out), "--seed", "3"]
        assert main(args) == 0
        outs.append(out)
    frames = sorted((outs[0] / "frames").glob("*.png"))
    assert len(frames) == 8
    for f in frames:
        assert f.read_bytes() == (outs[1] / "frames" / f.name).read_bytes()

    ev = tmp_path / "ev"
    assert main(["evaluate", "--config", cfg, "--generated", str(clip), "--reference", str(clip), "--out", str(ev)]) == 0
    text = (ev / "report.txt").read_text()
    assert "N/A" in text and "not comparable" in text
    rows = list(csv.DictReader(line for line in (ev / "report.csv").read_text().splitlines() if not line.startswith("#")))
    assert float(rows[0]["L1"]) == 0 and float(rows[0]["FID"]) < 1e-6 and abs(float(rows[0]["SSIM"]) - 1) < 1e-9
    assert list(rows[0]) == ["FID", "SSIM", "LPIPS", "PSNR", "L1", "FID-VID", "FVD"]
    assert main(["evaluate", "--config", cfg, "--generated", str(outs[0]), "--reference", str(clip), "--out", str(tmp_path / "ev2")]) == 0


def test_generate_rejects_untrained_checkpoint(tmp_path, cfg, data):
    codec = tmp_path / "codec"
    assert main(["train", "--config", cfg, "--stage", "codec", "--out", str(codec), "--data", str(data)]) == 0
    clip = sd.list_clips(data)[0]
    args = ["generate", "--config", cfg, "--checkpoint", str(codec), "--ref", str(clip / "ref.png"), "--source", str(clip), "--out", str(tmp_path / "g")]
    assert main(args) == 1


def test_corrupt_checkpoint_is_data_error(tmp_path, cfg, data, trained):
    raw = bytearray((trained / "checkpoint.dncr").read_bytes())
    raw[100] ^= 1
    (trained / "checkpoint.dncr").write_bytes(bytes(raw))
    clip = sd.list_clips(data)[0]
    args = ["generate", "--config", cfg, "--checkpoint", str(trained), "--ref", str(clip / "ref.png"), "--source", str(clip), "--out", str(tmp_path / "g")]
    assert main(args) == 2


def test_ablate_emits_two_tables(tmp_path, cfg, data):
    codec = tmp_path / "codec"
    assert main(["train", "--config", cfg, "--stage", "codec", "--out", str(codec), "--data", str(data)]) == 0
    out = tmp_path / "abl"
    assert main(["ablate", "--config", cfg, "--checkpoint", str(codec), "--data", str(data), "--out", str(out)]) == 0
    for name, flags in (("appearance", ["semantic", "detail"]), ("pose", ["skeleton", "seg/dep/norm"])):
        lines = [ln for ln in (out / f"ablation_{name}.csv").read_text().splitlines() if not ln.startswith("#")]
        rows = list(csv.DictReader(lines))
        assert len(rows) == 2
        assert list(rows[0])[:2] == flags
        assert [r[flags[1]] for r in rows] == ["0", "1"]
        assert all(r["FID"] != "" and r["SSIM"] != "" for r in rows)
    grid = [ln for ln in (out / "ablation_grid.csv").read_text().splitlines() if not ln.startswith("#")]
    assert len(grid) == 5
    assert "✓" in (out / "ablation_pose.txt").read_text()


def test_stats_histogram(tmp_path, cfg, data, capsys):
    out = tmp_path / "st"
    assert main(["stats", str(data), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "stats.csv")))
    assert rows == [{"bin_left": "8", "bin_right": "9", "count": "2"}]


def test_stats_mixed_lengths(tmp_path):
    p = tmp_path / "c.json"
    lengths = [3, 5, 5, 8, 3, 3]
    p.write_text(json.dumps(dict(TINY, num_clips=6, frames_per_clip=lengths)))
    assert main(["synth", "--config", str(p), "--out", str(tmp_path / "m")]) == 0
    assert main(["stats", str(tmp_path / "m"), "--out", str(tmp_path / "s")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "s" / "stats.csv")))
    assert sum(int(r["count"]) for r in rows) == 6
    assert {int(r["bin_left"]): int(r["count"]) for r in rows} == {3: 3, 5: 2, 8: 1}


def test_threads_env(monkeypatch, tmp_path, data):
    monkeypatch.setenv("DANCER_THREADS", "zero")
    assert main(["stats", str(data)]) == 1
    monkeypatch.setenv("DANCER_THREADS", "1")
    assert main(["stats", str(data)]) == 0
