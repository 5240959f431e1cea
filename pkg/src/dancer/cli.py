"""Command-line driver: ``dancer {synth,train,generate,evaluate,ablate,stats}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from . import metrics
from . import synthdance as sd
from .codec import DivergenceError
from .config import Config, ConfigError
from .diffusion import DancerModels, SamplingError, generate, smoothed, train
from .nncore import DimensionError
from .prm import MissingModalityError

log = logging.getLogger("dancer")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
CHECKPOINT_NAME = "checkpoint.dncr"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def apply_threads() -> None:
    threads = os.environ.get("DANCER_THREADS")
    if threads:
        try:
            n = int(threads)
        except ValueError:
            raise UsageError(f"DANCER_THREADS must be an integer, got '{threads}'") from None
        if n < 1:
            raise UsageError("DANCER_THREADS must be >= 1")
        torch.set_num_threads(n)


def write_config(out_dir: Path, config: Config) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(config.to_json())


def load_dataset(root: str | Path) -> list[sd.ClipSample]:
    paths = sd.list_clips(root)
    if not paths:
        raise DataError(f"no clips found under {root}")
    return [sd.load_clip(p) for p in paths]


def build_models(config: Config, seed: int) -> DancerModels:
    torch.manual_seed(seed)
    return DancerModels(**config.model_kwargs())


def checkpoint_file(path: str | Path) -> Path:
    p = Path(path)
    return p / CHECKPOINT_NAME if p.is_dir() else p


def load_trained(config: Config, path: str | Path) -> DancerModels:
    models = build_models(config, config.seed)
    meta = ckpt.load_models(checkpoint_file(path), models)
    if "diffusion" not in meta.get("stages", []):
        raise UsageError(f"{path} has no trained diffusion stage; run 'dancer train --stage diffusion' first")
    return models


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(config: Config, out: Path) -> Path:
    seeds = [config.data_seed + k for k in range(config.num_clips)]
    sd.write_dataset(out, seeds, config.frames_per_clip, config.image_size, config.jitter)
    write_config(out, config)
    return out


def cmd_train(config: Config, out: Path, stage: str, checkpoint: str | None, data: str | None = None) -> Path:
    dataset = load_dataset(data or config.dataset_root)
    models = build_models(config, config.seed)
    resume = None
    total = config.codec_steps if stage == "codec" else config.diffusion_steps
    start = 0
    if checkpoint is not None:
        src = checkpoint_file(checkpoint)
        if not src.exists():
            raise UsageError(f"checkpoint {src} does not exist")
        _, meta = ckpt.read_container(src)
        if meta.get("stage") == stage:
            resume, start = src, int(meta["step"])
        else:
            ckpt.load_models(src, models)
    if stage == "diffusion" and "codec" not in (models.stages_done if resume is None else _stages(resume)):
        raise UsageError("the diffusion stage needs a trained codec: run 'dancer train --stage codec' and pass its checkpoint via --checkpoint")
    out.mkdir(parents=True, exist_ok=True)
    write_config(out, config)
    lr = config.codec_lr if stage == "codec" else config.lr
    history = train(
        models,
        dataset,
        max(0, total - start),
        lr=lr,
        stage=stage,
        seed=config.seed,
        n_frames=config.n_frames,
        sigma_cond=config.sigma_cond,
        smoothing_window=config.smoothing_window,
        codec_batch=config.codec_batch,
        log_path=out / "train_log.csv",
        checkpoint_path=out / CHECKPOINT_NAME,
        checkpoint_every=config.checkpoint_every,
        resume=resume,
        config=config.to_dict(),
    )
    if history.loss:
        s = smoothed(history.loss, 100)
        log.info("stage %s: %d steps, loss %.4g -> %.4g (smoothed)", stage, len(history.loss), s[0], s[-1])
    return out / CHECKPOINT_NAME


def _stages(path: Path) -> list[str]:
    return ckpt.read_container(path)[1].get("stages", [])


def cmd_generate(config: Config, checkpoint: str, ref_image: str, source_clip: str, out: Path, seed: int) -> Path:
    models = load_trained(config, checkpoint)
    reference = sd.load_png(ref_image, 3)
    if reference.shape != (config.image_size, config.image_size, 3):
        raise DataError(f"reference image must be {config.image_size}x{config.image_size} RGB, got {reference.shape}")
    clip = sd.load_clip(source_clip)
    if len(clip.poses) != clip.n_frames:
        raise DataError(f"source clip has {clip.n_frames} frames but {len(clip.poses)} pose maps")
    frames = generate(models, reference, clip, config.sampling_steps, seed, config.sigma_cond, config.smoothing_window)
    write_frames(out, frames.numpy())
    write_config(out, config)
    return out


def write_frames(out: Path, frames: np.ndarray) -> None:
    fdir = out / "frames"
    fdir.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        sd._save_png(fdir / f"{i:04d}.png", f)


def read_video_dir(root: Path) -> dict[str, np.ndarray]:
    """Videos keyed by name: ``root/frames`` or ``root/<clip>/frames``."""
    def frames_of(d: Path) -> np.ndarray:
        files = sorted(d.glob("*.png"))
        return np.stack([sd.load_png(f, 3) for f in files])

    if (root / "frames").is_dir():
        return {root.name: frames_of(root / "frames")}
    videos = {d.name: frames_of(d / "frames") for d in sorted(root.iterdir()) if (d / "frames").is_dir()}
    if not videos:
        raise DataError(f"no frame directories under {root}")
    return videos


def cmd_evaluate(config: Config, generated_dir: str, reference_dir: str, out: Path) -> dict:
    gen = read_video_dir(Path(generated_dir))
    ref = read_video_dir(Path(reference_dir))
    if len(gen) == 1 and len(ref) == 1:
        names = [(next(iter(gen)), next(iter(ref)))]
    else:
        if set(gen) != set(ref):
            raise DataError(f"clip sets differ: {sorted(set(gen) ^ set(ref))}")
        names = [(k, k) for k in sorted(gen)]
    embedders = metrics.Embedders.seeded(config.eval_seed)
    try:
        values = metrics.evaluate([gen[a] for a, _ in names], [ref[b] for _, b in names], embedders)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    notes = ["config: " + json.dumps(config.to_dict(), sort_keys=True)]
    if values["FVD"] is None:
        notes.insert(0, f"video metrics N/A: clips shorter than {metrics.VIDEO_WINDOW} frames")
    text, csv_text = metrics.report(values, embedders.identifier, config.eval_seed, notes)
    metrics.write_report(out, text, csv_text)
    write_config(out, config)
    print(text, end="")
    return values


ABLATION_RUNS = (
    {"detail": False, "aug_pose": True},
    {"detail": True, "aug_pose": True},
    {"detail": True, "aug_pose": False},
    {"detail": False, "aug_pose": False},
)


def cmd_ablate(config: Config, out: Path, checkpoint: str, data: str | None = None, eval_data: str | None = None) -> dict:
    """Four matched diffusion runs over {detail encoder} x {augmented pose}.

    All runs start from the same codec checkpoint, model seed and data, so
    rows differ only in the toggles.  Evaluation generates every evaluation
    clip from its own reference image.
    """
    train_set = load_dataset(data or config.dataset_root)
    eval_set = load_dataset(eval_data) if eval_data else train_set
    src = checkpoint_file(checkpoint)
    if "codec" not in _stages(src):
        raise UsageError("ablate needs a codec checkpoint (--checkpoint)")
    embedders = metrics.Embedders.seeded(config.eval_seed)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out, config)
    rows = []
    for run in ABLATION_RUNS:
        models = build_models(config, config.seed)
        ckpt.load_models(src, models)
        models.aem.use_detail = run["detail"]
        models.prm.use_aug = run["aug_pose"]
        history = train(
            models, train_set, config.ablation_steps, lr=config.lr, stage="diffusion", seed=config.seed,
            n_frames=config.n_frames, sigma_cond=config.sigma_cond, smoothing_window=config.smoothing_window,
        )
        gen = [
            generate(models, c.reference, c, config.sampling_steps, config.seed, config.sigma_cond,
                     config.smoothing_window).numpy()
            for c in eval_set
        ]
        values = metrics.evaluate(gen, [c.frames for c in eval_set], embedders)
        row = {"semantic": True, "detail": run["detail"], "skeleton": True, "seg/dep/norm": run["aug_pose"], **values}
        row["final_loss"] = float(smoothed(history.loss, 100)[-1]) if history.loss else float("nan")
        rows.append(row)
    return write_ablation_tables(out, rows, embedders.identifier, config)


def write_ablation_tables(out: Path, rows: list[dict], embedder_id: str, config: Config) -> dict:
    notes = ["config: " + json.dumps(config.to_dict(), sort_keys=True)]
    t_app = [r for r in rows if r["seg/dep/norm"]]
    t_pose = [r for r in rows if r["detail"]]
    t_app.sort(key=lambda r: r["detail"])
    t_pose.sort(key=lambda r: r["seg/dep/norm"])
    outputs = {}
    for name, table, flags in (
        ("appearance", t_app, ("semantic", "detail")),
        ("pose", t_pose, ("skeleton", "seg/dep/norm")),
        ("grid", rows, ("detail", "seg/dep/norm")),
    ):
        text, csv_text = metrics.report(table, embedder_id, config.eval_seed, notes, flag_columns=flags)
        (out / f"ablation_{name}.txt").write_text(text, encoding="utf-8")
        (out / f"ablation_{name}.csv").write_text(csv_text, encoding="utf-8")
        outputs[name] = text
        print(f"== {name} ==\n{text}")
    return outputs


def cmd_stats(dataset_root: str, out: Path | None) -> tuple[str, str]:
    paths = sd.list_clips(dataset_root)
    if not paths:
        raise DataError(f"no clips found under {dataset_root}")
    counts = []
    for p in paths:
        meta = json.loads((p / "meta.json").read_text())
        counts.append(int(meta["N"]))
    hist = Counter(counts)
    top = max(hist.values())
    lines = ["frames  clips"]
    for n in sorted(hist):
        bar = "#" * max(1, round(40 * hist[n] / top))
        lines.append(f"{n:6d}  {hist[n]:5d} {bar}")
    text = "\n".join(lines) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_left", "bin_right", "count"])
    for n in sorted(hist):
        w.writerow([n, n + 1, hist[n]])
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "stats.txt").write_text(text)
        (out / "stats.csv").write_text(buf.getvalue())
    print(text, end="")
    return text, buf.getvalue()


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dancer", description="Pose-guided video diffusion at desk scale.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults used for missing fields)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--jitter", type=float, help="override keypoint jitter amplitude")

    t = sub.add_parser("train", parents=[common], help="train one stage")
    t.add_argument("--stage", choices=["codec", "diffusion"], help="training stage (default from config)")
    t.add_argument("--checkpoint", help="starting checkpoint (codec weights, or a run to resume)")
    t.add_argument("--data", help="dataset root (default from config)")

    g = sub.add_parser("generate", parents=[common], help="animate a reference image")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--ref", required=True, help="reference image PNG")
    g.add_argument("--source", required=True, help="clip directory providing pose maps")

    e = sub.add_parser("evaluate", parents=[common], help="score generated frames")
    e.add_argument("--generated", required=True)
    e.add_argument("--reference", required=True)

    a = sub.add_parser("ablate", parents=[common], help="2x2 conditioning ablation")
    a.add_argument("--checkpoint", required=True, help="codec checkpoint")
    a.add_argument("--data", help="training dataset root")
    a.add_argument("--eval-data", help="evaluation dataset root (default: training set)")

    st = sub.add_parser("stats", parents=[common], help="frame-count histogram")
    st.add_argument("dataset_root", nargs="?")
    return p


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = Config.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
        if args.command == "synth":
            config.data_seed = args.seed
    out = Path(args.out) if args.out else None
    apply_threads()
    cmd = args.command
    if cmd == "synth":
        if args.jitter is not None:
            config.jitter = args.jitter
        config.validate()
        cmd_synth(config, out or Path(config.dataset_root))
    elif cmd == "train":
        stage = args.stage or config.stage
        config.stage = stage
        cmd_train(config, out or Path("runs") / stage, stage, args.checkpoint, args.data)
    elif cmd == "generate":
        cmd_generate(config, args.checkpoint, args.ref, args.source, out or Path("generated"), config.seed)
    elif cmd == "evaluate":
        cmd_evaluate(config, args.generated, args.reference, out or Path(args.generated))
    elif cmd == "ablate":
        cmd_ablate(config, out or Path("ablation"), args.checkpoint, args.data, args.eval_data)
    elif cmd == "stats":
        cmd_stats(args.dataset_root or config.dataset_root, out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(f"dancer: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, SamplingError, FloatingPointError) as exc:
        print(f"dancer: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, ckpt.ContainerError, DimensionError, MissingModalityError, FileNotFoundError, sd.CanvasError, ValueError, OSError) as exc:
        print(f"dancer: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
