"""Command line: gen-data, train, eval, spot, render.

Every command takes ``--config`` (a JSON RunConfig); flags override config
fields.  Exit status is 0 on success and 1 when an input or contract error
is raised.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .data import (AnnotationParseError, AnnotationValidationError, ConfigError, DiskDataset, SynthConfig,
                   SyntheticDataset, list_frames, read_annotations, read_ppm, save_video, write_annotations,
                   write_ppm)
from .metrics import MetricError, evaluate, format_report
from .model import VideoTextSpotter, VocabularyError
from .render import render_frame
from .train import RunConfig, Trainer, TrainingError, predict_video
from .tracker import spot_video, trajectories_to_frames

log = logging.getLogger("vtspot")

DATASET_MANIFEST = "dataset.json"
VAL_SEED_OFFSET = 1_000_003


class CliError(Exception):
    """Input or contract violation reported to the user with exit status 1."""


class CompatibilityError(CliError):
    pass


def _load_config(args) -> RunConfig:
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    overrides = {"seed": args.seed, "tau": getattr(args, "tau", None), "steps": getattr(args, "steps", None),
                 "clip_len": getattr(args, "clip_len", None), "lr": getattr(args, "lr", None),
                 "n_train": getattr(args, "n_train", None), "n_val": getattr(args, "n_val", None)}
    for k, v in overrides.items():
        if v is not None:
            base[k] = v
    cfg = RunConfig.from_dict(base)
    if args.seed is not None:
        cfg.model.seed = args.seed
        cfg.synth.seed = args.seed
    return cfg


def _prepare_out(path: Path, force: bool):
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        if not force:
            raise CliError(f"{path} exists and is not empty (use --force to overwrite)")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    path.mkdir(parents=True, exist_ok=True)


def _check_frames(frames: list[np.ndarray], where):
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise CliError(f"{where}: inconsistent frame resolutions {sorted(shapes)}")
    _, h, w = frames[0].shape
    if h % 8 or w % 8:
        raise CliError(f"{where}: resolution {h}x{w} is not divisible by 8")


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    _prepare_out(out, args.force)
    seeds = {"train": cfg.synth.seed, "val": cfg.synth.seed + VAL_SEED_OFFSET}
    splits = {"train": SyntheticDataset(cfg.synth, cfg.n_train, seeds["train"], prefix="train"),
              "val": SyntheticDataset(cfg.synth, cfg.n_val, seeds["val"], length=cfg.val_len, prefix="val")}
    for name, ds in splits.items():
        (out / name).mkdir()
        for i in range(len(ds)):
            video = ds.video(i)
            save_video(video, out / name / video.video_id)
    manifest = {"format": "vtspot-dataset", "version": 1, "seeds": seeds,
                "n_train": cfg.n_train, "n_val": cfg.n_val, "val_len": cfg.val_len,
                "synth": cfg.to_dict()["synth"]}
    (out / DATASET_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {cfg.n_train} train and {cfg.n_val} val videos to {out}")
    return 0


def _dataset_split(data_dir: Path, split: str) -> DiskDataset:
    if not (data_dir / DATASET_MANIFEST).exists():
        raise CliError(f"{data_dir}: no {DATASET_MANIFEST}; run gen-data first")
    ds = DiskDataset(data_dir / split)
    return ds


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data_dir = Path(args.data)
    ds = _dataset_split(data_dir, "train")
    if len(ds) == 0:
        raise CliError(f"{data_dir}/train holds no videos")
    out = Path(args.out)
    ckpt = out / "checkpoint.json"
    resume = args.resume and ckpt.exists()
    if not resume:
        _prepare_out(out, args.force)
    cfg.data_dir, cfg.out_dir = str(data_dir), str(out)
    (out / "run_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    model = VideoTextSpotter(cfg.model)
    trainer = Trainer(model, ds, cfg)
    if resume:
        trainer.restore(ckpt)
        log.info("resumed at step %d", trainer.step_count)
    trainer.run(out)
    print(f"trained {trainer.step_count} steps; checkpoint at {ckpt}")
    return 0


def _check_vocab(model: VideoTextSpotter, cfg: RunConfig | None, videos):
    vocab = set(model.config.alphabet)
    if cfg is not None and set(cfg.model.alphabet) != vocab:
        raise CompatibilityError(f"checkpoint alphabet {model.config.alphabet!r} differs from config "
                                 f"alphabet {cfg.model.alphabet!r}")
    for video in videos:
        for insts in video.annotations:
            for inst in insts:
                if set(inst.text) - vocab:
                    raise CompatibilityError(f"{video.video_id}: text {inst.text!r} has symbols outside the "
                                             f"checkpoint vocabulary {model.config.alphabet!r}")


def cmd_eval(args) -> int:
    cfg = _load_config(args) if args.config else None
    tau = args.tau if args.tau is not None else (cfg.tau if cfg else 0.5)
    model = VideoTextSpotter.load(args.checkpoint)
    ds = _dataset_split(Path(args.data), args.split)
    videos = [ds.video(i) for i in range(len(ds))]
    _check_vocab(model, cfg, videos)
    gts, preds = [], []
    for video in videos:
        _check_frames([video.frame(0)], video.directory)
        gts.append(video.annotations)
        preds.append(predict_video(model, video, tau))
    report = evaluate(gts, preds)
    text = format_report(report)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        (out / "report.txt").write_text(text + "\n")
    return 0


def cmd_spot(args) -> int:
    cfg = _load_config(args) if args.config else None
    tau = args.tau if args.tau is not None else (cfg.tau if cfg else 0.5)
    model = VideoTextSpotter.load(args.checkpoint)
    frames_dir = Path(args.frames)
    paths = list_frames(frames_dir)
    if not paths:
        raise CliError(f"{frames_dir}: no .ppm frames")
    frames = [read_ppm(p) for p in paths]
    _check_frames(frames, frames_dir)
    tracks = spot_video(frames, model, tau=tau, patience=args.patience)
    out = Path(args.out)
    if out.exists() and not args.force:
        raise CliError(f"{out} exists (use --force to overwrite)")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_annotations(out, {frames_dir.name: trajectories_to_frames(tracks, len(frames))}, with_scores=True)
    print(f"{len(tracks)} trajectories over {len(frames)} frames written to {out}")
    return 0


def cmd_render(args) -> int:
    frames_dir = Path(args.frames)
    paths = list_frames(frames_dir)
    if not paths:
        raise CliError(f"{frames_dir}: no .ppm frames")
    videos = read_annotations(args.trajectories)
    if len(videos) > 1:
        if frames_dir.name not in videos:
            raise CliError(f"trajectory file has several videos and none named {frames_dir.name!r}")
        seq = videos[frames_dir.name]
    else:
        seq = next(iter(videos.values()), [])
    last = max((t for t, insts in enumerate(seq) if insts), default=-1)
    if last >= len(paths):
        raise AnnotationValidationError(f"trajectory references frame {last}, but {frames_dir} has "
                                        f"{len(paths)} frames")
    out = Path(args.out)
    _prepare_out(out, args.force)
    for t, p in enumerate(paths):
        insts = seq[t] if t < len(seq) else []
        if insts:
            write_ppm(out / p.name, render_frame(read_ppm(p), insts))
        else:
            shutil.copyfile(p, out / p.name)
    print(f"rendered {len(paths)} frames to {out}")
    return 0


# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vtspot", description="End-to-end video text spotting at desk scale.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--force", action="store_true", help="overwrite existing output")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p, "dataset directory")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    common(p, "run directory")
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--clip-len", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for report.json / report.txt")
    p.add_argument("--force", action="store_true")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spot", help="spot text in a directory of frames")
    common(p, "output trajectory JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--patience", type=int, default=0)
    p.set_defaults(func=cmd_spot)

    p = sub.add_parser("render", help="draw trajectories onto frames")
    common(p, "output frame directory")
    p.add_argument("--frames", required=True)
    p.add_argument("--trajectories", required=True)
    p.set_defaults(func=cmd_render)
    return parser


ERRORS = (CliError, ConfigError, ValueError, CheckpointError, AnnotationParseError, AnnotationValidationError,
          VocabularyError, MetricError, TrainingError, FileNotFoundError, json.JSONDecodeError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
