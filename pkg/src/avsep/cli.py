"""Command-line entry points.

Subcommands: synth-data, train, eval, separate, report. Every failure
path exits nonzero with a category-prefixed message on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .codec import Waveform, read_wav, write_wav
from .data import Manifest, generate_toy_corpus, load_specs, split_manifest
from .errors import AvsepError, ConfigError, DataError, InvalidInputError
from .evaluation import (drop_rate_summary, evaluate_specs, format_drop_table,
                         format_report_table, load_report, model_separate_fn,
                         save_report)
from .separator import SeparationModel, SeparatorConfig, parameter_breakdown
from .training import TrainConfig, train
from .visual import VisualFeatures, read_visual_features


def load_config_file(path) -> tuple[SeparatorConfig, TrainConfig]:
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for key in raw:
        if key not in ("separator", "train"):
            raise ConfigError(f"{key}: unknown config section")
    sep = SeparatorConfig.from_dict(raw.get("separator", {}), where="separator")
    trn = TrainConfig.from_dict(raw.get("train", {}), where="train")
    return sep, trn


def cmd_synth_data(args) -> int:
    manifest_path = generate_toy_corpus(
        args.out, n_speakers=args.speakers, utts_per_speaker=args.utts, seed=args.seed,
        duration=args.duration, sample_rate=args.sample_rate, fps=args.fps,
        visual_dim=args.visual_dim)
    print(f"wrote {manifest_path}")
    if args.val_utts:
        manifest = Manifest.load(manifest_path)
        train_m, val_m = split_manifest(manifest, args.val_utts)
        train_path = manifest_path.parent / "manifest_train.jsonl"
        val_path = manifest_path.parent / "manifest_val.jsonl"
        train_m.save(train_path)
        val_m.save(val_path)
        print(f"wrote {train_path}")
        print(f"wrote {val_path}")
    return 0


def cmd_train(args) -> int:
    sep_cfg, train_cfg = load_config_file(args.config)
    if args.seed is not None:
        train_cfg.seed = args.seed
    torch.manual_seed(train_cfg.seed)
    model = SeparationModel(sep_cfg)
    result = train(model, train_cfg,
                   log_fn=lambda row: print(
                       f"epoch {row['epoch']:>3}  train {row['train_loss']:8.3f}  "
                       f"val {row['val_loss']:8.3f}  lr {row['lr']:.2e}"))
    print(f"best val loss {result.best_val_loss:.3f} after {result.epochs_run} epochs")
    print(f"best checkpoint: {result.best_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    if args.threads is not None:
        torch.set_num_threads(args.threads)
    model = ckpt.load_model(args.checkpoint)
    manifest = Manifest.load(args.manifest)
    specs = load_specs(args.spec)
    report = evaluate_specs(model_separate_fn(model), manifest, specs,
                            clip_seconds=args.clip_seconds, fps=args.fps,
                            sample_rate=args.sample_rate)
    table = format_report_table(report)
    if args.out:
        save_report(report, args.out)
        Path(args.out).with_suffix(".txt").write_text(table)
        print(f"wrote {args.out}")
    print(table, end="")
    return 0


def cmd_separate(args) -> int:
    if args.threads is not None:
        torch.set_num_threads(args.threads)
    model = ckpt.load_model(args.checkpoint)
    if len(args.visual) > args.n_speakers:
        raise InvalidInputError(
            f"{len(args.visual)} visual files for {args.n_speakers} speakers")
    mix = read_wav(args.mix, expected_rate=args.sample_rate)
    visuals = None
    if args.visual:
        rows = [read_visual_features(p, fps=args.fps).data[0] for p in args.visual]
        t_v = min(r.shape[0] for r in rows)
        visuals = VisualFeatures(np.stack([r[:t_v] for r in rows]), fps=args.fps)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    estimates = model.separate(mix, visuals, args.n_speakers)
    for i, est in enumerate(estimates, 1):
        tag = "guided" if i <= len(args.visual) else "unguided"
        path = out_dir / f"est{i:02d}_{tag}.wav"
        write_wav(path, est)
        print(f"wrote {path}")
    return 0


def cmd_report(args) -> int:
    if args.params:
        sep_cfg = SeparatorConfig() if args.config is None else load_config_file(args.config)[0]
        model = SeparationModel(sep_cfg)
        breakdown = parameter_breakdown(model)
        for name, count in breakdown.items():
            print(f"{name:>24}: {count:>12,}")
        print(f"FFN width ({sep_cfg.ffn}) and head count ({sep_cfg.heads}) are "
              "package defaults, not externally fixed values; both are config fields, "
              "and the total shifts accordingly if you change them.")
        if not args.reports:
            return 0
    if not args.reports:
        raise InvalidInputError("no report files given (and --params not requested)")
    sections = []
    for path in args.reports:
        report = load_report(path)
        sections.append(f"== {path} ==\n{format_report_table(report)}")
        drops = drop_rate_summary(report)
        if drops:
            sections.append(f"-- drop rates ({path}) --\n{format_drop_table(drops)}")
    text = "\n".join(sections)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avsep",
                                     description="Multi-speaker audio-visual separation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic toy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=10)
    p.add_argument("--utts", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=6.0)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--visual-dim", type=int, default=64)
    p.add_argument("--val-utts", type=int, default=0,
                   help="also write train/val split manifests holding out this "
                        "many utterances per speaker")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a separation model")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a spec file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--clip-seconds", type=float, default=6.0)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("separate", help="separate one mixture WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mix", required=True)
    p.add_argument("--visual", nargs="*", default=[],
                   help="VFEA files; their order fixes the guided stream order")
    p.add_argument("--n-speakers", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("report", help="render report tables and drop rates")
    p.add_argument("reports", nargs="*")
    p.add_argument("--out", default=None)
    p.add_argument("--params", action="store_true",
                   help="print the parameter-count breakdown for a config")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AvsepError as exc:
        print(f"{exc.category} error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
