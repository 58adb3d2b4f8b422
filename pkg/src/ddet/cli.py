"""``ddet train | eval | ablate | bench``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import platform
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .checkpoint import checkpoint_load
from .config import RunConfig, apply_overrides, load_config, serialize_config
from .data import DegradeConfig, load_split, synthetic_pairs
from .errors import ConfigError, DDetError
from .metrics import CSV_HEADER
from .model import ModelConfig, ablation_configs, init_params
from .plotting import plot_ablation, plot_bench, plot_training_curve
from .train import bench_model, evaluate, mean_psnr, train, write_eval_csv

log = logging.getLogger("ddet")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file (defaults if omitted)")
    p.add_argument("--seed", type=int, help="overrides train.seed")
    p.add_argument("--out-dir", type=Path, help="overrides paths.out_dir")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")
    p.add_argument("--synthetic", action="store_true", help="generate degraded synthetic pairs instead of reading data_root")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ddet", description="Dual-path dynamic filtering super-resolution toolkit")
    parser.add_argument("--version", action="version", version=f"ddet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--steps", type=int, help="overrides train.steps")

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    _common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--split", help="overrides eval.split")
    p.add_argument("--model", choices=("ddet", "none"), default="ddet",
                   help="'none' scores the degraded input itself")
    p.add_argument("--dump-images", action="store_true")
    p.add_argument("--shave", type=int, help="overrides eval.shave")
    p.add_argument("--mode", choices=("y", "rgb"), help="overrides eval.mode")

    p = sub.add_parser("ablate", help="train and score the four ablation variants")
    _common(p)
    p.add_argument("--steps", type=int, help="overrides train.steps")
    p.add_argument("--shave", type=int, help="overrides eval.shave")

    p = sub.add_parser("bench", help="time forward passes and count parameters")
    _common(p)
    p.add_argument("--size", type=int, help="overrides bench.size")
    p.add_argument("--repeats", type=int, help="overrides bench.repeats")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    flag_map = {"seed": "train.seed", "steps": "train.steps", "split": "eval.split",
                "shave": "eval.shave", "mode": "eval.mode", "size": "bench.size",
                "repeats": "bench.repeats", "out_dir": "paths.out_dir"}
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    return apply_overrides(cfg, overrides)


def _train_pairs(cfg: RunConfig, synthetic: bool):
    if synthetic:
        return synthetic_pairs(cfg.train.synthetic_images, cfg.train.synthetic_size, cfg.degrade,
                               seed=cfg.train.seed)
    return load_split(cfg.paths.data_root, "train", cfg.degrade.scale)


def _eval_pairs(cfg: RunConfig, synthetic: bool, split: Optional[str] = None):
    if synthetic:
        held_out = dataclasses.replace(cfg.degrade, seed=cfg.degrade.seed + 7919)
        return synthetic_pairs(cfg.eval.synthetic_images, cfg.train.synthetic_size, held_out,
                               seed=cfg.train.seed + 104729)
    return load_split(cfg.paths.data_root, split or cfg.eval.split, cfg.degrade.scale)


def _metric_header(cfg: RunConfig) -> list[str]:
    space = "Y (BT.601 luma)" if cfg.eval.mode == "y" else "RGB"
    return [f"<!-- metrics: colour space {space}; border shave {cfg.eval.shave} px; range [0,1] -->"]


def cmd_train(cfg: RunConfig, synthetic: bool = False) -> int:
    out = Path(cfg.paths.out_dir) / "train"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(cfg))
    pairs = _train_pairs(cfg, synthetic)
    eval_pairs = _eval_pairs(cfg, synthetic)
    result = train(cfg.model, pairs, cfg.train, out_dir=out, eval_pairs=eval_pairs, eval_cfg=cfg.eval)
    if result.history:
        plot_training_curve(result.history, out / "train_curve.png")
    log.info("trained %d steps; final loss %.6g; checkpoints in %s",
             len(result.history), result.final_loss, out / "checkpoints")
    print(f"final_loss={result.final_loss:.9g} checkpoint={result.checkpoints[-1]}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, checkpoint: Optional[Path], model: str = "ddet", synthetic: bool = False,
             dump_images: bool = False) -> int:
    out = Path(cfg.paths.out_dir) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    pairs = _eval_pairs(cfg, synthetic)
    if model == "none":
        params, model_cfg, label = None, None, "identity passthrough"
    else:
        if checkpoint is None:
            raise UsageError("eval needs --checkpoint (or --model none)")
        template = init_params(cfg.model, 0)
        params, _ = checkpoint_load(checkpoint, template=template)
        model_cfg, label = cfg.model, str(checkpoint)
    records = evaluate(params, model_cfg, pairs, cfg.eval,
                       dump_dir=out / "images" if dump_images else None)
    split = "synthetic" if synthetic else cfg.eval.split
    write_eval_csv(records, out / f"eval_{split}.csv")
    mp = mean_psnr(records)
    ms = float(np.mean([r.ssim for r in records]))
    summary = _metric_header(cfg) + [
        f"# Evaluation: {label}",
        "",
        "| Split | Images | PSNR (dB) | SSIM |",
        "|---|---|---|---|",
        f"| {split} | {len(records)} | {mp:.10f} | {ms:.10f} |",
    ]
    (out / f"summary_{split}.md").write_text("\n".join(summary) + "\n")
    print(f"mean_psnr_db={mp:.10f} mean_ssim={ms:.10f} images={len(records)}")
    return EXIT_OK


def ablation_table(rows: Sequence[tuple], cfg: RunConfig) -> str:
    lines = _metric_header(cfg) + [
        f"<!-- budget: {cfg.train.steps} steps, batch {cfg.train.batch}, patch {cfg.train.patch}, "
        f"lr {cfg.train.lr!r} ({cfg.train.lr_schedule}, warmup {cfg.train.warmup_steps}), seed {cfg.train.seed} -->",
        "| Algorithm | PSNR (dB) |",
        "|---|---|",
    ]
    lines += [f"| {label} | {value:.4f} |" for label, value in rows]
    return "\n".join(lines) + "\n"


def cmd_ablate(cfg: RunConfig, synthetic: bool = False) -> int:
    out = Path(cfg.paths.out_dir) / "ablate"
    out.mkdir(parents=True, exist_ok=True)
    pairs = _train_pairs(cfg, synthetic)
    eval_pairs = _eval_pairs(cfg, synthetic)
    rows = []
    csv = ["variant,kernel_sizes,use_cdm,use_pr,psnr_db"]
    for label, mcfg in ablation_configs(cfg.model).items():
        tag = label.replace("/ ", "").replace(" ", "_").lower() + "_"
        result = train(mcfg, pairs, cfg.train, out_dir=out, eval_pairs=(), tag=tag)
        value = mean_psnr(evaluate(result.params, mcfg, eval_pairs, cfg.eval))
        rows.append((label, value))
        csv.append(f"{label},{' '.join(map(str, mcfg.kernel_sizes))},{mcfg.use_cdm},{mcfg.use_pr},{value:.9g}")
        log.info("%s: %.4f dB", label, value)
    (out / "ablation.md").write_text(ablation_table(rows, cfg))
    (out / "ablation.csv").write_text("\n".join(csv) + "\n")
    plot_ablation(rows, out / "ablation.png", mode=cfg.eval.mode)
    plain, full = rows[0][1], rows[-1][1]
    if full < plain:
        log.warning("full model (%.4f dB) scored below the plain KPN baseline (%.4f dB) at this budget",
                    full, plain)
    print(ablation_table(rows, cfg), end="")
    return EXIT_OK


def bench_configs(cfg: RunConfig) -> dict[str, ModelConfig]:
    out = {}
    for name in (n.strip() for n in cfg.bench.models.split(",") if n.strip()):
        if name == "ddet":
            out["DDet"] = cfg.model
        elif name.startswith("kpn") and name[3:].isdigit():
            k = int(name[3:])
            out[f"KPN(K={k})"] = ModelConfig.kpn(k, num_res_blocks=cfg.model.num_res_blocks,
                                                  base_channels=cfg.model.base_channels,
                                                  input_channels=cfg.model.input_channels)
        else:
            raise ConfigError(f"bench.models: unknown model {name!r} (use ddet or kpnK)")
    return out


def bench_table(rows, cfg: RunConfig, with_timing: bool = True) -> str:
    machine = f"{platform.machine()} / {platform.processor() or 'unknown cpu'} / python {platform.python_version()} / numpy {np.__version__}"
    lines = [
        f"<!-- machine: {machine} -->",
        f"<!-- input 1x3x{cfg.bench.size}x{cfg.bench.size}, median of {cfg.bench.repeats} forwards "
        f"after {cfg.bench.warmup} warm-ups; MB = 1e6 bytes of fp32 parameters -->",
        "| Model | Time(s) / Frame | Parameter(MB) | Parameters | PSNR(dB) |",
        "|---|---|---|---|---|",
    ]
    for r in rows:
        t = f"{r.seconds_per_frame:.4f}" if with_timing else "-"
        lines.append(f"| {r.name} | {t} | {r.megabytes:.2f} | {r.elements} | - |")
    return "\n".join(lines) + "\n"


def cmd_bench(cfg: RunConfig) -> int:
    out = Path(cfg.paths.out_dir) / "bench"
    out.mkdir(parents=True, exist_ok=True)
    rows = [bench_model(name, mcfg, cfg.bench.size, cfg.bench.repeats, cfg.bench.warmup, cfg.train.seed)
            for name, mcfg in bench_configs(cfg).items()]
    table = bench_table(rows, cfg)
    (out / "bench.md").write_text(table)
    plot_bench(rows, out / "bench.png")
    print(table, end="")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"ddet: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "train":
            return cmd_train(cfg, args.synthetic)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.model, args.synthetic, args.dump_images)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.synthetic)
        return cmd_bench(cfg)
    except (UsageError, ConfigError) as exc:
        print(f"ddet: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DDetError, OSError) as exc:
        print(f"ddet: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
