"""
Command-line entry point: `python -m app <subcommand> ...`

Subcommands: prepare, train, eval, analyze, bench, fetch.
Exit codes: 0 ok, 2 configuration error, 3 data/output error, 4 runtime error.
"""
import os
import sys
import logging
import argparse
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from .models import config
from .models.schemas import BenchSpec, TrainConfig
from .core import engine
from .core.errors import ConfigError, DataError, DegreeMixError, NumericalError

logger = logging.getLogger("app")


def _add_model_flags(parser: argparse.ArgumentParser, model) -> None:
    """One `--<field>` flag per config field; values are validated by the model."""
    group = parser.add_argument_group(f"{model.__name__} overrides")
    for name, info in model.model_fields.items():
        default = info.default if info.default is not None else "none"
        help_text = (info.description + "; " if info.description else "") + f"default {default}"
        group.add_argument(f"--{name}", dest=f"cfg_{name}", default=None, metavar="V",
                           help=help_text.replace("%", "%%"))


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}


def _read_text(path: Optional[str]) -> Optional[str]:
    if not path:
        return None
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m app",
                                     description="Degree-aware knowledge graph completion toolkit.")
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="logging level (default from env)")
    parser.add_argument("--quiet", action="store_true", help="disable progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="index raw splits and write degree summaries")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("train", help="train a model",
                       epilog=f"Locally chosen defaults: {config.UNDOCUMENTED_DEFAULTS}.")
    p.add_argument("--dataset", required=True, help="directory written by `prepare`")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--preset", choices=sorted(config.PRESETS))
    p.add_argument("--ablation", choices=sorted(config.ABLATIONS))
    p.add_argument("--force", action="store_true")
    _add_model_flags(p, TrainConfig)

    p = sub.add_parser("eval", help="filtered ranking metrics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--compare", help="second checkpoint for a paired t-test")
    p.add_argument("--bins", default="degree", choices=["degree", "table2", "stratify"],
                   help="degree (alias table2): zero/low/medium/high bins; stratify: finer strata")
    p.add_argument("--tie-mode", default="mean", choices=["mean", "optimistic", "pessimistic"])
    p.add_argument("--split", default="test", choices=["valid", "test"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("analyze", help="calibration, distances, stratification and expansion checks")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--degree_threshold", type=float, help="default: value stored in the checkpoint")
    p.add_argument("--synth_per_triple", type=int)
    p.add_argument("--mix_alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--taylor-pairs", type=int, default=100)
    p.add_argument("--ece-quantiles", type=int, help="bin ECE by confidence quantiles instead of degree")
    p.add_argument("--tie-mode", default="mean", choices=["mean", "optimistic", "pessimistic"])
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("bench", help="generate a synthetic degree-skewed benchmark")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="flat key = value file with BenchSpec keys")
    p.add_argument("--force", action="store_true")
    _add_model_flags(p, BenchSpec)

    p = sub.add_parser("fetch", help="download train/valid/test splits")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--url", help="base URL (default DEGREEMIX_DATA_URL)")
    p.add_argument("--force", action="store_true")
    return parser


def run(args: argparse.Namespace, argv: List[str]) -> List[str]:
    progress = not args.quiet
    if args.command == "prepare":
        return engine.prepare_dataset(args.data_dir, args.out_dir, args.force, argv)
    if args.command == "train":
        cfg = engine.build_train_config(_read_text(args.config), args.config or "<flags>",
                                        args.preset, args.ablation, _overrides(args))
        extra = [args.config] if args.config else []
        return engine.run_train(args.dataset, args.out_dir, cfg, args.force, progress, argv, extra)
    if args.command == "eval":
        return engine.run_eval(args.dataset, args.checkpoint, args.out_dir, args.compare, args.bins,
                               args.tie_mode, args.split, args.force, progress, argv)
    if args.command == "analyze":
        return engine.run_analyze(args.dataset, args.checkpoint, args.out_dir, args.degree_threshold,
                                  args.synth_per_triple, args.mix_alpha, args.seed, args.taylor_pairs,
                                  args.ece_quantiles, args.tie_mode, args.force, progress, argv)
    if args.command == "bench":
        text = _read_text(args.config)
        spec = BenchSpec.from_flat_text(text or "", args.config or "<flags>", _overrides(args))
        return engine.run_bench(spec, args.out_dir, args.force, argv)
    if args.command == "fetch":
        return engine.run_fetch(args.out_dir, args.url, args.force, argv)
    raise ConfigError(f"unknown command {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=str(args.log_level).upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        paths = run(args, argv)
    except (ConfigError, ValidationError) as e:
        logger.error(f"Configuration error: {e}")
        return config.EXIT_CONFIG
    except DataError as e:
        logger.error(f"Data error: {e}")
        return config.EXIT_DATA
    except (NumericalError, DegreeMixError) as e:
        logger.error(f"Runtime error: {e}")
        return config.EXIT_RUNTIME
    except ValueError as e:
        logger.error(f"Runtime error: {e}")
        return config.EXIT_RUNTIME
    logger.info(f"{args.command} finished; wrote {len(paths)} files")
    return config.EXIT_OK
