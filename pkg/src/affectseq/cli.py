"""Command-line interface.

Subcommands: train, eval, sweep-mask, gen-synthetic, inspect. Any config
key can be overridden with --section.key value. Exit codes: 0 success,
2 config error, 3 data/format error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import struct
import sys
from pathlib import Path

from affectseq import config as cfgmod
from affectseq import features, metrics, synth, train
from affectseq.checkpoint import load_checkpoint
from affectseq.errors import (
    ConfigError,
    FormatError,
    InsufficientDataError,
    NumericError,
    ParseError,
    StorageError,
    ValidationError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _limit_threads(enabled: bool):
    """Best-effort single-BLAS-thread context for bit-exact runs."""
    if not enabled:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    except ImportError:
        return contextlib.nullcontext()


def _cmd_train(args, overrides) -> int:
    cfg = cfgmod.load_train_config(args.config, overrides)
    with _limit_threads(cfg.single_thread):
        result = train.train(cfg, resume_from=args.resume)
    print(f"trained {result.steps_run} steps")
    print(f"last checkpoint: {result.last_ckpt}")
    if result.best_ckpt:
        print(f"best checkpoint: {result.best_ckpt} (metric {result.best_metric:.6f})")
    print(f"log: {result.log_path}")
    return EXIT_OK


def _cmd_eval(args, overrides) -> int:
    if overrides:
        raise ConfigError(f"eval takes no config overrides, got {sorted(overrides)}")
    report = train.evaluate(
        args.ckpt, args.data, task=args.task, per_video=args.per_video, compat=args.compat
    )
    sys.stdout.write(metrics.report_to_text(report))
    if args.report:
        Path(args.report).write_text(metrics.report_to_csv(report))
    if args.pred_dir:
        train.export_predictions(args.ckpt, args.data, args.pred_dir)
    return EXIT_OK


def _cmd_sweep(args, overrides) -> int:
    cfg = cfgmod.load_train_config(args.config, overrides)
    try:
        p_values = [float(p) for p in args.p.split(",") if p.strip() != ""]
    except ValueError as e:
        raise ConfigError(f"bad --p list {args.p!r}: {e}") from e
    if not p_values:
        raise ConfigError("--p must list at least one masking probability")
    with _limit_threads(cfg.single_thread):
        rows = train.sweep_mask(cfg, p_values)
    out = Path(args.out) if args.out else Path(cfg.ckpt_dir or ".") / "sweep.csv"
    with open(out, "w") as fh:
        fh.write("p,metric\n")
        for p, m in rows:
            fh.write(f"{p:g},{m!r}\n")
    for p, m in rows:
        print(f"p={p:g}  metric={m:.6f}")
    print(f"sweep table: {out}")
    return EXIT_OK


def _cmd_gen(args, overrides) -> int:
    spec = cfgmod.load_synth_spec(args.spec, overrides)
    ids = synth.generate(spec, args.out)
    print(f"wrote {len(ids)} video(s) to {args.out}")
    return EXIT_OK


def _cmd_inspect(args, overrides) -> int:
    if overrides:
        raise ConfigError(f"inspect takes no config overrides, got {sorted(overrides)}")
    path = Path(args.path)
    try:
        head = path.open("rb").read(4)
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    if head == features.MAGIC:
        try:
            raw = path.read_bytes()
            magic, version, dim, frames = struct.unpack_from("<4sIIQ", raw)
        except struct.error as e:
            raise FormatError(f"{path}: truncated header: {e}") from e
        print(f"feature file: {path.name}")
        print(f"  version: {version}")
        print(f"  dim:     {dim}")
        print(f"  frames:  {frames}")
        print(f"  payload: {len(raw) - 20} bytes ({'ok' if len(raw) - 20 == 4 * dim * frames else 'MISMATCH'})")
        return EXIT_OK
    ck = load_checkpoint(path)
    print(f"checkpoint: {path.name}")
    print(f"  task:    {ck.model_cfg.task}")
    print(f"  model:   d_model={ck.model_cfg.d_model} heads={ck.model_cfg.n_heads} "
          f"layers={ck.model_cfg.n_layers} d_ff={ck.model_cfg.d_ff} dim_in={ck.model_cfg.dim_in}")
    n_params = sum(p.size for p in ck.params.values())
    print(f"  tensors: {len(ck.params)} ({n_params} parameters)")
    if ck.opt_state is not None:
        print(f"  optimizer state: step {ck.opt_state.t}")
    if ck.extra:
        print(f"  extra:   {ck.extra}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affectseq", allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", allow_abbrev=False, help="train a model")
    p_train.add_argument("--config", default=None, help="INI config file")
    p_train.add_argument("--resume", default=None, help="checkpoint to resume from")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", allow_abbrev=False, help="evaluate a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True, help="labeled corpus directory")
    p_eval.add_argument("--task", default=None)
    p_eval.add_argument("--per-video", action="store_true", help="average CCC per video")
    p_eval.add_argument("--compat", action="store_true",
                        help="use the printed-form CCC numerator (comparison only)")
    p_eval.add_argument("--report", default=None, help="write the report CSV here")
    p_eval.add_argument("--pred-dir", default=None, help="export per-video prediction CSVs")
    p_eval.set_defaults(func=_cmd_eval)

    p_sweep = sub.add_parser("sweep-mask", allow_abbrev=False,
                             help="train once per masking probability")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--p", required=True, help="comma-separated probabilities")
    p_sweep.add_argument("--out", default=None, help="sweep CSV path")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_gen = sub.add_parser("gen-synthetic", allow_abbrev=False,
                           help="generate a synthetic corpus")
    p_gen.add_argument("--spec", default=None, help="INI config file ([synth] section)")
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=_cmd_gen)

    p_inspect = sub.add_parser("inspect", allow_abbrev=False,
                               help="describe a feature file or checkpoint")
    p_inspect.add_argument("path")
    p_inspect.set_defaults(func=_cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, unknown = parser.parse_known_args(argv)
    try:
        overrides = cfgmod.parse_overrides(unknown)
        return args.func(args, overrides)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, StorageError, ParseError, InsufficientDataError, ValidationError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
