"""Command-line pipeline: synthesize, train, evaluate, predict, gradcheck.

Every command with a fixed seed and fixed inputs writes byte-identical
artifacts (checkpoint, report CSV, manifest), which is why the report's
per-epoch seconds column is zeroed unless --timing is passed. Exit codes
are scriptable: 0 success, 1 configuration error, 2 data or file error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import data as data_mod
from . import model as model_mod
from .autodiff import grad_check
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericError,
)
from .fileio import atomic_write_text
from .model import ModelConfig, build_forward, forward, init_params, load_params, save_params
from .tensor import RngState
from .training import TrainConfig, evaluate, export_report, train

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

log = logging.getLogger("tsformer")


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors map to the config exit code."""

    def error(self, message):
        raise ConfigError(message)


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="input CSV path")
    p.add_argument("--target", help="target column name")
    p.add_argument("--features", help="comma-separated feature columns (default: all)")
    p.add_argument("--window", type=int, default=16, help="time steps per window")
    p.add_argument("--horizon", type=int, default=1, help="steps ahead to predict")
    p.add_argument("--d-model", type=int, default=32, dest="d_model")
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--ffn-hidden", type=int, default=128, dest="ffn_hidden")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--no-pe", action="store_true", dest="no_pe",
                   help="disable positional encoding")
    p.add_argument("--residual", action="store_true",
                   help="enable residual connections")
    p.add_argument("--train-frac", type=float, default=0.8, dest="train_frac",
                   help="fraction of windows used for training; 1.0 skips validation")
    p.add_argument("--grad-clip", type=float, default=None, dest="grad_clip",
                   help="global L2 gradient norm cap")
    p.add_argument("--out", default="model.tstm", help="checkpoint path")
    p.add_argument("--report", default="train_report.csv", help="per-epoch metrics CSV")
    p.add_argument("--attn-out", dest="attn_out", help="directory for attention CSVs")
    p.add_argument("--denorm", action="store_true",
                   help="report on the original target scale")


def build_parser() -> _Parser:
    parser = _Parser(prog="tsformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[], help="train and write artifacts")
    _add_shared_flags(p_train)
    p_train.add_argument("--timing", action="store_true",
                         help="record real wall-clock seconds in the report "
                              "(artifacts are then not byte-reproducible)")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a CSV")
    _add_shared_flags(p_eval)

    p_pred = sub.add_parser("predict", help="predict one value from the last window")
    _add_shared_flags(p_pred)

    p_grad = sub.add_parser("gradcheck", help="verify backprop against finite differences")
    _add_shared_flags(p_grad)
    p_grad.add_argument("--input-dim", type=int, default=3, dest="input_dim")
    p_grad.set_defaults(window=4, d_model=8, heads=2, ffn_hidden=16)

    p_synth = sub.add_parser("synth", help="write a synthetic series CSV")
    _add_shared_flags(p_synth)
    p_synth.add_argument("--kind", choices=("sine", "ar1"), default="sine")
    p_synth.add_argument("--n", type=int, default=200)
    p_synth.add_argument("--period", type=float, default=40.0)
    p_synth.add_argument("--noise", type=float, default=0.0)
    p_synth.add_argument("--coeff", type=float, default=0.9)
    p_synth.set_defaults(out="synth.csv")
    return parser


def _load_series(args) -> data_mod.RawSeries:
    if not args.data:
        raise ConfigError("--data is required for this command")
    if not args.target:
        raise ConfigError("--target is required for this command")
    features = args.features.split(",") if args.features else None
    return data_mod.load_csv(args.data, args.target, features)


def _model_config(args, input_dim: int) -> ModelConfig:
    return ModelConfig(
        window_len=args.window,
        input_dim=input_dim,
        model_dim=args.d_model,
        n_heads=args.heads,
        ffn_hidden=args.ffn_hidden,
        n_blocks=args.blocks,
        use_positional_encoding=not args.no_pe,
        use_residual=args.residual,
        seed=args.seed,
    )


def _norm_extra(normalizer: data_mod.Normalizer, features: list[str], horizon: int) -> dict[str, str]:
    return {
        "pipeline.features": json.dumps(features),
        "pipeline.target": json.dumps(normalizer.target),
        "pipeline.horizon": json.dumps(horizon),
        "norm.columns": json.dumps(normalizer.columns),
        "norm.means": json.dumps([f"{v:.17g}" for v in normalizer.means]),
        "norm.stds": json.dumps([f"{v:.17g}" for v in normalizer.stds]),
    }


def _normalizer_from_extra(extra: dict[str, str]) -> data_mod.Normalizer | None:
    if "norm.columns" not in extra:
        return None
    return data_mod.Normalizer(
        columns=json.loads(extra["norm.columns"]),
        means=np.array([float(v) for v in json.loads(extra["norm.means"])]),
        stds=np.array([float(v) for v in json.loads(extra["norm.stds"])]),
        target=json.loads(extra["pipeline.target"]),
    )


def cmd_train(args) -> int:
    series = _load_series(args)
    frac = None if args.train_frac >= 1.0 else args.train_frac
    train_ds, val_ds, normalizer = data_mod.prepare_datasets(
        series, args.window, args.horizon, frac
    )
    mconfig = _model_config(args, input_dim=len(series.features))
    tconfig = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch,
        optimizer=args.optimizer,
        grad_clip=args.grad_clip,
        seed=args.seed,
    )
    clock = time.perf_counter if args.timing else (lambda: 0.0)
    log.info("training on %d windows (%d validation)", len(train_ds.windows),
             len(val_ds.windows) if val_ds else 0)
    params, report = train(train_ds, val_ds, mconfig, tconfig, clock=clock)

    extra = _norm_extra(normalizer, series.features, args.horizon)
    save_params(params, mconfig, args.out, extra)
    export_report(report, args.report)
    manifest_path = args.out + ".manifest.json"
    manifest = {
        "command": "train",
        "data": args.data,
        "target": args.target,
        "features": series.features,
        "window": args.window,
        "horizon": args.horizon,
        "d_model": args.d_model,
        "heads": args.heads,
        "blocks": args.blocks,
        "ffn_hidden": args.ffn_hidden,
        "epochs": args.epochs,
        "lr": args.lr,
        "batch": args.batch,
        "optimizer": args.optimizer,
        "seed": args.seed,
        "use_positional_encoding": not args.no_pe,
        "use_residual": args.residual,
        "train_frac": args.train_frac,
        "grad_clip": args.grad_clip,
        "timing": args.timing,
        "artifacts": {
            "checkpoint": args.out,
            "report": args.report,
            "manifest": manifest_path,
        },
    }
    atomic_write_text(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    line = f"train_mse={report.train_mse[-1]:.6g} train_mae={report.train_mae[-1]:.6g}"
    if report.val_mse is not None:
        line += f" val_mse={report.val_mse[-1]:.6g} val_mae={report.val_mae[-1]:.6g}"
    print(line)
    return EXIT_OK


def _load_checkpoint_pipeline(args):
    params, config, extra = load_params(args.out)
    normalizer = _normalizer_from_extra(extra)
    if "pipeline.features" in extra:
        features = json.loads(extra["pipeline.features"])
        target = json.loads(extra["pipeline.target"])
        horizon = json.loads(extra["pipeline.horizon"])
    else:
        features = args.features.split(",") if args.features else None
        target = args.target
        horizon = args.horizon
    return params, config, normalizer, features, target, horizon


def cmd_eval(args) -> int:
    params, config, normalizer, features, target, horizon = _load_checkpoint_pipeline(args)
    if not args.data:
        raise ConfigError("--data is required for this command")
    if target is None:
        raise ConfigError("--target is required (checkpoint carries no pipeline info)")
    series = data_mod.load_csv(args.data, target, features)
    if normalizer is not None:
        series = normalizer.apply(series)
    dataset = data_mod.make_windows(series, config.window_len, horizon)
    result_mse, result_mae = evaluate(params, config, dataset)
    if args.denorm:
        std = normalizer.target_std if normalizer is not None else 1.0
        result_mse *= std * std
        result_mae *= std
    print(f"mse={result_mse:.6g} mae={result_mae:.6g}")
    return EXIT_OK


def cmd_predict(args) -> int:
    params, config, normalizer, features, target, _ = _load_checkpoint_pipeline(args)
    if not args.data:
        raise ConfigError("--data is required for this command")
    if target is None:
        raise ConfigError("--target is required (checkpoint carries no pipeline info)")
    series = data_mod.load_csv(args.data, target, features)
    if normalizer is not None:
        series = normalizer.apply(series)
    matrix = series.feature_matrix
    if matrix.shape[0] < config.window_len:
        raise DataError(
            f"need at least {config.window_len} rows to form a window, "
            f"got {matrix.shape[0]}"
        )
    x = matrix[-config.window_len :]
    y, records = forward(x, params, config)
    if args.denorm and normalizer is not None:
        y = float(normalizer.invert_target([y])[0])
    if args.attn_out:
        model_mod.write_attention_csvs(records, args.attn_out)
    print(f"{y:.6g}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = ModelConfig(
        window_len=args.window,
        input_dim=args.input_dim,
        model_dim=args.d_model,
        n_heads=args.heads,
        ffn_hidden=args.ffn_hidden,
        n_blocks=args.blocks,
        use_positional_encoding=not args.no_pe,
        use_residual=args.residual,
        seed=args.seed,
    )
    params = init_params(config)
    x = RngState(args.seed + 1).normal(1.0, (config.window_len, config.input_dim))

    def f(tape, leaves):
        y, _ = build_forward(tape, tape.leaf(x), leaves, config)
        return y

    report = grad_check(
        f, dict(model_mod.param_items(params)), step=1e-6, tolerance=1e-5
    )
    for name, err in report.errors.items():
        print(f"{name} max_rel_err={err:.3e}")
    status = "PASS" if report.passed else "FAIL"
    print(f"gradcheck {status}: max_rel_err={report.max_error:.3e} "
          f"tolerance={report.tolerance:g}")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_synth(args) -> int:
    if args.kind == "sine":
        series = data_mod.synth_sine(args.n, args.period, args.noise, args.seed)
    else:
        series = data_mod.synth_ar1(args.n, args.coeff, args.noise, args.seed)
    data_mod.write_series_csv(series, args.out)
    print(f"wrote {series.rows.shape[0]} rows to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("TST_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
