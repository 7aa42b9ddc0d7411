"""``factormi`` command line.

Exit codes: 0 success, 2 configuration error, 3 data/I-O error,
4 numerical failure. ``FACTORMI_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from functools import partial
from pathlib import Path

import numpy as np

from . import baselines
from .config import (ExperimentConfig, bind_model_to_data, read_config_file, resolve_config)
from .data import SyntheticSpec, generate_synthetic, save_dataset, split_train_test
from .errors import ConfigError, DataError, FactorMIError, NumericalError
from .model import load_model
from .report import RUN_FILE, compare_runs, find_runs
from .training import accuracy, cross_validate, fit_holdout, summarize

log = logging.getLogger("factormi")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _setup_logging():
    level = os.environ.get("FACTORMI_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _config_from_args(args) -> ExperimentConfig:
    file_data = read_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {"profile": args.profile, "seed": args.seed, "k": getattr(args, "k", None), "out": args.out,
                 "parallel_folds": getattr(args, "parallel_folds", None), "name": getattr(args, "name", None)}
    return resolve_config(file_data, overrides)


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    spec = SyntheticSpec(n_classes=args.classes, trials_per_class=args.trials, n_channels=args.channels,
                         n_samples=args.samples, sfreq=args.sfreq, amplitude=args.amplitude, noise=args.noise,
                         seed=args.seed if args.seed is not None else 0)
    spec.validate()
    if args.out is None:
        raise ConfigError("out: an output path is required")
    ds = generate_synthetic(spec)
    try:
        save_dataset(args.out, ds)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from exc
    summary = spectral_summary(ds, spec)
    print(f"wrote {len(ds)} trials to {args.out}")
    print("per-class counts: " + ", ".join(f"{n}={c}" for n, c in zip(ds.class_names, ds.class_counts())))
    for row in summary:
        print(f"  {row['class']}: band {row['band'][0]:g}-{row['band'][1]:g} Hz, "
              f"power active/inactive = {row['active_power']:.3f}/{row['inactive_power']:.3f}")
    return EXIT_OK


def spectral_summary(ds, spec: SyntheticSpec) -> list[dict]:
    """Mean periodogram power in each class band on its active and other channels."""
    freqs = np.fft.rfftfreq(ds.n_samples, 1.0 / spec.sfreq)
    out = []
    for k, (band, chans) in enumerate(zip(spec.resolved_bands(), spec.resolved_channels())):
        X = ds.X[ds.y == k].astype(np.float64)
        P = np.abs(np.fft.rfft(X, axis=-1)) ** 2 / ds.n_samples
        inb = (freqs >= band[0]) & (freqs <= band[1])
        bp = P[..., inb].mean(axis=(0, 2))
        others = np.setdiff1d(np.arange(ds.n_channels), chans)
        out.append({"class": ds.class_names[k], "band": band, "active_power": float(bp[chans].mean()),
                    "inactive_power": float(bp[others].mean()) if others.size else float("nan")})
    return out


def _prepare(cfg: ExperimentConfig):
    ds = cfg.load_data()
    train, test = split_train_test(ds, cfg.per_class_test, cfg.seed)
    if len(test) == 0:
        raise DataError("split.per_class_test is 0: no test set to score")
    return ds, train, test


def _finish_run(cfg: ExperimentConfig, summary, kind: str) -> int:
    out = Path(cfg.out)
    record = {"kind": kind, "config": cfg.to_dict(), "seed": cfg.seed,
              "provenance_hash": cfg.provenance_hash(), "summary": summary.to_dict()}
    for f in summary.folds:
        if not np.isfinite(f.test_accuracy):
            raise NumericalError(f"fold {f.fold}: non-finite test accuracy")
    _write_json(out / RUN_FILE, record)
    row = summary.row()
    (out / "report.txt").write_text(row + "\n")
    print(row)
    return EXIT_OK


def cmd_cv(args) -> int:
    cfg = _config_from_args(args)
    ds, train, test = _prepare(cfg)
    mc = bind_model_to_data(cfg, ds)
    summary = cross_validate(train, cfg.k, test=test, seed=cfg.seed, name=cfg.name, model_config=mc,
                             train_config=cfg.train, parallel=cfg.parallel_folds)
    return _finish_run(cfg, summary, "factor")


def cmd_baseline(args) -> int:
    cfg = _config_from_args(args)
    if args.name is None:
        cfg.name = {"csp": "CSP+LDA", "fbcsp": "FBCSP"}[args.which]
    ds, train, test = _prepare(cfg)
    b = cfg.baseline
    if args.which == "csp":
        band = tuple(b.band) if b.band is not None else None
        runner = partial(baselines.run_csp_fold, n_pairs=b.n_pairs, band=band, shrinkage=b.shrinkage)
    else:
        runner = partial(baselines.run_fbcsp_fold, bands=b.bands, n_pairs=b.n_pairs, k_select=b.k_select,
                         shrinkage=b.shrinkage, order=b.order)
    summary = cross_validate(train, cfg.k, runner=runner, test=test, seed=cfg.seed, name=cfg.name,
                             parallel=cfg.parallel_folds)
    if args.which == "fbcsp":
        bands = [f.extra["selected_bands"] for f in summary.folds]
        print("selected bands per fold: " + "; ".join(",".join(map(str, s)) for s in bands))
    return _finish_run(cfg, summary, args.which)


def cmd_report(args) -> int:
    runs = []
    for d in args.run_dir:
        runs.extend(find_runs(d))
    table, payload = compare_runs(runs)
    print(table)
    target = Path(args.run_dir[0])
    (target / "report.txt").write_text(table + "\n")
    _write_json(target / "report.json", payload)
    return EXIT_OK


def cmd_train(args) -> int:
    """Fit one model on the training split, holding out one stratified fold for early stopping."""
    cfg = _config_from_args(args)
    ds, train, test = _prepare(cfg)
    model, report, stats = fit_holdout(train, test, bind_model_to_data(cfg, ds), cfg.train, cfg.k, cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.fmck", meta={"channel_mean": stats.mean.tolist(), "channel_std": stats.std.tolist(),
                                         "provenance_hash": cfg.provenance_hash()})
    _write_json(out / "train.json", {"config": cfg.to_dict(), "report": report.to_dict()})
    print(f"best validation accuracy {report.best_val_accuracy:.4f} at epoch {report.best_epoch}; "
          f"test accuracy {report.test_accuracy:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import ChannelStats

    cfg = _config_from_args(args)
    _, _, test = _prepare(cfg)
    _, _, _, meta = load_checkpoint(args.checkpoint)
    model = load_model(args.checkpoint)
    stats = ChannelStats(np.asarray(meta["channel_mean"]), np.asarray(meta["channel_std"]))
    acc = accuracy(model, stats.apply(test))
    mean, _ = summarize([acc])
    print(f"test accuracy {100 * mean:.2f}")
    _write_json(Path(cfg.out) / "eval.json", {"checkpoint": str(args.checkpoint), "test_accuracy": acc})
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="factormi", description="Factorized EEG motor-imagery classification")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, k=True):
        sp.add_argument("--config", help="YAML/JSON experiment config")
        sp.add_argument("--profile", choices=["full", "desk"])
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        if k:
            sp.add_argument("--k", type=int, help="number of CV folds")
            sp.add_argument("--parallel-folds", type=int, dest="parallel_folds")
        sp.add_argument("--name", help="row label in reports")

    s = sub.add_parser("synth", help="write a synthetic EEGF dataset")
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--trials", type=int, default=50, help="trials per class")
    s.add_argument("--channels", type=int, default=22)
    s.add_argument("--samples", type=int, default=1001)
    s.add_argument("--sfreq", type=float, default=250.0)
    s.add_argument("--amplitude", type=float, default=1.0)
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output .eegf path")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("cv", help="cross-validate the factorization model")
    common(s)
    s.set_defaults(func=cmd_cv)

    s = sub.add_parser("baseline", help="cross-validate CSP+LDA or FBCSP")
    common(s)
    s.add_argument("--which", choices=["csp", "fbcsp"], default="csp")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("report", help="compare completed runs")
    s.add_argument("run_dir", nargs="+")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("train", help="train one model and save a checkpoint")
    common(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint on the test split")
    common(s, k=False)
    s.add_argument("--checkpoint", required=True)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FactorMIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
