"""Train the factorization model on desk-scale synthetic data over several seeds.

    python scripts/run_desk_experiment.py --seeds 5 --amplitude 5.0
"""

import argparse
import dataclasses
import statistics
import time

from factormi.config import resolve_config
from factormi.data import generate_synthetic, split_train_test
from factormi.training import fit_holdout


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--amplitude", type=float, default=None, help="class signal amplitude (desk default 5.0)")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    args = p.parse_args()

    accs = []
    for seed in range(args.seeds):
        cfg = resolve_config({"profile": "desk"}, {"seed": seed})
        spec = dataclasses.replace(cfg.dataset.synthetic, seed=seed)
        if args.amplitude is not None:
            spec = dataclasses.replace(spec, amplitude=args.amplitude)
        train_cfg = cfg.train
        if args.lr is not None:
            train_cfg = dataclasses.replace(train_cfg, learning_rate=args.lr)
        if args.max_epochs is not None:
            train_cfg = dataclasses.replace(train_cfg, max_epochs=args.max_epochs)
        train, test = split_train_test(generate_synthetic(spec), cfg.per_class_test, seed)
        mc = dataclasses.replace(cfg.model, n_channels=spec.n_channels, n_samples=spec.n_samples,
                                 n_classes=spec.n_classes)
        t0 = time.perf_counter()
        _, rep, _ = fit_holdout(train, test, mc, train_cfg, cfg.k, seed)
        accs.append(rep.test_accuracy)
        print(f"seed {seed}: test {rep.test_accuracy:.3f}  best val {rep.best_val_accuracy:.3f} "
              f"@ epoch {rep.best_epoch}/{rep.stopped_epoch}  ({time.perf_counter() - t0:.1f}s)")
    print(f"median test accuracy {statistics.median(accs):.3f}")


if __name__ == "__main__":
    main()
