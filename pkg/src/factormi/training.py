"""Losses, the three-phase adversarial/classification update, early stopping
and stratified cross-validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .data import ChannelStats, Dataset, normalize
from .errors import ConfigError, ContractError, DataError, NumericalError
from .model import (FactorModel, ModelConfig, build_model, classify, discriminator_score,
                    extract_class_specific, extract_common, predict_logits)
from .optim import Optimizer, OptimizerState

log = logging.getLogger(__name__)

GENERATOR_LOSSES = ("minimax", "non_saturating")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 5
    weight_decay: float = 0.01
    optimizer: str = "adamw"
    momentum: float = 0.0
    seed: int = 0
    adversarial_generator_loss: str = "non_saturating"
    ce_through_generator: bool = False

    def validate(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate: must be >= 0, got {self.learning_rate}")
        for name in ("batch_size", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")
        if self.patience > self.max_epochs:
            raise ConfigError(f"patience: {self.patience} exceeds max_epochs {self.max_epochs}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay: must be >= 0, got {self.weight_decay}")
        if self.optimizer.lower() not in ("sgd", "adamw"):
            raise ConfigError(f"optimizer: expected 'sgd' or 'adamw', got {self.optimizer!r}")
        if self.adversarial_generator_loss not in GENERATOR_LOSSES:
            raise ConfigError(f"adversarial_generator_loss: expected one of {GENERATOR_LOSSES}, "
                              f"got {self.adversarial_generator_loss!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"train: unknown field(s) {sorted(unknown)}")
        return cls(**d)


def config_hash(*parts: dict) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- losses


def cross_entropy_loss(logits, labels) -> Tensor:
    """Mean of -log softmax(logits)[label] over the batch."""
    return ad.cross_entropy(ad.as_tensor(logits), labels)


def discriminator_loss(d_real, d_fake) -> Tensor:
    """-mean log s(real) - mean log(1 - s(fake)), s the logistic map."""
    # -log s(x) = softplus(-x), -log(1 - s(x)) = softplus(x)
    return ad.add(ad.mean(ad.softplus(-d_real)), ad.mean(ad.softplus(d_fake)))


def generator_loss(d_fake, variant: str = "non_saturating") -> Tensor:
    """mean log(1 - s(fake)) for "minimax", -mean log s(fake) for "non_saturating"."""
    if variant == "minimax":
        return -ad.mean(ad.softplus(d_fake))
    if variant == "non_saturating":
        return ad.mean(ad.softplus(-d_fake))
    raise ConfigError(f"adversarial_generator_loss: unknown variant {variant!r}")


def adversarial_losses(d_real, d_fake, generator_variant: str = "non_saturating") -> tuple[Tensor, Tensor]:
    """(L_D, L_G) from raw discriminator scores on real and fake features."""
    d_real, d_fake = ad.as_tensor(d_real), ad.as_tensor(d_fake)
    if d_real.size == 0 or d_fake.size == 0:
        raise ContractError("adversarial_losses: empty score batch")
    return discriminator_loss(d_real, d_fake), generator_loss(d_fake, generator_variant)


def total_loss(loss_adv: float, loss_ce: float) -> float:
    """Unweighted sum of the adversarial and classification losses."""
    if not (math.isfinite(loss_adv) and math.isfinite(loss_ce)):
        raise NumericalError(f"non-finite loss: adversarial={loss_adv}, cross-entropy={loss_ce}")
    return loss_adv + loss_ce


# ---------------------------------------------------------------- one update


@dataclass
class StepLosses:
    discriminator: float
    adversarial: float
    cross_entropy: float
    total: float


def make_optimizers(model: FactorModel, config: TrainConfig) -> dict[str, Optimizer]:
    def opt(params):
        return Optimizer(params, OptimizerState(kind=config.optimizer, learning_rate=config.learning_rate,
                                                weight_decay=config.weight_decay, momentum=config.momentum))

    clf = ("specific", "mlp", "generator") if config.ce_through_generator else ("specific", "mlp")
    return {
        "discriminator": opt(model.group("discriminator")),
        "generator": opt(model.group("generator")),
        "classifier": opt(model.group(*clf)),
    }


def _zero_all(model: FactorModel):
    for p in model.params.values():
        p.grad = None


def train_step(model: FactorModel, optimizers: dict[str, Optimizer], X, y, noise,
               config: TrainConfig) -> StepLosses:
    """Discriminator update, then generator update, then classifier update.

    Real features are generator(EEG), fake ones generator(noise). The common
    features enter the classifier with their gradient blocked unless
    ``config.ce_through_generator`` is set.
    """
    X = np.asarray(X, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if X.shape[0] == 0:
        raise ContractError("train_step: empty batch")
    if noise.shape[1:] != X.shape[1:]:
        raise ContractError(f"train_step: noise trial shape {noise.shape[1:]} != EEG trial shape {X.shape[1:]}")
    mode = config.adversarial_generator_loss

    real = extract_common(model, X)  # no tape active: generator frozen here
    fake = extract_common(model, noise)
    _zero_all(model)
    with Tape() as tape:
        loss_d = discriminator_loss(discriminator_score(model, real), discriminator_score(model, fake))
    backward(loss_d, tape)
    optimizers["discriminator"].step()

    _zero_all(model)
    with Tape() as tape:
        loss_g = generator_loss(discriminator_score(model, extract_common(model, noise)), mode)
    backward(loss_g, tape)
    optimizers["generator"].step()

    _zero_all(model)
    common = None if config.ce_through_generator else extract_common(model, X)
    with Tape() as tape:
        if common is None:
            common = extract_common(model, X)
        logits = classify(model, common, extract_class_specific(model, X))
        loss_ce = cross_entropy_loss(logits, y)
    backward(loss_ce, tape)
    optimizers["classifier"].step()
    _zero_all(model)

    l_d, l_g, l_ce = loss_d.item(), loss_g.item(), loss_ce.item()
    if not math.isfinite(l_d):
        raise NumericalError(f"non-finite discriminator loss {l_d}")
    return StepLosses(l_d, l_g, l_ce, total_loss(l_g, l_ce))


# ---------------------------------------------------------------- fitting


@dataclass
class FoldReport:
    fold: int
    seed: int
    config_hash: str = ""
    loss_discriminator: list[float] = field(default_factory=list)
    loss_adversarial: list[float] = field(default_factory=list)
    loss_cross_entropy: list[float] = field(default_factory=list)
    loss_total: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    best_val_accuracy: float = float("nan")
    test_accuracy: float = float("nan")
    n_train: int = 0
    n_val: int = 0
    n_test: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FoldReport":
        return cls(**d)


def accuracy(model: FactorModel, ds: Dataset) -> float:
    if len(ds) == 0:
        raise DataError("accuracy of an empty dataset")
    pred = predict_logits(model, ds.X).argmax(axis=1)
    return float(np.mean(pred == ds.y))


def fit(model: FactorModel, train: Dataset, val: Dataset, config: TrainConfig,
        test: Dataset | None = None, fold: int = 0) -> FoldReport:
    """Train with validation-accuracy early stopping; keeps the best epoch's weights.

    Training stops once ``patience`` consecutive epochs fail to beat the best
    validation accuracy seen so far.
    """
    config.validate()
    if len(train) == 0 or len(val) == 0:
        raise DataError(f"fit: empty split (train={len(train)}, val={len(val)})")
    rng = np.random.default_rng(config.seed)
    opts = make_optimizers(model, config)
    report = FoldReport(fold=fold, seed=config.seed,
                        config_hash=config_hash(model.config.to_dict(), config.to_dict()),
                        n_train=len(train), n_val=len(val), n_test=len(test) if test is not None else 0)
    X = train.X.astype(np.float64)
    best_state, best_acc, since_best = model.state_arrays(), -1.0, 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train))
        steps = []
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            noise = rng.standard_normal((len(idx),) + X.shape[1:])
            steps.append(train_step(model, opts, X[idx], train.y[idx], noise, config))
        l_adv = float(np.mean([st.adversarial for st in steps]))
        l_ce = float(np.mean([st.cross_entropy for st in steps]))
        report.loss_discriminator.append(float(np.mean([st.discriminator for st in steps])))
        report.loss_adversarial.append(l_adv)
        report.loss_cross_entropy.append(l_ce)
        report.loss_total.append(total_loss(l_adv, l_ce))
        acc = accuracy(model, val)
        report.val_accuracy.append(acc)
        log.debug("fold %d epoch %d: L_D=%.4f L_adv=%.4f L_ce=%.4f val_acc=%.3f", fold, epoch,
                  report.loss_discriminator[-1], l_adv, l_ce, acc)
        if acc > best_acc:
            best_acc, since_best = acc, 0
            best_state = model.state_arrays()
            report.best_epoch = epoch
        else:
            since_best += 1
        report.stopped_epoch = epoch
        if since_best >= config.patience:
            break
    model.load_arrays(best_state)
    report.best_val_accuracy = best_acc
    if test is not None and len(test):
        report.test_accuracy = accuracy(model, test)
    return report


# ---------------------------------------------------------------- cross-validation


def stratified_folds(y, k: int, seed: int = 0) -> list[np.ndarray]:
    """Split indices into ``k`` folds with per-class counts differing by at most one."""
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if k < 2:
        raise ConfigError(f"k: need at least 2 folds, got {k}")
    if counts.size == 0 or counts.min() < k:
        raise DataError(f"k={k} folds exceed the smallest class count ({counts.min() if counts.size else 0})")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for c in classes:
        members = rng.permutation(np.flatnonzero(y == c))
        for j, idx in enumerate(members):
            # rotate the starting fold so remainders spread across folds
            folds[(offset + j) % k].append(int(idx))
        offset += len(members)
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]


@dataclass
class CvSummary:
    name: str
    folds: list[FoldReport]
    mean: float
    std: float
    config_hash: str = ""
    seed: int = 0

    @classmethod
    def from_folds(cls, name: str, folds: list[FoldReport], **kw) -> "CvSummary":
        mean, std = summarize([f.test_accuracy for f in folds])
        return cls(name, folds, mean, std, **kw)

    def row(self) -> str:
        return format_row(self.name, 100 * self.mean, 100 * self.std)

    def to_dict(self) -> dict:
        return {"name": self.name, "mean": self.mean, "std": self.std, "k": len(self.folds),
                "config_hash": self.config_hash, "seed": self.seed,
                "folds": [f.to_dict() for f in self.folds]}

    @classmethod
    def from_dict(cls, d: dict) -> "CvSummary":
        return cls(d["name"], [FoldReport.from_dict(f) for f in d["folds"]], d["mean"], d["std"],
                   d.get("config_hash", ""), d.get("seed", 0))


def summarize(accuracies) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    a = np.asarray(accuracies, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def format_row(name: str, mean: float, std: float, width: int = 0) -> str:
    return f"{name:<{width}}  {mean:.2f} ({std:.2f})"


FoldRunner = Callable[[int, int, Dataset, Dataset, Dataset], FoldReport]


def run_factor_fold(fold: int, seed: int, train: Dataset, val: Dataset, test: Dataset,
                    model_config: ModelConfig, train_config: TrainConfig) -> FoldReport:
    model = build_model(model_config, seed)
    cfg = dataclasses.replace(train_config, seed=seed)
    return fit(model, train, val, cfg, test=test, fold=fold)


def fit_holdout(train: Dataset, test: Dataset | None, model_config: ModelConfig, train_config: TrainConfig,
                k: int = 10, seed: int = 0) -> tuple[FactorModel, FoldReport, ChannelStats]:
    """One model, with the first of ``k`` stratified folds held out for early stopping.

    Scaling statistics come from the remaining training trials.
    """
    val_idx = stratified_folds(train.y, k, seed)[0]
    tr, stats = normalize(train.subset(np.setdiff1d(np.arange(len(train)), val_idx)))
    va, _ = normalize(train.subset(val_idx), stats)
    te = normalize(test, stats)[0] if test is not None else None
    model = build_model(model_config, seed)
    report = fit(model, tr, va, dataclasses.replace(train_config, seed=seed), test=te)
    return model, report, stats


def fold_seeds(seed: int, k: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def _one_fold(i, seed, train, val_idx, test, runner, scale):
    tr = train.subset(np.setdiff1d(np.arange(len(train)), val_idx))
    va = train.subset(val_idx)
    te = test if test is not None else va
    if scale:
        tr, stats = normalize(tr)
        va, _ = normalize(va, stats)
        te, _ = normalize(te, stats)
    return runner(i, seed, tr, va, te)


def cross_validate(train: Dataset, k: int = 10, runner: FoldRunner | None = None,
                   test: Dataset | None = None, seed: int = 0, name: str = "proposed",
                   model_config: ModelConfig | None = None, train_config: TrainConfig | None = None,
                   scale: bool = True, parallel: int = 1) -> CvSummary:
    """Stratified k-fold CV over ``train``.

    Each fold trains a fresh model on k-1 folds, uses the held-out fold for
    early stopping, and scores on ``test`` (the held-out fold itself when no
    test set is given). Channel scaling is fitted per fold on its training
    part only.
    """
    folds = stratified_folds(train.y, k, seed)
    if runner is None:
        mc = model_config or ModelConfig(n_channels=train.n_channels, n_samples=train.n_samples,
                                         n_classes=train.n_classes)
        tc = train_config or TrainConfig(seed=seed)
        runner = partial(run_factor_fold, model_config=mc, train_config=tc)
    seeds = fold_seeds(seed, k)
    jobs = [(i, seeds[i], train, folds[i], test, runner, scale) for i in range(k)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            reports = list(pool.map(_one_fold, *zip(*jobs)))
    else:
        reports = [_one_fold(*job) for job in jobs]
    for r in reports:
        log.info("fold %d: test accuracy %.4f (stopped at epoch %d)", r.fold, r.test_accuracy, r.stopped_epoch)
    h = reports[0].config_hash if reports else ""
    return CvSummary.from_folds(name, reports, config_hash=h, seed=seed)
