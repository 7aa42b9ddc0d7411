"""Classical comparison pipelines: CSP + LDA and filter-bank CSP.

Multiclass CSP is one-vs-rest: one filter set per class, features
concatenated in class order.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset
from .errors import ConfigError, ContractError, DataError
from .training import FoldReport

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- CSP


def trial_covariance(X) -> np.ndarray:
    """Trace-normalized spatial covariance X X^T / tr(X X^T) of a (C, T) trial
    or of every trial in a (N, C, T) stack."""
    X = np.asarray(X, dtype=np.float64)
    cov = X @ np.swapaxes(X, -1, -2)
    tr = np.trace(cov, axis1=-2, axis2=-1)
    if np.any(tr <= 0):
        raise DataError("trial_covariance: all-zero trial has zero trace")
    return cov / tr[..., None, None]


@dataclass
class CspModel:
    filters: np.ndarray          # (2 * n_pairs, n_channels), rows are spatial filters
    eigenvalues: np.ndarray      # all generalized eigenvalues, descending
    selected: np.ndarray         # indices into the full eigen-ordering
    target: int = 0
    eps: float = 0.0
    degenerate: bool = False


def csp_from_covariances(c_target, c_rest, n_pairs: int = 3, eps: float = 1e-10, target: int = 0) -> CspModel:
    """Solve C_target w = lambda (C_target + C_rest) w by whitening the composite.

    Filters are scaled so that w^T (C_target + C_rest) w = 1 and ordered by
    decreasing eigenvalue; the first and last ``n_pairs`` are kept.
    """
    ct = np.asarray(c_target, dtype=np.float64)
    cr = np.asarray(c_rest, dtype=np.float64)
    composite = ct + cr
    n = composite.shape[0]
    if 2 * n_pairs > n:
        raise ConfigError(f"n_pairs: {n_pairs} pairs need at least {2 * n_pairs} channels, have {n}")
    lam, U = np.linalg.eigh(composite)
    used_eps = 0.0
    if lam.min() <= eps * max(lam.max(), 0.0) or lam.max() <= 0:
        used_eps = eps * max(np.trace(composite) / n, 1.0)
        log.warning("composite covariance is singular; adding %g to its diagonal", used_eps)
        composite = composite + used_eps * np.eye(n)
        lam, U = np.linalg.eigh(composite)
    P = (U / np.sqrt(lam)).T                     # whitening: P C P^T = I
    mu, V = np.linalg.eigh(P @ ct @ P.T)
    order = np.argsort(mu)[::-1]
    mu, V = mu[order], V[:, order]
    W = V.T @ P
    degenerate = bool(mu[0] - mu[-1] < 1e-9)
    if degenerate:
        log.warning("CSP eigenvalues are all equal (%.6f); filter choice is arbitrary", mu[0])
    sel = np.r_[np.arange(n_pairs), np.arange(n - n_pairs, n)]
    return CspModel(W[sel], mu, sel, target, used_eps, degenerate)


def fit_csp(X, y, target: int, n_pairs: int = 3, eps: float = 1e-10) -> CspModel:
    """Target class versus all remaining classes."""
    y = np.asarray(y)
    covs = trial_covariance(X)
    is_t = y == target
    if not is_t.any() or is_t.all():
        raise DataError(f"fit_csp: class {target} and its complement must both be nonempty")
    return csp_from_covariances(covs[is_t].mean(axis=0), covs[~is_t].mean(axis=0), n_pairs, eps, target)


def fit_csp_ovr(X, y, n_classes: int, n_pairs: int = 3) -> list[CspModel]:
    return [fit_csp(X, y, k, n_pairs) for k in range(n_classes)]


def csp_features(models, X) -> np.ndarray:
    """log(var_i / sum_j var_j) per filter, concatenated over models.

    ``X`` is one (C, T) trial or a (N, C, T) stack.
    """
    if isinstance(models, CspModel):
        models = [models]
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    Xb = X[None] if single else X
    feats = []
    for m in models:
        var = (m.filters @ Xb).var(axis=-1)       # (N, n_filters)
        total = var.sum(axis=-1, keepdims=True)
        if np.any(total <= 0):
            raise DataError("csp_features: zero variance on every filter")
        feats.append(np.log(var / total))
    out = np.concatenate(feats, axis=-1)
    return out[0] if single else out


# ---------------------------------------------------------------- LDA


@dataclass
class LdaModel:
    means: np.ndarray        # (K, d)
    covariance: np.ndarray   # shrunk pooled covariance (d, d)
    priors: np.ndarray       # (K,)
    coef: np.ndarray         # (K, d), Sigma^-1 mu_k
    intercept: np.ndarray    # (K,)
    shrinkage: float = 0.1

    def decision_function(self, F) -> np.ndarray:
        return np.asarray(F, dtype=np.float64) @ self.coef.T + self.intercept

    def predict(self, F) -> np.ndarray:
        return self.decision_function(F).argmax(axis=-1)


def fit_lda(F, y, shrinkage: float = 0.1, n_classes: int | None = None) -> LdaModel:
    """Shared-covariance Gaussian classifier, covariance shrunk toward
    (tr(S)/d) I with weight ``shrinkage``."""
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y)
    K = n_classes if n_classes is not None else int(y.max()) + 1
    counts = np.bincount(y, minlength=K)
    present = np.flatnonzero(counts)
    if present.size < 2:
        raise DataError("fit_lda: need at least two classes")
    if np.any(counts[present] < 2):
        raise DataError(f"fit_lda: every class needs at least 2 samples, counts {counts.tolist()}")
    d = F.shape[1]
    means = np.zeros((K, d))
    scatter = np.zeros((d, d))
    for k in present:
        Fk = F[y == k]
        means[k] = Fk.mean(axis=0)
        D = Fk - means[k]
        scatter += D.T @ D
    S = scatter / (len(F) - present.size)
    nu = np.trace(S) / d
    S = (1.0 - shrinkage) * S + shrinkage * (nu if nu > 0 else 1.0) * np.eye(d)
    coef = np.linalg.solve(S, means.T).T
    priors = counts / counts.sum()
    with np.errstate(divide="ignore"):
        intercept = -0.5 * np.einsum("kd,kd->k", coef, means) + np.log(priors)
    return LdaModel(means, S, priors, coef, intercept, shrinkage)


def predict_lda(model: LdaModel, F) -> np.ndarray:
    return model.predict(F)


# ---------------------------------------------------------------- filtering


@dataclass
class FilterBank:
    bands: list[tuple[float, float]] = field(
        default_factory=lambda: [(float(lo), float(lo + 4)) for lo in range(4, 40, 4)])
    order: int = 4
    method: str = "butter-filtfilt"

    def validate(self, sfreq: float):
        if not self.bands:
            raise ConfigError("filter bank: no bands")
        for b in self.bands:
            _check_band(b, sfreq)


def _check_band(band, sfreq):
    lo, hi = band
    if not 0 < lo < hi < sfreq / 2:
        raise ConfigError(f"band ({lo}, {hi}) must satisfy 0 < low < high < Nyquist ({sfreq / 2})")


def bandpass(X, band, sfreq: float, order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth band-pass along the last axis (forward-backward)."""
    _check_band(band, sfreq)
    sos = signal.butter(order, band, btype="bandpass", fs=sfreq, output="sos")
    return signal.sosfiltfilt(sos, np.asarray(X, dtype=np.float64), axis=-1)


# ---------------------------------------------------------------- feature selection


def mutual_information(f, y, bins: int = 8) -> float:
    """I(f; y) in nats, with ``f`` discretised into ``bins`` equal-width bins."""
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(y)
    lo, hi = f.min(), f.max()
    if hi <= lo:
        return 0.0
    b = np.minimum(((f - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    classes, yi = np.unique(y, return_inverse=True)
    joint = np.zeros((bins, classes.size))
    np.add.at(joint, (b, yi), 1.0)
    joint /= joint.sum()
    pb, py = joint.sum(axis=1, keepdims=True), joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pb @ py)[nz])))


def select_features(F, y, k: int, bins: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the ``k`` features with the highest mutual information, best first,
    plus the full MI vector. Ties keep the lower index."""
    F = np.asarray(F)
    mi = np.array([mutual_information(F[:, j], y, bins) for j in range(F.shape[1])])
    if k > F.shape[1]:
        log.warning("k_select=%d exceeds %d features; clamping", k, F.shape[1])
        k = F.shape[1]
    return np.argsort(-mi, kind="stable")[:k], mi


# ---------------------------------------------------------------- pipelines


@dataclass
class CspLda:
    n_pairs: int = 3
    band: tuple[float, float] | None = (4.0, 40.0)
    shrinkage: float = 0.1
    order: int = 4
    csp: list[CspModel] = field(default_factory=list)
    lda: LdaModel | None = None
    sfreq: float | None = None

    def _filter(self, X, sfreq):
        if self.band is None or sfreq is None:
            return np.asarray(X, dtype=np.float64)
        return bandpass(X, self.band, sfreq, self.order)

    def fit(self, ds: Dataset) -> "CspLda":
        self.sfreq = ds.sfreq
        Xf = self._filter(ds.X, ds.sfreq)
        self.csp = fit_csp_ovr(Xf, ds.y, ds.n_classes, self.n_pairs)
        self.lda = fit_lda(csp_features(self.csp, Xf), ds.y, self.shrinkage, ds.n_classes)
        return self

    def predict(self, X) -> np.ndarray:
        if self.lda is None:
            raise ContractError("CspLda: predict before fit")
        return self.lda.predict(csp_features(self.csp, self._filter(X, self.sfreq)))


@dataclass
class Fbcsp:
    bank: FilterBank = field(default_factory=FilterBank)
    n_pairs: int = 3
    k_select: int = 8
    shrinkage: float = 0.1
    mi_bins: int = 8
    csp: list[list[CspModel]] = field(default_factory=list)
    selected: np.ndarray | None = None
    mi: np.ndarray | None = None
    lda: LdaModel | None = None
    sfreq: float | None = None

    def _all_features(self, X) -> np.ndarray:
        return np.concatenate([csp_features(models, bandpass(X, band, self.sfreq, self.bank.order))
                               for band, models in zip(self.bank.bands, self.csp)], axis=-1)

    def fit(self, ds: Dataset) -> "Fbcsp":
        if ds.sfreq is None:
            raise ConfigError("fbcsp: dataset has no sampling rate")
        self.bank.validate(ds.sfreq)
        self.sfreq = ds.sfreq
        self.csp = [fit_csp_ovr(bandpass(ds.X, band, ds.sfreq, self.bank.order), ds.y, ds.n_classes, self.n_pairs)
                    for band in self.bank.bands]
        F = self._all_features(ds.X)
        self.selected, self.mi = select_features(F, ds.y, self.k_select, self.mi_bins)
        self.lda = fit_lda(F[:, self.selected], ds.y, self.shrinkage, ds.n_classes)
        return self

    @property
    def features_per_band(self) -> int:
        return sum(m.filters.shape[0] for m in self.csp[0]) if self.csp else 0

    def selected_bands(self) -> list[int]:
        """Band indices of the selected features, in selection order, without repeats."""
        per = self.features_per_band
        return list(dict.fromkeys(int(i) // per for i in self.selected))

    def predict(self, X) -> np.ndarray:
        if self.lda is None:
            raise ContractError("Fbcsp: predict before fit")
        return self.lda.predict(self._all_features(X)[..., self.selected])


def fbcsp_pipeline(ds: Dataset, bank: FilterBank | None = None, n_pairs: int = 3, k_select: int = 8) -> Fbcsp:
    return Fbcsp(bank or FilterBank(), n_pairs, k_select).fit(ds)


# ---------------------------------------------------------------- persistence


def _csp_arrays(prefix, models, arrays):
    for k, m in enumerate(models):
        arrays[f"{prefix}csp{k}.filters"] = m.filters
        arrays[f"{prefix}csp{k}.eigenvalues"] = m.eigenvalues
        arrays[f"{prefix}csp{k}.selected"] = m.selected.astype(np.float64)


def _csp_from_arrays(prefix, arrays, n_classes):
    return [CspModel(arrays[f"{prefix}csp{k}.filters"], arrays[f"{prefix}csp{k}.eigenvalues"],
                     arrays[f"{prefix}csp{k}.selected"].astype(np.int64), k) for k in range(n_classes)]


def _lda_arrays(lda: LdaModel, arrays):
    for name in ("means", "covariance", "priors", "coef", "intercept"):
        arrays[f"lda.{name}"] = getattr(lda, name)


def _lda_from_arrays(arrays, shrinkage):
    return LdaModel(*(arrays[f"lda.{n}"] for n in ("means", "covariance", "priors", "coef", "intercept")),
                    shrinkage=shrinkage)


def save_baseline(path, model) -> None:
    """Write a fitted CspLda or Fbcsp into the shared checkpoint container."""
    arrays: dict[str, np.ndarray] = {}
    if isinstance(model, CspLda):
        _csp_arrays("", model.csp, arrays)
        _lda_arrays(model.lda, arrays)
        cfg = {"n_pairs": model.n_pairs, "band": model.band, "shrinkage": model.shrinkage,
               "order": model.order, "sfreq": model.sfreq, "n_classes": len(model.csp)}
        save_checkpoint(path, "csp_lda", cfg, arrays)
    elif isinstance(model, Fbcsp):
        for b, models in enumerate(model.csp):
            _csp_arrays(f"band{b}.", models, arrays)
        _lda_arrays(model.lda, arrays)
        arrays["selected"] = model.selected.astype(np.float64)
        cfg = {"bank": dataclasses.asdict(model.bank), "n_pairs": model.n_pairs, "k_select": model.k_select,
               "shrinkage": model.shrinkage, "mi_bins": model.mi_bins, "sfreq": model.sfreq,
               "n_classes": len(model.csp[0])}
        save_checkpoint(path, "fbcsp", cfg, arrays)
    else:
        raise ContractError(f"save_baseline: unsupported model {type(model).__name__}")


def load_baseline(path):
    kind, cfg, arrays, _ = load_checkpoint(path)
    if kind == "csp_lda":
        band = tuple(cfg["band"]) if cfg["band"] is not None else None
        m = CspLda(cfg["n_pairs"], band, cfg["shrinkage"], cfg["order"], sfreq=cfg["sfreq"])
        m.csp = _csp_from_arrays("", arrays, cfg["n_classes"])
        m.lda = _lda_from_arrays(arrays, cfg["shrinkage"])
        return m
    if kind == "fbcsp":
        bank = FilterBank([tuple(b) for b in cfg["bank"]["bands"]], cfg["bank"]["order"], cfg["bank"]["method"])
        m = Fbcsp(bank, cfg["n_pairs"], cfg["k_select"], cfg["shrinkage"], cfg["mi_bins"], sfreq=cfg["sfreq"])
        m.csp = [_csp_from_arrays(f"band{b}.", arrays, cfg["n_classes"]) for b in range(len(bank.bands))]
        m.lda = _lda_from_arrays(arrays, cfg["shrinkage"])
        m.selected = arrays["selected"].astype(np.int64)
        return m
    raise ConfigError(f"checkpoint kind {kind!r} is not a baseline")


# ---------------------------------------------------------------- CV runners


def _score(model, ds: Dataset) -> float:
    return float(np.mean(model.predict(ds.X) == ds.y))


def run_csp_fold(fold, seed, train, val, test, n_pairs=3, band=(4.0, 40.0), shrinkage=0.1) -> FoldReport:
    model = CspLda(n_pairs, band, shrinkage).fit(train)
    va = _score(model, val)
    return FoldReport(fold=fold, seed=seed, val_accuracy=[va], best_val_accuracy=va,
                      test_accuracy=_score(model, test), n_train=len(train), n_val=len(val), n_test=len(test))


def run_fbcsp_fold(fold, seed, train, val, test, bands=None, n_pairs=3, k_select=8, shrinkage=0.1,
                   order=4) -> FoldReport:
    bank = FilterBank([tuple(b) for b in bands], order) if bands is not None else FilterBank(order=order)
    model = Fbcsp(bank, n_pairs, k_select, shrinkage).fit(train)
    va = _score(model, val)
    return FoldReport(fold=fold, seed=seed, val_accuracy=[va], best_val_accuracy=va,
                      test_accuracy=_score(model, test), n_train=len(train), n_val=len(val), n_test=len(test),
                      extra={"selected_bands": model.selected_bands(),
                             "selected_features": model.selected.tolist()})
