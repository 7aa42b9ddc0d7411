"""The factorization network: two convolutional feature extractors, a
discriminator over extracted features, and an MLP over both feature sets.

Extractor layout (generator and class-specific branch are identical)::

    (1, C, T) --conv (1 x k_t)--> --conv (C x 1)--> ELU --avgpool (1 x k_p, stride s_p)--> flatten

The temporal and spatial convolutions form a linear pair, so by default they
run as one convolution with the composed (C x k_t) kernel. Setting
``elu_between_convs`` inserts an ELU between them and evaluates both stages.

With 22 channels and 1001 samples this is 40x22x950 -> 40x1x950 -> 40x1x64,
i.e. 2560 features per branch and 5120 after concatenation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .data import EegTrial
from .errors import ConfigError, DimensionError

BRANCHES = ("generator", "specific")


@dataclass
class ModelConfig:
    n_channels: int = 22
    n_samples: int = 1001
    n_classes: int = 4
    conv_filters: int = 40
    temporal_kernel: int = 52
    pool_kernel: int = 68
    pool_stride: int = 14
    discriminator_out: int = 1
    discriminator_hidden: tuple[int, ...] = (1280, 1280)
    mlp_hidden: tuple[int, ...] = (2560, 1280)
    elu_alpha: float = 1.0
    elu_between_convs: bool = False

    def __post_init__(self):
        self.discriminator_hidden = tuple(int(h) for h in self.discriminator_hidden)
        self.mlp_hidden = tuple(int(h) for h in self.mlp_hidden)

    @property
    def conv_length(self) -> int:
        return self.n_samples - self.temporal_kernel + 1

    @property
    def pooled_length(self) -> int:
        return (self.conv_length - self.pool_kernel) // self.pool_stride + 1

    @property
    def feature_length(self) -> int:
        return self.conv_filters * self.pooled_length

    @property
    def fused_length(self) -> int:
        return 2 * self.feature_length

    def validate(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                continue
            if isinstance(v, tuple):
                if any(h <= 0 for h in v):
                    raise ConfigError(f"{f.name}: all sizes must be positive, got {v}")
            elif v <= 0:
                raise ConfigError(f"{f.name}: must be positive, got {v}")
        if self.conv_length <= 0:
            raise ConfigError(
                f"temporal_kernel: n_samples - temporal_kernel + 1 = {self.conv_length} must be positive")
        if self.pool_kernel > self.conv_length or self.pooled_length <= 0:
            raise ConfigError(
                "pool_kernel: feature length conv_filters * floor((n_samples - temporal_kernel + 1"
                f" - pool_kernel) / pool_stride + 1) = {self.conv_filters} * floor(({self.conv_length}"
                f" - {self.pool_kernel}) / {self.pool_stride} + 1) is not positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["discriminator_hidden"] = list(self.discriminator_hidden)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"model: unknown field(s) {sorted(unknown)}")
        return cls(**d)


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class FactorModel:
    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def group(self, *prefixes: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.split(".", 1)[0] in prefixes}

    def parameter_counts(self) -> dict[str, int]:
        counts = {p: 0 for p in (*BRANCHES, "discriminator", "mlp")}
        for k, v in self.params.items():
            counts[k.split(".", 1)[0]] += v.size
        counts["total"] = sum(counts.values())
        return counts

    def layer_shapes(self, branch: str) -> list[tuple[str, tuple[int, ...]]]:
        return [(k.split(".", 1)[1], v.shape) for k, v in self.params.items() if k.startswith(branch + ".")]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for k, v in self.params.items():
            if arrays[k].shape != v.shape:
                raise DimensionError(f"{k}: stored shape {arrays[k].shape} != model shape {v.shape}")
            v.data = np.array(arrays[k], dtype=np.float64)

    def save(self, path, meta: dict | None = None):
        save_checkpoint(path, "factor", self.config.to_dict(), self.state_arrays(), meta)


def build_model(config: ModelConfig | None = None, seed: int = 0) -> FactorModel:
    """Allocate all four sub-networks with Glorot-uniform weights and zero biases."""
    cfg = config or ModelConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    F, C, kt = cfg.conv_filters, cfg.n_channels, cfg.temporal_kernel
    params: dict[str, np.ndarray] = {}
    for branch in BRANCHES:
        params[f"{branch}.conv1.weight"] = _glorot(rng, (F, 1, 1, kt), kt, F * kt)
        params[f"{branch}.conv1.bias"] = np.zeros(F)
        params[f"{branch}.conv2.weight"] = _glorot(rng, (F, F, C, 1), F * C, F * C)
        params[f"{branch}.conv2.bias"] = np.zeros(F)

    def dense(prefix, sizes):
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            params[f"{prefix}.fc{i + 1}.weight"] = _glorot(rng, (n_out, n_in), n_in, n_out)
            params[f"{prefix}.fc{i + 1}.bias"] = np.zeros(n_out)

    dense("discriminator", (cfg.feature_length, *cfg.discriminator_hidden, cfg.discriminator_out))
    dense("mlp", (cfg.fused_length, *cfg.mlp_hidden, cfg.n_classes))
    return FactorModel(cfg, {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()})


def load_model(path) -> FactorModel:
    kind, config, arrays, _ = load_checkpoint(path)
    if kind != "factor":
        raise ConfigError(f"checkpoint kind is {kind!r}, expected 'factor'")
    model = build_model(ModelConfig.from_dict(config))
    model.load_arrays(arrays)
    return model


# ---------------------------------------------------------------- forward passes


def _as_input(model: FactorModel, trial) -> tuple[Tensor, bool]:
    """Coerce a trial, (C, T) array or (B, C, T) batch to (B, 1, C, T)."""
    if isinstance(trial, EegTrial):
        trial = trial.samples
    x = trial.data if isinstance(trial, Tensor) else np.asarray(trial, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    cfg = model.config
    if x.ndim != 3:
        raise DimensionError(f"expected (channels, time) or (batch, channels, time), got shape {x.shape}")
    if x.shape[1] != cfg.n_channels:
        raise DimensionError(f"channel axis has {x.shape[1]} channels, model expects {cfg.n_channels}")
    if x.shape[2] != cfg.n_samples:
        raise DimensionError(f"time axis has {x.shape[2]} samples, model expects {cfg.n_samples}")
    return Tensor(x[:, None]), single


def _extract(model: FactorModel, branch: str, trial) -> Tensor:
    x, single = _as_input(model, trial)
    p, cfg = model.params, model.config
    w1, b1 = p[f"{branch}.conv1.weight"], p[f"{branch}.conv1.bias"]
    w2, b2 = p[f"{branch}.conv2.weight"], p[f"{branch}.conv2.bias"]
    if cfg.elu_between_convs:
        h = ad.elu(ad.conv2d(x, w1, b1), cfg.elu_alpha)
        h = ad.conv2d(h, w2, b2)
    else:
        # conv2(conv1(x)) == conv(x, sum_f w2[o,f,h] * w1[f,k]) with the bias folded through
        kernel = ad.einsum("ofh,fk->ohk", ad.reshape(w2, w2.shape[:3]), ad.reshape(w1, (w1.shape[0], -1)))
        bias = ad.add(ad.einsum("ofh,f->o", ad.reshape(w2, w2.shape[:3]), b1), b2)
        h = ad.conv2d(x, ad.reshape(kernel, (kernel.shape[0], 1) + kernel.shape[1:]), bias)
    h = ad.elu(h, cfg.elu_alpha)
    h = ad.avgpool2d(h, (1, cfg.pool_kernel), (1, cfg.pool_stride))
    h = ad.flatten(h, start=1)
    return ad.reshape(h, (-1,)) if single else h


def extract_common(model: FactorModel, trial) -> Tensor:
    """Generator features. Accepts a single trial or a batch."""
    return _extract(model, "generator", trial)


def extract_class_specific(model: FactorModel, trial) -> Tensor:
    return _extract(model, "specific", trial)


def _mlp(model, prefix, x: Tensor) -> Tensor:
    i = 1
    while f"{prefix}.fc{i + 1}.weight" in model.params:
        x = ad.elu(ad.linear(x, model.params[f"{prefix}.fc{i}.weight"], model.params[f"{prefix}.fc{i}.bias"]),
                   model.config.elu_alpha)
        i += 1
    return ad.linear(x, model.params[f"{prefix}.fc{i}.weight"], model.params[f"{prefix}.fc{i}.bias"])


def _check_feature(model, feature: Tensor, what: str):
    n = model.config.feature_length
    if feature.shape[-1] != n:
        raise DimensionError(f"{what}: feature axis has length {feature.shape[-1]}, expected {n}")


def discriminate(model: FactorModel, feature) -> Tensor:
    """Raw discriminator outputs, shape (..., discriminator_out)."""
    feature = ad.as_tensor(feature)
    _check_feature(model, feature, "discriminate")
    return _mlp(model, "discriminator", feature)


def discriminator_score(model: FactorModel, feature) -> Tensor:
    """One real/fake logit per sample; multi-output heads are mean-pooled."""
    out = discriminate(model, feature)
    if model.config.discriminator_out == 1:
        return ad.reshape(out, out.shape[:-1] or (1,))
    return ad.mean(out, axis=-1)


def classify(model: FactorModel, common, specific) -> Tensor:
    """Class logits from concatenated (common, class-specific) features."""
    common, specific = ad.as_tensor(common), ad.as_tensor(specific)
    _check_feature(model, common, "classify(common)")
    _check_feature(model, specific, "classify(specific)")
    return _mlp(model, "mlp", ad.concat([common, specific], axis=-1))


def predict_logits(model: FactorModel, X, batch_size: int = 64) -> np.ndarray:
    """Inference over a (B, C, T) array without recording gradients."""
    X = np.asarray(X)
    out = []
    for s in range(0, X.shape[0], batch_size):
        xb = X[s:s + batch_size]
        out.append(classify(model, extract_common(model, xb), extract_class_specific(model, xb)).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.n_classes))
