"""SGD and AdamW over a fixed, named parameter set."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, ContractError

KINDS = ("sgd", "adamw")


@dataclass
class OptimizerState:
    kind: str = "adamw"
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    momentum: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in KINDS:
            raise ConfigError(f"optimizer kind: expected one of {KINDS}, got {self.kind!r}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate: must be >= 0, got {self.learning_rate}")


class Optimizer:
    """Updates the registered parameters in place from their ``.grad``.

    SGD applies ``p -= lr * g`` with optional heavy-ball momentum and ignores
    ``weight_decay``. AdamW decays weights directly, ``p -= lr * wd * p``,
    alongside the bias-corrected Adam step.
    """

    def __init__(self, params: dict[str, Tensor], state: OptimizerState):
        self.params = dict(params)
        self.state = state
        for name, p in self.params.items():
            if state.kind == "adamw":
                state.buffers[name] = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
            elif state.momentum:
                state.buffers[name] = {"velocity": np.zeros_like(p.data)}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        missing = [n for n, p in self.params.items() if p.grad is None]
        if missing:
            raise ContractError(f"optimizer step: no gradient for {missing[:5]}")
        st = self.state
        st.step_count += 1
        lr, wd = st.learning_rate, st.weight_decay
        if st.kind == "sgd":
            for name, p in self.params.items():
                g = p.grad
                if st.momentum:
                    buf = st.buffers[name]["velocity"]
                    buf *= st.momentum
                    buf += g
                    g = buf
                p.data = p.data - lr * g
            return
        b1, b2 = st.betas
        c1 = 1.0 - b1 ** st.step_count
        c2 = 1.0 - b2 ** st.step_count
        for name, p in self.params.items():
            buf = st.buffers[name]
            g = p.grad
            buf["m"] = b1 * buf["m"] + (1.0 - b1) * g
            buf["v"] = b2 * buf["v"] + (1.0 - b2) * g * g
            decayed = p.data - lr * wd * p.data
            p.data = decayed - lr * (buf["m"] / c1) / (np.sqrt(buf["v"] / c2) + st.eps)


def make_optimizer(params: dict[str, Tensor], kind="adamw", learning_rate=1e-4,
                   weight_decay=0.01, **kw) -> Optimizer:
    return Optimizer(params, OptimizerState(kind=kind, learning_rate=learning_rate,
                                            weight_decay=weight_decay, **kw))
