"""Parameters, initialization, Adam and the warmup-and-decay schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import ConfigError, Tensor


class ParamRegistry:
    """Named parameters plus aliases that resolve to the same storage.

    Aliasing is how parameter sharing is expressed: ``alias("a", "b")`` makes
    ``registry["a"]`` return the very same :class:`Tensor` object as
    ``registry["b"]``.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.aliases: dict[str, str] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self.params or name in self.aliases:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def alias(self, alias: str, canonical: str):
        canonical = self.resolve(canonical)
        if canonical not in self.params:
            raise KeyError(f"cannot alias {alias!r} to unknown parameter {canonical!r}")
        if alias in self.params:
            raise KeyError(f"{alias!r} is already a canonical parameter")
        self.aliases[alias] = canonical

    def resolve(self, name: str) -> str:
        while name in self.aliases:
            name = self.aliases[name]
        return name

    def __getitem__(self, name: str) -> Tensor:
        return self.params[self.resolve(name)]

    def __contains__(self, name):
        return self.resolve(name) in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def names(self):
        return list(self.params)

    def count(self, prefix: str = "") -> int:
        return sum(p.data.size for n, p in self.params.items() if n.startswith(prefix))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, arr in state.items():
            p = self.params[n]
            if p.data.shape != arr.shape:
                raise ValueError(f"{n}: shape {arr.shape} != {p.data.shape}")
            p.data[...] = arr


def xavier_init(shape, rng_seed, dtype=np.float64):
    """Uniform Glorot init on +-sqrt(6 / (fan_in + fan_out)).

    Shapes that are not 2-D use the last axis size for both fans.
    """
    shape = tuple(shape)
    if len(shape) == 2:
        fan_in, fan_out = shape
    else:
        fan_in = fan_out = shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def lr_at(step: int, d: int, warmup: int) -> float:
    """Inverse-square-root decay after a linear warmup, scaled by d**-0.5."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    return d ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def state_dict(self):
        out = {"t": np.asarray(self.t), "beta1": np.asarray(self.beta1),
               "beta2": np.asarray(self.beta2), "eps": np.asarray(self.eps)}
        for n, a in self.m.items():
            out[f"m/{n}"] = a.copy()
        for n, a in self.v.items():
            out[f"v/{n}"] = a.copy()
        return out

    @classmethod
    def from_state_dict(cls, state):
        s = cls(float(state["beta1"]), float(state["beta2"]), float(state["eps"]), int(state["t"]))
        for k, a in state.items():
            if k.startswith("m/"):
                s.m[k[2:]] = np.array(a)
            elif k.startswith("v/"):
                s.v[k[2:]] = np.array(a)
        return s


def adam_step(params: ParamRegistry, state: AdamState, lr: float):
    """One bias-corrected Adam update over every parameter, then zero grads."""
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params:
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / c1
        vhat = v / c2
        p.data -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)
    params.zero_grad()
