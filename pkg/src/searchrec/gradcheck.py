"""Central-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, eval_mode, no_grad


@dataclass
class GradCheckReport:
    tol: float
    h: float
    errors: dict = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors.values())

    def failures(self):
        return {n: e for n, e in self.errors.items() if e >= self.tol}

    def to_dict(self):
        return {"passed": self.passed, "max_rel_error": self.max_rel_error, "tol": self.tol,
                "h": self.h, "per_param": dict(self.errors)}


def rel_error(analytic, numeric) -> float:
    """Max elementwise discrepancy, relative to the larger of the two gradients' scale.

    Normalizing by the tensor scale (rather than per element) keeps entries
    whose true gradient is ~0 from dominating through round-off.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    diff = np.abs(analytic - numeric).max(initial=0.0)
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)


def grad_check(f, params, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare backprop gradients of scalar ``f()`` against central differences.

    ``params`` is an iterable of ``(name, Tensor)``.  ``f`` must be
    deterministic; it is evaluated with dropout disabled.
    """
    params = list(params)
    report = GradCheckReport(tol=tol, h=h)
    with eval_mode():
        for _, p in params:
            p.grad = None
        loss = f()
        loss.backward()
        analytic = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                    for n, p in params}
        for name, p in params:
            numeric = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            nflat = numeric.reshape(-1)
            with no_grad():
                for i in range(flat.size):
                    old = flat[i]
                    flat[i] = old + h
                    fp = float(f().data)
                    flat[i] = old - h
                    fm = float(f().data)
                    flat[i] = old
                    nflat[i] = (fp - fm) / (2.0 * h)
            report.errors[name] = rel_error(analytic[name], numeric)
        for _, p in params:
            p.grad = None
    return report


def check_tensor_fn(fn, inputs, h=1e-6, tol=1e-6):
    """Gradient check for a function of raw arrays; returns a report keyed by input index."""
    tensors = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]

    def f():
        return fn(*tensors)

    return grad_check(f, [(str(i), t) for i, t in enumerate(tensors)], h=h, tol=tol)
