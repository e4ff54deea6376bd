"""End-to-end gradient gate on a toy model."""
from __future__ import annotations

import numpy as np

from .config import RunConfig
from .data import Example, UserLog, collate, preprocess
from .gradcheck import GradCheckReport, grad_check
from .model import SearchRecModel

TOY_CONFIG = RunConfig(d=8, h=2, L=2, N=2, dropout=0.0, precision="float64", max_len=16, w_max=3,
                       negatives_train=2)


def toy_dataset(users=2, length=8, products=6, words=6, seed=0):
    """``users`` users with ``length + 1`` random events in both scenarios."""
    rng = np.random.default_rng(seed)
    logs = []
    for u in range(1, users + 1):
        t = np.cumsum(rng.integers(1, 5, size=length + 1))
        rec = [(int(rng.integers(1, products + 1)), int(x)) for x in t]
        search = [(int(rng.integers(1, products + 1)), int(x),
                   tuple(int(w) for w in rng.integers(1, words + 1, size=rng.integers(1, 4))))
                  for x in t]
        logs.append(UserLog(u, rec, search))
    return preprocess(logs, max_len=16, min_count=1, seed=seed)


def toy_batch(ds, scenario, length=8, n_neg=2):
    examples = [Example(u, 0, length) for u in ds.user_ids()]
    # shifted target ids: never the target itself, so positive and negative scores differ
    negs = np.array([[(ds.logs[ex.user].seq(scenario)[length][0] + k) % ds.n_products or 1
                      for k in range(1, n_neg + 1)] for ex in examples], dtype=np.int64)
    return collate(ds, examples, scenario, negs, w_max=3)


def model_grad_check(scenario, config: RunConfig = TOY_CONFIG, h=1e-6, tol=1e-4, seed=0) -> GradCheckReport:
    """Finite-difference check of every learnable tensor reached by the joint loss."""
    ds = toy_dataset(seed=seed)
    model = SearchRecModel(config.replace(seed=seed), ds.n_users, ds.n_products, ds.n_words)
    batch = toy_batch(ds, scenario, n_neg=config.negatives_train)

    def f():
        return model.loss(batch, scenario)[0]

    return grad_check(f, list(model.registry), h=h, tol=tol)
