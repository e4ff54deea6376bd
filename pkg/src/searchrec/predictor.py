"""Scoring heads and training objective."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor

SIGMOID_CLAMP = 1e-7


def _candidate_embeddings(product_table: Tensor, candidates) -> Tensor:
    candidates = np.asarray(candidates, dtype=np.int64)
    if (candidates == 0).any():
        raise ValueError("candidate list contains the padding id 0")
    return ag.embedding(product_table, candidates)


def score_rec(f: Tensor, product_table: Tensor, candidates) -> Tensor:
    """Inner product of the user representation with each candidate embedding.

    ``f`` is B x d and ``candidates`` B x C; a single d-vector with a flat
    candidate list is also accepted.
    """
    single = f.ndim == 1
    if single:
        f = f.reshape(1, -1)
        candidates = np.asarray(candidates)[None]
    e = _candidate_embeddings(product_table, candidates)
    B, C, d = e.shape
    scores = (e @ f.reshape(B, d, 1)).reshape(B, C)
    return scores[0] if single else scores


def blend(f_p: Tensor, f_q: Tensor, w: Tensor) -> Tensor:
    """w * f_p + (1 - w) * f_q (exactly f_p at w = 1 and f_q at w = 0)."""
    return f_p * w + f_q * (1.0 - w)


def score_search(f_p: Tensor, f_q: Tensor, w: Tensor, product_table: Tensor, candidates) -> Tensor:
    return score_rec(blend(f_p, f_q, w), product_table, candidates)


def balance_weight(w_param: Tensor, mode: str = "sigmoid") -> Tensor:
    return ag.sigmoid(w_param) if mode == "sigmoid" else w_param


def bce_loss(pos: Tensor, neg: Tensor) -> Tensor:
    """-[log s(pos) + sum log(1 - s(neg))], averaged over batch rows.

    ``pos`` is B, ``neg`` is B x n.  Probabilities are clamped away from 0 and
    1 before the log.
    """
    if neg.ndim == 1:
        neg = neg.reshape(1, -1)
        pos = pos.reshape(1)
    if neg.shape[-1] < 1:
        raise ValueError("bce_loss needs at least one negative")
    lo, hi = SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP
    p_pos = ag.clip(ag.sigmoid(pos), lo, hi)
    p_neg = ag.clip(ag.sigmoid(-neg), lo, hi)
    per_row = ag.log(p_pos) + ag.log(p_neg).sum(axis=-1)
    return -per_row.mean()


def joint_loss(predict: Tensor, ssl: Tensor, alpha: float) -> Tensor:
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return predict + ag.scale(ssl, alpha)
