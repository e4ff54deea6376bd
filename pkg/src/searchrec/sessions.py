"""Learnable intent-oriented sessions: layout prediction, pooling, enhancement, SSL loss.

All batched functions work on left-padded B x W tensors.  Session
coordinates are local to each row's valid region: position ``t`` occupies
the unit interval [t, t+1) and belongs to a session when its midpoint
``t + 0.5`` lies inside the session range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .embedding import local_positions
from .optim import ParamRegistry, xavier_init


def length_bias(dtype=np.float64) -> float:
    """Bias whose tanh is exactly 0.5 in ``dtype``, so W = 0 reproduces the uniform split."""
    b = np.asarray(math.atanh(0.5), dtype=dtype)
    for _ in range(64):
        t = np.tanh(b)
        if t == 0.5:
            break
        b = np.nextafter(b, np.asarray(np.inf if t < 0.5 else -np.inf, dtype=dtype))
    return float(b)


@dataclass
class SessionLayout:
    centers: np.ndarray
    offsets: np.ndarray
    half_lengths: np.ndarray
    left: np.ndarray
    right: np.ndarray
    membership: np.ndarray | None = None

    @property
    def ranges(self):
        return list(zip(self.left.tolist(), self.right.tolist()))


def init_uniform(T: int, N: int, dtype=np.float64) -> SessionLayout:
    """Split [0, T] into N equal, non-overlapping sessions."""
    if not 1 <= N <= T:
        raise ValueError(f"need 1 <= N <= T, got N={N}, T={T}")
    left, right, centers = (a[0] for a in uniform_split(np.asarray([T], dtype=dtype), N))
    return SessionLayout(centers, np.zeros(N, dtype=dtype), (right - left) / 2, left, right,
                         hard_membership(left[None], right[None], np.array([T]), T)[0])


def uniform_split(lengths, N):
    """Left edges, right edges and centers (each B x N) of the uniform split of each row.

    Edges are computed as ``i * V / N`` so neighbouring sessions share the
    exact same boundary value.
    """
    lengths = np.asarray(lengths)
    width = (lengths / N)[:, None]
    i = np.arange(N + 1, dtype=lengths.dtype)[None, :]
    edges = i * width
    centers = (i[:, :N] + 0.5) * width
    return edges[:, :N], edges[:, 1:], centers


def hard_membership(left, right, lengths, width):
    """B x N x W indicator of ``left <= t + 0.5 < right`` on valid positions."""
    mid = local_positions(lengths, width)[:, None, :] + 0.5
    valid = mid > 0
    return ((mid >= left[..., None]) & (mid < right[..., None]) & valid).astype(np.float64)


def _nearest_onehot(centers, lengths, width):
    t = np.clip(np.floor(centers), 0, np.asarray(lengths)[:, None] - 1).astype(np.int64)
    col = t + (width - np.asarray(lengths))[:, None]
    out = np.zeros(centers.shape + (width,))
    np.put_along_axis(out, col[..., None], 1.0, axis=-1)
    return out


def gap_layout(times, lengths, width, N):
    """Sessions cut at the N-1 largest time gaps of each row (ties: earliest gap).

    Rows with fewer than N valid positions fall back to the uniform split.
    Returns (left, right) as B x N arrays in local coordinates.
    """
    times = np.asarray(times, dtype=np.float64)
    lengths = np.asarray(lengths)
    B = len(lengths)
    left = np.zeros((B, N))
    right = np.zeros((B, N))
    for b in range(B):
        V = int(lengths[b])
        if V < N:
            lo, hi, _ = uniform_split(np.array([float(V)]), N)
            left[b], right[b] = lo[0], hi[0]
            continue
        row = times[b, width - V:width]
        gaps = np.diff(row)
        cut = np.sort(np.argsort(-gaps, kind="stable")[:N - 1]) + 1
        edges = np.concatenate([[0], cut, [V]]).astype(np.float64)
        left[b], right[b] = edges[:-1], edges[1:]
    return left, right


class IntentSessions:
    """Session layout predictor shared by every branch and scenario."""

    def __init__(self, W: Tensor, b: Tensor, N: int, tau: float = 1.0):
        self.W = W
        self.b = b
        self.N = N
        self.tau = tau

    @staticmethod
    def register(registry: ParamRegistry, prefix: str, N: int, d: int, rng, dtype):
        registry.add(f"{prefix}.W", xavier_init((N * d, 2 * N), rng, dtype))
        registry.add(f"{prefix}.b", np.full(N, length_bias(dtype), dtype=dtype))

    # ------------------------------------------------------------------ layout

    def chunk_means(self, H: Tensor, lengths, width) -> Tensor:
        """Means of H over the initial uniform chunks: B x N x d."""
        dtype = H.dtype
        lengths = np.asarray(lengths)
        lo, hi, centers = uniform_split(lengths.astype(np.float64), self.N)
        member = hard_membership(lo, hi, lengths, width)
        counts = member.sum(-1, keepdims=True)
        empty = counts[..., 0] == 0
        if empty.any():
            member = np.where(empty[..., None], _nearest_onehot(centers, lengths, width), member)
            counts = member.sum(-1, keepdims=True)
        return Tensor((member / counts).astype(dtype)) @ H

    def predict(self, H: Tensor, lengths, width):
        """Predicted ranges. Returns dict with Tensors ``left``, ``right``, ``offsets``, ``half``."""
        dtype = H.dtype
        B = H.shape[0]
        N = self.N
        V = np.asarray(lengths, dtype=dtype)[:, None]
        means = self.chunk_means(H, lengths, width)
        f = ag.relu(means.reshape(B, N * H.shape[-1])) @ self.W
        lo, hi, centers = uniform_split(np.asarray(lengths, dtype=dtype), N)
        offsets = ag.tanh(f[:, :N]) * Tensor((0.5 * (V / N)).astype(dtype))
        half = ag.relu(ag.tanh(f[:, N:] + self.b)) * Tensor((V / N).astype(dtype))
        # centre +- half-length, written relative to the uniform edges so that
        # zero offsets and initial lengths give back those edges bit for bit
        shrink = Tensor((0.5 * (V / N)).astype(dtype)) - half
        lo_t = Tensor(lo.astype(dtype)) + offsets + shrink
        hi_t = Tensor(hi.astype(dtype)) + offsets - shrink
        Vb = np.broadcast_to(V, (B, N))
        left = ag.clip(lo_t, 0.0, Vb)
        right = ag.clip(hi_t, 0.0, Vb)
        narrow = (right.data - left.data) < 1.0
        if narrow.any():
            c = ag.clip(ag.scale(left + right, 0.5), 0.5, Vb - 0.5)
            left = ag.where(narrow, c - Tensor(np.asarray(0.5, dtype=dtype)), left)
            right = ag.where(narrow, c + Tensor(np.asarray(0.5, dtype=dtype)), right)
        return {"left": left, "right": right, "offsets": offsets, "half": half,
                "centers": centers.astype(dtype)}

    # ------------------------------------------------------------------ pooling

    def soft_membership(self, left: Tensor, right: Tensor, lengths, width, tau=None) -> Tensor:
        tau = self.tau if tau is None else tau
        dtype = left.dtype
        B, N = left.shape
        mid = (local_positions(lengths, width) + 0.5).astype(dtype)[:, None, :]
        valid = Tensor((mid > 0).astype(dtype))
        zl = ag.scale(Tensor(mid) - left.reshape(B, N, 1), 1.0 / tau)
        zr = ag.scale(right.reshape(B, N, 1) - Tensor(mid), 1.0 / tau)
        return ag.sigmoid(zl) * ag.sigmoid(zr) * valid

    def membership(self, layout, lengths, width, mode="soft", tau=None) -> Tensor:
        if mode == "soft":
            return self.soft_membership(layout["left"], layout["right"], lengths, width, tau)
        left, right = _data(layout["left"]), _data(layout["right"])
        return Tensor(hard_membership(left, right, lengths, width).astype(layout["left"].dtype))

    @staticmethod
    def reps(H: Tensor, member: Tensor, centers=None, lengths=None) -> Tensor:
        """Weighted session means: B x N x d."""
        den = member.data.sum(-1)
        if (den <= 1e-12).any() and centers is not None:
            width = H.shape[1]
            fallback = _nearest_onehot(np.asarray(centers), lengths, width).astype(H.dtype)
            empty = (den <= 1e-12)[..., None]
            member = ag.where(np.broadcast_to(empty, member.shape), Tensor(fallback), member)
        total = member.sum(axis=-1, keepdims=True)
        return (member @ H) / total

    @staticmethod
    def enhance(H: Tensor, member: Tensor, reps: Tensor) -> Tensor:
        """F_t = H_t + sum_i member[i, t] * I_i."""
        return H + member.transpose(0, 2, 1) @ reps


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def ssl_loss(I_p: Tensor, I_q: Tensor | None = None) -> Tensor:
    """Adjacent-session cosine (pushed down) minus cross-branch alignment (pulled up).

    Inputs are B x N x d; returns the mean over the batch of the per-sequence sum.
    """
    B, N, _ = I_p.shape
    dtype = I_p.dtype
    if N > 1:
        loss = ag.cosine(I_p[:, :-1], I_p[:, 1:]).sum(axis=-1)
        if I_q is not None:
            loss = loss + ag.cosine(I_q[:, :-1], I_q[:, 1:]).sum(axis=-1)
    else:
        loss = Tensor(np.zeros(B, dtype=dtype))
    if I_q is not None:
        loss = loss - ag.cosine(I_p, I_q).sum(axis=-1)
    return loss.mean()


# ------------------------------------------------------------------ single-sequence API

def predict_layout(H, sessions: IntentSessions, valid_length: int) -> SessionLayout:
    """Layout of one sequence ``H`` (T x d) whose first ``valid_length`` rows are real."""
    H = H if isinstance(H, Tensor) else Tensor(H)
    T = H.shape[0]
    Hb = H[T - valid_length:].reshape(1, valid_length, H.shape[1])
    out = sessions.predict(Hb, [valid_length], valid_length)
    left, right = out["left"].data[0], out["right"].data[0]
    return SessionLayout(out["centers"][0], out["offsets"].data[0], out["half"].data[0], left, right,
                         hard_membership(left[None], right[None], [valid_length], valid_length)[0])


def session_reps(H, layout: SessionLayout, mode="hard", tau=1.0) -> Tensor:
    """N x d session means for a single fully valid sequence ``H`` (T x d)."""
    H = H if isinstance(H, Tensor) else Tensor(H)
    T = H.shape[0]
    member = _single_membership(layout, T, mode, tau, H.dtype)
    return IntentSessions.reps(H.reshape(1, T, H.shape[1]), member,
                               layout.centers[None], [T])[0]


def enhance(H, reps, layout: SessionLayout, mode="hard", tau=1.0) -> Tensor:
    H = H if isinstance(H, Tensor) else Tensor(H)
    reps = reps if isinstance(reps, Tensor) else Tensor(reps)
    T, d = H.shape
    member = _single_membership(layout, T, mode, tau, H.dtype)
    return IntentSessions.enhance(H.reshape(1, T, d), member, reps.reshape(1, -1, d))[0]


def _single_membership(layout, T, mode, tau, dtype):
    left = np.asarray(layout.left, dtype=dtype)[None]
    right = np.asarray(layout.right, dtype=dtype)[None]
    if mode == "hard":
        return Tensor(hard_membership(left, right, [T], T).astype(dtype))
    helper = IntentSessions(None, None, left.shape[1], tau)
    return helper.soft_membership(Tensor(left), Tensor(right), [T], T)
