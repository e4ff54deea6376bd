"""Parameter-shared dual-branch encoder: self-attention, cross-attention, FFN."""
from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .optim import ParamRegistry, xavier_init

ATTN_KEYS = ("wq", "wk", "wv", "wo")


def layer_param_shapes(d: int, d_ff: int, cross: bool = True):
    shapes = {}
    subs = ("msa", "mca") if cross else ("msa",)
    for sub in subs:
        for k in ATTN_KEYS:
            shapes[f"{sub}.{k}"] = (d, d)
    shapes["ffn.w1"] = (d, d_ff)
    shapes["ffn.b1"] = (d_ff,)
    shapes["ffn.w2"] = (d_ff, d)
    shapes["ffn.b2"] = (d,)
    for ln in (("ln1", "ln2", "ln3") if cross else ("ln1", "ln3")):
        shapes[f"{ln}.g"] = (d,)
        shapes[f"{ln}.b"] = (d,)
    return shapes


def register_stack(registry: ParamRegistry, prefix: str, L: int, d: int, d_ff: int,
                   rng: np.random.Generator, dtype, cross: bool = True):
    """Create the parameters of an L-layer stack under ``prefix``."""
    for layer in range(L):
        for key, shape in layer_param_shapes(d, d_ff, cross).items():
            name = f"{prefix}.l{layer}.{key}"
            if key.endswith(".g"):
                data = np.ones(shape, dtype=dtype)
            elif key.endswith(".b") or key.startswith("ffn.b"):
                data = np.zeros(shape, dtype=dtype)
            else:
                data = xavier_init(shape, rng, dtype)
            registry.add(name, data)


def alias_stack(registry: ParamRegistry, alias_prefix: str, prefix: str, L: int, d: int,
                d_ff: int, cross: bool = True):
    for layer in range(L):
        for key in layer_param_shapes(d, d_ff, cross):
            registry.alias(f"{alias_prefix}.l{layer}.{key}", f"{prefix}.l{layer}.{key}")


class EncoderStack:
    """View of an L-layer stack's parameters as per-layer dicts of tensors.

    Two views built from aliased names hold the very same tensors, so
    sharing between branches or scenarios costs nothing extra.
    """

    def __init__(self, registry: ParamRegistry, prefix: str, L: int, h: int, cross: bool = True):
        self.prefix = prefix
        self.h = h
        self.cross = cross
        self.layers = []
        for layer in range(L):
            prefix_l = f"{prefix}.l{layer}."
            d = registry[prefix_l + "msa.wq"].shape[0]
            d_ff = registry[prefix_l + "ffn.w1"].shape[1]
            self.layers.append({k: registry[prefix_l + k]
                                for k in layer_param_shapes(d, d_ff, cross)})

    def tensors(self):
        seen = {}
        for layer in self.layers:
            for t in layer.values():
                seen[id(t)] = t
        return list(seen.values())

    def n_params(self):
        return sum(t.data.size for t in self.tensors())


def multi_head_attention(q_in: Tensor, kv_in: Tensor, wq, wk, wv, wo, h: int, key_mask=None):
    """Scaled dot-product attention over ``h`` heads, concatenated then projected.

    ``key_mask`` (B x Tk, True = valid) removes padded keys; a query row with
    no valid key gets zeros.
    """
    if q_in.ndim != 3 or kv_in.ndim != 3 or q_in.shape[0] != kv_in.shape[0] \
            or q_in.shape[2] != kv_in.shape[2]:
        raise ShapeError(f"attention: incompatible shapes {q_in.shape} and {kv_in.shape}")
    B, Tq, d = q_in.shape
    Tk = kv_in.shape[1]
    if d % h:
        raise ShapeError(f"attention: d={d} not divisible by h={h}")
    dh = d // h
    q = (q_in @ wq).reshape(B, Tq, h, dh).transpose(0, 2, 1, 3)
    k = (kv_in @ wk).reshape(B, Tk, h, dh).transpose(0, 2, 3, 1)
    v = (kv_in @ wv).reshape(B, Tk, h, dh).transpose(0, 2, 1, 3)
    scores = ag.scale(q @ k, 1.0 / math.sqrt(dh))
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[:, None, None, :]
    attn = ag.softmax(scores, mask)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(B, Tq, d)
    return out @ wo


def _sublayer(x, y, gamma, beta, p, rng):
    return ag.layer_norm(x + ag.dropout(y, p, rng), gamma, beta)


def _attn(prefix, layer, q_in, kv_in, h, key_mask):
    return multi_head_attention(q_in, kv_in, layer[f"{prefix}.wq"], layer[f"{prefix}.wk"],
                                layer[f"{prefix}.wv"], layer[f"{prefix}.wo"], h, key_mask)


def _ffn(layer, x):
    hidden = ag.relu(x @ layer["ffn.w1"] + layer["ffn.b1"])
    return hidden @ layer["ffn.w2"] + layer["ffn.b2"]


def encode_search(e_p: Tensor, e_q: Tensor, mask_p, mask_q, stack_p: EncoderStack,
                  stack_q: EncoderStack | None = None, dropout: float = 0.0, rng=None):
    """Encode the synchronized product and query branches.

    Per layer: self-attention within each branch, then cross-attention with
    the other branch as keys/values, then the FFN; every sub-layer is
    ``LayerNorm(x + Dropout(sublayer(x)))``.
    """
    stack_q = stack_q or stack_p
    Tp, Tq = e_p.shape[1], e_q.shape[1]
    if Tq not in (Tp, Tp + 1):
        raise ShapeError(f"encode_search: query width {Tq} must be {Tp} or {Tp + 1}")
    if len(stack_p.layers) != len(stack_q.layers):
        raise ShapeError("encode_search: branch stacks differ in depth")
    rng = rng if rng is not None else np.random.default_rng(0)
    hp, hq = e_p, e_q
    for lp, lq in zip(stack_p.layers, stack_q.layers):
        hp = _sublayer(hp, _attn("msa", lp, hp, hp, stack_p.h, mask_p), lp["ln1.g"], lp["ln1.b"], dropout, rng)
        hq = _sublayer(hq, _attn("msa", lq, hq, hq, stack_q.h, mask_q), lq["ln1.g"], lq["ln1.b"], dropout, rng)
        if stack_p.cross:
            cp = _attn("mca", lp, hp, hq, stack_p.h, mask_q)
            cq = _attn("mca", lq, hq, hp, stack_q.h, mask_p)
            hp = _sublayer(hp, cp, lp["ln2.g"], lp["ln2.b"], dropout, rng)
            hq = _sublayer(hq, cq, lq["ln2.g"], lq["ln2.b"], dropout, rng)
        hp = _sublayer(hp, _ffn(lp, hp), lp["ln3.g"], lp["ln3.b"], dropout, rng)
        hq = _sublayer(hq, _ffn(lq, hq), lq["ln3.g"], lq["ln3.b"], dropout, rng)
    return hp, hq


def encode_rec(e_p: Tensor, mask_p, stack: EncoderStack, dropout: float = 0.0, rng=None):
    """Product branch only; cross-attention degenerates to attention over itself."""
    rng = rng if rng is not None else np.random.default_rng(0)
    hp = e_p
    for lp in stack.layers:
        hp = _sublayer(hp, _attn("msa", lp, hp, hp, stack.h, mask_p), lp["ln1.g"], lp["ln1.b"], dropout, rng)
        if stack.cross:
            hp = _sublayer(hp, _attn("mca", lp, hp, hp, stack.h, mask_p), lp["ln2.g"], lp["ln2.b"], dropout, rng)
        hp = _sublayer(hp, _ffn(lp, hp), lp["ln3.g"], lp["ln3.b"], dropout, rng)
    return hp
