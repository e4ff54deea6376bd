"""The dual-branch search/recommendation model and its ablation wiring."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import RunConfig
from .embedding import Embedder, SequenceBatch
from .encoder import EncoderStack, alias_stack, encode_rec, encode_search, register_stack
from .optim import ParamRegistry, xavier_init
from .predictor import balance_weight, bce_loss, blend, joint_loss, score_rec
from .sessions import IntentSessions, gap_layout, hard_membership, ssl_loss

SEARCH, REC = "search", "rec"
BRANCHES = (("search", "product"), ("search", "query"), ("rec", "product"))


def _stack_owner(variant: str, scenario: str, branch: str) -> str:
    """Canonical stack prefix serving a (scenario, branch) pair under ``variant``."""
    if variant == "woSEa" and branch == "query":
        return "enc.query"
    if variant == "woSEb" and scenario == REC:
        return "enc.rec"
    return "enc.shared"


class SearchRecModel:
    """Embeddings, shared encoder, session module and the two scoring heads."""

    def __init__(self, config: RunConfig, n_users: int, n_products: int, n_words: int):
        self.config = config
        self.vocab = (n_users, n_products, n_words)
        cfg = config
        dtype = cfg.dtype
        rng = np.random.default_rng([cfg.seed, 17])
        self.dropout_rng = np.random.default_rng([cfg.seed, 29])
        reg = self.registry = ParamRegistry()

        for name, n in (("user", n_users), ("product", n_products), ("word", n_words)):
            table = xavier_init((n, cfg.d), rng, dtype)
            table[0] = 0.0
            reg.add(f"emb.{name}", table)
        self.embedder = Embedder(reg["emb.user"], reg["emb.product"], reg["emb.word"], cfg.max_len)

        cross = cfg.variant != "woCA"
        owners = sorted({_stack_owner(cfg.variant, s, b) for s, b in BRANCHES})
        for owner in owners:
            register_stack(reg, owner, cfg.L, cfg.d, cfg.d_ff, rng, dtype, cross)
        self.stacks = {}
        for scenario, branch in BRANCHES:
            alias = f"enc.{scenario}.{branch}"
            alias_stack(reg, alias, _stack_owner(cfg.variant, scenario, branch),
                        cfg.L, cfg.d, cfg.d_ff, cross)
            self.stacks[(scenario, branch)] = EncoderStack(reg, alias, cfg.L, cfg.h, cross)

        IntentSessions.register(reg, "ism", cfg.N, cfg.d, rng, dtype)
        self.sessions = IntentSessions(reg["ism.W"], reg["ism.b"], cfg.N, cfg.tau)

        reg.add("pred.w", np.asarray(0.0 if cfg.w_param == "sigmoid" else 0.5, dtype=dtype))

    # ------------------------------------------------------------------ helpers

    @property
    def dtype(self):
        return self.config.dtype

    def weight(self) -> Tensor:
        return balance_weight(self.registry["pred.w"], self.config.w_param)

    def encoder_param_count(self, scenario: str) -> int:
        """Distinct encoder parameters a scenario's forward pass touches."""
        seen = {}
        for (s, _), stack in self.stacks.items():
            if s == scenario:
                for t in stack.tensors():
                    seen[id(t)] = t
        return sum(t.data.size for t in seen.values())

    def _ism(self, H: Tensor, lengths, width, times=None):
        """Returns (F, session reps or None, layout dict or None)."""
        cfg = self.config
        if cfg.variant == "woISMb":
            return H, None, None
        if cfg.variant == "woISMa":
            left, right = gap_layout(times, lengths, width, cfg.N)
            layout = {"left": Tensor(left.astype(self.dtype)), "right": Tensor(right.astype(self.dtype)),
                      "centers": ((left + right) / 2).astype(self.dtype)}
        else:
            layout = self.sessions.predict(H, lengths, width)
        member = self.sessions.membership(layout, lengths, width, cfg.membership)
        reps = IntentSessions.reps(H, member, layout["centers"], lengths)
        return IntentSessions.enhance(H, member, reps), reps, layout

    # ------------------------------------------------------------------ forward

    def forward(self, batch: SequenceBatch, scenario: str):
        """Encodes a batch; returns dict with the user vector ``f`` and ``ssl`` term."""
        cfg = self.config
        p = cfg.dropout
        mask_p = batch.product_mask()
        e_p = self.embedder.build_sequence_matrix(batch, "product")
        if scenario == REC:
            h_p = encode_rec(e_p, mask_p, self.stacks[(REC, "product")], p, self.dropout_rng)
            f_p, i_p, lay_p = self._ism(h_p, batch.lengths, batch.width, batch.times)
            ssl = ssl_loss(i_p) if i_p is not None else None
            return {"f": f_p[:, -1], "ssl": ssl, "layouts": {"product": lay_p}}
        if scenario != SEARCH:
            raise ValueError(f"unknown scenario {scenario!r}")
        if not batch.is_search:
            raise ValueError("search forward needs a batch with queries")
        mask_q = batch.query_mask()
        e_q = self.embedder.build_sequence_matrix(batch, "query")
        h_p, h_q = encode_search(e_p, e_q, mask_p, mask_q, self.stacks[(SEARCH, "product")],
                                 self.stacks[(SEARCH, "query")], p, self.dropout_rng)
        f_p, i_p, lay_p = self._ism(h_p, batch.lengths, batch.width, batch.times)
        f_q, i_q, lay_q = self._ism(h_q, batch.query_lengths(), batch.width + 1, batch.query_times)
        ssl = ssl_loss(i_p, i_q) if i_p is not None else None
        f = blend(f_p[:, -1], f_q[:, -1], self.weight())
        return {"f": f, "ssl": ssl, "layouts": {"product": lay_p, "query": lay_q}}

    def score(self, batch: SequenceBatch, scenario: str, candidates) -> Tensor:
        return score_rec(self.forward(batch, scenario)["f"], self.registry["emb.product"], candidates)

    def loss(self, batch: SequenceBatch, scenario: str, alpha: float | None = None):
        """Joint objective on a training batch. Returns (joint, predict, ssl) tensors."""
        alpha = self.config.alpha if alpha is None else alpha
        out = self.forward(batch, scenario)
        cand = np.concatenate([batch.targets[:, None], batch.negatives], axis=1)
        scores = score_rec(out["f"], self.registry["emb.product"], cand)
        predict = bce_loss(scores[:, 0], scores[:, 1:])
        ssl = out["ssl"]
        if ssl is None:
            ssl = Tensor(np.asarray(0.0, dtype=self.dtype))
        return joint_loss(predict, ssl, alpha), predict, ssl

    # ------------------------------------------------------------------ diagnostics

    def session_assignments(self, batch: SequenceBatch, scenario: str):
        """Hard session ranges per row and branch, in local coordinates."""
        with ag.eval_mode(), ag.no_grad():
            out = self.forward(batch, scenario)
        records = []
        for branch, lay in out["layouts"].items():
            if lay is None:
                continue
            lengths = batch.lengths if branch == "product" else batch.query_lengths()
            width = batch.width if branch == "product" else batch.width + 1
            left, right = lay["left"].data, lay["right"].data
            member = hard_membership(left, right, lengths, width)
            for b in range(batch.size):
                V = int(lengths[b])
                records.append({
                    "key": None if batch.keys is None else batch.keys[b],
                    "scenario": scenario, "branch": branch, "length": V,
                    "ranges": [[float(lo), float(hi)] for lo, hi in zip(left[b], right[b])],
                    "membership": member[b][:, width - V:].astype(int).tolist(),
                })
        return records
