"""HR@K / NDCG@K over sampled candidate lists."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np


def ranks(scores, target_index=0, tie_break="stable", rng=None):
    """1-based rank of the ground-truth candidate in each row of ``scores`` (B x C).

    Sorting is by descending score.  ``stable`` breaks ties by candidate
    index; ``random`` breaks them uniformly at random.
    """
    scores = np.atleast_2d(np.asarray(scores))
    target_index = np.broadcast_to(np.asarray(target_index), (scores.shape[0],))
    rows = np.arange(scores.shape[0])
    pos = scores[rows, target_index][:, None]
    higher = (scores > pos).sum(axis=1)
    ties = scores == pos
    ties[rows, target_index] = False
    if tie_break == "stable":
        cols = np.arange(scores.shape[1])[None, :]
        before = (ties & (cols < target_index[:, None])).sum(axis=1)
    elif tie_break == "random":
        rng = rng or np.random.default_rng(0)
        n_ties = ties.sum(axis=1)
        before = np.array([rng.integers(0, k + 1) for k in n_ties], dtype=np.int64)
    else:
        raise ValueError(f"unknown tie_break {tie_break!r}")
    return higher + before + 1


def hit_ratio(rank, k):
    return (np.asarray(rank) <= k).astype(np.float64)


def ndcg(rank, k):
    rank = np.asarray(rank, dtype=np.float64)
    return np.where(rank <= k, 1.0 / np.log2(rank + 1.0), 0.0)


@dataclass
class MetricsReport:
    scenario: str
    metrics: dict
    n_users: int
    seed: int = 0
    variant: str = "full"
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.check()

    def check(self):
        ks = sorted(int(k.split("@")[1]) for k in self.metrics if k.startswith("HR@"))
        for k in ks:
            hr, nd = self.metrics[f"HR@{k}"], self.metrics[f"NDCG@{k}"]
            if not (0.0 <= nd <= hr + 1e-12 <= 1.0 + 1e-12):
                raise AssertionError(f"metric sanity violated at K={k}: HR={hr} NDCG={nd}")
        for a, b in zip(ks, ks[1:]):
            if self.metrics[f"HR@{a}"] > self.metrics[f"HR@{b}"] + 1e-12 or \
                    self.metrics[f"NDCG@{a}"] > self.metrics[f"NDCG@{b}"] + 1e-12:
                raise AssertionError(f"metrics not monotone in K between {a} and {b}")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def summarize(rank, ks=(5, 10)):
    out = {}
    for k in ks:
        out[f"HR@{k}"] = float(hit_ratio(rank, k).mean()) if len(rank) else 0.0
    for k in ks:
        out[f"NDCG@{k}"] = float(ndcg(rank, k).mean()) if len(rank) else 0.0
    return out


def format_table(reports, columns=None):
    """Aligned plain-text table, one row per report."""
    if not reports:
        return ""
    columns = columns or list(reports[0].metrics)
    head = ["variant", "scenario", "seed", "users"] + columns
    rows = [[r.variant, r.scenario, str(r.seed), str(r.n_users)] +
            [f"{r.metrics[c]:.4f}" for c in columns] for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join(lines)
