"""Dataset schema, preprocessing, example construction and negative sampling.

Wire format (JSON Lines, one user per line)::

    {"user": 3, "rec": [[product, ts], ...], "search": [[product, ts, [word, ...]], ...]}
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .embedding import SequenceBatch

SCENARIOS = ("search", "rec")
PURPOSE_CODES = {"train": 1, "eval": 2, "valid": 3}
SCENARIO_CODES = {"search": 1, "rec": 2}


class DataError(ValueError):
    pass


@dataclass
class InteractionRecord:
    user: int
    product: int
    timestamp: int
    scenario: str
    words: tuple = ()

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DataError(f"unknown scenario {self.scenario!r}")
        if self.scenario == "search" and not self.words:
            raise DataError(f"search record of user {self.user} has no query words")


@dataclass
class UserLog:
    """Chronological per-scenario sequences of one user."""

    user: int
    rec: list = field(default_factory=list)      # [(product, ts)]
    search: list = field(default_factory=list)   # [(product, ts, words)]

    def seq(self, scenario):
        return self.search if scenario == "search" else self.rec

    def products(self):
        return {x[0] for x in self.rec} | {x[0] for x in self.search}

    def to_json(self):
        return {"user": self.user,
                "rec": [[int(p), int(t)] for p, t in self.rec],
                "search": [[int(p), int(t), [int(w) for w in ws]] for p, t, ws in self.search]}

    @classmethod
    def from_json(cls, obj):
        return cls(int(obj["user"]),
                   [(int(p), int(t)) for p, t in obj.get("rec", [])],
                   [(int(p), int(t), tuple(int(w) for w in ws)) for p, t, ws in obj.get("search", [])])


def logs_to_records(logs):
    out = []
    for log in logs:
        out.extend(InteractionRecord(log.user, p, t, "rec") for p, t in log.rec)
        out.extend(InteractionRecord(log.user, p, t, "search", tuple(ws)) for p, t, ws in log.search)
    return out


def records_to_logs(records):
    """Group records by user; sort each scenario chronologically (ties keep input order)."""
    logs = {}
    for r in records:
        log = logs.setdefault(r.user, UserLog(r.user))
        if r.scenario == "rec":
            log.rec.append((r.product, r.timestamp))
        else:
            log.search.append((r.product, r.timestamp, tuple(r.words)))
    for log in logs.values():
        log.rec.sort(key=lambda x: x[1])
        log.search.sort(key=lambda x: x[1])
    return [logs[u] for u in sorted(logs)]


def write_jsonl(path, logs):
    with open(path, "w") as fh:
        for log in logs:
            fh.write(json.dumps(log.to_json()) + "\n")


def read_jsonl(path):
    with open(path) as fh:
        return [UserLog.from_json(json.loads(line)) for line in fh if line.strip()]


def split_alternate(logs):
    """Route each user's interactions alternately to recommendation and search by index.

    For ingesting a single-scenario log whose records all carry queries; even
    indices become recommendation data, odd ones search data.
    """
    out = []
    for log in logs:
        merged = sorted(log.search, key=lambda x: x[1])
        out.append(UserLog(log.user,
                           [(p, t) for p, t, _ in merged[0::2]],
                           [(p, t, ws) for p, t, ws in merged[1::2]]))
    return out


# ---------------------------------------------------------------- preprocessing

def filter_min_count(logs, min_count=10):
    """Drop users and products with fewer than ``min_count`` interactions, to a fixpoint."""
    logs = [UserLog(lg.user, list(lg.rec), list(lg.search)) for lg in logs]
    while True:
        pc = Counter()
        for lg in logs:
            pc.update(x[0] for x in lg.rec)
            pc.update(x[0] for x in lg.search)
        bad_p = {p for p, c in pc.items() if c < min_count}
        changed = False
        kept = []
        for lg in logs:
            if bad_p:
                rec = [x for x in lg.rec if x[0] not in bad_p]
                search = [x for x in lg.search if x[0] not in bad_p]
                if len(rec) != len(lg.rec) or len(search) != len(lg.search):
                    changed = True
                lg = UserLog(lg.user, rec, search)
            if len(lg.rec) + len(lg.search) >= min_count:
                kept.append(lg)
            else:
                changed = True
        logs = kept
        if not changed:
            return logs


def chunk_ranges(n, max_len):
    """Non-overlapping [start, end) windows of at most ``max_len`` covering range(n)."""
    return [(s, min(s + max_len, n)) for s in range(0, n, max_len)]


def split_points(n, ratio=0.8):
    """Split one chronological sequence of length n.

    Returns dict with ``pretrain_end`` (items [0, pretrain_end) are for joint
    pre-training) and the task-split positions ``train`` (list), ``valid`` and
    ``test`` (index or None).
    """
    n_task = math.ceil(round((1.0 - ratio) * n, 9))
    start = n - n_task
    test = n - 1 if n_task >= 1 else None
    valid = n - 2 if n_task >= 2 else None
    train = list(range(start, n - 2)) if n_task >= 3 else []
    return {"pretrain_end": start, "train": train, "valid": valid, "test": test}


@dataclass
class Dataset:
    logs: dict            # user -> UserLog
    manifest: dict
    _hist: dict = field(default_factory=dict, repr=False)
    _catalog: np.ndarray | None = field(default=None, repr=False)
    eval_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_users(self):
        return self.manifest["vocab"]["users"]

    @property
    def n_products(self):
        return self.manifest["vocab"]["products"]

    @property
    def n_words(self):
        return self.manifest["vocab"]["words"]

    @property
    def max_len(self):
        return self.manifest["max_len"]

    def user_ids(self):
        return sorted(self.logs)

    @property
    def catalog(self):
        """Sorted ids of every product that survives preprocessing."""
        if self._catalog is None:
            seen = set()
            for lg in self.logs.values():
                seen |= lg.products()
            self._catalog = np.fromiter(sorted(seen), dtype=np.int64)
        return self._catalog

    def history_products(self, user):
        if user not in self._hist:
            self._hist[user] = np.fromiter(sorted(self.logs[user].products()), dtype=np.int64)
        return self._hist[user]


def preprocess(logs, max_len=100, min_count=10, ratio=0.8, seed=0):
    """Filter, order, and split the logs; returns a :class:`Dataset`."""
    n_in = sum(len(lg.rec) + len(lg.search) for lg in logs)
    kept = filter_min_count(records_to_logs(logs_to_records(logs)), min_count)
    if not kept:
        raise DataError(f"no data left after filtering: {len(logs)} users / {n_in} interactions in, "
                        f"min_count={min_count}")
    users = {lg.user: lg for lg in kept}
    max_p = max(max((x[0] for x in lg.rec + lg.search), default=0) for lg in kept)
    max_w = max((max(ws) for lg in kept for _, _, ws in lg.search), default=0)
    counts = {}
    for sc in SCENARIOS:
        n_pre = n_train = n_valid = n_test = 0
        for lg in kept:
            sp = split_points(len(lg.seq(sc)), ratio)
            n_pre += sp["pretrain_end"]
            n_train += len(sp["train"])
            n_valid += sp["valid"] is not None
            n_test += sp["test"] is not None
        counts[sc] = {"interactions": sum(len(lg.seq(sc)) for lg in kept), "pretrain": n_pre,
                      "train": n_train, "valid": n_valid, "test": n_test}
    manifest = {
        "vocab": {"users": max(users) + 1, "products": max_p + 1, "words": max_w + 1},
        "n_users": len(kept), "counts": counts, "max_len": max_len, "min_count": min_count,
        "ratio": ratio, "seed": seed,
    }
    return Dataset(users, manifest)


def save_dataset(ds: Dataset, out_dir):
    import os
    os.makedirs(out_dir, exist_ok=True)
    write_jsonl(os.path.join(out_dir, "dataset.jsonl"), [ds.logs[u] for u in ds.user_ids()])
    with open(os.path.join(out_dir, "splits.jsonl"), "w") as fh:
        for u in ds.user_ids():
            lg = ds.logs[u]
            rec = {"user": u}
            for sc in SCENARIOS:
                rec[sc] = split_points(len(lg.seq(sc)), ds.manifest["ratio"])
            fh.write(json.dumps(rec) + "\n")
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(ds.manifest, fh, indent=2, sort_keys=True)


def load_dataset(data_dir):
    import os
    with open(os.path.join(data_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    logs = read_jsonl(os.path.join(data_dir, "dataset.jsonl"))
    return Dataset({lg.user: lg for lg in logs}, manifest)


# ---------------------------------------------------------------- examples

@dataclass(frozen=True)
class Example:
    """History ``seq[start:end]`` of one scenario, predicting ``seq[end]``."""

    user: int
    start: int
    end: int

    @property
    def length(self):
        return self.end - self.start


def make_examples(ds: Dataset, scenario: str, split: str):
    """Training/eval examples for one scenario.

    ``split`` is ``pretrain`` (every prefix inside each length-capped chunk of
    the pre-training part), ``train`` (task-split targets), ``valid`` or
    ``test`` (one example per user).  Task-split histories reach back into
    the pre-training part, capped at ``max_len`` items.
    """
    out = []
    max_len = ds.max_len
    for u in ds.user_ids():
        seq = ds.logs[u].seq(scenario)
        sp = split_points(len(seq), ds.manifest["ratio"])
        if split == "pretrain":
            for c0, c1 in chunk_ranges(sp["pretrain_end"], max_len):
                out.extend(Example(u, c0, t) for t in range(c0 + 1, c1))
            continue
        if split == "train":
            targets = sp["train"]
        elif split in ("valid", "test"):
            targets = [] if sp[split] is None else [sp[split]]
        else:
            raise ValueError(f"unknown split {split!r}")
        for t in targets:
            if t >= 1:
                out.append(Example(u, max(0, t - max_len), t))
    return out


def sample_negatives(ds: Dataset, user, n, purpose="train", rng=None, seed=0, scenario="rec",
                     exclude=()):
    """``n`` distinct products outside the user's full history (and ``exclude``).

    With ``rng`` None, a generator keyed on (seed, user, purpose, scenario)
    makes the draw reproducible per user.
    """
    hist = set(ds.history_products(user).tolist()) | set(exclude)
    catalog = ds.catalog
    available = len(set(catalog.tolist()) - hist)
    if available < n:
        raise DataError(f"catalog too small: user {user} has {available} eligible products, need {n}")
    if rng is None:
        rng = np.random.default_rng([seed, int(user), PURPOSE_CODES[purpose], SCENARIO_CODES[scenario]])
    out = []
    chosen = set()
    while len(out) < n:
        cand = catalog[rng.integers(0, len(catalog), size=max(2 * (n - len(out)), 4))]
        for c in cand.tolist():
            if c not in hist and c not in chosen:
                chosen.add(c)
                out.append(c)
                if len(out) == n:
                    break
    return np.asarray(out, dtype=np.int64)


def train_negatives(ds: Dataset, examples, n, rng):
    """Per-example negatives for a training batch (may repeat across examples)."""
    out = np.empty((len(examples), n), dtype=np.int64)
    catalog = ds.catalog
    for i, ex in enumerate(examples):
        hist = ds.history_products(ex.user)
        row = []
        while len(row) < n:
            c = int(catalog[rng.integers(len(catalog))])
            idx = np.searchsorted(hist, c)
            if idx < len(hist) and hist[idx] == c:
                continue
            row.append(c)
        out[i] = row
    return out


def collate(ds: Dataset, examples, scenario, negatives=None, w_max=16, pad_to=None):
    """Left-padded :class:`SequenceBatch` for a list of examples."""
    B = len(examples)
    T = max(ex.length for ex in examples)
    if pad_to is not None:
        T = max(T, pad_to)
    users = np.array([ex.user for ex in examples], dtype=np.int64)
    lengths = np.array([ex.length for ex in examples], dtype=np.int64)
    products = np.zeros((B, T), dtype=np.int64)
    times = np.zeros((B, T + 1), dtype=np.float64)
    targets = np.zeros(B, dtype=np.int64)
    search = scenario == "search"
    words = [] if search else None
    for b, ex in enumerate(examples):
        seq = ds.logs[ex.user].seq(scenario)
        hist = seq[ex.start:ex.end]
        off = T - len(hist)
        products[b, off:] = [x[0] for x in hist]
        times[b, off:T] = [x[1] for x in hist]
        times[b, T] = seq[ex.end][1]
        targets[b] = seq[ex.end][0]
        if search:
            words.append([x[2] for x in hist] + [seq[ex.end][2]])
    queries = None
    if search:
        W = min(w_max, max(len(ws) for row in words for ws in row))
        queries = np.zeros((B, T + 1, W), dtype=np.int64)
        for b, row in enumerate(words):
            off = T - (len(row) - 1)
            for j, ws in enumerate(row):
                ws = ws[:W]
                queries[b, off + j, :len(ws)] = ws
    return SequenceBatch(users=users, products=products, lengths=lengths, targets=targets,
                         negatives=negatives, queries=queries, times=times[:, :T],
                         query_times=times if search else None,
                         keys=[(ex.user, ex.start, ex.end) for ex in examples])


def batches(examples, batch_size, rng=None, bucket=True):
    """Group examples into mini-batches.

    With bucketing, examples are sorted by history length (after a shuffle so
    ties are random) before slicing, and the batch order is shuffled, which
    keeps padding small.
    """
    idx = np.arange(len(examples))
    if rng is not None:
        idx = rng.permutation(len(examples))
    if bucket:
        lengths = np.array([examples[i].length for i in idx])
        idx = idx[np.argsort(lengths, kind="stable")]
    chunks = [idx[i:i + batch_size] for i in range(0, len(idx), batch_size)]
    if rng is not None:
        order = rng.permutation(len(chunks))
        chunks = [chunks[i] for i in order]
    return [[examples[i] for i in c] for c in chunks]
