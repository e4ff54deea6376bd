"""Synthetic behaviour logs with planted intents.

Each user walks through a timeline of intent sessions, always ending on a
complete session so the final (held-out) events are not biased towards
session starts.  Every event inside
a session picks a product from that intent's pool (Zipf-skewed), lands in
the search or recommendation scenario at random, and search events carry a
query drawn from the intent's word vocabulary plus, sometimes, the
product's attribute word.  The planted per-item intents and the session
boundaries they imply are returned as a sidecar for diagnostics.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .autograd import ConfigError
from .data import SCENARIOS, UserLog


@dataclass
class SyntheticConfig:
    users: int = 2000
    products: int = 500
    intents: int = 8
    products_per_intent: int | None = None
    words_per_intent: int = 20
    attr_groups: int = 8
    attr_prob: float = 0.5
    query_words: tuple = (1, 3)
    events: tuple = (40, 60)
    session_len: tuple = (10, 25)
    switch: str = "favorite"
    favorites: int = 3
    explore: float = 0.2
    noise: float = 0.1
    search_share: float = 0.5
    popularity: float = 1.0
    gap_within: tuple = (1, 3)
    gap_between: tuple = (20, 60)
    seed: int = 0

    def __post_init__(self):
        for name in ("query_words", "events", "session_len", "gap_within", "gap_between"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        if self.users < 1 or self.intents < 1 or self.words_per_intent < 1:
            raise ConfigError("users, intents and words_per_intent must be >= 1")
        if self.products_per_intent is not None and self.products_per_intent * self.intents != self.products:
            raise ConfigError(f"inconsistent pool sizes: {self.intents} intents x "
                              f"{self.products_per_intent} products != {self.products}")
        if self.products < self.intents:
            raise ConfigError("need at least one product per intent")
        if self.attr_groups < 1 or self.attr_groups > self.products // self.intents:
            raise ConfigError("attr_groups must be in [1, smallest pool size]")
        for name in ("query_words", "events", "session_len", "gap_within", "gap_between"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ConfigError(f"{name} must be a (min, max) pair with 0 <= min <= max")
        if self.session_len[0] < 1 or self.query_words[0] < 1:
            raise ConfigError("session_len and query_words minimum must be >= 1")
        if self.switch not in ("favorite", "random"):
            raise ConfigError(f"switch must be favorite or random, got {self.switch!r}")
        if not 1 <= self.favorites <= self.intents:
            raise ConfigError("favorites must be in [1, intents]")
        for name in ("noise", "search_share", "attr_prob", "explore"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")

    def to_dict(self):
        return asdict(self)


class Catalog:
    """Product pools, popularity weights and word vocabularies per intent."""

    def __init__(self, cfg: SyntheticConfig):
        K = cfg.intents
        ids = np.arange(1, cfg.products + 1)
        self.product_intent = np.zeros(cfg.products + 1, dtype=np.int64)
        self.product_intent[0] = -1
        self.product_intent[1:] = (ids - 1) % K
        self.pools = [ids[(ids - 1) % K == k] for k in range(K)]
        self.weights = []
        for pool in self.pools:
            w = (np.arange(len(pool)) + 1.0) ** -cfg.popularity
            self.weights.append(w / w.sum())
        self.intent_words = [1 + k * cfg.words_per_intent + np.arange(cfg.words_per_intent)
                             for k in range(K)]
        base = 1 + K * cfg.words_per_intent
        self.product_attr = np.zeros(cfg.products + 1, dtype=np.int64)
        for k, pool in enumerate(self.pools):
            group = np.arange(len(pool)) % cfg.attr_groups
            self.product_attr[pool] = base + k * cfg.attr_groups + group
        self.n_words = base + K * cfg.attr_groups

    def word_intent(self, word, cfg):
        base = 1 + cfg.intents * cfg.words_per_intent
        if word < base:
            return (word - 1) // cfg.words_per_intent
        return (word - base) // cfg.attr_groups


def _next_intent(rng, cur, favs, cfg):
    K = cfg.intents
    if K == 1:
        return cur
    if cfg.switch == "favorite" and rng.random() >= cfg.explore:
        options = [k for k in favs if k != cur]
        if options:
            return int(rng.choice(options))
    return int(rng.choice([k for k in range(K) if k != cur]))


def generate_user(cfg: SyntheticConfig, cat: Catalog, user: int):
    rng = np.random.default_rng([cfg.seed, user])
    favs = [int(k) for k in rng.choice(cfg.intents, size=cfg.favorites, replace=False)]
    n = int(rng.integers(cfg.events[0], cfg.events[1] + 1))
    log = UserLog(user)
    planted = {sc: [] for sc in SCENARIOS}
    cur = favs[0] if cfg.switch == "favorite" else int(rng.integers(cfg.intents))
    t = 0
    emitted = 0
    session = 0
    while emitted < n:
        length = int(rng.integers(cfg.session_len[0], cfg.session_len[1] + 1))
        if session > 0:
            t += int(rng.integers(cfg.gap_between[0], cfg.gap_between[1] + 1))
            cur = _next_intent(rng, cur, favs, cfg)
        for j in range(length):
            if j > 0:
                t += int(rng.integers(cfg.gap_within[0], cfg.gap_within[1] + 1))
            k = cur
            if cfg.noise > 0 and rng.random() < cfg.noise and cfg.intents > 1:
                k = int(rng.choice([x for x in range(cfg.intents) if x != cur]))
            pool = cat.pools[k]
            product = int(pool[rng.choice(len(pool), p=cat.weights[k])])
            if rng.random() < cfg.search_share:
                nw = int(rng.integers(cfg.query_words[0], cfg.query_words[1] + 1))
                words = [int(w) for w in rng.choice(cat.intent_words[k], size=nw, replace=True)]
                if rng.random() < cfg.attr_prob:
                    words.append(int(cat.product_attr[product]))
                log.search.append((product, t, tuple(words)))
                planted["search"].append((cur, session))
            else:
                log.rec.append((product, t))
                planted["rec"].append((cur, session))
            emitted += 1
        session += 1
    sidecar = []
    for sc in SCENARIOS:
        intents = [x[0] for x in planted[sc]]
        sidecar.append({"user": user, "scenario": sc, "intents": intents,
                        "sessions": [x[1] for x in planted[sc]],
                        "boundaries": boundaries_from_intents(intents)})
    return log, sidecar


def boundaries_from_intents(intents):
    """Indices where a new run of identical planted intents starts (excluding 0)."""
    return [i for i in range(1, len(intents)) if intents[i] != intents[i - 1]]


def generate_synthetic(cfg: SyntheticConfig):
    """Returns (logs, sidecar, catalog) for ``cfg.users`` users with ids 1..users."""
    cat = Catalog(cfg)
    logs, sidecar = [], []
    for u in range(1, cfg.users + 1):
        log, side = generate_user(cfg, cat, u)
        logs.append(log)
        sidecar.extend(side)
    return logs, sidecar, cat


def write_sidecar(path, sidecar):
    with open(path, "w") as fh:
        for rec in sidecar:
            fh.write(json.dumps(rec) + "\n")


def read_sidecar(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
