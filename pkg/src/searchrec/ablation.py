"""Ablation runner and session-recovery diagnostics."""
from __future__ import annotations

import logging

import numpy as np

from .autograd import ConfigError
from .config import VARIANTS, RunConfig
from .data import Dataset, collate, make_examples
from .metrics import MetricsReport, format_table
from .sessions import hard_membership, uniform_split
from .training import run_end_to_end, run_two_stage

log = logging.getLogger(__name__)

END_TO_END = "e2e"


def check_variants(variants):
    bad = [v for v in variants if v not in VARIANTS and v != END_TO_END]
    if bad:
        raise ConfigError(f"unknown variant tag(s) {bad}; expected one of {list(VARIANTS) + [END_TO_END]}")


def run_ablation(base: RunConfig, variants, seeds, dataset_for_seed, scenarios=("search", "rec"),
                 train_log=None) -> list[MetricsReport]:
    """Train every (variant, seed) pair and return one report per scenario each.

    ``dataset_for_seed(seed)`` supplies the data for a seed so all variants of
    one seed see identical data.  The pseudo-variant ``e2e`` trains a single
    scenario from scratch on its task split with the full architecture.
    """
    check_variants(variants)
    reports = []
    for seed in seeds:
        ds = dataset_for_seed(seed)
        for variant in variants:
            cfg = base.replace(seed=seed, variant="full" if variant == END_TO_END else variant)
            log.info("ablation: variant %s seed %d", variant, seed)
            if variant == END_TO_END:
                for sc in scenarios:
                    rep, _ = run_end_to_end(ds, cfg, sc, train_log=train_log)
                    rep.variant = END_TO_END
                    reports.append(rep)
            else:
                out, _, _ = run_two_stage(ds, cfg, scenarios, train_log=train_log)
                reports.extend(out[sc] for sc in scenarios)
    return reports


def median_table(reports, metric="HR@10"):
    """{scenario: {variant: median metric over seeds}}."""
    groups = {}
    for r in reports:
        groups.setdefault(r.scenario, {}).setdefault(r.variant, []).append(r.metrics[metric])
    return {sc: {v: float(np.median(x)) for v, x in vs.items()} for sc, vs in groups.items()}


def seedwise_wins(reports, scenario, better, worse, metric="HR@10"):
    """Number of seeds where ``better`` strictly beats ``worse`` and the number compared."""
    by = {(r.variant, r.seed): r.metrics[metric] for r in reports if r.scenario == scenario}
    seeds = sorted({s for v, s in by if v == better} & {s for v, s in by if v == worse})
    return sum(by[(better, s)] > by[(worse, s)] for s in seeds), len(seeds)


def comparison_table(reports):
    order = {v: i for i, v in enumerate(list(VARIANTS) + [END_TO_END])}
    rows = sorted(reports, key=lambda r: (r.scenario, order.get(r.variant, 99), r.seed))
    return format_table(rows)


# ---------------------------------------------------------------- session recovery

def segment_boundaries(member) -> list[int]:
    """Boundaries (positions where the session label changes) of an N x V membership matrix.

    Each position takes the first session that contains it; uncovered
    positions inherit the previous label.
    """
    member = np.asarray(member)
    labels = []
    prev = -1
    for t in range(member.shape[1]):
        hit = np.flatnonzero(member[:, t] > 0)
        prev = int(hit[0]) if len(hit) else prev
        labels.append(prev)
    return [t for t in range(1, len(labels)) if labels[t] != labels[t - 1] and labels[t - 1] != -1]


def boundary_error(predicted, planted, length) -> float:
    """Symmetric mean distance between two boundary sets; sequence ends count as boundaries."""
    ends = [0, length]
    pred = sorted(set(predicted) | set(ends))
    true = sorted(set(planted) | set(ends))
    inner_p = [x for x in pred if 0 < x < length]
    inner_t = [x for x in true if 0 < x < length]
    if not inner_p and not inner_t:
        return 0.0
    d_p = [min(abs(x - y) for y in true) for x in inner_p]
    d_t = [min(abs(x - y) for y in pred) for x in inner_t]
    return float(np.mean(d_p + d_t))


def _window_planted(sidecar_row, start, end):
    """Planted boundaries inside the window [start, end), relative to ``start``."""
    intents = sidecar_row["intents"][start:end]
    return [i for i in range(1, len(intents)) if intents[i] != intents[i - 1]], intents


def session_recovery(model, ds: Dataset, sidecar, scenario="rec", split="test", branch="product",
                     batch_size=256):
    """Mean boundary error of hard session ranges vs planted boundaries.

    Returns a dict with the trained layout's error, the uniform layout's
    error (both normalised by the mean planted session length) and counts.
    The sidecar must describe the dataset's users in their original order,
    so it is only meaningful when preprocessing removed no interactions.
    """
    side = {(r["user"], r["scenario"]): r for r in sidecar}
    examples = make_examples(ds, scenario, split)
    errs, uni, seg_lengths = [], [], []
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        batch = collate(ds, chunk, scenario, None, model.config.w_max)
        records = [r for r in model.session_assignments(batch, scenario) if r["branch"] == branch]
        for ex, rec in zip(chunk, records):
            row = side[(ds.logs[ex.user].user, scenario)]
            if len(row["intents"]) != len(ds.logs[ex.user].seq(scenario)):
                raise ValueError(f"sidecar for user {ex.user} does not match the dataset")
            planted, intents = _window_planted(row, ex.start, ex.end)
            V = rec["length"]
            edges = [0] + planted + [V]
            seg_lengths.extend(np.diff(edges).tolist())
            errs.append(boundary_error(segment_boundaries(rec["membership"]), planted, V))
            lo, hi, _ = uniform_split(np.array([float(V)]), len(rec["ranges"]))
            um = hard_membership(lo, hi, np.array([V]), V)[0]
            uni.append(boundary_error(segment_boundaries(um), planted, V))
    mean_len = float(np.mean(seg_lengths))
    return {"error": float(np.mean(errs)) / mean_len, "uniform_error": float(np.mean(uni)) / mean_len,
            "mean_session_length": mean_len, "n_sequences": len(errs)}
