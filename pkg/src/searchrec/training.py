"""Two-stage training (joint pre-training, per-scenario fine-tuning) and evaluation."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .config import RunConfig
from .data import (Dataset, batches, collate, make_examples, sample_negatives, train_negatives)
from .metrics import MetricsReport, ranks, summarize
from .model import SearchRecModel
from .optim import AdamState, adam_step, lr_at

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class CheckpointMismatch(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict
    optimizer: dict | None
    epoch: int
    stage: str
    config: dict
    arch_hash: str
    vocab: tuple
    history: list = field(default_factory=list)

    def save(self, path):
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        if self.optimizer is not None:
            arrays.update({f"opt/{k}": v for k, v in self.optimizer.items()})
        meta = {"epoch": self.epoch, "stage": self.stage, "config": self.config,
                "arch_hash": self.arch_hash, "vocab": list(self.vocab), "history": self.history}
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            params = {k[6:]: z[k].copy() for k in z.files if k.startswith("param/")}
            opt = {k[4:]: z[k].copy() for k in z.files if k.startswith("opt/")}
        return cls(params, opt or None, meta["epoch"], meta["stage"], meta["config"],
                   meta["arch_hash"], tuple(meta["vocab"]), meta.get("history", []))


def snapshot(model: SearchRecModel, stage: str, epoch: int, opt: AdamState | None = None,
             history=None) -> Checkpoint:
    return Checkpoint(model.registry.state_dict(), None if opt is None else opt.state_dict(),
                      epoch, stage, model.config.to_dict(), model.config.arch_hash(),
                      tuple(model.vocab), list(history or []))


def build_model(config: RunConfig, ds: Dataset) -> SearchRecModel:
    return SearchRecModel(config, ds.n_users, ds.n_products, ds.n_words)


def restore(checkpoint: Checkpoint, config: RunConfig | None = None) -> SearchRecModel:
    """Fresh model carrying the checkpoint's parameters."""
    config = config or RunConfig.from_dict(checkpoint.config)
    if config.arch_hash() != checkpoint.arch_hash:
        raise CheckpointMismatch(f"config architecture hash {config.arch_hash()} does not match "
                                 f"checkpoint {checkpoint.arch_hash}")
    model = SearchRecModel(config, *checkpoint.vocab)
    model.registry.load_state_dict(checkpoint.params)
    return model


class TrainLog:
    """Per-batch training records, mirrored to a JSONL file when a path is given."""

    def __init__(self, path=None):
        self.records = []
        self._fh = open(path, "a") if path else None

    def write(self, rec):
        self.records.append(rec)
        if self._fh:
            self._fh.write(json.dumps(rec) + "\n")

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


class Trainer:
    def __init__(self, model: SearchRecModel, ds: Dataset, stage: str, train_log: TrainLog | None = None):
        cfg = model.config
        self.model = model
        self.ds = ds
        self.stage = stage
        self.cfg = cfg
        self.opt = AdamState(cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.rng = np.random.default_rng([cfg.seed, 101, len(stage)])
        self.log = train_log or TrainLog()

    def step(self, examples, scenario, epoch):
        cfg = self.cfg
        negs = train_negatives(self.ds, examples, cfg.negatives_train, self.rng)
        batch = collate(self.ds, examples, scenario, negs, cfg.w_max)
        with ag.train_mode():
            joint, predict, ssl = self.model.loss(batch, scenario)
        value = float(joint.data)
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at step {self.opt.t + 1} ({self.stage}, {scenario}); "
                                   f"batch keys: {batch.keys[:8]}...")
        joint.backward()
        lr = cfg.lr_scale * lr_at(self.opt.t + 1, cfg.d, cfg.warmup)
        adam_step(self.model.registry, self.opt, lr)
        self.log.write({"step": self.opt.t, "stage": self.stage, "epoch": epoch, "scenario": scenario,
                        "loss": value, "predict": float(predict.data), "ssl": float(ssl.data), "lr": lr})
        return value


def _schedule(search_batches, rec_batches, mode, epoch):
    """Interleave S,R,S,R... (batch mode) or pick one scenario per epoch."""
    if mode == "epoch":
        if epoch % 2 == 0 and search_batches or not rec_batches:
            return [("search", b) for b in search_batches]
        return [("rec", b) for b in rec_batches]
    out = []
    for i in range(max(len(search_batches), len(rec_batches))):
        if i < len(search_batches):
            out.append(("search", search_batches[i]))
        if i < len(rec_batches):
            out.append(("rec", rec_batches[i]))
    return out


def pretrain(model: SearchRecModel, ds: Dataset, epochs=None, out_dir=None, train_log=None,
             callback=None) -> Checkpoint:
    """Joint pre-training alternating search and recommendation mini-batches."""
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    ex = {sc: make_examples(ds, sc, "pretrain") for sc in ("search", "rec")}
    if not ex["search"] and not ex["rec"]:
        raise ValueError("pretraining needs data in at least one scenario")
    for sc in ("search", "rec"):
        if not ex[sc]:
            log.warning("no %s pre-training data; training on the other scenario only", sc)
    trainer = Trainer(model, ds, "pretrain", train_log)
    losses = []
    for epoch in range(epochs):
        t0 = time.time()
        sb = batches(ex["search"], cfg.batch, trainer.rng)
        rb = batches(ex["rec"], cfg.batch, trainer.rng)
        vals = [trainer.step(b, sc, epoch) for sc, b in _schedule(sb, rb, cfg.alternation, epoch)]
        losses.append(float(np.mean(vals)))
        log.info("pretrain epoch %d loss %.4f (%.1fs)", epoch, losses[-1], time.time() - t0)
        if out_dir is not None:
            snapshot(model, "pretrain", epoch + 1, trainer.opt, losses).save(
                f"{out_dir}/pretrain_epoch{epoch + 1:03d}.npz")
        if callback is not None:
            callback(epoch, model)
    return snapshot(model, "pretrain", epochs, trainer.opt, losses)


def finetune(model: SearchRecModel, ds: Dataset, scenario: str, epochs=None, train_log=None,
             out_dir=None, stage=None) -> Checkpoint:
    """Continue training on one scenario's task split with a fresh optimizer.

    With ``early_stop`` the model is evaluated on the validation target after
    every epoch and the best-NDCG@10 parameters are restored at the end.
    """
    cfg = model.config
    epochs = cfg.finetune_epochs if epochs is None else epochs
    stage = stage or f"finetune-{scenario}"
    examples = make_examples(ds, scenario, "train")
    if not examples and epochs:
        raise ValueError(f"no {scenario} task-split training data")
    trainer = Trainer(model, ds, stage, train_log)
    history = []
    best = None
    bad = 0
    for epoch in range(epochs):
        vals = [trainer.step(b, scenario, epoch) for b in batches(examples, cfg.batch, trainer.rng)]
        entry = {"epoch": epoch + 1, "loss": float(np.mean(vals))}
        if cfg.early_stop:
            rep = evaluate(model, ds, scenario, split="valid")
            entry["valid_ndcg10"] = rep.metrics["NDCG@10"]
            if best is None or entry["valid_ndcg10"] > best[0]:
                best = (entry["valid_ndcg10"], model.registry.state_dict(), epoch + 1)
                bad = 0
            else:
                bad += 1
        history.append(entry)
        log.info("%s epoch %d %s", stage, epoch + 1, entry)
        if cfg.early_stop and bad >= cfg.patience:
            break
    if best is not None:
        model.registry.load_state_dict(best[1])
    ckpt = snapshot(model, stage, best[2] if best else epochs, trainer.opt, history)
    if out_dir is not None:
        ckpt.save(f"{out_dir}/{stage}.npz")
    return ckpt


def eval_candidates(ds: Dataset, examples, scenario, n_neg=99, seed=None):
    """Ground truth first, then ``n_neg`` reproducible negatives per example."""
    seed = ds.manifest.get("seed", 0) if seed is None else seed
    out = np.empty((len(examples), n_neg + 1), dtype=np.int64)
    for i, ex in enumerate(examples):
        target = ds.logs[ex.user].seq(scenario)[ex.end][0]
        out[i, 0] = target
        out[i, 1:] = sample_negatives(ds, ex.user, n_neg, "eval", seed=seed, scenario=scenario,
                                      exclude=(target,))
    return out


def score_examples(model: SearchRecModel, ds: Dataset, examples, scenario, candidates, batch_size=256):
    scores = np.empty(candidates.shape, dtype=np.float64)
    with ag.eval_mode(), ag.no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i:i + batch_size]
            batch = collate(ds, chunk, scenario, None, model.config.w_max)
            scores[i:i + len(chunk)] = model.score(batch, scenario, candidates[i:i + len(chunk)]).data
    return scores


def evaluate(model: SearchRecModel, ds: Dataset, scenario: str, split="test", ks=(5, 10),
             tie_break=None, rng=None, zero_scores=False) -> MetricsReport:
    """HR@K and NDCG@K of the held-out target against sampled negatives.

    ``zero_scores`` replaces every score by 0 (null-model calibration; use with
    ``tie_break='random'``).
    """
    cfg = model.config
    key = (scenario, split, cfg.eval_negatives)
    if key not in ds.eval_cache:
        examples = make_examples(ds, scenario, split)
        ds.eval_cache[key] = (examples, eval_candidates(ds, examples, scenario, cfg.eval_negatives))
    examples, cands = ds.eval_cache[key]
    if zero_scores:
        scores = np.zeros(cands.shape)
    else:
        scores = score_examples(model, ds, examples, scenario, cands)
    tb = tie_break or cfg.tie_break
    r = ranks(scores, 0, tb, rng or np.random.default_rng([cfg.seed, 7]))
    return MetricsReport(scenario=scenario, metrics=summarize(r, ks), n_users=len(examples),
                         seed=cfg.seed, variant=cfg.variant, config_hash=cfg.hash(),
                         extra={"split": split})


def run_two_stage(ds: Dataset, config: RunConfig, scenarios=("search", "rec"), out_dir=None,
                  train_log=None, pretrain_epochs=None, finetune_epochs=None):
    """Pre-train on both scenarios, then fine-tune and test each scenario separately.

    Returns (reports by scenario, pre-trained checkpoint, fine-tuned models).
    """
    model = build_model(config, ds)
    ckpt = pretrain(model, ds, pretrain_epochs, out_dir, train_log)
    reports, models = {}, {}
    for sc in scenarios:
        m = restore(ckpt, config)
        if config.variant != "woFT":
            finetune(m, ds, sc, finetune_epochs, train_log, out_dir)
        reports[sc] = evaluate(m, ds, sc)
        models[sc] = m
    return reports, ckpt, models


def run_end_to_end(ds: Dataset, config: RunConfig, scenario: str, epochs=None, train_log=None):
    """Single-scenario training from scratch on the task split only."""
    model = build_model(config, ds)
    finetune(model, ds, scenario, epochs, train_log, stage=f"e2e-{scenario}")
    return evaluate(model, ds, scenario), model
