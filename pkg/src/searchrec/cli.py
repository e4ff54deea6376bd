"""Command-line entry point: ``searchrec <subcommand> [flags]``.

Hyperparameters live in JSON config files; flags carry only paths, the
seed and the scenario.  Every run writes ``run.json`` next to its outputs
with the fully resolved config and content hashes of its inputs.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass

from .autograd import ConfigError
from .config import VARIANTS, RunConfig
from .data import DataError, load_dataset, preprocess, read_jsonl, save_dataset, write_jsonl
from .synthetic import SyntheticConfig, generate_synthetic, write_sidecar

ERROR_PREFIX = "searchrec-error"
log = logging.getLogger("searchrec")


@dataclass
class PreprocessConfig:
    min_count: int = 10
    ratio: float = 0.8
    max_len: int = 100
    seed: int = 0


@dataclass
class AblationConfig:
    base: dict = dataclasses.field(default_factory=dict)
    variants: list = dataclasses.field(default_factory=lambda: list(VARIANTS))
    seeds: list = dataclasses.field(default_factory=lambda: [0, 1, 2, 3, 4])
    scenarios: list = dataclasses.field(default_factory=lambda: ["search", "rec"])


def load_strict(cls, path, overrides=None):
    """Instantiate dataclass ``cls`` from a JSON object; unknown keys are errors."""
    data = {}
    if path:
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    data.update(overrides or {})
    if cls is RunConfig:
        return RunConfig.from_dict(data)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def file_hash(path) -> str:
    h = hashlib.sha256()
    paths = [path]
    if os.path.isdir(path):
        paths = sorted(os.path.join(path, f) for f in os.listdir(path)
                       if os.path.isfile(os.path.join(path, f)))
    for p in paths:
        h.update(os.path.basename(p).encode())
        with open(p, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
    return h.hexdigest()


def write_run_record(out_dir, command, config, inputs, seed):
    os.makedirs(out_dir, exist_ok=True)
    hashes = {name: file_hash(p) for name, p in inputs.items() if p}
    combined = hashlib.sha256(json.dumps(hashes, sort_keys=True).encode()).hexdigest()
    record = {"command": command, "seed": seed, "config": config, "inputs": hashes, "input_hash": combined}
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
    return record


def _seed_override(args):
    return {} if args.seed is None else {"seed": args.seed}


def _run_config(args) -> RunConfig:
    return load_strict(RunConfig, args.config, _seed_override(args))


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(args):
    cfg = load_strict(SyntheticConfig, args.config, _seed_override(args))
    logs, sidecar, _ = generate_synthetic(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_jsonl(os.path.join(args.out, "records.jsonl"), logs)
    write_sidecar(os.path.join(args.out, "sessions.jsonl"), sidecar)
    write_run_record(args.out, "gen-data", cfg.to_dict(), {"config": args.config}, cfg.seed)
    print(f"wrote {len(logs)} users to {args.out}")


def cmd_preprocess(args):
    cfg = load_strict(PreprocessConfig, args.config, _seed_override(args))
    ds = preprocess(read_jsonl(args.data), cfg.max_len, cfg.min_count, cfg.ratio, cfg.seed)
    save_dataset(ds, args.out)
    write_run_record(args.out, "preprocess", dataclasses.asdict(cfg),
                     {"config": args.config, "data": args.data}, cfg.seed)
    print(json.dumps(ds.manifest["counts"], sort_keys=True))


def cmd_pretrain(args):
    from .training import TrainLog, build_model, pretrain
    cfg = _run_config(args)
    ds = load_dataset(args.data)
    write_run_record(args.out, "pretrain", cfg.to_dict(), {"config": args.config, "data": args.data}, cfg.seed)
    train_log = TrainLog(os.path.join(args.out, "train_log.jsonl"))
    try:
        ckpt = pretrain(build_model(cfg, ds), ds, out_dir=args.out, train_log=train_log)
    finally:
        train_log.close()
    ckpt.save(os.path.join(args.out, "pretrain.npz"))
    print(os.path.join(args.out, "pretrain.npz"))


def cmd_finetune(args):
    from .training import Checkpoint, TrainLog, finetune, restore
    cfg = _run_config(args)
    ds = load_dataset(args.data)
    write_run_record(args.out, "finetune", cfg.to_dict(),
                     {"config": args.config, "data": args.data, "checkpoint": args.checkpoint}, cfg.seed)
    model = restore(Checkpoint.load(args.checkpoint), cfg)
    train_log = TrainLog(os.path.join(args.out, "train_log.jsonl"))
    try:
        finetune(model, ds, args.scenario, train_log=train_log, out_dir=args.out)
    finally:
        train_log.close()
    print(os.path.join(args.out, f"finetune-{args.scenario}.npz"))


def cmd_evaluate(args):
    from .metrics import format_table
    from .training import Checkpoint, evaluate, restore
    ckpt = Checkpoint.load(args.checkpoint)
    cfg = load_strict(RunConfig, args.config, _seed_override(args)) if args.config else \
        RunConfig.from_dict({**ckpt.config, **_seed_override(args)})
    ds = load_dataset(args.data)
    write_run_record(args.out, "evaluate", cfg.to_dict(),
                     {"config": args.config, "data": args.data, "checkpoint": args.checkpoint}, cfg.seed)
    model = restore(ckpt, cfg)
    scenarios = ["search", "rec"] if args.scenario == "both" else [args.scenario]
    reports = [evaluate(model, ds, sc, tie_break="random" if args.zero_scores else None,
                        zero_scores=args.zero_scores) for sc in scenarios]
    for r in reports:
        with open(os.path.join(args.out, f"report_{r.scenario}.json"), "w") as fh:
            fh.write(r.to_json() + "\n")
    table = format_table(reports)
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        fh.write(table + "\n")
    print(table)


def cmd_ablate(args):
    from .ablation import comparison_table, median_table, run_ablation
    from .training import TrainLog
    acfg = load_strict(AblationConfig, args.config)
    base = RunConfig.from_dict({**acfg.base, **_seed_override(args)})
    ds = load_dataset(args.data)
    write_run_record(args.out, "ablate", {**dataclasses.asdict(acfg), "base": base.to_dict()},
                     {"config": args.config, "data": args.data}, base.seed)
    train_log = TrainLog(os.path.join(args.out, "train_log.jsonl"))
    try:
        reports = run_ablation(base, acfg.variants, acfg.seeds, lambda seed: ds, tuple(acfg.scenarios),
                               train_log=train_log)
    finally:
        train_log.close()
    with open(os.path.join(args.out, "reports.jsonl"), "w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")
    table = comparison_table(reports)
    with open(os.path.join(args.out, "comparison.txt"), "w") as fh:
        fh.write(table + "\n\nmedian HR@10\n" + json.dumps(median_table(reports), indent=2, sort_keys=True) + "\n")
    print(table)


def cmd_gradcheck(args):
    from .gate import TOY_CONFIG, model_grad_check
    cfg = TOY_CONFIG
    if args.config:
        cfg = load_strict(RunConfig, args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if cfg.precision != "float64":
        raise ConfigError("gradcheck needs precision float64")
    out = {}
    for sc in ("search", "rec"):
        out[sc] = model_grad_check(sc, cfg, seed=cfg.seed).to_dict()
    passed = all(r["passed"] for r in out.values())
    result = {"passed": passed, "max_rel_error": max(r["max_rel_error"] for r in out.values()), "scenarios": out}
    if args.out:
        write_run_record(args.out, "gradcheck", cfg.to_dict(), {"config": args.config}, cfg.seed)
        with open(os.path.join(args.out, "gradcheck.json"), "w") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
    print(f"gradcheck {'PASS' if passed else 'FAIL'} max_rel_error={result['max_rel_error']:.3e}")
    return 0 if passed else 1


COMMANDS = {
    "gen-data": cmd_gen_data, "preprocess": cmd_preprocess, "pretrain": cmd_pretrain,
    "finetune": cmd_finetune, "evaluate": cmd_evaluate, "ablate": cmd_ablate, "gradcheck": cmd_gradcheck,
}


def build_parser():
    p = argparse.ArgumentParser(prog="searchrec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        needs_out = name != "gradcheck"
        sp.add_argument("--out", required=needs_out, help="output directory")
        if name not in ("gen-data", "gradcheck"):
            sp.add_argument("--data", required=True,
                            help="records JSONL (preprocess) or preprocessed dataset directory")
        if name in ("finetune", "evaluate"):
            sp.add_argument("--checkpoint", required=True)
        if name == "finetune":
            sp.add_argument("--scenario", required=True, choices=["search", "rec"])
        if name == "evaluate":
            sp.add_argument("--scenario", default="both", choices=["search", "rec", "both"])
            sp.add_argument("--zero-scores", action="store_true",
                            help="null-model calibration: all scores 0, random tie-break")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    from .training import CheckpointMismatch, TrainingDiverged
    try:
        return COMMANDS[args.command](args) or 0
    except ConfigError as exc:
        print(f"{ERROR_PREFIX}: config: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointMismatch, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"{ERROR_PREFIX}: input: {exc}".replace("\n", " "), file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"{ERROR_PREFIX}: diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
