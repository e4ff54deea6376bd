import json
import re

import pytest

from searchrec.cli import main

TINY_DATA = {"users": 80, "products": 120, "intents": 4, "events": [30, 40], "session_len": [5, 8]}
TINY_RUN = {"d": 8, "h": 2, "L": 1, "N": 2, "batch": 32, "warmup": 20, "epochs": 1, "finetune_epochs": 1,
            "max_len": 50, "w_max": 8, "eval_negatives": 20}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data_cfg = write(root / "data.json", TINY_DATA)
    run_cfg = write(root / "run.json", TINY_RUN)
    assert main(["gen-data", "--config", data_cfg, "--out", str(root / "raw")]) == 0
    assert main(["preprocess", "--data", str(root / "raw" / "records.jsonl"), "--out", str(root / "ds")]) == 0
    assert main(["pretrain", "--config", run_cfg, "--data", str(root / "ds"), "--out", str(root / "pre")]) == 0
    assert main(["finetune", "--config", run_cfg, "--data", str(root / "ds"), "--out", str(root / "ft"),
                 "--checkpoint", str(root / "pre" / "pretrain.npz"), "--scenario", "rec"]) == 0
    return root, run_cfg


def test_pipeline_writes_run_records(pipeline):
    root, _ = pipeline
    for sub in ("raw", "ds", "pre", "ft"):
        rec = json.loads((root / sub / "run.json").read_text())
        assert set(rec) >= {"command", "config", "inputs", "input_hash", "seed"}
    assert (root / "raw" / "sessions.jsonl").exists()
    assert (root / "pre" / "pretrain_epoch001.npz").exists()
    assert (root / "ft" / "finetune-rec.npz").exists()
    log = [json.loads(x) for x in (root / "pre" / "train_log.jsonl").read_text().splitlines()]
    assert log and {"step", "scenario", "loss", "lr"} <= set(log[0])


def test_evaluate_table_matches_json(pipeline, capsys):
    root, _ = pipeline
    out = root / "ev"
    capsys.readouterr()
    assert main(["evaluate", "--data", str(root / "ds"), "--out", str(out),
                 "--checkpoint", str(root / "ft" / "finetune-rec.npz"), "--scenario", "rec"]) == 0
    printed = capsys.readouterr().out
    rep = json.loads((out / "report_rec.json").read_text())
    row = [line for line in printed.splitlines() if line.split()[1:2] == ["rec"]][0]
    values = [float(x) for x in row.split()[-4:]]
    expect = [rep["metrics"][k] for k in ("HR@5", "HR@10", "NDCG@5", "NDCG@10")]
    assert values == pytest.approx(expect, abs=5e-5)
    assert (out / "report.txt").read_text().strip() == printed.strip()


def test_evaluate_zero_scores(pipeline):
    root, _ = pipeline
    out = root / "zero"
    assert main(["evaluate", "--data", str(root / "ds"), "--out", str(out), "--zero-scores",
                 "--checkpoint", str(root / "pre" / "pretrain.npz")]) == 0
    assert {p.name for p in out.iterdir()} >= {"report_search.json", "report_rec.json"}


def test_unknown_config_key_is_rejected(tmp_path, capsys):
    cfg = write(tmp_path / "bad.json", {"alpha_ssl": 0.1})
    assert main(["pretrain", "--config", cfg, "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert err.startswith("searchrec-error: config:") and "alpha_ssl" in err


def test_invalid_value_is_config_error(tmp_path, capsys):
    cfg = write(tmp_path / "bad.json", {"d": 10, "h": 3})
    assert main(["gen-data", "--config", write(tmp_path / "g.json", {"noise": 2}), "--out", str(tmp_path)]) == 2
    assert main(["pretrain", "--config", cfg, "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    assert "divisible" in capsys.readouterr().err


def test_missing_dataset_is_input_error(tmp_path, capsys):
    assert main(["pretrain", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2
    assert "searchrec-error: input:" in capsys.readouterr().err


def test_architecture_mismatch_is_input_error(pipeline, tmp_path, capsys):
    root, _ = pipeline
    cfg = write(tmp_path / "wide.json", {**TINY_RUN, "d": 16})
    assert main(["finetune", "--config", cfg, "--data", str(root / "ds"), "--out", str(tmp_path / "o"),
                 "--checkpoint", str(root / "pre" / "pretrain.npz"), "--scenario", "rec"]) == 2
    assert "architecture" in capsys.readouterr().err


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    line = capsys.readouterr().out.strip()
    assert re.fullmatch(r"gradcheck PASS max_rel_error=\S+", line)
    assert json.loads((tmp_path / "gradcheck.json").read_text())["passed"] is True
    bad = write(tmp_path / "f32.json", {"precision": "float32"})
    assert main(["gradcheck", "--config", bad]) == 2
