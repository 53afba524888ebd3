import json
import subprocess
import sys

import numpy as np
import pytest

from reidlab.cli import main
from reidlab.io import read_embeddings


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def split_files(tmp_path, capsys):
    d, q, g = tmp_path / "d.emb", tmp_path / "q.emb", tmp_path / "g.emb"
    code, _, _ = run(capsys, "synth", "--preset", "easy", "--out", d, "--query-out", q,
                     "--gallery-out", g)
    assert code == 0
    return d, q, g


def test_synth_then_cluster_reports_count_and_ari(tmp_path, capsys, split_files):
    d, _, _ = split_files
    code, out, err = run(capsys, "cluster", "--in", d, "--jaccard")
    doc = json.loads(out)
    assert code == 0 and {"num_clusters", "ari", "num_noise"} <= set(doc)
    assert doc["num_clusters"] >= 1 and "ari\t" in err
    labels = tmp_path / "labels.emb"
    run(capsys, "cluster", "--in", d, "--jaccard", "--out", labels)
    _, meta, _ = read_embeddings(labels)
    assert meta.labels.max() + 1 == doc["num_clusters"]


def test_eval_prints_metric_document(capsys, split_files):
    _, q, g = split_files
    code, out, err = run(capsys, "eval", "--query", q, "--gallery", g)
    doc = json.loads(out)
    assert code == 0
    assert set(doc) == {"mAP", "rank1", "rank5", "rank10", "num_queries", "num_excluded"}
    assert "rank1\t" in err
    code, out, err = run(capsys, "--quiet", "eval", "--query", q, "--gallery", g)
    assert json.loads(out) == doc and err == ""


def test_global_flags_after_subcommand(capsys, split_files):
    _, q, g = split_files
    a = run(capsys, "--quiet", "eval", "--query", q, "--gallery", g)[1]
    b = run(capsys, "eval", "--query", q, "--gallery", g, "--quiet")[1]
    assert a == b


def test_rerank_lambda_one_matches_eval(capsys, split_files):
    _, q, g = split_files
    plain = json.loads(run(capsys, "eval", "--query", q, "--gallery", g)[1])
    rr = json.loads(run(capsys, "rerank", "--query", q, "--gallery", g, "--lambda", 1.0)[1])
    assert plain == rr


def test_refine_rows_sum_to_one(tmp_path, capsys, split_files):
    d, _, _ = split_files
    out_path = tmp_path / "soft.npy"
    code, out, _ = run(capsys, "refine", "--in", d, "--jaccard", "--out", out_path)
    doc = json.loads(out)
    assert code == 0 and doc["max_row_sum_error"] < 1e-9
    assert np.load(out_path).shape[0] == doc["num_samples"]


def test_config_file_and_set(tmp_path, capsys, split_files):
    _, q, g = split_files
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"rerank": {"lambda_value": 1.0}}))
    via_file = run(capsys, "rerank", "--query", q, "--gallery", g, "--config", cfg)[1]
    via_set = run(capsys, "rerank", "--query", q, "--gallery", g,
                  "--set", "rerank.lambda_value=1.0")[1]
    assert via_file == via_set


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["eval", "--query", "/nonexistent.emb", "--gallery", "/nonexistent.emb"],
    ["eval"],
    ["gradcheck", "--loss", "bogus"],
    ["rerank", "--query", "x", "--gallery", "y", "--set", "noequals"],
    ["train-scm", "--set", "loss.bogus=1", "--epochs", "1"],
])
def test_user_errors_exit_one(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 1 and out == "" and err.startswith("error:")


def test_bad_magic_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.emb"
    bad.write_bytes(b"XXXX" + bytes(30))
    code, _, err = run(capsys, "cluster", "--in", bad)
    assert code == 1 and "byte offset 0" in err


def test_internal_error_exit_two(capsys, monkeypatch):
    import reidlab.cli as cli

    def boom(args):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "cmd_io_roundtrip", boom)
    assert run(capsys, "io-roundtrip")[0] == 2


def test_gradcheck_single_loss(capsys):
    code, out, _ = run(capsys, "gradcheck", "--loss", "supcon", "--instances", 3)
    assert code == 0 and json.loads(out)["supcon"]["passed"]


def test_gradcheck_failure_exit_two(capsys, monkeypatch):
    import reidlab.gradcheck as gc
    monkeypatch.setattr(gc, "TOLERANCE", -1.0)
    assert run(capsys, "gradcheck", "--loss", "center_loss", "--instances", 2)[0] == 2


def test_io_roundtrip(tmp_path, capsys, split_files):
    d, _, _ = split_files
    code, out, _ = run(capsys, "io-roundtrip", "--count", 20)
    assert code == 0 and json.loads(out) == {"files": 20, "passed": True}
    copy = tmp_path / "copy.emb"
    code, out, _ = run(capsys, "io-roundtrip", "--in", d, "--out", copy)
    assert code == 0 and copy.read_bytes() == d.read_bytes()


def test_csv_input(tmp_path, capsys):
    path = tmp_path / "x.csv"
    # two directions after normalization: (1, 0) and (0, 1)
    rows = ["label,camera,f0,f1"] + [f"{i % 2},{i % 3},{(1 - i % 2) + 0.01 * i},{i % 2}"
                                    for i in range(20)]
    path.write_text("\n".join(rows) + "\n")
    code, out, _ = run(capsys, "cluster", "--in", path, "--eps", 0.5, "--min-pts", 3)
    assert code == 0 and json.loads(out)["num_clusters"] == 2


@pytest.mark.parametrize("argv", [
    ["train-scm", "--epochs", "3"],
    ["train-daprh", "--epochs", "2", "--jaccard"],
    ["train-vitc", "--epochs", "2", "--eps", "0.5"],
])
def test_pipelines_bit_reproducible(tmp_path, capsys, argv):
    outs = []
    for name in ("a", "b"):
        log, metrics = tmp_path / f"{name}.jsonl", tmp_path / f"{name}.json"
        code, out, _ = run(capsys, *argv, "--seed", 3, "--log", log, "--metrics", metrics)
        assert code == 0
        outs.append((out, log.read_bytes(), metrics.read_bytes()))
    assert outs[0] == outs[1]


def test_seed_changes_result(tmp_path, capsys):
    a = run(capsys, "train-scm", "--epochs", 1, "--seed", 1, "--lr", 0.0)[1]
    b = run(capsys, "train-scm", "--epochs", 1, "--seed", 2, "--lr", 0.0)[1]
    assert a != b


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "reidlab.cli", "--quiet", "io-roundtrip",
                           "--count", "5"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["passed"]
