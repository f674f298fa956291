import json
import subprocess
import sys

import numpy as np
import pytest

from waltzfig.cli import EXIT_INPUT, EXIT_OK, EXIT_USAGE, main
from waltzfig.core import SHORT_NAMES
from waltzfig.formats import load_samples, write_posteriors_csv
from waltzfig.synth import default_config_text


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("simulate", "--out", root / "sim", "--n-dances", 14, "--length", 8, "--seed", 3) == EXIT_OK
    assert run("ingest", root / "sim" / "logs", "--dances", root / "sim" / "dances.json",
               "--labels", root / "sim" / "labels.csv", "--out", root / "ing") == EXIT_OK
    return root


def _outputs(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def test_simulate_fixed_length_and_deterministic(corpus, tmp_path):
    labels = (corpus / "sim" / "labels.csv").read_text().splitlines()[1:]
    per = {}
    for row in labels:
        per[row.split(",")[0]] = per.get(row.split(",")[0], 0) + 1
    assert len(per) == 14 and set(per.values()) == {8}
    assert run("simulate", "--out", tmp_path / "again", "--n-dances", 14, "--length", 8, "--seed", 3) == EXIT_OK
    assert _outputs(tmp_path / "again") == _outputs(corpus / "sim")
    man = json.loads((corpus / "sim" / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 3
    assert "labels.csv" in man["outputs"] and man["timestamp"]


def test_missing_template_is_input_error(tmp_path, capsys):
    d = json.loads(default_config_text())
    del d["templates"]["OC"]
    (tmp_path / "c.json").write_text(json.dumps(d))
    assert run("simulate", "--config", tmp_path / "c.json", "--out", tmp_path / "o") == EXIT_INPUT
    assert "OC" in capsys.readouterr().err


def test_config_dir_env(tmp_path, monkeypatch):
    d = json.loads(default_config_text())
    d["length_range"] = [3, 3]
    (tmp_path / "synth.json").write_text(json.dumps(d))
    monkeypatch.setenv("WALTZFIG_CONFIG_DIR", str(tmp_path))
    assert run("simulate", "--out", tmp_path / "o", "--n-dances", 2) == EXIT_OK
    assert len((tmp_path / "o" / "labels.csv").read_text().splitlines()) == 1 + 2 * 3


def test_ingest_shapes_and_figure_flag(corpus, tmp_path):
    ds = load_samples(corpus / "ing" / "samples.npz")
    assert len(ds) == 14 and ds.n_figures() == 14 * 8
    assert all(f.values.shape == (4, 100) for d in ds for f in d.figures)
    log = corpus / "sim" / "logs" / "dance0000.csv"
    assert run("ingest", log, "--tempo", 28.5, "--intro", 10, "--figures", 2, "--out", tmp_path / "two") == EXIT_OK
    assert load_samples(tmp_path / "two" / "samples.npz").n_figures() == 2


def test_ingest_missing_file(tmp_path, capsys):
    assert run("ingest", tmp_path / "nope.csv", "--figures", 2, "--out", tmp_path / "x") == EXIT_INPUT
    assert "nope.csv" in capsys.readouterr().err


def test_cli_noiseless_round_trip(tmp_path):
    d = json.loads(default_config_text())
    for t in d["templates"].values():
        t["noise_sigma"] = [0.0] * 4
    d["sample_rate_hz"] = 2000.0
    (tmp_path / "quiet.json").write_text(json.dumps(d))
    assert run("simulate", "--config", tmp_path / "quiet.json", "--out", tmp_path / "s",
               "--n-dances", 2, "--length", 4) == EXIT_OK
    assert run("ingest", tmp_path / "s" / "logs", "--dances", tmp_path / "s" / "dances.json",
               "--out", tmp_path / "i") == EXIT_OK
    ideal = load_samples(tmp_path / "s" / "ideal_samples.npz")
    got = load_samples(tmp_path / "i" / "samples.npz")
    for a, b in zip(ideal, got):
        assert np.max(np.abs(a.values() - b.values())) < 1e-6


def _posteriors_file(path, rows):
    with open(path, "w") as fh:
        fh.write(",".join(["dance_id", "position", *SHORT_NAMES]) + "\n")
        for did, k, p in rows:
            fh.write(",".join([did, str(k), *(repr(float(x)) for x in p)]) + "\n")


def test_correct_whisk_example(tmp_path):
    p0 = np.zeros(16)
    p0[SHORT_NAMES.index("W")], p0[SHORT_NAMES.index("LCC")] = 0.6, 0.4
    p1 = np.eye(16)[SHORT_NAMES.index("RCC")]
    _posteriors_file(tmp_path / "p.csv", [("x", 0, p0), ("x", 1, p1)])
    assert run("correct", "--posteriors", tmp_path / "p.csv", "--out", tmp_path / "c") == EXIT_OK
    lines = (tmp_path / "c" / "corrections.csv").read_text().splitlines()
    assert lines[1] == "x,0,W,LCC,1"
    assert lines[2] == "x,1,RCC,RCC,0"


def test_correct_stream_matches_batch(tmp_path, capsys):
    rng = np.random.default_rng(0)
    _posteriors_file(tmp_path / "p.csv", [("x", k, p) for k, p in enumerate(rng.dirichlet(np.ones(16), 6))])
    assert run("correct", "--posteriors", tmp_path / "p.csv", "--out", tmp_path / "a") == EXIT_OK
    assert run("correct", "--stream", "--posteriors", tmp_path / "p.csv", "--out", tmp_path / "b") == EXIT_OK
    assert (tmp_path / "a" / "corrections.csv").read_bytes() == (tmp_path / "b" / "corrections.csv").read_bytes()
    assert "final" in capsys.readouterr().out


def test_bad_posterior_row_cited(tmp_path, capsys):
    _posteriors_file(tmp_path / "p.csv", [("x", 0, [1 / 16] * 16), ("x", 1, [0.05] * 16)])
    assert run("correct", "--posteriors", tmp_path / "p.csv", "--out", tmp_path / "c") == EXIT_INPUT
    assert "line 3" in capsys.readouterr().err


def test_eval_oracle_posteriors(corpus, tmp_path):
    ds = load_samples(corpus / "ing" / "samples.npz")
    write_posteriors_csv(tmp_path / "oracle.csv", {d.id: np.eye(16)[d.label_indices()] for d in ds})
    assert run("eval", "--samples", corpus / "ing" / "samples.npz", "--classifier", "posteriors",
               "--posteriors", tmp_path / "oracle.csv", "--out", tmp_path / "e") == EXIT_OK
    rep = json.loads((tmp_path / "e" / "report.json").read_text())
    assert rep["mean_raw_accuracy"] == 1.0 and rep["mean_corrected_accuracy"] == 1.0
    assert len(rep["folds"]) == 7 and all(len(f["test_ids"]) == 2 for f in rep["folds"])


def test_train_predict_eval_report_pipeline(corpus, tmp_path):
    samples = corpus / "ing" / "samples.npz"
    assert run("train-nn", "--samples", samples, "--epochs", 3, "--width", 8, "--out", tmp_path / "nn") == EXIT_OK
    assert run("predict", "--model", tmp_path / "nn" / "model.json", "--samples", samples,
               "--out", tmp_path / "pr") == EXIT_OK
    assert run("correct", "--posteriors", tmp_path / "pr" / "posteriors.csv",
               "--transitions", tmp_path / "nn" / "transitions.json", "--out", tmp_path / "c") == EXIT_OK
    assert run("eval", "--samples", samples, "--epochs", 5, "--width", 8, "--out", tmp_path / "e") == EXIT_OK
    assert (tmp_path / "e" / "corrections.csv").exists()
    assert run("eval", "--samples", samples, "--epochs", 5, "--width", 8, "--out", tmp_path / "e2") == EXIT_OK
    assert _outputs(tmp_path / "e") == _outputs(tmp_path / "e2")
    assert run("report", tmp_path / "e" / "report.json", "--out", tmp_path / "r") == EXIT_OK
    text = (tmp_path / "r" / "report.txt").read_text()
    assert "improvement (pp)" in text and "top raw confusions" in text


def test_replay_reproduces(corpus, tmp_path):
    assert run("replay", corpus / "ing" / "manifest.json", "--out", tmp_path / "re") == EXIT_OK
    assert _outputs(tmp_path / "re") == _outputs(corpus / "ing")


def test_report_rejects_non_report(tmp_path):
    (tmp_path / "x.json").write_text("{}")
    assert run("report", tmp_path / "x.json", "--out", tmp_path / "r") == EXIT_INPUT


def test_usage_errors():
    assert run("bogus") == EXIT_USAGE
    assert run("eval") == EXIT_USAGE
    assert run("eval", "--samples", "x", "--out", "y", "--classifier", "svm") == EXIT_USAGE


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "waltzfig.cli", "ingest", str(tmp_path / "none.csv"),
                        "--figures", "1", "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == EXIT_INPUT
    r = subprocess.run([sys.executable, "-m", "waltzfig.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "waltzfig" in r.stdout
