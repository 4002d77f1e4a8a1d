import json

import numpy as np
import pandas as pd
import pytest

from krongp.cli import EXIT_ERROR, EXIT_OK, EXIT_WARN, build_parser, main

TINY = ["--n1", "3", "--n2", "2", "--n3", "1"]
FAST = ["--chains", "2", "--warmup", "30", "--samples", "20", "--max-tree-depth", "5"]


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["simulate", *TINY, "--seed", "3", "--out", str(out)]) == EXIT_OK
    return out / "simulated.csv", out / "simulated.schema.json"


def test_simulate_defaults(tmp_path):
    assert main(["simulate", "--out", str(tmp_path)]) == EXIT_OK
    table = pd.read_csv(tmp_path / "simulated.csv")
    assert len(table) == 1680
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["config"]["n1"] == 20 and manifest["seed"] == 0
    assert set(manifest["outputs"]) == {"simulated.csv", "simulated.schema.json"}
    assert len(manifest["config_digest"]) == 64


def test_simulate_seed_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--seed", "7", "--out", str(a)]) == EXIT_OK
    assert main(["simulate", "--seed", "7", "--out", str(b)]) == EXIT_OK
    for name in ("simulated.csv", "simulated.schema.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    c = tmp_path / "c"
    main(["simulate", "--seed", "8", "--out", str(c)])
    assert (a / "simulated.csv").read_bytes() != (c / "simulated.csv").read_bytes()


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--noise-sd", "-1", "--out", "x"],
        ["simulate", "--n1", "0", "--out", "x"],
        ["fit", "--data", "d", "--schema", "s", "--model", "svm", "--out", "x"],
        ["cv", "--data", "d", "--schema", "s", "--k", "1", "--out", "x"],
        ["cv", "--data", "d", "--schema", "s", "--methods", "gp.f", "--out", "x"],
        ["frobnicate"],
        [],
    ],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_ERROR
    assert "usage error" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "simulate" in capsys.readouterr().out


def test_parser_defaults():
    args = build_parser().parse_args(["fit", "--data", "d", "--schema", "s", "--out", "o"])
    assert (args.model, args.chains, args.warmup, args.samples, args.seed) == ("gp.f", 4, 500, 500, 0)
    assert args.standardize is True and args.max_tree_depth == 10
    args = build_parser().parse_args(["cv", "--data", "d", "--schema", "s", "--out", "o"])
    assert args.k == 10 and args.methods == ["gp.f", "lin.f"]


def test_fit_writes_bundle(tiny_data, tmp_path):
    csv, schema = tiny_data
    code = main(["--threads", "1", "fit", "--data", str(csv), "--schema", str(schema), *FAST, "--out", str(tmp_path)])
    assert code in (EXIT_OK, EXIT_WARN)
    for c in (1, 2):
        frame = pd.read_csv(tmp_path / f"draws_chain{c}.csv")
        assert len(frame) == 20
        assert list(frame.columns[:6]) == ["lp__", "accept_stat__", "stepsize__", "treedepth__", "n_leapfrog__", "divergent__"]
        assert "alpha_n[1]" in frame.columns and "L[2,1]" in frame.columns
    summary = pd.read_csv(tmp_path / "summary.csv", index_col=0)
    assert {"mean", "sd", "n.eff", "Rhat"} <= set(summary.columns)
    assert np.loadtxt(tmp_path / "latent_mean.csv", delimiter=",").shape == (4, 6)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["model"] == "gp.f"
    # exit code 2 exactly when some hyperparameter R-hat reaches 1.1
    assert (code == EXIT_WARN) == (manifest["max_rhat"] >= 1.1)


def test_fit_warns_on_unconverged(tiny_data, tmp_path, capsys):
    csv, schema = tiny_data
    argv = ["fit", "--data", str(csv), "--schema", str(schema), "--chains", "2", "--warmup", "0", "--samples", "4",
            "--max-tree-depth", "2", "--seed", "1", "--out", str(tmp_path)]
    assert main(["--threads", "1", *argv]) == EXIT_WARN
    assert "diagnostics warnings" in capsys.readouterr().err


def test_fit_missing_input(tmp_path, capsys):
    assert main(["fit", "--data", str(tmp_path / "nope.csv"), "--schema", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_ERROR
    assert "error" in capsys.readouterr().err


def test_threads_env(monkeypatch, capsys):
    monkeypatch.setenv("KRONGP_THREADS", "zero")
    assert main(["simulate", "--out", "unused"]) == EXIT_ERROR
    assert "KRONGP_THREADS" in capsys.readouterr().err


def test_threads_env_used(monkeypatch, tmp_path):
    import krongp.cli as cli

    seen = {}

    def fake(args):
        seen["threads"] = args.threads
        return EXIT_OK

    monkeypatch.setitem(cli.COMMANDS, "simulate", fake)
    monkeypatch.setenv("KRONGP_THREADS", "3")
    assert main(["simulate", "--out", str(tmp_path)]) == EXIT_OK
    assert seen["threads"] == 3
    assert main(["--threads", "2", "simulate", "--out", str(tmp_path)]) == EXIT_OK
    assert seen["threads"] == 2


def test_cv_and_report(tiny_data, tmp_path, capsys):
    csv, schema = tiny_data
    out = tmp_path / "cv"
    code = main(["--threads", "1", "cv", "--data", str(csv), "--schema", str(schema), "--k", "3", "--methods", "gp.f,lin.f",
                 "--chains", "1", "--warmup", "20", "--samples", "10", "--max-tree-depth", "4", "--out", str(out)])
    assert code == EXIT_OK
    losses = pd.read_csv(out / "losses.csv")
    assert set(losses["method"]) == {"GP.f", "LIN.f"}
    # every entry is held out exactly once per method
    assert (losses.groupby("method").size() == 24).all()
    capsys.readouterr()
    assert main(["report", "--bundle", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "y1" in text and "-" in text
    frame = pd.read_csv(out / "comparison_y1.csv", index_col=0, keep_default_na=False)
    assert frame.shape == (2, 2)
    assert frame.iloc[0, 0] == "-" and frame.iloc[1, 1] == "-"


def test_cv_fold_subset(tiny_data, tmp_path):
    csv, schema = tiny_data
    base = ["--threads", "1", "cv", "--data", str(csv), "--schema", str(schema), "--k", "3", "--chains", "1",
            "--warmup", "10", "--samples", "5", "--max-tree-depth", "3"]
    assert main([*base, "--folds", "4", "--out", str(tmp_path / "a")]) == EXIT_ERROR
    assert main([*base, "--folds", "2", "--out", str(tmp_path / "b")]) == EXIT_OK
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["folds_run"] == [2]


def test_report_missing_bundle(tmp_path, capsys):
    assert main(["report", "--bundle", str(tmp_path / "none")]) == EXIT_ERROR
    assert "not found" in capsys.readouterr().err
