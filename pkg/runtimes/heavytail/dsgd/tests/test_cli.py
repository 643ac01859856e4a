"""test the heavytail command line."""

import json

import numpy as np
import pandas as pd
import pytest

from heavytail.dsgd import __version__
from heavytail.dsgd.cli import build_parser, main


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_topology(tmp_path, capsys):
    argv = ["topology", "complete", "--n", "3", "--delta", "0.1"]
    assert main(argv + ["--out", str(tmp_path)]) == 0
    matrix = np.loadtxt(tmp_path / "mixing-complete-3.csv", delimiter=",")
    np.testing.assert_allclose(np.diag(matrix), 0.8)
    out = capsys.readouterr().out
    assert "max_delta: 0.666667" in out


def test_topology_single_node(tmp_path, capsys):
    assert main(["topology", "complete", "--n", "1", "--out", str(tmp_path)]) == 0
    assert "max_delta: none" in capsys.readouterr().out


def test_delta_out_of_range(tmp_path):
    argv = ["topology", "cycle", "--n", "4", "--delta", "0.6"]
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert not (tmp_path / "mixing-cycle-4.csv").exists()


def test_invalid_graph(tmp_path):
    assert main(["topology", "hypercube", "--n", "6", "--out", str(tmp_path)]) == 2


def test_bad_choice():
    with pytest.raises(SystemExit) as info:
        main(["topology", "torus", "--n", "3"])
    assert info.value.code == 2


def test_validation_error_exit_code(tmp_path):
    assert main(["theory", "--b", "0", "--out", str(tmp_path)]) == 2


def test_calibrate(tmp_path, capsys):
    argv = ["calibrate", "--alphas", "1.5", "--K", "2000", "--out", str(tmp_path)]
    assert main(argv) == 0
    table = pd.read_csv(tmp_path / "calibration.csv")
    assert table["alpha_true"].tolist() == [1.5]
    assert "alpha_hat" in capsys.readouterr().out


def test_thresholds(tmp_path, capsys):
    argv = ["thresholds", "--n", "30", "--eta", "0.1"]
    assert main(argv + ["--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "thresholds.json").read_text())
    assert report["case"] == "I"
    assert report["tau"] == pytest.approx(0.39, abs=0.02)
    out = capsys.readouterr().out
    assert "eta_crit" in out
    assert "per-node" in out
    assert report["scopes"]["eta_max_network"] == "network"
    assert report["scopes"]["eta_max"] == "per-node"


def test_contour_from_flags(tmp_path, capsys):
    argv = [
        "contour",
        "--n-values", "1", "2",
        "--eta-min", "0.5",
        "--eta-max", "4",
        "--eta-points", "4",
        "--out", str(tmp_path),
    ]  # fmt: skip
    assert main(argv) == 0
    frame = pd.read_csv(tmp_path / "contour.csv")
    assert len(frame) == 8
    assert (tmp_path / "contour.svg").exists()
    assert capsys.readouterr().out.startswith("8 cells")


def test_contour_needs_a_grid(tmp_path):
    assert main(["contour", "--out", str(tmp_path)]) == 2
    scenario = tmp_path / "plain.yaml"
    scenario.write_text("name: plain\nspec:\n  d: 1\n  batch_sizes: 1\n  eta: 1.0\n")
    assert main(["contour", str(scenario), "--out", str(tmp_path)]) == 2


def test_run_scenario_file(tmp_path, capsys):
    scenario = tmp_path / "tiny.yaml"
    scenario.write_text(
        "name: tiny\n"
        "spec: {d: 1, n_nodes: 2, batch_sizes: 1, eta: 0.3}\n"
        "topology: {kind: complete, delta: 0.1}\n"
        "modes: [DE]\n"
        "estimation: {K: 30, K0: 5, R: 6}\n"
        "theory: false\n"
    )
    argv = ["run", str(scenario), "--seed", "5"]
    assert main(argv + ["--out", str(tmp_path / "out")]) == 0
    frame = pd.read_csv(tmp_path / "out" / "results.csv")
    assert frame["seed"].tolist() == [5]
    assert frame["theory_status"].tolist() == ["off"]
    assert "alpha_hat_empirical" in capsys.readouterr().out


def test_run_unknown_scenario(tmp_path):
    assert main(["run", "nope", "--out", str(tmp_path)]) == 2


def test_theory(tmp_path, capsys):
    argv = ["theory", "--n", "2", "--eta", "0.3", "--delta", "0.1"]
    argv += ["--n-mc", "2000", "--out", str(tmp_path)]
    assert main(argv) == 0
    written = list(tmp_path.glob("theory-*.json"))
    assert len(written) == 1
    out = capsys.readouterr().out
    assert "rho_hat" in out
    assert "expansion:" in out


def test_couple(tmp_path, capsys):
    argv = ["couple", "--n", "2", "--eta", "0.3", "--delta", "0.1"]
    argv += ["--K", "20", "--R", "10", "--n-mc", "2000", "--out", str(tmp_path)]
    assert main(argv) == 0
    frame = pd.read_csv(tmp_path / "couple.csv")
    assert len(frame) == 21
    assert frame["moment"].iloc[-1] < frame["moment"].iloc[0]
    out = capsys.readouterr().out
    assert "empirical per-step contraction" in out
    assert "W_p rate h_hat(p)^(1/p) = 0." in out


@pytest.mark.parametrize("flag", ["--paper-scale", "--full-scale"])
def test_paper_scale_flag(flag):
    args = build_parser().parse_args(["run", "case1", flag])
    assert args.full_scale
    assert not build_parser().parse_args(["run", "case1"]).full_scale


def test_couple_rate_outside_range(tmp_path, capsys):
    argv = ["couple", "--n", "2", "--eta", "0.3", "--delta", "0.1", "--p", "0.5"]
    argv += ["--K", "5", "--R", "4", "--n-mc", "2000", "--out", str(tmp_path)]
    assert main(argv) == 0
    assert "W_p rate h_hat(p)^(1/p) = n/a" in capsys.readouterr().out
