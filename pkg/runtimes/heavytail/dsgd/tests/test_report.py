"""test theory.report."""

import json

import numpy as np
import pytest

from heavytail.dsgd.models import Method
from heavytail.dsgd.recursion import Mode, RunConfig
from heavytail.dsgd.synthdata import ProblemSpec
from heavytail.dsgd.theory import report as report_module
from heavytail.dsgd.theory.bounds import gclt_scaling
from heavytail.dsgd.theory.report import config_expansion, theory_report
from heavytail.dsgd.topology import GraphKind, graph_mixing


def _config(eta: float, d: int = 1, b: int = 1, mode: Mode = Mode.DE) -> RunConfig:
    spec = ProblemSpec(d=d, n_nodes=3, batch_sizes=b, eta=eta)
    mixing = graph_mixing(GraphKind.complete, 3, 0.05) if mode is Mode.DE else None
    return RunConfig(spec=spec, mixing=mixing, mode=mode, K=20, K0=5, R=4)


def test_report_quantities():
    report = theory_report(_config(0.3), n_mc=20_000)
    q = report.quantities
    for key in ("rho_hat", "h_hat(1)", "h_hat(2)", "alpha_hat", "rho_hat_dis"):
        assert key in q
    assert q["rho_hat"].value < 0
    assert q["rho_hat"].method is Method.mc
    assert q["rho_hat_dis"].method is Method.quadrature
    assert "alpha_hat_C" in q
    assert q["alpha_hat_lower"].value <= q["alpha_hat_upper"].value
    assert q["lyapunov"].value < 0
    assert 0 < q["h_hat_k2(1)"].value < 1
    assert q["moment_bound_limit"].value > 0
    assert 0 < q["wasserstein_rate(1)"].value < 1
    a_k, _ = gclt_scaling(q["alpha_hat"].value, 15, np.zeros(1))
    assert q["gclt_a_K"].value == pytest.approx(a_k)
    assert "perturbation_ratio" in q

    assert report.expansion is not None
    assert report.expansion.mean_degree == pytest.approx(2.0)
    assert report.thresholds is not None
    assert report.thresholds.eta == 0.3
    json.loads(report.model_dump_json())


def test_unstable_report_keeps_going():
    report = theory_report(_config(5.0), n_mc=5_000, with_thresholds=False)
    q = report.quantities
    assert q["alpha_hat"].value is None
    assert q["alpha_hat"].status == "no-root:unstable"
    assert q["alpha_hat_dis"].status == "no-root:unstable"
    assert q["expansion"].status == "UnstableBaseError"
    assert "lyapunov" not in q
    assert report.expansion is None
    assert report.thresholds is None


def test_no_expansion_without_graph():
    assert config_expansion(_config(0.3, mode=Mode.Dis)) is None


def test_vector_expansion_is_mc():
    config = _config(0.4, d=2, b=4)
    report = config_expansion(config, n_mc=5_000, seed=1)
    assert report.method is Method.mc


def test_bounds_skipped_for_large_products(monkeypatch):
    monkeypatch.setattr(report_module, "PRODUCT_MAX_DIM", 2)
    report = theory_report(_config(0.3), n_mc=2_000, with_thresholds=False)
    q = report.quantities
    assert q["lyapunov"].status == "skipped:dim>2"
    assert "h_hat_k2(1)" not in q
    assert "gclt_a_K" in q


def test_bounds_can_be_left_out():
    report = theory_report(
        _config(0.3), n_mc=2_000, with_thresholds=False, with_bounds=False
    )
    assert "alpha_hat" in report.quantities
    assert "moment_bound_limit" not in report.quantities
