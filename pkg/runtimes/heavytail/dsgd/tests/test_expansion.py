"""test theory.expansion."""

import math

import numpy as np
import pytest
from scipy import stats

from heavytail.dsgd.errors import (
    DimensionMismatchError,
    PreconditionError,
    UnstableBaseError,
)
from heavytail.dsgd.models import Method, Regime
from heavytail.dsgd.synthdata import ProblemSpec
from heavytail.dsgd.theory.expansion import (
    SpectralSample,
    classify_regime,
    denominator_expectation,
    e_term,
    expansion_d1,
    expansion_from_spectra,
    expansion_general_b,
    expansion_general_d_mc,
    expansion_heterogeneous,
    min_max_probability,
    node_kits,
)
from heavytail.dsgd.theory.kits import a_squared_kit, batch_mean_kit
from heavytail.dsgd.theory.moments import alpha_uncertainty, moment_function
from heavytail.dsgd.topology import GraphKind, build_graph, graph_mixing, laplacian


@pytest.mark.parametrize("eta", [0.5, 1.0, 2.0, 4.0])
def test_e_term_two_nodes(eta):
    """min + max of two chi2(1) is a chi2(2) sum."""
    assert e_term(eta, 2) == pytest.approx(2.0 * math.exp(-1.0 / eta) - 1.0, abs=1e-6)


@pytest.mark.parametrize("eta", [0.3, 1.0, 3.0])
def test_e_term_single_node(eta):
    expected = 1.0 - 2.0 * stats.chi2(1).cdf(1.0 / eta)
    assert e_term(eta, 1) == pytest.approx(expected, abs=1e-6)


def test_e_term_bounds_and_validation():
    for n in (1, 3, 10, 50):
        for eta in (0.05, 0.5, 5.0):
            assert -1.0 <= e_term(eta, n) <= 1.0
    with pytest.raises(PreconditionError):
        e_term(0.0, 2)
    with pytest.raises(PreconditionError):
        min_max_probability(1.0, 0, a_squared_kit())


def test_classify_regime():
    assert classify_regime(0.3) is Regime.NetworkHeaviens
    assert classify_regime(-0.3) is Regime.NetworkLightens
    assert classify_regime(0.0) is Regime.Boundary
    assert classify_regime(1e-12) is Regime.Boundary


def test_sign_flip_with_step_size():
    small = expansion_general_b(0.8, 8, [1.0, 1.0])
    large = expansion_general_b(1.3, 8, [1.0, 1.0])

    assert small.e_value == pytest.approx(-0.56, abs=0.05)
    assert small.regime is Regime.NetworkLightens
    assert small.correction < 0

    assert large.e_value == pytest.approx(0.45, abs=0.05)
    assert large.regime is Regime.NetworkHeaviens
    assert large.correction > 0
    assert large.method is Method.quadrature
    assert large.rho_dis < 0


def test_alpha_at_is_linear():
    report = expansion_general_b(1.3, 8, [1.0, 1.0])
    assert report.alpha_at(0.0) == report.alpha_dis
    assert report.alpha_at(0.01) == pytest.approx(
        report.alpha_dis - 0.01 * report.correction
    )
    # heavier tails: the index drops as delta grows
    assert report.alpha_at(0.01) < report.alpha_dis


def test_weighted_correction_matches_at_unit_s():
    # single node past the point where E|1 - eta X| = 1, so alpha_dis < 1
    report = expansion_general_b(1.2, 1, [1.0], s=1.0)
    assert report.s == 1.0
    assert report.correction_weighted == pytest.approx(report.correction, rel=1e-4)
    assert report.regime_weighted is report.regime


def test_d1_is_batch_one():
    a = expansion_d1(0.4, [1.0, 1.0])
    b = expansion_general_b(0.4, 1, [1.0, 1.0])
    assert a.correction == b.correction
    assert a.e_value == pytest.approx(2.0 * math.exp(-2.5) - 1.0, abs=1e-6)


def test_denominator_expectation():
    report = expansion_d1(0.4, [1.0, 1.0])
    value = denominator_expectation(0.4, 2, report.alpha_dis)
    assert value > 0
    assert value == pytest.approx(report.denominator_expectation, rel=1e-9)

    # near s = 0 the log moment is rho_hat_dis < 0
    with pytest.raises(PreconditionError):
        denominator_expectation(0.4, 2, 1e-6)
    with pytest.raises(UnstableBaseError):
        denominator_expectation(5.0, 2, 1.0)


def test_unstable_base():
    with pytest.raises(UnstableBaseError):
        expansion_general_b(5.0, 1, [1.0, 1.0])


def test_heterogeneous_with_equal_kits_matches_homogeneous():
    kit = batch_mean_kit(8)
    het = expansion_heterogeneous(1.3, [1.0, 1.0], [kit, kit])
    hom = expansion_general_b(1.3, 8, [1.0, 1.0])
    assert het.e_value == pytest.approx(hom.e_value, abs=1e-4)
    assert het.correction == pytest.approx(hom.correction, rel=1e-3)

    with pytest.raises(DimensionMismatchError):
        expansion_heterogeneous(1.3, [1.0, 1.0, 1.0], [kit, kit])


def test_heterogeneous_batches():
    spec = ProblemSpec(d=1, n_nodes=2, batch_sizes=(1, 8), eta=0.6)
    kits = node_kits(spec)
    report = expansion_heterogeneous(spec.eta, [1.0, 1.0], kits)
    assert -1.0 <= report.e_value <= 1.0
    with pytest.raises(PreconditionError):
        node_kits(spec.replace(d=2))


def test_spectral_ties_go_to_lowest_node():
    # per draw: node deviations |1 - lambda| at eta = 1
    eigenvalues = np.array(
        [
            [[0.5], [0.5]],  # tie at 0.5, node 0, positive sign
            [[3.0], [0.1]],  # node 0, |1 - 3| = 2, negative sign
            [[0.75], [0.9]],  # node 0, 0.25, positive sign
        ]
    )
    sample = SpectralSample(eigenvalues=eigenvalues)
    report = expansion_from_spectra(sample, 1.0, [2.0, 0.0], alpha_dis=1.2)
    assert report.numerator_prob == pytest.approx(2.0 / 3.0)
    assert report.weighted_sign == pytest.approx(-2.0 / 3.0)
    assert report.method is Method.mc
    assert report.denominator_expectation > 0


def test_spectral_sample_node_bounds():
    sample = SpectralSample(eigenvalues=np.ones((4, 3, 2)))
    assert sample.n_mc == 4
    assert sample.nodes(2).shape == (4, 2, 2)
    with pytest.raises(DimensionMismatchError):
        sample.nodes(4)
    with pytest.raises(DimensionMismatchError):
        sample.nodes(0)


def test_spectral_agrees_with_quadrature():
    exact = expansion_general_b(1.3, 8, [1.0, 1.0])
    spec = ProblemSpec(d=1, n_nodes=2, batch_sizes=8, eta=1.3)
    mc = expansion_general_d_mc(
        spec, [1.0, 1.0], alpha_dis=exact.alpha_dis, n_mc=20_000, seed=3
    )
    tolerance = 5 * mc.stderr["weighted_sign"]
    assert mc.e_value == pytest.approx(exact.e_value, abs=tolerance)
    assert mc.regime is Regime.NetworkHeaviens


def test_general_d_needs_full_rank():
    spec = ProblemSpec(d=4, n_nodes=2, batch_sizes=2, eta=0.2)
    with pytest.raises(PreconditionError):
        expansion_general_d_mc(spec, [1.0, 1.0], n_mc=100)
    with pytest.raises(PreconditionError):
        expansion_general_d_mc(spec.replace(batch_sizes=4, eta=0.0), [1.0, 1.0])


def test_general_d_runs():
    spec = ProblemSpec(d=2, n_nodes=3, batch_sizes=4, eta=0.4)
    report = expansion_general_d_mc(spec, [2.0, 2.0, 2.0], n_mc=5_000, seed=1)
    assert -1.0 <= report.e_value <= 1.0
    assert report.mean_degree == 2.0
    assert set(report.stderr) == {"rho_dis", "weighted_sign", "denominator_expectation"}


@pytest.mark.slow
def test_expansion_tracks_monte_carlo_at_small_delta():
    delta = 0.01
    L = laplacian(build_graph(GraphKind.complete, 3))
    predicted = expansion_general_b(0.6, 1, L.diag).alpha_at(delta)

    spec = ProblemSpec(d=1, n_nodes=3, batch_sizes=1, eta=0.6)
    mixing = graph_mixing(GraphKind.complete, 3, delta)
    mf = moment_function(spec, mixing, 200_000, seed=21)
    low, high = alpha_uncertainty(mf)
    assert low - 0.1 <= predicted <= high + 0.1
