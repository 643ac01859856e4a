"""test theory.kits, theory.quadrature and theory.dislaw."""

import math

import numpy as np
import pytest
from scipy import stats

from heavytail.dsgd.config import get_settings
from heavytail.dsgd.errors import NoRootError, PreconditionError, QuadratureError
from heavytail.dsgd.theory.dislaw import (
    DisLaw,
    alpha_hat_dis,
    h_hat_dis,
    log_moment,
    rho_hat_dis,
    sign_integrals,
    tail_mass,
)
from heavytail.dsgd.theory.kits import (
    DistributionKit,
    a_squared_kit,
    batch_mean_kit,
    batch_sum_kit,
    erf_cdf,
    erf_ppf,
)
from heavytail.dsgd.theory.quadrature import integrate, integrate_unit_log


@pytest.mark.parametrize("df,scale", [(1.0, 1.0), (3.0, 0.5), (10.0, 2.0)])
def test_kit_matches_scipy(df, scale):
    kit = DistributionKit(df=df, scale=scale)
    law = stats.chi2(df, scale=scale)
    x = np.array([0.05, 0.5, 1.0, 4.0, 12.0])
    assert np.allclose(kit.cdf(x), law.cdf(x))
    assert np.allclose(kit.pdf(x), law.pdf(x))
    assert np.allclose(kit.ppf([0.1, 0.5, 0.9]), law.ppf([0.1, 0.5, 0.9]))
    assert kit.mean == pytest.approx(law.mean())
    assert kit.pdf(-1.0) == 0.0
    assert kit.cdf(-1.0) == 0.0


def test_kit_constructors():
    assert batch_mean_kit(4, 2.0).mean == pytest.approx(4.0)
    assert batch_sum_kit(4, 2.0).mean == pytest.approx(16.0)
    kit = a_squared_kit(1.5)
    x = np.linspace(0.1, 5.0, 7)
    assert np.allclose(erf_cdf(x, 1.5), kit.cdf(x))
    assert erf_ppf(erf_cdf(2.0)) == pytest.approx(2.0)


def test_integrate():
    assert integrate(lambda x: math.exp(-x), 0.0, math.inf) == pytest.approx(1.0)
    assert integrate(lambda x: x, 2.0, 2.0) == 0.0
    assert integrate_unit_log(math.log) == pytest.approx(-1.0)


def test_integrate_reports_misses():
    with pytest.raises(QuadratureError):
        integrate(lambda x: math.sin(100.0 * x), 0.0, 20.0, limit=1)


def test_law_validation():
    with pytest.raises(PreconditionError):
        DisLaw(eta=0.0, kits=(a_squared_kit(),))
    with pytest.raises(PreconditionError):
        DisLaw(eta=0.5, kits=())


def test_cdf_against_samples(rng):
    eta, n = 0.7, 3
    law = DisLaw.homogeneous(eta, n, batch_mean_kit(2))
    x = rng.chisquare(2, size=(200_000, n)) / 2.0
    z = np.abs(1.0 - eta * x).max(axis=1)
    for point in (0.3, 0.8, 1.0, 1.5):
        assert law.cdf(point) == pytest.approx((z <= point).mean(), abs=5e-3)
    assert law.cdf(-0.1) == 0.0
    assert law.pdf(0.0) == 0.0


def test_heterogeneous_cdf_factorizes():
    first, second = batch_mean_kit(1), batch_mean_kit(4)
    both = DisLaw(eta=0.6, kits=(first, second))
    assert not both.is_homogeneous
    for z in (0.2, 0.9, 1.3):
        expected = DisLaw(0.6, (first,)).cdf(z) * DisLaw(0.6, (second,)).cdf(z)
        assert both.cdf(z) == pytest.approx(expected)


@pytest.mark.parametrize("b", [1, 2, 8])
def test_second_moment_closed_form(b):
    """E(1 - eta X)^2 = 1 - 2 eta + eta^2 (1 + 2/b) for one node."""
    eta = 0.5
    law = DisLaw.homogeneous(eta, 1, batch_mean_kit(b))
    expected = 1.0 - 2.0 * eta + eta**2 * (1.0 + 2.0 / b)
    assert h_hat_dis(law, 2.0) == pytest.approx(expected, rel=1e-5)
    assert h_hat_dis(law, 0.0) == 1.0


@pytest.mark.parametrize("b", [1, 3])
def test_alpha_two_at_critical_step(b):
    eta = 2.0 * b / (b + 2.0)
    law = DisLaw.homogeneous(eta, 1, batch_mean_kit(b))
    assert alpha_hat_dis(law) == pytest.approx(2.0, abs=2e-3)


def test_alpha_decreases_with_step():
    kit = batch_mean_kit(1)
    alphas = [alpha_hat_dis(DisLaw.homogeneous(eta, 1, kit)) for eta in (0.5, 0.7, 0.9)]
    assert alphas[0] > alphas[1] > alphas[2]


def test_alpha_decreases_with_nodes():
    kit = batch_mean_kit(1)
    alphas = [alpha_hat_dis(DisLaw.homogeneous(0.6, n, kit)) for n in (1, 2, 4)]
    assert alphas[0] > alphas[1] > alphas[2]


def test_rho_matches_samples(rng):
    eta = 0.8
    law = DisLaw.homogeneous(eta, 2, batch_mean_kit(1))
    z = np.abs(1.0 - eta * rng.chisquare(1, size=(400_000, 2))).max(axis=1)
    logs = np.log(z)
    stderr = logs.std() / math.sqrt(logs.size)
    assert rho_hat_dis(law) == pytest.approx(logs.mean(), abs=5 * stderr)


def test_derivative_positive_at_root():
    law = DisLaw.homogeneous(0.9, 1, batch_mean_kit(1))
    alpha = alpha_hat_dis(law)
    assert log_moment(law, alpha) > 0


def test_no_root():
    unstable = DisLaw.homogeneous(5.0, 1, batch_mean_kit(1))
    with pytest.raises(NoRootError) as info:
        alpha_hat_dis(unstable)
    assert info.value.reason.value == "unstable"


def test_light_tail_beyond_s_max(monkeypatch):
    monkeypatch.setenv("HEAVYTAIL_S_MAX", "1.5")
    get_settings.cache_clear()
    law = DisLaw.homogeneous(0.3, 1, batch_mean_kit(1))
    with pytest.raises(NoRootError) as info:
        alpha_hat_dis(law)
    assert info.value.reason.value == "light"


def test_tail_mass():
    kit = batch_mean_kit(1)
    assert tail_mass(kit, 1.0, 2.0) == 0.0
    assert tail_mass(kit, 2.0, 1.0) == pytest.approx(kit.cdf(2.0) - kit.cdf(1.0))


@pytest.mark.parametrize("n", [1, 3])
def test_sign_probabilities_sum_to_one(n):
    law = DisLaw.homogeneous(0.8, n, batch_mean_kit(1))
    plus, minus = sign_integrals(law, s=1.0)
    assert len(plus) == len(minus) == n
    assert sum(plus) + sum(minus) == pytest.approx(1.0, abs=1e-5)


def test_sign_probabilities_heterogeneous():
    law = DisLaw(eta=0.7, kits=(batch_mean_kit(1), batch_mean_kit(2)))
    plus, minus = sign_integrals(law, s=1.0)
    assert sum(plus) + sum(minus) == pytest.approx(1.0, abs=1e-5)
    # the noisier node attains the maximum more often
    assert plus[0] + minus[0] > plus[1] + minus[1]


def test_alpha_increases_with_batch():
    alphas = [
        alpha_hat_dis(DisLaw.homogeneous(0.9, 1, batch_mean_kit(b)))
        for b in (1, 2, 4, 8)
    ]
    assert all(a < b for a, b in zip(alphas, alphas[1:]))
    assert alphas[0] < 2.0 < alphas[1]


def test_disconnected_heavier_than_centralized():
    """alpha_dis(b) < alpha_C(bN), and the gap widens with N."""
    eta, b = 0.3, 2
    ns = (2, 5, 10)
    alpha_dis = [
        alpha_hat_dis(DisLaw.homogeneous(eta, n, batch_mean_kit(b))) for n in ns
    ]
    assert alpha_dis[0] > alpha_dis[1] > alpha_dis[2]

    central = [DisLaw.homogeneous(eta, 1, batch_mean_kit(b * n)) for n in ns]
    for law, alpha in zip(central, alpha_dis):
        # h_C < 1 at alpha_dis puts the centralized root above it
        assert h_hat_dis(law, alpha) < 1.0
    # h_C falls with N at a common exponent, so alpha_C grows with N
    h_central = [h_hat_dis(law, alpha_dis[0]) for law in central]
    assert h_central[0] > h_central[1] > h_central[2]
