"""Laws of squared Gaussian features: scaled chi-square kits."""

from dataclasses import dataclass

import numpy as np
from scipy import special


@dataclass(frozen=True)
class DistributionKit:
    """pdf, cdf and quantile of scale * chi2(df)."""

    df: float
    scale: float

    @property
    def mean(self) -> float:
        return self.df * self.scale

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        k = 0.5 * self.df
        with np.errstate(divide="ignore", invalid="ignore"):
            log_density = (
                (k - 1.0) * np.log(x / self.scale)
                - x / (2.0 * self.scale)
                - k * np.log(2.0)
                - special.gammaln(k)
                - np.log(self.scale)
            )
            out = np.where(x > 0, np.exp(log_density), 0.0)
        return out[()]

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return special.gammainc(0.5 * self.df, x / (2.0 * self.scale))[()]

    def ppf(self, p):
        return (2.0 * self.scale * special.gammaincinv(0.5 * self.df, p))[()]


def a_squared_kit(sigma: float = 1.0) -> DistributionKit:
    """a^2 for a ~ N(0, sigma^2)."""
    return DistributionKit(df=1.0, scale=sigma**2)


def batch_sum_kit(b: int, sigma: float = 1.0) -> DistributionKit:
    """sum of b squared features."""
    return DistributionKit(df=float(b), scale=sigma**2)


def batch_mean_kit(b: int, sigma: float = 1.0) -> DistributionKit:
    """(1/b) sum of b squared features, the scalar curvature H_i."""
    return DistributionKit(df=float(b), scale=sigma**2 / b)


def erf_cdf(x, sigma: float = 1.0):
    """F_a(x) = erf(sqrt(x / (2 sigma^2)))."""
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return special.erf(np.sqrt(x / (2.0 * sigma**2)))[()]


def erf_ppf(p, sigma: float = 1.0):
    """Inverse of erf_cdf: 2 sigma^2 erfinv(p)^2."""
    return (2.0 * sigma**2 * special.erfinv(p) ** 2)[()]
