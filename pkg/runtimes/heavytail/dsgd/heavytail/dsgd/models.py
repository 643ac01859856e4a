"""Serializable report models."""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class Method(str, Enum):
    quadrature = "quadrature"
    mc = "mc"
    closed_form = "closed-form"


class Quantity(BaseModel):
    """A computed value with its provenance."""

    value: Optional[float] = None
    stderr: Optional[float] = None
    method: Method
    status: Optional[str] = None


class TailIndexEstimate(BaseModel):
    alpha_hat: float
    alpha_raw: float
    per_node_alphas: List[float]
    per_node_raw: List[float]
    n_samples: int
    K1: int
    K2: int
    clipped: bool
    divergence_fraction: float = 0.0


class Regime(str, Enum):
    NetworkLightens = "NetworkLightens"
    NetworkHeaviens = "NetworkHeaviens"
    Boundary = "Boundary"


class ExpansionReport(BaseModel):
    """First-order behavior of alpha_hat(delta) around delta = 0.

    `correction` is the closed-form coefficient driven by the sign term e;
    `correction_weighted` weights each draw by ||I - eta H||^(s-1), which is
    the exact derivative of h_hat(s) and coincides with `correction` at s = 1.
    """

    alpha_dis: float
    s: float
    correction: float
    numerator_prob: float
    e_value: float
    weighted_sign: float
    denominator_expectation: float
    mean_degree: float
    regime: Regime
    correction_weighted: Optional[float] = None
    regime_weighted: Optional[Regime] = None
    rho_dis: Optional[float] = None
    method: Method
    stderr: Dict[str, float] = Field(default_factory=dict)

    def alpha_at(self, delta: float) -> float:
        return self.alpha_dis - self.correction * delta

    def alpha_at_weighted(self, delta: float) -> float:
        if self.correction_weighted is None:
            raise ValueError("no weighted correction was computed")
        return self.alpha_dis - self.correction_weighted * delta


class Case(str, Enum):
    I = "I"  # noqa: E741
    II = "II"
    III = "III"


# per-node: one node's own recursion; network: depends on all N nodes
THRESHOLD_SCOPES = {
    "tau": "network",
    "eta_crit": "per-node",
    "eta_max": "per-node",
    "eta_max_network": "network",
    "sigma2_threshold": "network",
}


class ThresholdReport(BaseModel):
    N: int
    d: int
    b: int
    sigma: float
    tau: float
    eta_crit: Optional[float] = None
    eta_max: Optional[float] = None
    eta_max_network: Optional[float] = None
    case: Optional[Case] = None
    eta: Optional[float] = None
    sigma2_threshold: Optional[float] = None
    methods: Dict[str, Method] = Field(default_factory=dict)
    notes: Dict[str, str] = Field(default_factory=dict)
    scopes: Dict[str, str] = Field(default_factory=lambda: dict(THRESHOLD_SCOPES))


class MomentBound(BaseModel):
    """Upper bounds on E||x(k)||^p for the requested k."""

    p: float
    h_p: float
    alpha_hat: float
    case: str
    k: List[int]
    bound: List[float]
    limit: float
    epsilon: Optional[float] = None


class TheoryReport(BaseModel):
    config_digest: str
    quantities: Dict[str, Quantity] = Field(default_factory=dict)
    expansion: Optional[ExpansionReport] = None
    thresholds: Optional[ThresholdReport] = None


class ResultRow(BaseModel):
    """One (sweep point, mode, seed) outcome of a scenario run."""

    scenario: str
    mode: str
    topology: str
    N: int
    d: int
    b: str
    eta: float
    delta: float
    seed: int
    alpha_hat_empirical: Optional[float] = None
    alpha_raw_empirical: Optional[float] = None
    empirical_status: str = "ok"
    alpha_hat_theory: Optional[float] = None
    theory_status: str = "ok"
    rho_hat: Optional[float] = None
    divergence_fraction: float = 0.0
    runtime_ms: float = 0.0
