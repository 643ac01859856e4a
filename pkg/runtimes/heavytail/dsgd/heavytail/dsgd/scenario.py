"""Scenario files: YAML experiment definitions and the shipped presets."""

import logging
from importlib.resources import files
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import (
    BaseModel,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)

from heavytail.dsgd.errors import ConfigError
from heavytail.dsgd.recursion import Mode
from heavytail.dsgd.synthdata import ProblemSpec
from heavytail.dsgd.topology import GraphKind

logger = logging.getLogger(__name__)

PRESETS = (
    "case1",
    "case2",
    "case3",
    "sweep-eta",
    "sweep-batch",
    "contour-d1",
    "contour-d100",
)


class TopologyConfig(BaseModel):
    kind: GraphKind = GraphKind.complete
    delta: NonNegativeFloat = 0.0


class SweepConfig(BaseModel):
    field: Literal["eta", "b", "delta", "none"] = "none"
    values: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_values(self):
        if self.field == "none":
            if self.values:
                raise ValueError("values given without a swept field")
            return self
        if not self.values:
            raise ValueError(f"sweep over {self.field} needs values")
        if self.field == "b" and any(v < 1 or v != int(v) for v in self.values):
            raise ValueError("batch sizes must be positive integers")
        if any(v < 0 for v in self.values):
            raise ValueError(f"{self.field} values must be >= 0")
        return self


class EstimationConfig(BaseModel):
    K: PositiveInt = 2000
    K0: NonNegativeInt = 400
    R: PositiveInt = 400
    K1: Optional[PositiveInt] = None
    K2: Optional[PositiveInt] = None

    @model_validator(mode="after")
    def check_burn_in(self):
        if not self.K > self.K0:
            raise ValueError(f"need K > K0, got K={self.K}, K0={self.K0}")
        return self


class ContourConfig(BaseModel):
    eta_min: PositiveFloat
    eta_max: PositiveFloat
    eta_points: PositiveInt = 40
    eta_scale: Literal["log", "linear"] = "log"
    n_values: List[PositiveInt]
    n_mc: Optional[PositiveInt] = None

    @model_validator(mode="after")
    def check_range(self):
        if not self.eta_min < self.eta_max or self.eta_points < 1:
            raise ValueError("need eta_min < eta_max")
        return self

    @field_validator("n_values", mode="before")
    @classmethod
    def expand_range(cls, v):
        """Accept {start, stop, step} for an inclusive integer range."""
        if isinstance(v, dict):
            start, stop = int(v["start"]), int(v["stop"])
            return list(range(start, stop + 1, int(v.get("step", 1))))
        return v

    @property
    def etas(self) -> np.ndarray:
        if self.eta_points == 1:
            return np.array([self.eta_min])
        if self.eta_scale == "log":
            return np.geomspace(self.eta_min, self.eta_max, self.eta_points)
        return np.linspace(self.eta_min, self.eta_max, self.eta_points)


class Scenario(BaseModel):
    """One experiment: data law, network, sweep, estimation protocol and seeds."""

    name: str
    spec: ProblemSpec
    topology: TopologyConfig = Field(default_factory=TopologyConfig)
    modes: List[Mode] = Field(default_factory=lambda: [Mode.DE, Mode.Dis, Mode.C])
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    estimation: EstimationConfig = Field(default_factory=EstimationConfig)
    seeds: List[NonNegativeInt] = Field(default_factory=lambda: [0], min_length=1)
    outputs: Path = Path("out")
    theory: bool = True
    export_ensembles: bool = True
    contour: Optional[ContourConfig] = None

    @model_validator(mode="after")
    def check_modes(self):
        if not self.modes:
            raise ValueError("at least one mode is required")
        if self.sweep.field == "b" and not self.spec.homogeneous:
            raise ValueError("a batch sweep needs homogeneous nodes")
        return self

    def points(self) -> List[Tuple[Optional[float], ProblemSpec, float]]:
        """(swept value, spec, delta) for every sweep point."""
        if self.sweep.field == "none":
            return [(None, self.spec, self.topology.delta)]
        out = []
        for value in self.sweep.values:
            if self.sweep.field == "eta":
                out.append((value, self.spec.replace(eta=value), self.topology.delta))
            elif self.sweep.field == "b":
                spec = self.spec.replace(batch_sizes=int(value))
                out.append((value, spec, self.topology.delta))
            else:
                out.append((value, self.spec, value))
        return out


def _preset_text(name: str) -> str:
    resource = files("heavytail.dsgd").joinpath("presets", f"{name}.yaml")
    return resource.read_text(encoding="utf-8")


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{where}: {problem}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: expected a mapping at the top level")
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        details = "; ".join(
            f"{'.'.join(str(part) for part in err['loc']) or '<root>'}: {err['msg']}"
            for err in exc.errors()
        )
        raise ConfigError(f"{source}: {details}") from exc


def load_scenario(source: Union[str, Path]) -> Scenario:
    """Scenario from a YAML path or a preset name."""
    path = Path(source)
    if path.is_file():
        logger.info(f"loading scenario {path}")
        return parse_scenario(path.read_text(encoding="utf-8"), str(path))
    name = str(source)
    if name in PRESETS:
        logger.info(f"loading preset {name}")
        return parse_scenario(_preset_text(name), f"preset:{name}")
    raise ConfigError(f"{source} is neither a file nor a preset ({', '.join(PRESETS)})")


def full_scale(scenario: Scenario) -> Scenario:
    """The full protocol: R=1600 runs of K=5000 steps after K0=500 burn-in."""
    estimation = scenario.estimation.model_copy(
        update={"R": 1600, "K": 5000, "K0": 500}
    )
    return scenario.model_copy(update={"estimation": estimation})
