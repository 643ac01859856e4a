"""test scenario files and presets."""

import pytest

from heavytail.dsgd.errors import ConfigError
from heavytail.dsgd.recursion import Mode
from heavytail.dsgd.scenario import (
    PRESETS,
    load_scenario,
    full_scale,
    parse_scenario,
)
from heavytail.dsgd.topology import GraphKind

MINIMAL = """
name: tiny
spec:
  d: 1
  n_nodes: 2
  batch_sizes: 1
  eta: 0.3
"""


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load(name):
    scenario = load_scenario(name)
    assert scenario.name == name
    assert scenario.points()


def test_case_presets():
    case1 = load_scenario("case1")
    assert len(case1.points()) == 10
    assert case1.spec.n_nodes == 30
    assert case1.modes == [Mode.DE, Mode.Dis, Mode.C]

    case3 = load_scenario("case3")
    assert case3.topology.kind is GraphKind.star
    assert case3.spec.d == 100


def test_contour_presets():
    d1 = load_scenario("contour-d1")
    assert d1.contour.n_values == list(range(1, 51))
    etas = d1.contour.etas
    assert etas[0] == pytest.approx(0.1)
    assert etas[-1] == pytest.approx(10.0)
    assert len(etas) == 40

    d100 = load_scenario("contour-d100")
    assert d100.contour.n_values[:3] == [2, 4, 6]
    assert d100.contour.n_values[-1] == 64
    assert d100.contour.eta_scale == "linear"


def test_defaults():
    scenario = parse_scenario(MINIMAL)
    assert scenario.topology.kind is GraphKind.complete
    assert scenario.topology.delta == 0.0
    assert scenario.estimation.K == 2000
    assert scenario.seeds == [0]
    assert scenario.points() == [(None, scenario.spec, 0.0)]


def test_sweep_points():
    text = MINIMAL + "sweep:\n  field: b\n  values: [1, 4]\n"
    points = parse_scenario(text).points()
    assert [spec.batch_sizes for _, spec, _ in points] == [(1, 1), (4, 4)]

    text = MINIMAL + "sweep:\n  field: delta\n  values: [0.1, 0.2]\n"
    points = parse_scenario(text).points()
    assert [delta for _, _, delta in points] == [0.1, 0.2]
    assert all(spec.eta == 0.3 for _, spec, _ in points)

    text = MINIMAL + "sweep:\n  field: eta\n  values: [0.1, 0.2]\n"
    points = parse_scenario(text).points()
    assert [spec.eta for _, spec, _ in points] == [0.1, 0.2]


def test_yaml_error_has_position():
    with pytest.raises(ConfigError, match=r"^<scenario>:\d+:\d+: "):
        parse_scenario("name: x\nspec: [1, 2\nmodes: {")


@pytest.mark.parametrize(
    "extra, where",
    [
        ("sweep:\n  field: b\n  values: [1.5]\n", "sweep"),
        ("sweep:\n  field: eta\n", "sweep"),
        ("estimation:\n  K: 100\n  K0: 100\n", "estimation"),
        ("modes: []\n", "at least one mode"),
        ("topology:\n  kind: torus\n", "topology.kind"),
        ("seeds: []\n", "seeds"),
    ],
)
def test_validation_errors(extra, where):
    with pytest.raises(ConfigError, match=where):
        parse_scenario(MINIMAL + extra)


def test_missing_spec():
    with pytest.raises(ConfigError, match="spec"):
        parse_scenario("name: x\n")


def test_top_level_must_be_mapping():
    with pytest.raises(ConfigError, match="mapping"):
        parse_scenario("- 1\n- 2\n")


def test_batch_sweep_needs_homogeneous_nodes():
    text = (
        "name: het\nspec:\n  d: 1\n  n_nodes: 2\n  batch_sizes: [1, 2]\n  eta: 0.1\n"
        "sweep:\n  field: b\n  values: [1, 2]\n"
    )
    with pytest.raises(ConfigError, match="homogeneous"):
        parse_scenario(text)


def test_load_from_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(MINIMAL)
    assert load_scenario(path).name == "tiny"
    assert load_scenario(str(path)).spec.eta == 0.3


def test_unknown_source():
    with pytest.raises(ConfigError, match="neither a file nor a preset"):
        load_scenario("no-such-preset")


def test_full_scale():
    scenario = full_scale(load_scenario("case1"))
    assert (scenario.estimation.R, scenario.estimation.K) == (1600, 5000)
    assert scenario.estimation.K0 == 500
    assert load_scenario("case1").estimation.R == 400
