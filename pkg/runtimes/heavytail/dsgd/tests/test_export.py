"""test export."""

import dataclasses
import io

import numpy as np
import pandas as pd
import pytest

from heavytail.dsgd import export
from heavytail.dsgd.models import ResultRow
from heavytail.dsgd.recursion import Mode, RunConfig, run_ensemble
from heavytail.dsgd.synthdata import ProblemSpec
from heavytail.dsgd.theory.contour import contour_quadrature


def _row(**changes) -> ResultRow:
    values = dict(
        scenario="tiny",
        mode="DE",
        topology="complete",
        N=2,
        d=1,
        b="1,1",
        eta=0.3,
        delta=0.05,
        seed=0,
        alpha_hat_empirical=1.7320508075688772,
        rho_hat=-0.1,
        divergence_fraction=0.0,
        runtime_ms=12.5,
    )
    values.update(changes)
    return ResultRow(**values)


def test_atomic_write_creates_parents(tmp_path):
    path = export.atomic_write(tmp_path / "a" / "b" / "out.txt", "hello")
    assert path.read_text() == "hello"
    export.atomic_write(path, b"bytes")
    assert path.read_bytes() == b"bytes"
    assert [p.name for p in path.parent.iterdir()] == ["out.txt"]


def test_atomic_write_failure_leaves_nothing(tmp_path):
    with pytest.raises(TypeError):
        export.atomic_write(tmp_path / "bad.txt", 42)
    assert list(tmp_path.iterdir()) == []


def test_rows_round_trip(tmp_path):
    rows = [_row(), _row(mode="Dis", alpha_hat_empirical=None, empirical_status="x")]
    path = export.write_rows(tmp_path / "results.csv", rows)
    assert export.read_rows(path) == rows


def test_rows_frame_columns():
    frame = export.rows_frame([_row()])
    assert list(frame.columns) == list(ResultRow.model_fields)


def test_estimates_columns(tmp_path):
    rows = [_row(alpha_raw_empirical=1.8), _row(mode="C", alpha_hat_empirical=None)]
    path = export.write_estimates(tmp_path / "estimates.csv", rows)
    frame = pd.read_csv(path)
    assert list(frame.columns) == [
        "scenario_id",
        "mode",
        "topology",
        "eta",
        "b",
        "delta",
        "N",
        "d",
        "alpha_hat",
        "alpha_raw",
        "divergence_fraction",
    ]
    assert frame["scenario_id"].tolist() == ["tiny", "tiny"]
    assert frame["alpha_raw"].iloc[0] == pytest.approx(1.8)
    assert pd.isna(frame["alpha_hat"].iloc[1])


def test_ensemble_csv(tmp_path):
    spec = ProblemSpec(d=2, n_nodes=3, batch_sizes=1, eta=0.1)
    config = RunConfig(spec=spec, mixing=None, mode=Mode.Dis, K=20, K0=5, R=4)
    ensemble = run_ensemble(config, jobs=1)
    blank = np.full(6, np.nan)
    average = ensemble.per_run_average.copy()
    final = ensemble.per_run_final.copy()
    average[2], final[2] = blank, blank
    ensemble = dataclasses.replace(
        ensemble,
        per_run_average=average,
        per_run_final=final,
        diverged=np.array([False, False, True, False]),
    )

    path = export.write_ensemble(tmp_path / "ensemble.csv", ensemble)
    assert path.read_text().splitlines()[0] == (
        "run_id,node_id,coord,tail_avg_value,final_value,diverged"
    )
    frame = pd.read_csv(path)
    assert len(frame) == 4 * 3 * 2
    assert sorted(frame["node_id"].unique()) == [1, 2, 3]
    assert sorted(frame["coord"].unique()) == [1, 2]

    first = frame[(frame["run_id"] == 1) & (frame["node_id"] == 3)]
    np.testing.assert_allclose(first["final_value"], ensemble.per_run_final[1, 4:6])
    np.testing.assert_allclose(
        first["tail_avg_value"], ensemble.per_run_average[1, 4:6]
    )

    lost = frame[frame["run_id"] == 2]
    assert lost["diverged"].all()
    assert lost["final_value"].isna().all()
    assert not frame[frame["run_id"] != 2]["diverged"].any()


def test_matrix_csv_is_exact():
    matrix = np.array([[0.1, 1.0 / 3.0], [2.0 / 3.0, 0.9]])
    parsed = np.loadtxt(io.StringIO(export.matrix_csv(matrix)), delimiter=",")
    np.testing.assert_array_equal(parsed, matrix)


def test_write_frame(tmp_path):
    frame = pd.DataFrame({"k": [0, 1], "moment": [1.0, 0.5]})
    path = export.write_frame(tmp_path / "f.csv", frame)
    pd.testing.assert_frame_equal(pd.read_csv(path), frame)


def test_render_contour():
    grid = contour_quadrature([0.5, 1.0, 2.0, 4.0], [1, 2, 3])
    svg = export.render_contour(grid, title="e sign")
    assert svg.startswith("<svg")
    assert "<title>e sign</title>" in svg
    assert svg.count("<rect") == 1 + 12
    assert "e = 0" in svg
    assert 'class="level-curve"' in svg


def test_render_contour_without_curve():
    svg = export.render_contour(contour_quadrature([1.0], [2]))
    assert "level-curve" not in svg


def test_render_lines():
    series = {
        "DE empirical": [(0.1, 2.0), (0.2, 1.5), (0.3, None)],
        "Dis theory": [(0.1, 1.8), (0.2, 1.2), (0.3, 0.9)],
    }
    svg = export.render_lines(series, x_label="eta")
    assert svg.count('class="series"') == 2
    assert svg.count("<circle") == 5
    assert "DE empirical" in svg
