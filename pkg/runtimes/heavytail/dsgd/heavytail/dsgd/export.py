"""CSV, JSON and SVG outputs, written atomically."""

import io
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import jinja2
import numpy as np
import pandas as pd
from pydantic import BaseModel

from heavytail.dsgd.models import ResultRow
from heavytail.dsgd.recursion import IterateEnsemble
from heavytail.dsgd.theory.contour import ContourGrid

logger = logging.getLogger(__name__)

jinja2_env = jinja2.Environment(
    loader=jinja2.PackageLoader("heavytail.dsgd", "templates"),
    autoescape=jinja2.select_autoescape(enabled_extensions=("j2",)),
    trim_blocks=True,
    lstrip_blocks=True,
)

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def atomic_write(path: Union[str, Path], content: Union[str, bytes]) -> Path:
    """Write to a sibling temp file, then rename over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(content, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"wrote {path}")
    return path


def matrix_csv(matrix: np.ndarray) -> str:
    buffer = io.StringIO()
    np.savetxt(buffer, np.atleast_2d(matrix), fmt="%.17g", delimiter=",")
    return buffer.getvalue()


def write_matrix(path: Union[str, Path], matrix: np.ndarray) -> Path:
    return atomic_write(path, matrix_csv(matrix))


def write_frame(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    return atomic_write(path, frame.to_csv(index=False))


def rows_frame(rows: Sequence[ResultRow]) -> pd.DataFrame:
    columns = list(ResultRow.model_fields)
    return pd.DataFrame([row.model_dump(mode="json") for row in rows], columns=columns)


def write_rows(path: Union[str, Path], rows: Sequence[ResultRow]) -> Path:
    return write_frame(path, rows_frame(rows))


def read_rows(path: Union[str, Path]) -> List[ResultRow]:
    """Inverse of write_rows; empty cells come back as None."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    return [
        ResultRow.model_validate(
            {key: (None if value == "" else value) for key, value in record.items()}
        )
        for record in frame.to_dict(orient="records")
    ]


ESTIMATE_COLUMNS = {
    "scenario": "scenario_id",
    "mode": "mode",
    "topology": "topology",
    "eta": "eta",
    "b": "b",
    "delta": "delta",
    "N": "N",
    "d": "d",
    "alpha_hat_empirical": "alpha_hat",
    "alpha_raw_empirical": "alpha_raw",
    "divergence_fraction": "divergence_fraction",
}


def estimates_frame(rows: Sequence[ResultRow]) -> pd.DataFrame:
    """Empirical tail-index estimates, one row per result row."""
    frame = rows_frame(rows)[list(ESTIMATE_COLUMNS)]
    return frame.rename(columns=ESTIMATE_COLUMNS)


def write_estimates(path: Union[str, Path], rows: Sequence[ResultRow]) -> Path:
    return write_frame(path, estimates_frame(rows))


def ensemble_frame(ensemble: IterateEnsemble) -> pd.DataFrame:
    """Long table of every run, node and coordinate.

    node_id and coord are 1-based; diverged runs carry NaN values.
    """
    run, node, coord = np.meshgrid(
        np.arange(ensemble.n_runs),
        np.arange(ensemble.n_nodes),
        np.arange(ensemble.d),
        indexing="ij",
    )
    return pd.DataFrame(
        {
            "run_id": run.reshape(-1),
            "node_id": node.reshape(-1) + 1,
            "coord": coord.reshape(-1) + 1,
            "tail_avg_value": ensemble.per_run_average.reshape(-1),
            "final_value": ensemble.per_run_final.reshape(-1),
            "diverged": np.repeat(ensemble.diverged, ensemble.n_nodes * ensemble.d),
        }
    )


def write_ensemble(path: Union[str, Path], ensemble: IterateEnsemble) -> Path:
    return write_frame(path, ensemble_frame(ensemble))


def write_json(path: Union[str, Path], model: BaseModel) -> Path:
    return atomic_write(path, model.model_dump_json(indent=2))


class _Axis:
    """Maps data values to pixels, optionally on a log scale."""

    def __init__(self, low: float, high: float, start: float, stop: float, log: bool):
        self.log = log and low > 0
        self.low, self.high = self._t(low), self._t(high)
        if self.high == self.low:
            self.high = self.low + 1.0
        self.start, self.stop = start, stop

    def _t(self, value: float) -> float:
        return math.log10(value) if self.log else value

    def __call__(self, value: float) -> float:
        fraction = (self._t(value) - self.low) / (self.high - self.low)
        return self.start + fraction * (self.stop - self.start)

    def ticks(self, count: int = 5) -> List[Tuple[float, str]]:
        values = np.linspace(self.low, self.high, count)
        if self.log:
            values = 10.0**values
        return [(self(v), f"{v:.3g}") for v in values]


def _cell_color(value: float, low: float, high: float) -> str:
    """Diverging blue-white-red scale centered at zero."""
    if not math.isfinite(value):
        return "#cccccc"
    if value < 0:
        t = min(1.0, value / low) if low < 0 else 0.0
        r, g, b = 1 - t, 1 - 0.6 * t, 1.0
    else:
        t = min(1.0, value / high) if high > 0 else 0.0
        r, g, b = 1.0, 1 - 0.8 * t, 1 - 0.8 * t
    return "#{:02x}{:02x}{:02x}".format(int(255 * r), int(255 * g), int(255 * b))


def _edges(values: np.ndarray, log: bool) -> np.ndarray:
    """Cell boundaries halfway between grid points."""
    t = np.log10(values) if log else values.astype(float)
    if t.size == 1:
        edges = np.array([t[0] - 0.5, t[0] + 0.5])
    else:
        mid = 0.5 * (t[1:] + t[:-1])
        edges = np.concatenate(
            [[t[0] - (mid[0] - t[0])], mid, [t[-1] + (t[-1] - mid[-1])]]
        )
    return 10.0**edges if log else edges


def render_contour(grid: ContourGrid, title: str = "") -> str:
    width, height, margin = 640, 480, 60
    log_eta = bool((grid.etas > 0).all() and grid.etas.size > 2) and (
        grid.etas[-1] / grid.etas[0] > 20
    )
    eta_edges = _edges(grid.etas, log_eta)
    n_edges = _edges(grid.ns.astype(float), False)
    x = _Axis(eta_edges[0], eta_edges[-1], margin, width - margin / 2, log_eta)
    y = _Axis(n_edges[0], n_edges[-1], height - margin, margin / 2, False)
    low, high = float(np.nanmin(grid.values)), float(np.nanmax(grid.values))

    cells = []
    for i in range(grid.ns.size):
        for j in range(grid.etas.size):
            x0, x1 = x(eta_edges[j]), x(eta_edges[j + 1])
            y0, y1 = y(n_edges[i + 1]), y(n_edges[i])
            cells.append(
                {
                    "x": x0,
                    "y": y0,
                    "w": x1 - x0,
                    "h": y1 - y0,
                    "fill": _cell_color(grid.values[i, j], low, high),
                }
            )

    def polyline(points) -> str:
        return " ".join(f"{x(eta):.2f},{y(n):.2f}" for eta, n in points)

    curves = []
    if grid.zero_curve:
        curves.append(
            {"points": polyline(grid.zero_curve), "color": "red", "label": "e = 0"}
        )
    if grid.instability_curve:
        curves.append(
            {
                "points": polyline(grid.instability_curve),
                "color": "orange",
                "label": "rho_dis = 0",
            }
        )
    return jinja2_env.get_template("contour.svg.j2").render(
        width=width,
        height=height,
        margin=margin,
        title=title,
        cells=cells,
        curves=curves,
        x_ticks=x.ticks(),
        y_ticks=y.ticks(),
        x_label="eta",
        y_label="N",
    )


def render_lines(
    series: Dict[str, Sequence[Tuple[float, Optional[float]]]],
    x_label: str,
    y_label: str = "alpha",
    title: str = "",
) -> str:
    """One polyline per named series of (x, y); missing y values break nothing."""
    width, height, margin = 640, 400, 60
    points = [
        (px, py) for values in series.values() for px, py in values if py is not None
    ]
    xs = [p[0] for p in points] or [0.0, 1.0]
    ys = [p[1] for p in points] or [0.0, 1.0]
    x = _Axis(min(xs), max(xs), margin, width - margin / 2, False)
    y = _Axis(min(0.0, min(ys)), max(ys), height - margin, margin / 2, False)

    lines = []
    for index, (name, values) in enumerate(series.items()):
        kept = [(px, py) for px, py in values if py is not None]
        lines.append(
            {
                "name": name,
                "color": PALETTE[index % len(PALETTE)],
                "points": " ".join(f"{x(px):.2f},{y(py):.2f}" for px, py in kept),
                "markers": [(x(px), y(py)) for px, py in kept],
            }
        )
    return jinja2_env.get_template("lines.svg.j2").render(
        width=width,
        height=height,
        margin=margin,
        title=title,
        lines=lines,
        x_ticks=x.ticks(),
        y_ticks=y.ticks(),
        x_label=x_label,
        y_label=y_label,
    )
