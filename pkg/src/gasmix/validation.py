"""Agreement metrics between two families of time series.

Both metrics use the pointwise relative difference ``2 (a - b) / (a + b)``,
so they are symmetric in the two series and unchanged by a common positive
rescaling.  Series are compared on the union of their time grids with
linear interpolation.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import trapezoid


class MetricError(ValueError):
    """The two series cannot be compared (e.g. their pointwise mean vanishes)."""


def _merged(t_a, a, t_b, b):
    t_a, t_b = np.asarray(t_a, float), np.asarray(t_b, float)
    a = np.asarray(a, float).reshape(t_a.size, -1)
    b = np.asarray(b, float).reshape(t_b.size, -1)
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"series count differs: {a.shape[1]} vs {b.shape[1]}")
    lo, hi = max(t_a[0], t_b[0]), min(t_a[-1], t_b[-1])
    if not hi > lo:
        raise MetricError("time ranges do not overlap")
    grid = np.union1d(t_a, t_b)
    grid = grid[(grid >= lo) & (grid <= hi)]
    A = np.column_stack([np.interp(grid, t_a, a[:, i]) for i in range(a.shape[1])])
    B = np.column_stack([np.interp(grid, t_b, b[:, i]) for i in range(b.shape[1])])
    return grid, A, B


def _relative(grid, A, B, labels=None):
    mean = 0.5 * (A + B)
    scale = max(float(np.max(np.abs(A))), float(np.max(np.abs(B))), 1e-300)
    bad = np.abs(mean) <= 1e-12 * scale
    if np.any(bad):
        ti, si = np.argwhere(bad)[0]
        name = labels[si] if labels is not None else si
        raise MetricError(f"pointwise mean vanishes for series {name} at t = {grid[ti]:.3f} s")
    return (A - B) / mean


def relative_l2(t_a, a, t_b, b, labels=None) -> float:
    """Average over series of ``sqrt(1/T int r(t)^2 dt)``, in percent."""
    grid, A, B = _merged(t_a, a, t_b, b)
    r = _relative(grid, A, B, labels)
    span = grid[-1] - grid[0]
    per_series = np.sqrt(trapezoid(r * r, grid, axis=0) / span) * 100.0
    return float(np.mean(per_series))


def relative_max(t_a, a, t_b, b, labels=None) -> float:
    """Largest ``|r(t)|`` over all series and merged grid times, in percent."""
    grid, A, B = _merged(t_a, a, t_b, b)
    return float(np.max(np.abs(_relative(grid, A, B, labels))) * 100.0)


@dataclass
class ValidationReport:
    pressure_l2: float
    pressure_max: float
    flux_l2: float
    flux_max: float
    objective: float | None = None
    solver: dict = field(default_factory=dict)
    runtimes: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [
            ("quantity", "avg rel L2 (%)", "max rel (%)"),
            ("nodal pressure", f"{self.pressure_l2:.4f}", f"{self.pressure_max:.4f}"),
            ("edge flux", f"{self.flux_l2:.4f}", f"{self.flux_max:.4f}"),
        ]
        width = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, width)) for r in rows]
        if self.objective is not None:
            lines.append(f"objective J = {self.objective:.6g}")
        return "\n".join(lines)


def compare_tables(optimized, simulated) -> ValidationReport:
    """Metrics for two :class:`gasmix.simulator.SeriesTable` objects.

    Pressure is compared at withdrawal nodes and flux on all edges; the
    node and edge identifiers of both tables must agree.
    """
    if list(optimized.node_ids) != list(simulated.node_ids):
        raise MetricError("node columns differ between the two tables")
    if list(optimized.edge_ids) != list(simulated.edge_ids):
        raise MetricError("edge columns differ between the two tables")
    nl = [f"node {i}" for i in optimized.node_ids]
    el = [f"edge {k}" for k in optimized.edge_ids]
    args_p = (optimized.times, optimized.pressure, simulated.times, simulated.pressure)
    args_f = (optimized.times, optimized.flux, simulated.times, simulated.flux)
    return ValidationReport(
        pressure_l2=relative_l2(*args_p, labels=nl),
        pressure_max=relative_max(*args_p, labels=nl),
        flux_l2=relative_l2(*args_f, labels=el),
        flux_max=relative_max(*args_f, labels=el),
    )
