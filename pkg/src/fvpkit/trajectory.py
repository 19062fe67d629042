"""Time-gridded solutions u(t) and their X-norm pieces.

Time integrals use the trapezoidal rule on the grid; u' is the second-order
finite-difference derivative (central inside, one-sided at the ends).

Every constructed trajectory is checked against the vector Sobolev inequality

    sup|u|² ≤ (1 + C2²/(C1² T)) ∫‖u‖² + ∫‖u'‖_*²

and the outcome is tallied in :data:`SOBOLEV_AUDIT` (reset per CLI run) and
in :data:`SOBOLEV_LIFETIME` (never reset).
"""

from __future__ import annotations

import io
import threading
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .errors import ValidationError
from .io import coefficient_cells, coefficient_header, write_csv_rows

SOBOLEV_AUDIT = {"checked": 0, "violations": 0, "worst_relative_margin": float("inf")}
SOBOLEV_LIFETIME = dict(SOBOLEV_AUDIT)
_AUDIT_LOCK = threading.Lock()


def reset_sobolev_audit():
    with _AUDIT_LOCK:
        SOBOLEV_AUDIT.update(checked=0, violations=0, worst_relative_margin=float("inf"))


@dataclass(frozen=True)
class XNormParts:
    l2_V_sq: float        # ∫‖u‖²
    sup_H_sq: float       # sup |u|²
    l2_dual_sq: float     # ∫‖u‖_*²
    l2_deriv_dual_sq: float  # ∫‖u'‖_*²

    @property
    def x_norm(self):
        return float(np.sqrt(self.l2_V_sq + self.sup_H_sq + self.l2_dual_sq + self.l2_deriv_dual_sq))

    @property
    def equivalent_norm(self):
        return float(np.sqrt(self.l2_V_sq + self.l2_deriv_dual_sq))


class Trajectory:
    def __init__(self, grid, values, triple, dense=None, meta=None):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values)
        if grid.ndim != 1 or grid.size < 3:
            raise ValidationError("trajectory grid needs at least three nodes", "grid")
        if np.any(np.diff(grid) <= 0):
            raise ValidationError("trajectory grid must be strictly increasing", "grid")
        if values.shape != (grid.size, triple.dim):
            raise ValidationError(f"values shape {values.shape} != {(grid.size, triple.dim)}", "values")
        self.grid = grid
        self.values = values
        self.triple = triple
        self.dense = dense
        self.meta = dict(meta or {})
        self.derivative = np.gradient(values, grid, axis=0, edge_order=2)
        self._pointwise = (
            triple.norm_V(values) ** 2,
            triple.norm_H(values) ** 2,
            triple.norm_dual(values) ** 2,
            triple.norm_dual(self.derivative) ** 2,
        )
        v2, h2, d2, dd2 = self._pointwise
        self.norms = XNormParts(
            float(trapezoid(v2, grid)), float(h2.max()),
            float(trapezoid(d2, grid)), float(trapezoid(dd2, grid)),
        )
        self._audit()

    @property
    def T(self):
        return self.grid[-1] - self.grid[0]

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def initial(self):
        return self.values[0]

    @property
    def final(self):
        return self.values[-1]

    @property
    def x_norm(self):
        return self.norms.x_norm

    @property
    def equivalent_norm(self):
        return self.norms.equivalent_norm

    def __call__(self, t):
        """u(t): the dense evaluator when available, else linear interpolation."""
        if self.dense is not None:
            return self.dense(t)
        t = float(t)
        i = int(np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, self.grid.size - 2))
        w = (t - self.grid[i]) / (self.grid[i + 1] - self.grid[i])
        return (1 - w) * self.values[i] + w * self.values[i + 1]

    def cumulative(self):
        """Running (∫₀ᵗ‖u‖², sup_{s≤t}|u|², ∫₀ᵗ‖u'‖_*²) on the grid."""
        v2, h2, _, dd2 = self._pointwise
        return (
            cumulative_trapezoid(v2, self.grid, initial=0.0),
            np.maximum.accumulate(h2),
            cumulative_trapezoid(dd2, self.grid, initial=0.0),
        )

    def sobolev_margin(self):
        """RHS - LHS of the vector Sobolev inequality (≥ 0 when it holds)."""
        tri = self.triple
        factor = 1.0 + tri.C2 ** 2 / (tri.C1 ** 2 * self.T)
        n = self.norms
        return factor * n.l2_V_sq + n.l2_deriv_dual_sq - n.sup_H_sq

    def _audit(self):
        margin = self.sobolev_margin()
        scale = max(self.norms.sup_H_sq, 1e-300)
        rel = margin / scale
        with _AUDIT_LOCK:
            for tally in (SOBOLEV_AUDIT, SOBOLEV_LIFETIME):
                tally["checked"] += 1
                if rel < -1e-12:
                    tally["violations"] += 1
                tally["worst_relative_margin"] = min(tally["worst_relative_margin"], rel)

    def __sub__(self, other):
        if not np.array_equal(self.grid, other.grid):
            raise ValidationError("trajectories live on different grids", "grid")
        return Trajectory(self.grid, self.values - other.values, self.triple)

    def relative_x_error(self, reference):
        """‖self - reference‖_X / ‖reference‖_X."""
        ref = reference.x_norm
        diff = (self - reference).x_norm
        return diff / ref if ref > 0 else diff

    def to_csv(self):
        header = ["t"] + coefficient_header(self.dim, np.iscomplexobj(self.values))
        rows = [[t] + coefficient_cells(v) for t, v in zip(self.grid, self.values)]
        buf = io.StringIO()
        write_csv_rows(buf, header, rows)
        return buf.getvalue()
