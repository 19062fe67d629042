"""Forward Cauchy problems u' + Au = f, u(0) = u0.

Two independent routes: Duhamel's formula evaluated by graded Gauss-Legendre
quadrature, and implicit time stepping (implicit Euler / Crank-Nicolson).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.integrate import cumulative_trapezoid

from . import quadrature
from .errors import AccuracyWarning, ValidationError
from .source import SourceTerm
from .trajectory import Trajectory

DEFAULT_SUB = 4


def _kernel_rate(ev):
    lam = ev.spectrum_real()
    rate = float(np.max(np.abs(lam))) if lam.size else 0.0
    if ev.expm_method != "spectral":
        rate = max(rate, float(np.max(np.abs(ev._w))))
    return rate


def duhamel_integral(ev, f, a, b, panels=None, sub=DEFAULT_SUB):
    """∫_a^b e^{-(b-s)A} f(s) ds by graded composite Gauss-Legendre.

    ``panels`` is the number of geometrically graded levels toward b (auto
    when None); each level is split into ``sub`` equal panels.
    """
    if b <= a or f.is_zero():
        return np.zeros(ev.dim, dtype=np.result_type(f.samples, float))
    nodes, weights = quadrature.duhamel_rule(
        a, b, _kernel_rate(ev), levels=panels, sub=sub, extra_breaks=f.breakpoints)
    vals = ev.evolve_kernel(b - nodes, f(nodes))
    return weights @ vals


def compute_yf(ev, f, T, panels=None, quad_tol=1e-9, sub=DEFAULT_SUB):
    """Full yield y_f = ∫₀ᵀ e^{-(T-t)A} f(t) dt.

    The result is compared against a rule with every panel halved; a
    relative change above ``quad_tol`` raises an :class:`AccuracyWarning`.
    """
    if panels is not None and panels < 1:
        raise ValidationError("panels must be >= 1", "panels")
    f.require_span(0.0, T)
    y = duhamel_integral(ev, f, 0.0, T, panels, sub)
    if quad_tol is not None and not f.is_zero():
        y2 = duhamel_integral(ev, f, 0.0, T, panels, 2 * sub)
        err = np.linalg.norm(y2 - y)
        scale = max(np.linalg.norm(y2), np.finfo(float).tiny)
        if err > quad_tol * scale and err > 1e-300:
            warnings.warn(AccuracyWarning(
                f"y_f quadrature changed by {err / scale:.2e} (relative) under refinement"),
                stacklevel=2)
        y = y2
    return y


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3:
        raise ValidationError("grid needs at least three nodes", "grid")
    if grid[0] != 0.0:
        raise ValidationError("grid must start at t = 0", "grid")
    if np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be strictly increasing", "grid")
    return grid


class DuhamelEvaluator:
    """t ↦ e^{-tA}u0 + ∫₀ᵗ e^{-(t-s)A} f(s) ds, batched over times.

    For sources without interior breakpoints every time t uses the same
    reference rule (graded toward the upper limit, levels sized for the
    source horizon) scaled to [0, t]; otherwise each time gets its own rule.
    """

    batched = True
    chunk = 64

    def __init__(self, ev, u0, f, panels=None, sub=DEFAULT_SUB):
        self.ev, self.f = ev, f
        self.u0 = np.asarray(u0)
        self.panels, self.sub = panels, sub
        self._ref = None
        if not f.is_zero() and len(f.breakpoints) == 0:
            levels = panels or quadrature.auto_levels(f.end - f.start, _kernel_rate(ev))
            self._ref = quadrature.composite_rule(
                quadrature.graded_breakpoints(0.0, 1.0, levels, sub=sub))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = self.many(np.atleast_1d(t))
        return out[0] if t.ndim == 0 else out

    def many(self, ts):
        ev = self.ev
        if ev.expm_method == "spectral":
            if np.any(ts < 0):
                raise ValidationError("time must be nonnegative", "t")
            ev._guard(-ts.max(initial=0.0) * ev._lam, self.u0)
            U = np.exp(-np.outer(ts, ev._lam)) * self.u0
        else:
            U = np.stack([ev.evolve(t, self.u0) for t in ts]) if ts.size else np.zeros((0, ev.dim))
        if self.f.is_zero():
            return U
        U = U.astype(np.result_type(U, self.f.samples, float))
        if self._ref is None:
            for i, t in enumerate(ts):
                U[i] += duhamel_integral(ev, self.f, 0.0, t, self.panels, self.sub)
            return U
        r, w = self._ref
        for lo in range(0, ts.size, self.chunk):
            tt = ts[lo:lo + self.chunk]
            S = np.outer(tt, r)                     # (m, Q) nodes
            F = self.f(S.ravel())
            K = ev.evolve_kernel((tt[:, None] - S).ravel(), F).reshape(S.shape + (-1,))
            U[lo:lo + tt.size] += np.einsum("mq,mqd->md", np.outer(tt, w), K)
        return U


def duhamel_evaluator(ev, u0, f, panels=None, sub=DEFAULT_SUB):
    return DuhamelEvaluator(ev, u0, f, panels, sub)


def solve_forward_duhamel(ev, u0, f, grid, panels=None, quad_tol=1e-9,
                          sub=DEFAULT_SUB, residual_tol=None, residual=True):
    """Trajectory of the Cauchy problem with every u(t_i) from Duhamel's formula.

    The returned trajectory carries a dense evaluator and, in ``meta``, the
    maximal relative ODE residual ‖u' + Au - f‖_* at interior nodes.
    """
    grid = _check_grid(grid)
    f.require_span(0.0, grid[-1])
    u0 = np.asarray(u0)
    u = duhamel_evaluator(ev, u0, f, panels, sub)
    values = np.concatenate([u0[None].astype(np.result_type(u0, f.samples, float)),
                             u.many(grid[1:])])
    if quad_tol is not None and not f.is_zero():
        fine = ev.evolve(grid[-1], u0) + duhamel_integral(ev, f, 0.0, grid[-1], panels, 2 * sub)
        scale = max(np.linalg.norm(fine), np.finfo(float).tiny)
        if np.linalg.norm(fine - values[-1]) > quad_tol * scale:
            warnings.warn(AccuracyWarning("Duhamel quadrature did not settle at the final time"),
                          stacklevel=2)
    traj = Trajectory(grid, values, ev.op.triple, dense=u,
                      meta={"solver": "duhamel", "u0": u0})
    if not residual:
        return traj
    res = ode_residual(ev, traj, f)
    traj.meta["ode_residual"] = res
    if residual_tol is not None and res > residual_tol:
        warnings.warn(AccuracyWarning(f"ODE residual {res:.2e} exceeds {residual_tol:.2e}"),
                      stacklevel=2)
    return traj


def derivative_step(ev, span):
    """Step for differentiating dense trajectories: ~2e-3 of the fastest time scale."""
    rate = max(_kernel_rate(ev), 1.0 / max(span, 1e-300))
    return min(2e-3 / rate, span / 8)


_CENTRAL = ((-2, 1.0), (-1, -8.0), (0, 0.0), (1, 8.0), (2, -1.0))
_ONE_SIDED = ((0, -25.0), (1, 48.0), (2, -36.0), (3, 16.0), (4, -3.0))


def _stencil(t, h, a, b):
    if t - 2 * h >= a and t + 2 * h <= b:
        return _CENTRAL, h
    return _ONE_SIDED, (h if t - 2 * h < a else -h)


def dense_derivative(u, t, h, a, b, noise=False):
    """Fourth-order difference of a callable u at t, staying inside [a, b].

    With ``noise=True`` also returns the componentwise roundoff level
    eps·Σ|c_k||u(t_k)| / (12h) of the stencil.
    """
    D, N, _ = dense_derivative_many(u, np.array([t], dtype=float), h, a, b)
    return (D[0], N[0]) if noise else D[0]


def dense_derivative_many(u, times, h, a, b):
    """Batched :func:`dense_derivative`: returns (u', roundoff level, u) at ``times``.

    The five-point stencils always include t itself, so u(t) comes for free.
    """
    times = np.asarray(times, dtype=float)
    pts, coef, steps, centre = [], [], [], []
    for t in times:
        st, hh = _stencil(t, h, a, b)
        pts.append([t + m * hh for m, _ in st])
        coef.append([c for _, c in st])
        steps.append(hh)
        centre.append([m for m, _ in st].index(0))
    pts, coef, steps = np.array(pts), np.array(coef), np.array(steps)
    if getattr(u, "batched", False):
        V = u(pts.ravel())
    else:
        V = np.stack([u(s) for s in pts.ravel()])
    V = V.reshape(pts.shape + (-1,))
    D = np.einsum("mk,mkd->md", coef, V) / (12 * steps)[:, None]
    eps = np.finfo(float).eps
    noise = eps * np.einsum("mk,mkd->md", np.abs(coef), np.abs(V)) / (12 * np.abs(steps))[:, None]
    return D, noise, V[np.arange(times.size), centre]


def ode_residual(ev, traj, f, step=None):
    """max over interior nodes of ‖u' + Au - f‖_* / max(‖f‖_*, ‖Au‖_*)."""
    t = traj.grid[1:-1]
    if traj.dense is not None:
        h = derivative_step(ev, traj.T) if step is None else step
        du = dense_derivative_many(traj.dense, t, h, traj.grid[0], traj.grid[-1])[0]
    else:
        du = traj.derivative[1:-1]
    U = traj.values[1:-1]
    AU = ev.op.apply(U)
    F = f(t)
    tri = traj.triple
    r = tri.norm_dual(du + AU - F)
    scale = max(tri.norm_dual(F).max(initial=0.0), tri.norm_dual(AU).max(initial=0.0),
                np.finfo(float).tiny)
    return float(r.max(initial=0.0) / scale)


def solve_forward_stepper(op, u0, f, steps, scheme="crank-nicolson", T=None):
    """Implicit Euler or Crank-Nicolson on a uniform grid of ``steps`` steps."""
    if steps < 1:
        raise ValidationError("steps must be >= 1", "steps")
    if scheme not in ("implicit-euler", "crank-nicolson"):
        raise ValidationError(f"unknown scheme {scheme!r}", "scheme")
    T = f.end if T is None else T
    f.require_span(0.0, T)
    theta = 1.0 if scheme == "implicit-euler" else 0.5
    dt = T / steps
    if op.k * theta * dt >= 1.0:
        raise ValidationError(
            f"step {dt:.3g} too large: I + {theta}·dt·A may be singular (k·θ·dt ≥ 1)", "steps")
    grid = np.linspace(0.0, T, steps + 1)
    F = f(grid)
    u0 = np.asarray(u0)
    dtype = np.result_type(u0, F, op.dense(), float)
    U = np.empty((steps + 1, op.dim), dtype=dtype)
    U[0] = u0
    if op.backend == "spectral":
        lam = op.eigenvalues
        lhs = 1.0 + theta * dt * lam
        rhs_fac = 1.0 - (1.0 - theta) * dt * lam
        for n in range(steps):
            src = dt * (theta * F[n + 1] + (1 - theta) * F[n])
            U[n + 1] = (rhs_fac * U[n] + src) / lhs
    else:
        A = op.matrix
        I = np.eye(op.dim)
        lu = linalg.lu_factor(I + theta * dt * A)
        R = I - (1.0 - theta) * dt * A
        for n in range(steps):
            src = dt * (theta * F[n + 1] + (1 - theta) * F[n])
            U[n + 1] = linalg.lu_solve(lu, R @ U[n] + src)
    return Trajectory(grid, U, op.triple, meta={"solver": scheme, "u0": u0})


# -- stability estimate ---------------------------------------------------


def gronwall_prefactor(C3, C4, k, t):
    """2 + (2C3² + C4 + 1)/C4² · e^{2kt}."""
    return 2.0 + (2 * C3 ** 2 + C4 + 1) / C4 ** 2 * np.exp(2 * k * np.asarray(t, dtype=float))


def cumulative_source_norm(f, triple, grid):
    """∫₀ᵗ‖f‖_*² at every grid node (Gauss-Legendre per grid interval)."""
    parts = [f.dual_norm_sq_integral(triple, a, b) for a, b in zip(grid[:-1], grid[1:])]
    return np.concatenate([[0.0], np.cumsum(parts)])


@dataclass
class GronwallReport:
    grid: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    margins: np.ndarray
    min_margin: float
    passed: bool


def verify_gronwall_bound(op, u0, f, trajectory, tol=1e-9):
    """Evaluate both sides of the a priori estimate at every grid time.

    LHS(t) = ∫₀ᵗ‖u‖² + sup_{s≤t}|u|² + ∫₀ᵗ‖u'‖_*²
    RHS(t) = (2 + (2C3²+C4+1)/C4² e^{2kt}) (C4|u0|² + ∫₀ᵗ‖f‖_*²)
    """
    tri = op.triple
    grid = trajectory.grid
    v2, sup2, dd2 = trajectory.cumulative()
    lhs = v2 + sup2 + dd2
    data = op.C4 * tri.norm_H(np.asarray(u0)) ** 2 + cumulative_source_norm(f, tri, grid)
    rhs = gronwall_prefactor(op.C3, op.C4, op.k, grid) * data
    margins = rhs - lhs
    mm = float(margins.min())
    return GronwallReport(grid, lhs, rhs, margins, mm, mm >= -tol)


def gronwall_lemma_bound(grid, k, E):
    """E(t)·exp(∫₀ᵗ k) on the grid (trapezoidal integral)."""
    return np.asarray(E) * np.exp(cumulative_trapezoid(k, grid, initial=0.0))


# -- identities used as checks --------------------------------------------


def leibniz_residual(ev, traj, f, step=None):
    """Relative mismatch of d/dt[e^{-(T-t)A}u(t)] against e^{-(T-t)A} f(t).

    Uses the dense evaluator of ``traj`` and central differences at interior
    grid nodes.
    """
    if traj.dense is None:
        raise ValidationError("Leibniz check needs a dense trajectory", "trajectory")
    T = traj.grid[-1]
    h = derivative_step(ev, traj.T) if step is None else step

    def w(t):
        return ev.evolve(T - t, traj.dense(t))

    errs, scale = [], np.finfo(float).tiny
    for t in traj.grid[1:-1]:
        lhs = dense_derivative(w, t, h, 0.0, T)
        rhs = ev.evolve(T - t, f(t))
        errs.append(np.linalg.norm(lhs - rhs))
        scale = max(scale, np.linalg.norm(rhs))
    return float(max(errs) / scale)


def zero_source(dim, T):
    return SourceTerm.zero(dim, T)
