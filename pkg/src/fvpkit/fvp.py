"""Final value problems u' + Au = f on ]0,T[, u(T) = u_T.

Data (f, u_T) are solvable exactly when u_T - y_f lies in D(e^{TA}); the
solution is then u(t) = e^{-tA} e^{TA}(u_T - y_f) + ∫₀ᵗ e^{-(t-s)A} f(s) ds.

In finite dimensions every vector is formally in D(e^{TA}), so membership
is judged by how the graph norm |e^{TA_N}(u_T - y_f)| behaves as the
truncation N is refined (spectral backend), or by conditioning (matrix
backend).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import duhamel
from .errors import IncompatibleDataError, SemigroupOverflowError, ValidationError
from .semigroup import (DIVERGING, IN_DOMAIN, INCONCLUSIVE, KAPPA_MAX, classify_levels,
                        graph_norm_levels)
from .source import PanelInterpolant, SourceTerm

log = logging.getLogger(__name__)

DOMAIN_TOL = 1e-3
GROWTH_THRESHOLD = 10.0
ROUNDOFF_SAFETY = 4.0


@dataclass
class FvpData:
    f: SourceTerm
    u_T: np.ndarray
    T: float

    def __post_init__(self):
        self.u_T = np.asarray(self.u_T)
        if not self.T > 0:
            raise ValidationError("T must be positive", "T")
        if not np.all(np.isfinite(self.u_T)):
            raise ValidationError("u_T must be finite", "u_T")
        if self.u_T.shape != (self.f.dim,):
            raise ValidationError("u_T and f have different dimensions", "u_T")
        self.f.require_span(0.0, self.T)

    def to_dict(self):
        from .triple import encode_array
        return {"T": self.T, "u_T": encode_array(self.u_T), "f": self.f.to_dict()}

    @classmethod
    def from_dict(cls, doc):
        from .triple import decode_array
        return cls(SourceTerm.from_dict(doc["f"]), decode_array(doc["u_T"]), float(doc["T"]))


@dataclass
class CompatibilityReport:
    difference: np.ndarray          # u_T - y_f
    levels: list
    graph_norm_sequence: list
    kappa: float
    verdict: str
    y_norm: float | None = None
    overflow_mode: int | None = None
    recovered: np.ndarray | None = None   # e^{TA}(u_T - y_f) when in_domain
    y_f: np.ndarray | None = None
    source_dual_sq: float = 0.0           # ∫‖f‖_*²
    notes: dict = field(default_factory=dict)

    def csv_rows(self):
        return [[n, g] for n, g in zip(self.levels, self.graph_norm_sequence)]

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "levels": list(self.levels),
            "graph_norms": list(self.graph_norm_sequence),
            "kappa": self.kappa,
            "y_norm": self.y_norm,
            "overflow_mode": self.overflow_mode,
        }


def default_levels(dim):
    """Dyadic truncations 4, 8, 16, ... below ``dim``, then ``dim`` itself."""
    levels = [n for n in (2 ** np.arange(2, 31)) if n < dim]
    return [int(n) for n in levels] + [int(dim)]


def check_compatibility(ev, data, levels=None, domain_tol=DOMAIN_TOL,
                        growth_threshold=GROWTH_THRESHOLD, tail_tol=0.1,
                        kappa_max=KAPPA_MAX, panels=None, quad_tol=1e-9, y_f=None):
    """Decide whether u_T - y_f is (numerically) in D(e^{TA})."""
    T = data.T
    tri = ev.op.triple
    yf = duhamel.compute_yf(ev, data.f, T, panels, quad_tol) if y_f is None else np.asarray(y_f)
    d = data.u_T - yf
    fsq = data.f.dual_norm_sq_integral(tri, 0.0, T)
    overflow = None
    if ev.expm_method == "spectral":
        levels = default_levels(ev.dim) if levels is None else sorted(int(n) for n in levels)
        if levels[-1] > ev.dim:
            raise ValidationError(f"level {levels[-1]} exceeds dimension {ev.dim}", "levels")
        norms, overflow = graph_norm_levels(ev, T, d, levels)
        verdict = classify_levels(norms, domain_tol, growth_threshold, tail_tol)
        keep = np.arange(ev.dim) < levels[-1]
        kappa = ev.kappa(T, keep)
    else:
        levels = [ev.dim]
        try:
            inv = ev.evolve_inverse(T, d)
            kappa = inv.kappa
            norms = [float(math.sqrt(tri.norm_H(d) ** 2 + tri.norm_H(inv.value) ** 2))]
            verdict = IN_DOMAIN if kappa <= kappa_max else INCONCLUSIVE
        except SemigroupOverflowError as exc:
            overflow, kappa, norms, verdict = exc.mode, float("inf"), [float("inf")], DIVERGING
    report = CompatibilityReport(d, levels, norms, kappa, verdict, overflow_mode=overflow,
                                 y_f=yf, source_dual_sq=fsq)
    if verdict == IN_DOMAIN:
        try:
            rec = ev.evolve_inverse(T, d).value
        except SemigroupOverflowError as exc:
            report.verdict, report.overflow_mode = DIVERGING, exc.mode
            return report
        report.recovered = rec
        report.y_norm = float(math.sqrt(tri.norm_H(data.u_T) ** 2 + fsq + tri.norm_H(rec) ** 2))
    return report


def recover_initial_state(ev, data, report=None, cutoff=None, **compat_kw):
    """u(0) = e^{TA}(u_T - y_f).

    Refuses incompatible data with :class:`IncompatibleDataError`. Passing a
    spectral ``cutoff`` forces a regularized answer (modes above the cutoff
    are dropped) regardless of the verdict; that answer is outside the exact
    theory.
    """
    if report is None:
        report = check_compatibility(ev, data, **compat_kw)
    if cutoff is not None:
        res = ev.evolve_inverse(data.T, report.difference, cutoff=cutoff)
        report.notes["cutoff"] = {"threshold": cutoff, "dropped_modes": list(res.dropped)}
        log.info("regularized recovery: cutoff %g dropped modes %s", cutoff, res.dropped)
        return res.value
    if report.verdict != IN_DOMAIN:
        raise IncompatibleDataError(report)
    return report.recovered


def stability_constant(op, T):
    """c with ‖u‖_X ≤ c‖(f, u_T)‖_Y, assembled from the a priori estimate.

    c² = (1 + C2²) · (2 + (2C3²+C4+1)/C4² e^{2kT}) · max(C4, 1); the factor
    1 + C2² absorbs the ∫‖u‖_*² term of the X-norm.
    """
    P = float(duhamel.gronwall_prefactor(op.C3, op.C4, op.k, T))
    return math.sqrt((1.0 + op.triple.C2 ** 2) * P * max(op.C4, 1.0))


def solve_fvp(ev, data, grid, cutoff=None, report=None, check_residual=True, **compat_kw):
    """Reconstruct u on ``grid`` (which must end at T) from final value data."""
    grid = np.asarray(grid, dtype=float)
    if not math.isclose(grid[-1], data.T, rel_tol=1e-12, abs_tol=1e-15):
        raise ValidationError("grid must end at the final time T", "grid")
    if report is None:
        report = check_compatibility(ev, data, **compat_kw)
    u0 = recover_initial_state(ev, data, report=report, cutoff=cutoff)
    traj = duhamel.solve_forward_duhamel(ev, u0, data.f, grid, quad_tol=None,
                                         residual=check_residual)
    tri = ev.op.triple
    traj.meta.update(
        solver="fvp",
        compatibility=report,
        kappa=report.kappa,
        terminal_mismatch=float(tri.norm_H(traj.final - data.u_T)),
        regularized=cutoff is not None,
    )
    if cutoff is not None:
        traj.meta["cutoff"] = report.notes["cutoff"]
    if data.f.times.size >= 3:
        from .neumann import holder_gate
        gate = holder_gate(data.f)
        traj.meta["holder_gate"] = gate
        traj.meta["neumann_regular"] = gate.passes
    return traj


# -- the parabolic operator and the Y-norm -----------------------------------


def apply_parabolic(ev, traj, step=None, order=6, panel_rate=2.0):
    """P u = (u' + Au, u(T)) as final value data.

    With a dense trajectory, u' + Au is sampled at Chebyshev-Lobatto nodes of
    panels that refine the trajectory grid (u' by a fourth-order difference
    of the dense evaluator) and the source is their panelwise interpolant.
    Panels are short enough that λ_max·width ≤ ``panel_rate``, so sample
    errors stay attached to the time where the mode profile produced them.
    Components below the roundoff level of the difference stencil are set
    to zero. Without a dense evaluator the grid derivative is interpolated
    linearly.
    """
    T = traj.grid[-1]
    op = ev.op
    if traj.dense is None:
        F = traj.derivative + op.apply(traj.values)
        return FvpData(SourceTerm(traj.grid, F), traj.final, T)
    h = duhamel.derivative_step(ev, traj.T) if step is None else step
    u = traj.dense
    rate = duhamel._kernel_rate(ev)
    g = traj.grid
    m = np.maximum(1, np.ceil(rate * np.diff(g) / panel_rate)).astype(int)
    breaks = np.concatenate([np.linspace(a, b, k + 1)[:-1] for a, b, k in zip(g[:-1], g[1:], m)]
                            + [g[-1:]])
    tc = PanelInterpolant.nodes(breaks, order)
    du, noise, U = duhamel.dense_derivative_many(u, tc, h, 0.0, T)
    AU = op.apply(U)
    F = du + AU
    # components at the roundoff floor carry no information; the inverse
    # semigroup would amplify them by e^{Tλ_j}
    F[np.abs(F) <= ROUNDOFF_SAFETY * (noise + np.finfo(float).eps * np.abs(AU))] = 0
    fn = PanelInterpolant(breaks, order, F)
    return FvpData(SourceTerm(tc, F, "exact", fn=fn, vectorized=True), traj.final, T)


def y_norm(ev, data, y_f=None, panels=None):
    """‖(f, u_T)‖_Y = (|u_T|² + ∫‖f‖_*² + |e^{TA}(u_T - y_f)|²)^{1/2} (inf on overflow)."""
    tri = ev.op.triple
    yf = duhamel.compute_yf(ev, data.f, data.T, panels, quad_tol=None) if y_f is None else y_f
    fsq = data.f.dual_norm_sq_integral(tri, 0.0, data.T)
    try:
        rec = ev.evolve_inverse(data.T, data.u_T - yf).value
    except SemigroupOverflowError:
        return float("inf")
    return float(math.sqrt(tri.norm_H(data.u_T) ** 2 + fsq + tri.norm_H(rec) ** 2))


def data_difference(a, b):
    return FvpData(a.f + b.f.scaled(-1.0), a.u_T - b.u_T, a.T)


# -- round trips --------------------------------------------------------------


@dataclass
class RoundtripReport:
    trials: int
    data_errors: np.ndarray        # ‖P R d - d‖_Y / ‖d‖_Y
    trajectory_errors: np.ndarray  # ‖R P u - u‖_X / ‖u‖_X
    worst_data_error: float
    worst_trajectory_error: float

    def to_dict(self):
        return {
            "trials": self.trials,
            "worst_data_error": self.worst_data_error,
            "worst_trajectory_error": self.worst_trajectory_error,
        }


def source_mode_mask(ev, T, budget=8.0):
    """Modes with T·λ_j ≤ budget; sources outside these are lost to roundoff.

    For a mode with T·λ_j large, u_T and y_f agree to about e^{-Tλ_j}
    relative, so their difference (and hence u(0)) cannot be resolved in
    double precision once e^{Tλ_j}·eps is not small.
    """
    lam = ev.spectrum_real()
    if ev.expm_method != "spectral":
        return np.ones(ev.dim, bool)
    return T * lam <= budget


def random_compatible_problem(ev, T, rng, budget=8.0, decay=3.0, zero=False):
    """Random (u0, f) with u0_j ~ N(0,1)/(1+j)^decay and a smooth source
    supported on :func:`source_mode_mask` modes."""
    n = ev.dim
    cplx = ev.op.is_complex
    if zero:
        return np.zeros(n), SourceTerm.zero(n, T)

    def draw(*shape):
        x = rng.standard_normal(shape)
        return x + 1j * rng.standard_normal(shape) if cplx else x

    u0 = draw(n) / (1.0 + np.arange(n)) ** decay
    B = draw(n, 3) * source_mode_mask(ev, T, budget)[:, None]

    def fn(t):
        basis = np.stack([np.ones_like(t), t / T, np.sin(2 * np.pi * t / T)], axis=-1)
        return basis @ B.T

    return u0, SourceTerm.from_function(fn, T, nodes=9, vectorized=True)


def homeomorphism_roundtrip(ev, grid, trials, rng=None, levels=None, budget=8.0, zero=False):
    """Check R P = I on random trajectories and P R = I on random compatible data."""
    if trials < 1:
        raise ValidationError("trials must be >= 1", "trials")
    rng = np.random.default_rng(0) if rng is None else rng
    grid = np.asarray(grid, dtype=float)
    T = grid[-1]
    derr, terr = [], []
    for _ in range(trials):
        u0, f = random_compatible_problem(ev, T, rng, budget, zero=zero)
        u = duhamel.solve_forward_duhamel(ev, u0, f, grid, quad_tol=None, residual=False)
        # R P u = u
        Pu = apply_parabolic(ev, u)
        u_back = solve_fvp(ev, Pu, grid, levels=levels, quad_tol=None, check_residual=False)
        terr.append(_relative((u_back - u).x_norm, u.x_norm))
        # P R d = d
        d = FvpData(f, u.final, T)
        r = solve_fvp(ev, d, grid, levels=levels, quad_tol=None, check_residual=False)
        PRd = apply_parabolic(ev, r)
        derr.append(_relative(y_norm(ev, data_difference(PRd, d)),
                              r.meta["compatibility"].y_norm))
    derr, terr = np.array(derr), np.array(terr)
    return RoundtripReport(trials, derr, terr, float(derr.max()), float(terr.max()))


def _relative(num, den):
    return num / den if den > 0 else num


def flow_map(ev, u0, f, T, y_f=None):
    """u(0) ↦ u(T) = e^{-TA}u(0) + y_f."""
    yf = duhamel.compute_yf(ev, f, T) if y_f is None else y_f
    return ev.evolve(T, u0) + yf
