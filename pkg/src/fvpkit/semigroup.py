"""Evaluation of e^{-tA}, its inverse e^{tA}, and diagnostics built on them.

The inverse is always formed by exponentiating +tA, never by inverting the
matrix e^{-tA}; the amplification factor κ(t) is reported with every inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .errors import SemigroupOverflowError, ValidationError

LOG_OVERFLOW = 700.0
EIGVEC_COND_MAX = 1e6
KAPPA_MAX = 1e12

IN_DOMAIN = "in_domain"
DIVERGING = "diverging"
INCONCLUSIVE = "inconclusive"


class InverseResult(NamedTuple):
    value: np.ndarray
    kappa: float
    dropped: tuple = ()   # mode indices zeroed by a spectral cutoff


class SemigroupEvaluator:
    """e^{-tA} for a :class:`~fvpkit.triple.CoerciveOperator`.

    ``expm_method`` is chosen automatically for the matrix backend:
    eigendecomposition when the eigenvector matrix has condition number
    below 1e6, otherwise scaling-and-squaring.
    """

    def __init__(self, op, expm_method=None, expm_tol=1e-13):
        self.op = op
        self.expm_tol = expm_tol
        if op.backend == "spectral":
            self.expm_method = "spectral"
            self._lam = op.eigenvalues
            return
        A = op.matrix
        w, V = linalg.eig(A)
        order = np.lexsort((w.imag, w.real))
        w, V = w[order], V[:, order]
        cond = np.linalg.cond(V) if np.all(np.isfinite(V)) else np.inf
        if expm_method is None:
            expm_method = "eigendecomposition" if cond < EIGVEC_COND_MAX else "scaling-and-squaring"
        if expm_method not in ("eigendecomposition", "scaling-and-squaring"):
            raise ValidationError(f"unknown expm_method {expm_method!r}", "expm_method")
        if expm_method == "eigendecomposition" and not cond < EIGVEC_COND_MAX:
            raise ValidationError("eigenvector matrix too ill-conditioned", "expm_method")
        self.expm_method = expm_method
        self._w = w
        self._V = V
        self._Vinv = linalg.inv(V) if expm_method == "eigendecomposition" else None
        self._real = not np.iscomplexobj(A)

    @property
    def dim(self):
        return self.op.dim

    def spectrum_real(self):
        """Real parts of the eigenvalues, ascending."""
        if self.expm_method == "spectral":
            return self._lam
        return self._w.real

    # -- propagators ------------------------------------------------------

    def _cast(self, M):
        if self.expm_method != "spectral" and self._real:
            return M.real
        return M

    def matrix_exp(self, s):
        """Dense e^{sA} for real s of either sign (no overflow guard)."""
        if self.expm_method == "spectral":
            return np.diag(np.exp(s * self._lam))
        if self.expm_method == "eigendecomposition":
            return self._cast((self._V * np.exp(s * self._w)) @ self._Vinv)
        return linalg.expm(s * self.op.matrix)

    def propagator(self, t):
        """Dense E(t) = e^{-tA}."""
        _check_time(t)
        return self.matrix_exp(-t)

    def evolve(self, t, x):
        """e^{-tA} x, batched over leading axes of x."""
        _check_time(t)
        x = self._vec(x)
        if self.expm_method == "spectral":
            self._guard(-t * self._lam, x)
            return np.exp(-t * self._lam) * x
        self._guard(-t * self._w.real, None)
        return x @ self.matrix_exp(-t).T

    def evolve_kernel(self, taus, X):
        """Rows e^{-τ_q A} X_q for τ (Q,) and X (Q, N); the Duhamel integrand."""
        taus = np.asarray(taus, dtype=float)
        X = np.asarray(X)
        if self.expm_method == "spectral":
            return np.exp(-np.outer(taus, self._lam)) * X
        if self.expm_method == "eigendecomposition":
            Y = X @ self._Vinv.T
            Y = np.exp(-np.outer(taus, self._w)) * Y
            return self._cast(Y @ self._V.T)
        return np.stack([linalg.expm(-tau * self.op.matrix) @ x for tau, x in zip(taus, X)])

    def evolve_inverse(self, t, x, cutoff=None):
        """e^{tA} x together with the amplification factor κ(t).

        For the spectral backend an optional ``cutoff`` zeros every mode with
        λ_j > cutoff; the dropped indices are returned. This regularization
        is outside the exact inverse and is always reported.
        """
        _check_time(t)
        x = self._vec(x)
        if self.expm_method == "spectral":
            lam = self._lam
            keep = np.ones(lam.shape, bool) if cutoff is None else lam <= cutoff
            dropped = tuple(int(j) for j in np.nonzero(~keep)[0])
            xk = np.where(keep, x, 0)
            self._guard(t * lam, xk)
            y = scaled_exp(t * lam, xk)
            return InverseResult(y, self.kappa(t, keep), dropped)
        if cutoff is not None:
            raise ValidationError("spectral cutoff needs the spectral backend", "cutoff")
        self._guard(t * self._w.real, None)
        return InverseResult(x @ self.matrix_exp(t).T, self.kappa(t), ())

    def kappa(self, t, keep=None):
        """Condition number of E(t) in the H geometry (inf on overflow)."""
        if self.expm_method == "spectral":
            lam = self._lam if keep is None else self._lam[keep]
            if lam.size == 0:
                return 1.0
            with np.errstate(over="ignore"):
                return float(np.exp(t * (lam.max() - lam.min())))
        if t * (self._w.real.max() - self._w.real.min()) > LOG_OVERFLOW:
            return float("inf")
        L = self.op.triple._LH
        Lh = L.conj().T

        def h_norm(M):
            return np.linalg.norm(Lh @ M @ linalg.inv(Lh), 2)

        return float(h_norm(self.matrix_exp(-t)) * h_norm(self.matrix_exp(t)))

    def _vec(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.dim:
            raise ValidationError(f"vector length {x.shape[-1]} != dimension {self.dim}")
        return x

    def _guard(self, exponents, x):
        """Raise if exp(exponent_j)·|x_j| would leave double range."""
        e = np.asarray(exponents, dtype=float)
        if x is not None:
            mag = np.abs(x).reshape(-1, e.size).max(axis=0)
            with np.errstate(divide="ignore"):
                e = np.where(mag > 0, e + np.log(mag), -np.inf)
        bad = np.nonzero(e > LOG_OVERFLOW)[0]
        if bad.size:
            j = int(bad[0])
            raise SemigroupOverflowError(j, float(e[j]))


def scaled_exp(e, x):
    """exp(e)·x evaluated as exp(e + log|x|)·x/|x|, so that a huge factor
    times a tiny coefficient does not overflow on the way; zeros stay zero."""
    x = np.asarray(x)
    e = np.broadcast_to(e, x.shape)
    out = np.zeros(x.shape, dtype=np.result_type(x, float))
    nz = x != 0
    mag = np.abs(x[nz])
    with np.errstate(under="ignore"):
        out[nz] = np.exp(e[nz] + np.log(mag)) * (x[nz] / mag)
    return out


def _check_time(t):
    if not np.isfinite(t) or t < 0:
        raise ValidationError(f"time must be a finite nonnegative real, got {t}", "t")


# -- domain diagnostics ---------------------------------------------------


@dataclass
class DomainDiagnostic:
    t: float
    truncation_levels: list
    graph_norms: list
    verdict: str
    kappa: float
    overflow_mode: int | None = None
    notes: dict = field(default_factory=dict)


def classify_levels(norms, domain_tol=1e-3, growth_threshold=10.0, tail_tol=0.1):
    """Verdict for a sequence of graph norms over increasing truncations.

    * any non-finite entry, or growth by more than ``growth_threshold`` at
      every refinement: ``diverging``;
    * successive relative increments all below ``domain_tol``: ``in_domain``;
    * increments of the squared norms contracting, with the geometric tail
      estimate below ``tail_tol`` relative: ``in_domain``;
    * otherwise ``inconclusive``.

    A single level is ``in_domain`` when finite (conditioning is judged by
    the caller).
    """
    g = np.asarray(norms, dtype=float)
    if not np.all(np.isfinite(g)):
        return DIVERGING
    if g.size < 2:
        return IN_DOMAIN
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(g[:-1] > 0, g[1:] / g[:-1], np.where(g[1:] > 0, np.inf, 1.0))
    if np.all(ratios > growth_threshold):
        return DIVERGING
    if np.all(np.abs(ratios - 1.0) < domain_tol):
        return IN_DOMAIN
    s = g ** 2
    inc = np.diff(s)
    if inc.size >= 2 and np.all(inc >= 0):
        last, prev = inc[-1], inc[-2]
        if last == 0:
            return IN_DOMAIN
        q = last / prev if prev > 0 else np.inf
        if np.all(inc[1:] < inc[:-1]) and q < 1:
            tail = last * q / (1.0 - q)
            if tail <= tail_tol * s[-1]:
                return IN_DOMAIN
    return INCONCLUSIVE


def graph_norm_levels(ev, t, x, levels):
    """Graph norms (|x_N|² + |e^{tA_N} x_N|²)^{1/2} of leading truncations.

    Returns (norms, overflow_mode); an overflowing level gets ``inf``.
    """
    norms, overflow = [], None
    for n in levels:
        xn = np.asarray(x)[:n]
        lam = ev.spectrum_real()[:n]
        with np.errstate(divide="ignore"):
            e = np.where(xn != 0, t * lam + np.log(np.abs(xn) + 0.0), -np.inf)
        bad = np.nonzero(e > LOG_OVERFLOW)[0]
        if bad.size:
            overflow = int(bad[0]) if overflow is None else overflow
            norms.append(float("inf"))
            continue
        y = scaled_exp(t * lam, xn)
        norms.append(safe_norm(np.concatenate([xn, y])))
    return norms, overflow


def safe_norm(v):
    """Euclidean norm without overflow in the squares."""
    a = np.abs(np.asarray(v))
    m = a.max(initial=0.0)
    if m == 0 or not np.isfinite(m):
        return float(m)
    return float(m * np.sqrt(np.sum((a / m) ** 2)))


def default_probe_coefficients(j, lam, t):
    return np.exp(-t * lam) / (1.0 + j)


def domain_chain_probe(ev, t, t_prime, levels=(8, 16, 32), coeff_rule=None,
                       domain_tol=1e-3, growth_threshold=10.0, tail_tol=0.1):
    """Probe D(e^{tA}) ⊋ D(e^{t'A}) with a vector sitting exactly at level t.

    The probe has coefficients c_j = coeff_rule(j, λ_j, t) (default
    e^{-tλ_j}/(1+j)); its graph norm stays bounded at time t and blows up at
    t' when the spectrum is unbounded. Returns the pair of diagnostics.
    """
    if not t_prime > t:
        raise ValidationError(f"need t_prime > t, got t={t}, t_prime={t_prime}", "t_prime")
    _check_time(t)
    rule = coeff_rule or default_probe_coefficients
    if ev.expm_method != "spectral":
        n = ev.dim
        x = np.array([rule(j, 0.0, 0.0) for j in range(n)], dtype=float)
        out = []
        for s in (t, t_prime):
            y = ev.evolve_inverse(s, x)
            g = float(np.sqrt(np.sum(np.abs(x) ** 2) + ev.op.triple.norm_H(y.value) ** 2))
            verdict = IN_DOMAIN if y.kappa <= KAPPA_MAX else INCONCLUSIVE
            out.append(DomainDiagnostic(s, [n], [g], verdict, y.kappa))
        return tuple(out)
    levels = sorted(int(n) for n in levels)
    if levels[-1] > ev.dim:
        raise ValidationError(f"level {levels[-1]} exceeds dimension {ev.dim}", "levels")
    lam = ev.spectrum_real()
    x = np.array([rule(j, lam[j], t) for j in range(levels[-1])], dtype=float)
    out = []
    for s in (t, t_prime):
        norms, overflow = graph_norm_levels(ev, s, x, levels)
        verdict = classify_levels(norms, domain_tol, growth_threshold, tail_tol)
        kap = ev.kappa(s, np.arange(ev.dim) < levels[-1])
        out.append(DomainDiagnostic(s, levels, norms, verdict, kap, overflow))
    return tuple(out)


# -- height function ------------------------------------------------------


@dataclass
class HeightProfile:
    grid: np.ndarray
    h: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    logconv_margin: float


def height_profile(ev, u0, grid):
    """h(t) = |e^{-tA}u0| with h', h'' from the closed formulas.

    h'  = -Re⟨Au,u⟩/|u|
    h'' = (Re⟨A²u,u⟩ + |Au|²)/|u| - (Re⟨Au,u⟩)²/|u|³
    """
    u0 = np.asarray(u0)
    tri = ev.op.triple
    if not np.any(u0 != 0):
        raise ValidationError("u0 must be nonzero", "u0")
    grid = np.asarray(grid, dtype=float)
    U = np.stack([ev.evolve(t, u0) for t in grid])
    AU = ev.op.apply(U)
    AAU = ev.op.apply(AU)
    h = tri.norm_H(U)
    a1 = tri.inner_H(AU, U).real
    a2 = tri.inner_H(AAU, U).real
    nAu2 = tri.norm_H(AU) ** 2
    h1 = -a1 / h
    h2 = (a2 + nAu2) / h - a1 ** 2 / h ** 3
    margin = float(np.min((h2 * h - h1 ** 2) / h ** 2))
    return HeightProfile(grid, h, h1, h2, margin)


def logconv_criterion(op, x):
    """Re⟨A²x,x⟩|x|² + |Ax|²|x|² − 2(Re⟨Ax,x⟩)²; nonnegative certifies log-convexity at x."""
    tri = op.triple
    x = np.asarray(x)
    Ax = op.apply(x)
    AAx = op.apply(Ax)
    nx2 = tri.norm_H(x) ** 2
    return tri.inner_H(AAx, x).real * nx2 + tri.norm_H(Ax) ** 2 * nx2 - 2 * tri.inner_H(Ax, x).real ** 2


def log_height_curvature_fd(ev, u0, times, step):
    """Central second difference of log|e^{-tA}u0| (independent of the formulas)."""
    tri = ev.op.triple

    def logh(t):
        return np.log(tri.norm_H(ev.evolve(t, u0)))

    return np.array([(logh(t + step) - 2 * logh(t) + logh(t - step)) / step ** 2 for t in times])
