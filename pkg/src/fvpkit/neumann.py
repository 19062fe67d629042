"""The Neumann heat model: -Δ_N on an interval or a rectangle in its cosine basis.

Coefficients are taken in the L2-orthonormal eigenbasis, so |·| is the
Euclidean norm and ‖v‖² = Σ (1 + λ_j)|v_j|² is the H¹ norm. The Dirichlet
form s(v, w) = Σ λ_j v_j w̄_j satisfies |s(v,w)| ≤ ‖v‖‖w‖ and
s(v,v) = ‖v‖² - |v|², so (C3, C4, k) = (1, 1, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import IncompatibleDataError, ValidationError
from .semigroup import SemigroupEvaluator, safe_norm
from .source import SourceTerm
from .triple import CoerciveOperator


@dataclass(frozen=True)
class Interval:
    L: float = math.pi
    dimension = 1

    def to_dict(self):
        return {"kind": "interval", "L": self.L}


@dataclass(frozen=True)
class Rectangle:
    Lx: float = math.pi
    Ly: float = math.pi
    dimension = 2

    def to_dict(self):
        return {"kind": "rectangle", "Lx": self.Lx, "Ly": self.Ly}


def geometry_from_dict(doc):
    kind = doc.get("kind")
    if kind == "interval":
        return Interval(float(doc.get("L", math.pi)))
    if kind == "rectangle":
        return Rectangle(float(doc.get("Lx", math.pi)), float(doc.get("Ly", math.pi)))
    raise ValidationError(f"unknown geometry {kind!r}", "geometry")


class NeumannModel:
    def __init__(self, geometry, N, eigenvalues, indices):
        self.geometry = geometry
        self.N = N
        self.eigenvalues = eigenvalues
        self.indices = indices   # (N, d) integer wave numbers
        self.operator = CoerciveOperator.spectral(eigenvalues, 1.0 + eigenvalues,
                                                  C3=1.0, C4=1.0, k=1.0)
        self._ev = None

    @property
    def triple(self):
        return self.operator.triple

    @property
    def evaluator(self):
        if self._ev is None:
            self._ev = SemigroupEvaluator(self.operator)
        return self._ev

    def eigenfunction(self, j, *coords):
        """L2-normalized e_j at the given points (x, or x and y)."""
        g = self.geometry
        if isinstance(g, Interval):
            (x,) = coords
            return _cos_mode(self.indices[j, 0], np.asarray(x, float), g.L)
        x, y = coords
        p, q = self.indices[j]
        return _cos_mode(p, np.asarray(x, float), g.Lx) * _cos_mode(q, np.asarray(y, float), g.Ly)

    def synthesize(self, c, *coords):
        """u = Σ c_j e_j at the given points."""
        c = np.asarray(c)
        return sum(c[j] * self.eigenfunction(j, *coords) for j in range(c.size) if c[j] != 0)

    def to_dict(self):
        return {
            "model": "neumann",
            "geometry": self.geometry.to_dict(),
            "N": self.N,
            "eigenvalues": self.eigenvalues.tolist(),
            "constants": {"C3": 1.0, "C4": 1.0, "k": 1.0},
        }


def _cos_mode(p, x, L):
    scale = math.sqrt(1.0 / L) if p == 0 else math.sqrt(2.0 / L)
    return scale * np.cos(p * math.pi * x / L)


def build_model(geometry, N):
    if int(N) != N or N < 2:
        raise ValidationError("N must be an integer >= 2", "N")
    N = int(N)
    if isinstance(geometry, Interval):
        if not geometry.L > 0:
            raise ValidationError("length must be positive", "L")
        p = np.arange(N)
        lam = (p * math.pi / geometry.L) ** 2
        return NeumannModel(geometry, N, lam, p[:, None])
    if isinstance(geometry, Rectangle):
        if not (geometry.Lx > 0 and geometry.Ly > 0):
            raise ValidationError("side lengths must be positive", "geometry")
        # the N smallest values all have p, q < N
        p, q = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        p, q = p.ravel(), q.ravel()
        lam = (p * math.pi / geometry.Lx) ** 2 + (q * math.pi / geometry.Ly) ** 2
        order = np.lexsort((q, p, lam))[:N]
        return NeumannModel(geometry, N, lam[order], np.stack([p[order], q[order]], axis=1))
    raise ValidationError(f"invalid geometry {geometry!r}", "geometry")


class BoundaryFlux(NamedTuple):
    left: float
    right: float


def check_neumann_bc(model, c, mesh):
    """One-sided difference estimates of |u'| at both ends of the interval."""
    if not isinstance(model.geometry, Interval):
        raise ValidationError("boundary check is implemented for the interval only", "geometry")
    if mesh < 32:
        raise ValidationError("mesh must be >= 32", "mesh")
    L = model.geometry.L
    x = np.linspace(0.0, L, int(mesh) + 1)
    u = np.real(model.synthesize(c, x)) if np.any(c) else np.zeros_like(x)
    h = x[1] - x[0]
    return BoundaryFlux(float(abs(u[1] - u[0]) / h), float(abs(u[-1] - u[-2]) / h))


@dataclass
class WeylReport:
    alpha: float
    constant: float
    dimension: int
    window: tuple
    expected: float
    bounds: tuple
    passed: bool

    def to_dict(self):
        return dict(alpha=self.alpha, constant=self.constant, dimension=self.dimension,
                    window=list(self.window), expected=self.expected,
                    bounds=list(self.bounds), passed=self.passed)


WEYL_BOUNDS = {1: (1.9, 2.1), 2: (0.85, 1.15)}


def weyl_check(model):
    """Least-squares fit λ_j ≈ C·j^α over the upper half of the spectrum."""
    if model.N < 32:
        raise ValidationError("insufficient spectrum: weyl_check needs N >= 32", "N")
    j = np.arange(model.N // 2, model.N)
    lam = model.eigenvalues[j]
    alpha, logc = np.polyfit(np.log(j), np.log(lam), 1)
    n = model.geometry.dimension
    lo, hi = WEYL_BOUNDS[n]
    return WeylReport(float(alpha), float(math.exp(logc)), n, (int(j[0]), int(j[-1])),
                      2.0 / n, (lo, hi), bool(lo <= alpha <= hi))


class InstabilityRow(NamedTuple):
    j: int
    lam: float
    norm: float
    expected: float
    overflowed: bool


INSTABILITY_HEADER = ["j", "lambda", "norm", "expected", "overflowed"]


def instability_experiment(model, T, modes):
    """Recover u(0) from u_T = e_j, f = 0 and compare |u(0)| with e^{Tλ_j}."""
    from .fvp import FvpData, recover_initial_state

    ev = model.evaluator
    rows = []
    for j in modes:
        if not 0 <= j < model.N:
            raise ValidationError(f"mode {j} outside truncation 0..{model.N - 1}", "modes")
        lam = float(model.eigenvalues[j])
        e = np.zeros(model.N)
        e[j] = 1.0
        data = FvpData(SourceTerm.zero(model.N, T), e, T)
        expected = math.exp(T * lam) if T * lam <= 709 else float("inf")
        try:
            u0 = recover_initial_state(ev, data, levels=[model.N])
        except IncompatibleDataError as exc:
            if exc.report.overflow_mode is None:
                raise
            rows.append(InstabilityRow(int(j), lam, float("inf"), expected, True))
            continue
        rows.append(InstabilityRow(int(j), lam, safe_norm(u0), expected, False))
    return rows


@dataclass
class HolderGate:
    passes: bool
    sigma: float
    constant: float
    threshold: float

    def to_dict(self):
        return dict(passes=self.passes, sigma=self.sigma, constant=self.constant,
                    threshold=self.threshold)


def holder_gate(f, threshold=0.1):
    """Empirical Hölder exponent and constant of f from its node samples.

    The modulus of continuity ω(δ) = max_{|t-s|≤δ} |f(t) - f(s)| is taken at
    dyadic multiples of the smallest node gap; σ is the log-log slope of ω,
    clipped to [0, 1], and the constant is max |Δf| / |Δt|^σ over node pairs.
    A declared Hölder bound on f must also hold at the nodes.
    """
    t, F = f.times, f.samples
    if t.size < 3:
        raise ValidationError("Hölder gate needs at least three nodes", "f")
    i, j = np.triu_indices(t.size, 1)
    dt = t[j] - t[i]
    df = np.linalg.norm(F[j] - F[i], axis=1)
    if not np.any(df > 0):
        return HolderGate(True, 1.0, 0.0, threshold)
    base = np.min(np.diff(t))
    span = t[-1] - t[0]
    scales = base * 2.0 ** np.arange(int(math.floor(math.log2(span / base) + 1e-9)) + 1)
    omega = np.array([df[dt <= s * (1 + 1e-12)].max(initial=0.0) for s in scales])
    ok = omega > 0
    if ok.sum() >= 2:
        slope = np.polyfit(np.log(scales[ok]), np.log(omega[ok]), 1)[0]
    else:
        slope = 0.0
    sigma = float(np.clip(slope, 0.0, 1.0))
    const = float(np.max(df / dt ** sigma))
    passes = sigma >= threshold and not f.holder_violations()
    return HolderGate(bool(passes), sigma, const, threshold)
