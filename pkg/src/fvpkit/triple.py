"""Finite-dimensional Gelfand triples V ⊂ H ⊂ V* and coercive Lax-Milgram operators.

Vectors are coefficient arrays of length N (trailing axis). The three norms are
realized through two Hermitian positive definite Gram tables:

    ‖v‖²   = v^H G_V v          (V-norm)
    |v|²   = v^H G_H v          (H-norm)
    ‖f‖_*² = (G_H f)^H G_V^{-1} (G_H f)   (dual norm through the H-pairing)

A sesquilinear form is stored as the table M with a(u, v) = v^H M u, so the
operator acting on coefficients is A = G_H^{-1} M.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .errors import ValidationError


def _as_hermitian_pd(table, field):
    G = np.atleast_2d(np.asarray(table))
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValidationError(f"expected a square table, got shape {G.shape}", field)
    if not np.all(np.isfinite(G)):
        raise ValidationError("table contains non-finite entries", field)
    scale = max(np.abs(G).max(), 1.0)
    if np.abs(G - G.conj().T).max() > 1e-12 * scale:
        raise ValidationError("table is not symmetric/Hermitian", field)
    G = 0.5 * (G + G.conj().T)
    if not np.iscomplexobj(G):
        G = G.astype(float)
    try:
        L = linalg.cholesky(G, lower=True)
    except linalg.LinAlgError:
        raise ValidationError("table is not positive definite", field) from None
    return G, L


def _batched(x, n):
    x = np.asarray(x)
    if x.shape[-1] != n:
        raise ValidationError(f"vector length {x.shape[-1]} does not match dimension {n}")
    return x


class GelfandTriple:
    """Gram-table realization of V ⊂ H ⊂ V* with embedding constants C1, C2.

    If ``C1``/``C2`` are omitted the tightest values are computed, so that
    ‖v‖_* ≤ C1|v| ≤ C2‖v‖ holds with equality attained.
    """

    def __init__(self, gram_V, gram_H=None, C1=None, C2=None):
        self.gram_V, self._LV = _as_hermitian_pd(gram_V, "gram_V")
        n = self.gram_V.shape[0]
        if gram_H is None:
            gram_H = np.eye(n)
        self.gram_H, self._LH = _as_hermitian_pd(gram_H, "gram_H")
        if self.gram_H.shape != self.gram_V.shape:
            raise ValidationError("gram_V and gram_H dimensions differ", "gram_H")
        c1, c2 = self.tight_constants()
        self.C1 = float(c1 if C1 is None else C1)
        self.C2 = float(c2 if C2 is None else C2)
        if self.C1 <= 0 or self.C2 <= 0:
            raise ValidationError("embedding constants must be positive", "constants")

    @classmethod
    def diagonal(cls, v_weights, h_weights=None, **kw):
        v_weights = np.asarray(v_weights, dtype=float)
        h = np.ones_like(v_weights) if h_weights is None else np.asarray(h_weights, float)
        return cls(np.diag(v_weights), np.diag(h), **kw)

    @property
    def dim(self):
        return self.gram_V.shape[0]

    @property
    def h_is_identity(self):
        return np.array_equal(self.gram_H, np.eye(self.dim))

    # -- norms ------------------------------------------------------------

    def inner_H(self, x, y):
        """⟨x, y⟩_H = y^H G_H x, batched over leading axes."""
        x = _batched(x, self.dim)
        y = _batched(y, self.dim)
        return np.einsum("...i,ij,...j->...", y.conj(), self.gram_H, x)

    def inner_V(self, x, y):
        x = _batched(x, self.dim)
        y = _batched(y, self.dim)
        return np.einsum("...i,ij,...j->...", y.conj(), self.gram_V, x)

    def norm_H(self, x):
        return np.sqrt(np.maximum(self.inner_H(x, x).real, 0.0))

    def norm_V(self, x):
        return np.sqrt(np.maximum(self.inner_V(x, x).real, 0.0))

    def norm_dual(self, x):
        x = _batched(x, self.dim)
        shape = x.shape[:-1]
        z = x.reshape(-1, self.dim) @ self.gram_H.T
        w = linalg.solve_triangular(self._LV, z.T, lower=True)
        return np.sqrt((np.abs(w) ** 2).sum(axis=0)).reshape(shape)

    def dual_norm_sup(self, x):
        """sup over ‖w‖ = 1 of |⟨x, w⟩_H|, by a generalized eigensolve.

        Independent of :meth:`norm_dual`; used to cross-check it.
        """
        z = self.gram_H @ np.asarray(x)
        rank_one = np.outer(z, z.conj())
        top = linalg.eigh(rank_one, self.gram_V, eigvals_only=True)[-1]
        return math.sqrt(max(top, 0.0))

    # -- constants --------------------------------------------------------

    def tight_constants(self):
        GHVG = self.gram_H @ linalg.cho_solve((self._LV, True), self.gram_H)
        GHVG = 0.5 * (GHVG + GHVG.conj().T)
        r1 = linalg.eigh(GHVG, self.gram_H, eigvals_only=True)[-1]
        r2 = linalg.eigh(self.gram_H, self.gram_V, eigvals_only=True)[-1]
        C1 = math.sqrt(max(r1, 0.0))
        return C1, C1 * math.sqrt(max(r2, 0.0))

    def check_chain(self, x, rtol=1e-12):
        """True where ‖x‖_* ≤ C1|x| ≤ C2‖x‖ (batched)."""
        d, h, v = self.norm_dual(x), self.norm_H(x), self.norm_V(x)
        slack = rtol * np.maximum(v, 1e-300) * max(self.C2, 1.0)
        return (d <= self.C1 * h + slack) & (self.C1 * h <= self.C2 * v + slack)

    def to_dict(self):
        return {
            "gram_V": encode_array(self.gram_V),
            "gram_H": encode_array(self.gram_H),
            "C1": self.C1,
            "C2": self.C2,
        }


class Constants(NamedTuple):
    C3: float
    C4: float
    k: float
    degenerate: bool = False


class CoerciveOperator:
    """A V-coercive operator with either a spectral or a dense-matrix backend.

    Spectral: coefficients live in an H-orthonormal eigenbasis (G_H = I) and A
    acts diagonally by ``eigenvalues`` (sorted ascending, real).
    Matrix: A is a dense table acting on coefficients; the form is G_H A.

    Missing constants are estimated with :func:`estimate_constants`.
    """

    def __init__(self, triple, *, eigenvalues=None, matrix=None, C3=None, C4=None, k=None):
        if (eigenvalues is None) == (matrix is None):
            raise ValidationError("give exactly one of eigenvalues or matrix", "backend")
        self.triple = triple
        n = triple.dim
        if eigenvalues is not None:
            lam = np.asarray(eigenvalues, dtype=float).ravel()
            if lam.shape != (n,):
                raise ValidationError(f"expected {n} eigenvalues, got {lam.shape}", "eigenvalues")
            if np.any(np.diff(lam) < 0):
                raise ValidationError("eigenvalues must be sorted ascending", "eigenvalues")
            if not triple.h_is_identity:
                raise ValidationError("spectral backend needs gram_H = identity", "gram_H")
            self.backend = "spectral"
            self.eigenvalues = lam
            self.matrix = None
        else:
            A = np.atleast_2d(np.asarray(matrix))
            if A.shape != (n, n):
                raise ValidationError(f"matrix shape {A.shape} does not match dimension {n}", "matrix")
            if not np.iscomplexobj(A):
                A = A.astype(float)
            self.backend = "matrix"
            self.eigenvalues = None
            self.matrix = A
        if C3 is None or C4 is None or k is None:
            est = estimate_constants(self.form_matrix(), triple)
            C3 = est.C3 if C3 is None else C3
            C4 = est.C4 if C4 is None else C4
            k = est.k if k is None else k
            self.degenerate_constants = est.degenerate
        else:
            self.degenerate_constants = False
        self.C3, self.C4, self.k = float(C3), float(C4), float(k)
        if min(self.C3, self.C4, self.k) < 0:
            raise ValidationError("C3, C4, k must be nonnegative", "constants")

    @classmethod
    def spectral(cls, eigenvalues, v_weights=None, **constants):
        """Spectral operator with G_H = I and G_V = diag(v_weights).

        ``v_weights`` defaults to 1 + |λ_j|, the H¹-type weighting.
        """
        lam = np.asarray(eigenvalues, dtype=float)
        w = 1.0 + np.abs(lam) if v_weights is None else v_weights
        return cls(GelfandTriple.diagonal(w), eigenvalues=lam, **constants)

    @classmethod
    def from_matrix(cls, A, gram_V=None, gram_H=None, **constants):
        A = np.atleast_2d(np.asarray(A))
        n = A.shape[0]
        gV = np.eye(n) if gram_V is None else gram_V
        return cls(GelfandTriple(gV, gram_H), matrix=A, **constants)

    @property
    def dim(self):
        return self.triple.dim

    @property
    def is_complex(self):
        return self.backend == "matrix" and np.iscomplexobj(self.matrix)

    @property
    def theta(self):
        """Sector half-angle arccot(C3/C4) of the analytic extension."""
        return math.atan2(self.C4, self.C3)

    def dense(self):
        if self.backend == "spectral":
            return np.diag(self.eigenvalues)
        return self.matrix

    def form_matrix(self):
        """Table M with a(u, v) = v^H M u."""
        if self.backend == "spectral":
            return np.diag(self.eigenvalues)
        return self.triple.gram_H @ self.matrix

    def form(self, u, v):
        M = self.form_matrix()
        return np.einsum("...i,ij,...j->...", np.conj(v), M, u)

    def apply(self, x):
        """A x, batched over leading axes."""
        x = np.asarray(x)
        if self.backend == "spectral":
            return self.eigenvalues * x
        return x @ self.matrix.T

    def truncate(self, n):
        """Leading n-mode section (spectral backend only)."""
        if self.backend != "spectral":
            raise ValidationError("truncation needs the spectral backend", "backend")
        G = self.triple.gram_V[:n, :n]
        tri = GelfandTriple(G, np.eye(n))
        return CoerciveOperator(tri, eigenvalues=self.eigenvalues[:n],
                                C3=self.C3, C4=self.C4, k=self.k)

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        doc = {"backend": self.backend}
        if self.backend == "spectral":
            doc["eigenvalues"] = self.eigenvalues.tolist()
        else:
            doc["matrix"] = encode_array(self.matrix)
        doc["gram_V"] = encode_array(self.triple.gram_V)
        doc["gram_H"] = encode_array(self.triple.gram_H)
        doc["constants"] = {
            "C1": self.triple.C1, "C2": self.triple.C2,
            "C3": self.C3, "C4": self.C4, "k": self.k,
        }
        return doc

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ValidationError("operator descriptor must be an object", "model")
        backend = doc.get("backend")
        if backend not in ("spectral", "matrix"):
            raise ValidationError("backend must be 'spectral' or 'matrix'", "backend")
        consts = dict(doc.get("constants") or {})
        key = "eigenvalues" if backend == "spectral" else "matrix"
        if key not in doc:
            raise ValidationError(f"missing '{key}'", key)
        values = decode_array(doc[key])
        n = values.shape[0]
        gram_V = decode_array(doc["gram_V"]) if "gram_V" in doc else None
        gram_H = decode_array(doc["gram_H"]) if "gram_H" in doc else None
        if gram_V is None:
            gram_V = np.diag(1.0 + np.abs(values)) if backend == "spectral" else np.eye(n)
        tri = GelfandTriple(gram_V, gram_H, C1=consts.get("C1"), C2=consts.get("C2"))
        kw = {"C3": consts.get("C3"), "C4": consts.get("C4"), "k": consts.get("k")}
        if backend == "spectral":
            return cls(tri, eigenvalues=values, **kw)
        return cls(tri, matrix=values, **kw)


def encode_array(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return {"re": a.real.tolist(), "im": a.imag.tolist()}
    return a.tolist()


def decode_array(obj):
    if isinstance(obj, dict):
        return np.asarray(obj["re"], float) + 1j * np.asarray(obj["im"], float)
    return np.asarray(obj, dtype=float)


# -- coercivity constants -------------------------------------------------


@dataclass(frozen=True)
class CoercivityReport:
    bounded: bool
    coercive: bool
    worst_bound_margin: float       # min over samples of C3 - |a(u,v)|/(‖u‖‖v‖)
    worst_coercive_margin: float    # min over samples of (Re a(v,v) - C4‖v‖² + k|v|²)/‖v‖²
    extreme_bound_margin: float     # C3 - sup ratio (singular value)
    extreme_coercive_margin: float  # smallest generalized eigenvalue of the shifted form

    @property
    def passed(self):
        return self.bounded and self.coercive


def _herm(M):
    return 0.5 * (M + M.conj().T)


def _form_sigma_max(M, triple):
    """Largest singular value of M measured in the V geometry."""
    L = triple._LV
    X = linalg.solve_triangular(L, M, lower=True)
    X = linalg.solve_triangular(L, X.conj().T, lower=True).conj().T
    return float(np.linalg.norm(X, 2))


def verify_coercivity(op, samples=200, tol=1e-9, rng=None):
    """Check |a(u,v)| ≤ C3‖u‖‖v‖ and Re a(v,v) ≥ C4‖v‖² − k|v|².

    Both are tested on random samples and at the extremes given by
    generalized eigenproblems; margins are normalized by the V-norms.
    """
    if samples < 1:
        raise ValidationError("samples must be >= 1", "samples")
    rng = np.random.default_rng(0) if rng is None else rng
    tri = op.triple
    M = op.form_matrix()
    n = op.dim
    cplx = op.is_complex or np.iscomplexobj(tri.gram_V) or np.iscomplexobj(tri.gram_H)

    def draw():
        x = rng.standard_normal((samples, n))
        if cplx:
            x = x + 1j * rng.standard_normal((samples, n))
        return x

    u, v = draw(), draw()
    ratio = np.abs(op.form(u, v)) / (tri.norm_V(u) * tri.norm_V(v))
    worst_bound = float(np.min(op.C3 - ratio))
    nv2 = tri.norm_V(v) ** 2
    coer = (op.form(v, v).real - op.C4 * nv2 + op.k * tri.norm_H(v) ** 2) / nv2
    worst_coer = float(np.min(coer))

    ext_bound = op.C3 - _form_sigma_max(M, tri)
    shifted = _herm(M) - op.C4 * tri.gram_V + op.k * tri.gram_H
    ext_coer = float(linalg.eigh(shifted, tri.gram_V, eigvals_only=True)[0])
    scale = max(1.0, op.C3, op.C4, op.k)
    return CoercivityReport(
        bounded=min(worst_bound, ext_bound) >= -tol * scale,
        coercive=min(worst_coer, ext_coer) >= -tol * scale,
        worst_bound_margin=worst_bound,
        worst_coercive_margin=worst_coer,
        extreme_bound_margin=float(ext_bound),
        extreme_coercive_margin=ext_coer,
    )


def estimate_constants(form, triple):
    """Tight (C3, C4, k) for a form table M (a(u, v) = v^H M u).

    C3 is the largest singular value of M in the V geometry. For the
    coercivity pair write μ(k) for the smallest generalized eigenvalue of
    (Re M + k G_H, G_V), i.e. the V-ellipticity constant of A + kI:

    * if μ(0) > 0 the form is V-elliptic and (C4, k) = (μ(0), 0);
    * otherwise k is the largest value with μ(k) ≥ k (balanced constants,
      C4 ≥ k) and C4 = μ(k);
    * if no such finite k exists the result is flagged ``degenerate`` and
      k = max(1, 2 k₀) where k₀ bounds the first k with μ(k) > 0.
    """
    M = np.atleast_2d(np.asarray(form))
    if M.shape != triple.gram_V.shape:
        raise ValidationError(
            f"form shape {M.shape} does not match triple dimension {triple.dim}", "form")
    S = _herm(M)
    GH, GV = triple.gram_H, triple.gram_V
    C3 = _form_sigma_max(M, triple)

    def mu(k):
        return float(linalg.eigh(S + k * GH, GV, eigvals_only=True)[0])

    scale = max(1.0, C3)
    eps = 1e-12 * scale
    mu0 = mu(0.0)
    if mu0 > eps:
        return Constants(C3, mu0, 0.0)

    def g(k):
        return mu(k) - k

    candidates = np.concatenate([[0.0], 2.0 ** np.arange(-20, 31)])
    gvals = np.array([g(c) for c in candidates])
    good = np.nonzero(gvals >= -eps)[0]
    if good.size and good[-1] < candidates.size - 1:
        lo = candidates[good[-1]]
        hi = candidates[good[-1] + 1]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if g(mid) >= -eps:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * max(hi, 1.0):
                break
        C4 = mu(lo)
        if C4 > eps:
            return Constants(C3, C4, float(lo))

    m_min = float(linalg.eigh(GH, GV, eigvals_only=True)[0])
    k0 = max(0.0, -mu0 / m_min)
    k = max(1.0, 2.0 * k0)
    return Constants(C3, mu(k), k, degenerate=True)
