"""Source terms f(t) given as coefficient samples on a time grid."""

from __future__ import annotations

import csv
import io

import numpy as np

from . import quadrature
from .errors import ValidationError

INTERPOLATIONS = ("linear", "constant", "exact")


class SourceTerm:
    """f : [0, T] -> coefficient vectors.

    ``samples[i]`` is f(times[i]). Between nodes the value is interpolated
    piecewise-linearly (default) or piecewise-constantly (left node). With
    ``fn`` given and ``interpolation="exact"`` evaluation calls ``fn``
    directly and the samples only serve serialization and Hölder checks;
    ``vectorized`` declares that ``fn`` maps an array of times (M,) to (M, dim).

    ``holder`` optionally declares (sigma, constant) with
    |f(t) - f(s)| ≤ constant·|t - s|^sigma.
    """

    def __init__(self, times, samples, interpolation="linear", holder=None, fn=None,
                 vectorized=False):
        times = np.asarray(times, dtype=float).ravel()
        samples = np.asarray(samples)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.shape[0] != times.size or times.size < 2:
            raise ValidationError("need at least two nodes with one sample each", "samples")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("node times must be strictly increasing", "times")
        if interpolation not in INTERPOLATIONS:
            raise ValidationError(f"interpolation must be one of {INTERPOLATIONS}", "interpolation")
        if interpolation == "exact" and fn is None:
            raise ValidationError("exact interpolation needs a callable", "fn")
        if holder is not None:
            sigma, _ = holder
            if not 0 < sigma < 1:
                raise ValidationError("Hölder exponent must lie in (0, 1)", "holder")
        self.times = times
        self.samples = samples if np.iscomplexobj(samples) else samples.astype(float)
        self.interpolation = interpolation
        self.holder = holder
        self.fn = fn
        self.vectorized = vectorized

    # -- constructors -----------------------------------------------------

    @classmethod
    def zero(cls, dim, T, nodes=3):
        t = np.linspace(0.0, T, nodes)
        return cls(t, np.zeros((nodes, dim)))

    @classmethod
    def constant(cls, c, T, nodes=3):
        c = np.atleast_1d(np.asarray(c))
        t = np.linspace(0.0, T, nodes)
        return cls(t, np.tile(c, (nodes, 1)))

    @classmethod
    def from_function(cls, fn, T, nodes=65, exact=True, holder=None, vectorized=False):
        """Sample ``fn`` on a uniform grid; evaluate exactly unless ``exact=False``."""
        t = np.linspace(0.0, T, nodes)
        if vectorized:
            samples = np.asarray(fn(t))
        else:
            samples = np.stack([np.atleast_1d(fn(s)) for s in t])
        if exact:
            return cls(t, samples, "exact", holder=holder, fn=fn, vectorized=vectorized)
        return cls(t, samples, "linear", holder=holder)

    # -- evaluation -------------------------------------------------------

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def start(self):
        return self.times[0]

    @property
    def end(self):
        return self.times[-1]

    def spans(self, a, b, rtol=1e-12):
        slack = rtol * max(abs(b - a), 1.0)
        return self.start <= a + slack and self.end >= b - slack

    def require_span(self, a, b):
        if not self.spans(a, b):
            raise ValidationError(
                f"source covers [{self.start}, {self.end}], needs [{a}, {b}]", "f")

    @property
    def breakpoints(self):
        """Times where the interpolant may fail to be smooth."""
        if self.interpolation == "exact":
            return getattr(self.fn, "breaks", ())
        return self.times

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.interpolation == "exact":
            if self.vectorized:
                out = np.asarray(self.fn(np.atleast_1d(t)))
                return out[0] if t.ndim == 0 else out
            if t.ndim == 0:
                return np.asarray(self.fn(float(t)))
            return np.stack([np.asarray(self.fn(float(s))) for s in t])
        tt = np.atleast_1d(t)
        idx = np.clip(np.searchsorted(self.times, tt, side="right") - 1, 0, self.times.size - 2)
        if self.interpolation == "constant":
            last = tt >= self.times[-1]
            out = np.where(last[:, None], self.samples[-1], self.samples[idx])
        else:
            t0, t1 = self.times[idx], self.times[idx + 1]
            w = ((tt - t0) / (t1 - t0))[:, None]
            out = (1.0 - w) * self.samples[idx] + w * self.samples[idx + 1]
        return out[0] if t.ndim == 0 else out

    def scaled(self, factor):
        fn = None if self.fn is None else (lambda s, g=self.fn: factor * np.asarray(g(s)))
        return SourceTerm(self.times, factor * self.samples, self.interpolation, None, fn,
                          self.vectorized)

    def __add__(self, other):
        if not isinstance(other, SourceTerm):
            return NotImplemented
        if self.interpolation == other.interpolation == "linear" and np.array_equal(self.times, other.times):
            return SourceTerm(self.times, self.samples + other.samples)
        times = np.union1d(self.times, other.times)
        return SourceTerm(times, self(times) + other(times), "exact",
                          fn=lambda s: np.asarray(self(s)) + np.asarray(other(s)), vectorized=True)

    def is_zero(self):
        return self.interpolation != "exact" and not np.any(self.samples)

    # -- norms ------------------------------------------------------------

    def rule(self, a, b, sub=16):
        """Quadrature rule on [a, b] respecting the interpolation nodes."""
        pts = np.linspace(a, b, sub + 1)
        br = np.asarray(self.breakpoints, dtype=float)
        inner = br[(br > a) & (br < b)]
        return quadrature.composite_rule(np.union1d(pts, inner))

    def dual_norm_sq_integral(self, triple, a=0.0, b=None):
        """∫_a^b ‖f(t)‖_*² dt (exact for piecewise-linear samples)."""
        b = self.end if b is None else b
        if b <= a:
            return 0.0
        nodes, weights = self.rule(a, b)
        return float(weights @ triple.norm_dual(self(nodes)) ** 2)

    def holder_violations(self):
        """Node pairs breaking the declared Hölder bound (empty if none declared)."""
        if self.holder is None:
            return []
        sigma, const = self.holder
        t, F = self.times, self.samples
        i, j = np.triu_indices(t.size, 1)
        q = np.linalg.norm(F[j] - F[i], axis=1) / (t[j] - t[i]) ** sigma
        bad = np.nonzero(q > const * (1 + 1e-12))[0]
        return [(int(i[b]), int(j[b])) for b in bad]

    # -- serialization ----------------------------------------------------

    def to_csv(self):
        from .io import write_csv_rows, coefficient_header, coefficient_cells
        header = ["t"] + coefficient_header(self.dim, np.iscomplexobj(self.samples))
        rows = [[t] + coefficient_cells(s) for t, s in zip(self.times, self.samples)]
        buf = io.StringIO()
        write_csv_rows(buf, header, rows)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, interpolation="linear"):
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        data = np.array([[float(c) for c in r] for r in body])
        t = data[:, 0]
        if any(h.endswith("_re") for h in header):
            vals = data[:, 1::2] + 1j * data[:, 2::2]
        else:
            vals = data[:, 1:]
        return cls(t, vals, interpolation)

    def to_dict(self):
        from .triple import encode_array
        return {
            "interpolation": "linear" if self.interpolation == "exact" else self.interpolation,
            "times": self.times.tolist(),
            "samples": encode_array(self.samples),
            "holder": list(self.holder) if self.holder else None,
        }

    @classmethod
    def from_dict(cls, doc):
        from .triple import decode_array
        holder = doc.get("holder")
        return cls(doc["times"], decode_array(doc["samples"]),
                   doc.get("interpolation", "linear"), tuple(holder) if holder else None)


class PanelInterpolant:
    """Piecewise polynomial through Chebyshev-Lobatto nodes on each panel.

    Continuous across panel ``breaks``; evaluation maps times (M,) to (M, dim).
    Errors in the samples stay local to their panel.
    """

    def __init__(self, breaks, order, values):
        self.breaks = np.asarray(breaks, dtype=float)
        self.order = int(order)
        p = self.order + 1
        self.values = np.asarray(values)          # (panels*order + 1, dim)
        k = np.arange(p)
        self._w = (-1.0) ** k
        self._w[[0, -1]] *= 0.5
        n = self.breaks.size - 1
        if self.values.shape[0] != n * self.order + 1:
            raise ValidationError("sample count does not match panels", "values")

    @staticmethod
    def nodes(breaks, order):
        breaks = np.asarray(breaks, dtype=float)
        ref = 0.5 * (1.0 - np.cos(np.pi * np.arange(order + 1) / order))
        a, b = breaks[:-1], breaks[1:]
        inner = (a[:, None] + (b - a)[:, None] * ref[None, :-1]).ravel()
        return np.concatenate([inner, breaks[-1:]])

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        br = self.breaks
        i = np.clip(np.searchsorted(br, t, side="right") - 1, 0, br.size - 2)
        ref = 0.5 * (1.0 - np.cos(np.pi * np.arange(self.order + 1) / self.order))
        X = br[i, None] + (br[i + 1] - br[i])[:, None] * ref      # (M, p)
        V = self.values[i[:, None] * self.order + np.arange(self.order + 1)]  # (M, p, dim)
        d = t[:, None] - X
        hit = d == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self._w / d
        r = np.where(hit.any(axis=1, keepdims=True), hit.astype(float), r)
        return np.einsum("mp,mpd->md", r, V) / r.sum(axis=1)[:, None]
