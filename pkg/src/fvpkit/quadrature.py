"""Composite 4-point Gauss-Legendre rules on panels graded toward an endpoint."""

import math

import numpy as np

GL_ORDER = 4
_X, _W = np.polynomial.legendre.leggauss(GL_ORDER)


def graded_breakpoints(a, b, levels, ratio=2.0, sub=1):
    """Breakpoints of [a, b] with panel widths shrinking geometrically toward b.

    ``levels`` graded panels: [a, b - L/r], [b - L/r, b - L/r²], ...,
    [b - L/r^{levels-1}, b]; each is then split into ``sub`` equal pieces.
    """
    if b <= a:
        return np.array([a, b], dtype=float)
    L = b - a
    levels = max(int(levels), 1)
    inner = b - L * ratio ** -np.arange(1, levels, dtype=float)
    pts = np.concatenate([[a], inner, [b]])
    if sub > 1:
        frac = np.arange(sub) / sub
        pts = np.concatenate([(pts[:-1, None] + np.diff(pts)[:, None] * frac).ravel(), [b]])
    return pts


def composite_rule(breakpoints):
    """Nodes and weights of 4-point Gauss-Legendre on each consecutive panel."""
    p = np.asarray(breakpoints, dtype=float)
    lo, hi = p[:-1], p[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = (mid[:, None] + half[:, None] * _X).ravel()
    weights = (half[:, None] * _W).ravel()
    return nodes, weights


def auto_levels(length, rate):
    """Graded levels so the finest panel resolves the fastest rate."""
    if length <= 0 or rate * length <= 1.0:
        return 2
    return int(math.ceil(math.log2(rate * length / 0.2))) + 1


def duhamel_rule(a, b, rate, levels=None, sub=8, extra_breaks=()):
    """Rule for ∫_a^b e^{-(b-s)A} g(s) ds with panels graded toward b.

    ``rate`` is the largest decay rate of the kernel; ``extra_breaks`` are
    points where the integrand is not smooth (e.g. source nodes) and become
    panel boundaries.
    """
    if levels is None:
        levels = auto_levels(b - a, rate)
    pts = graded_breakpoints(a, b, levels, sub=sub)
    extra = np.asarray(extra_breaks, dtype=float)
    extra = extra[(extra > a) & (extra < b)]
    if extra.size:
        pts = np.union1d(pts, extra)
    return composite_rule(pts)
