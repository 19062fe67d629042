"""Named experiment suites run by the ``fvpkit`` command line.

Every experiment takes a parameter dict (defaults filled from
:data:`DEFAULTS`) and a numpy Generator, and returns an
:class:`ExperimentResult` holding a results table, a JSON report and
plot-ready tables. Experiments share no state, so they may run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import unitary_group, ortho_group

from . import duhamel, fvp, neumann
from .errors import ValidationError
from .semigroup import (DIVERGING, IN_DOMAIN, SemigroupEvaluator, domain_chain_probe,
                        log_height_curvature_fd, logconv_criterion)
from .source import SourceTerm
from .triple import CoerciveOperator, decode_array

NEUMANN_16 = {"type": "neumann", "geometry": {"kind": "interval"}, "N": 16}
NEUMANN_32 = {"type": "neumann", "geometry": {"kind": "interval"}, "N": 32}
NON_NORMAL_2X2 = {"type": "matrix", "A": [[1.0, 1.0], [0.0, 2.0]]}

DEFAULTS = {
    "compatibility": dict(model=NEUMANN_32, T=0.5, levels=[8, 16, 32], cases=50,
                          domain_tol=1e-3, growth_threshold=10.0, tail_tol=0.1),
    "roundtrip": dict(model=NEUMANN_16, T=0.5, grid=65, trials=100, tol=1e-6),
    "gronwall": dict(model=NEUMANN_16, T=1.0, grid=257, trials=100, tol=1e-9),
    "weyl": dict(model={"type": "neumann", "geometry": {"kind": "interval"}, "N": 64}),
    "instability": dict(model=NEUMANN_32, T=1.0, modes=list(range(32)), rtol=1e-8),
    "logconvexity": dict(operators=20, dim=6, samples=100, times=[0.0, 0.25, 0.5, 1.0],
                         fd_step=1e-4, tol=1e-6, agreement=0.99),
    "domain_chain": dict(model=NEUMANN_32, t=1.0, t_prime=2.0, levels=[8, 16, 32],
                         domain_tol=1e-3, growth_threshold=10.0, tail_tol=0.1),
    "duhamel_vs_stepper": dict(model={"type": "neumann", "geometry": {"kind": "interval"}, "N": 8},
                               matrix_model=NON_NORMAL_2X2, T=1.0,
                               steps=[256, 512, 1024, 2048], order=2.0, order_tol=0.5),
}

ANCHORS = {
    "compatibility": "compatibility condition u_T - y_f in D(e^{TA}) as exact solvability criterion",
    "roundtrip": "well-posedness: the parabolic map P and reconstruction R are mutually inverse",
    "gronwall": "a priori estimate with prefactor 2 + (2C3^2+C4+1)/C4^2 e^{2kt}",
    "weyl": "Weyl law lambda_j = O(j^{2/n}) for the Neumann Laplacian",
    "instability": "growth |u_j(0)| = e^{T lambda_j} of backward solutions from unit final data",
    "logconvexity": "log-convexity of the height function h(t) = |e^{-tA}u0|",
    "domain_chain": "strict inclusion D(e^{t'A}) in D(e^{tA}) for t < t'",
    "duhamel_vs_stepper": "Duhamel formula for the forward problem against time stepping",
}

DESCRIPTIONS = {
    "compatibility": "verdict accuracy on constructed compatible and white-noise final data",
    "roundtrip": "R P u = u and P R d = d on random compatible data",
    "gronwall": "a priori energy estimate margin along random trajectories",
    "weyl": "log-log eigenvalue growth exponent of the Neumann model",
    "instability": "recovered |u_j(0)| against e^{T lambda_j} for unit final modes",
    "logconvexity": "log-convexity criterion versus finite-difference (log h)''",
    "domain_chain": "graph-norm verdicts of a probe vector at times t and t'",
    "duhamel_vs_stepper": "Crank-Nicolson convergence order against Duhamel reference",
}


@dataclass
class Table:
    header: list
    rows: list


@dataclass
class ExperimentResult:
    name: str
    passed: bool
    metric: str
    value: float
    limit: float | str
    results: Table
    report: dict
    plotdata: dict = field(default_factory=dict)


# -- models -------------------------------------------------------------------


def build_operator(desc):
    """(operator, NeumannModel or None) from a model descriptor."""
    kind = desc.get("type")
    if kind == "neumann":
        geom = neumann.geometry_from_dict(desc.get("geometry", {"kind": "interval"}))
        model = neumann.build_model(geom, desc["N"])
        return model.operator, model
    if kind == "spectral":
        lam = np.asarray(desc["eigenvalues"], dtype=float)
        w = desc.get("v_weights")
        op = CoerciveOperator.spectral(lam, None if w is None else np.asarray(w, float),
                                       **_constants(desc))
        return op, None
    if kind == "matrix":
        A = decode_array(desc["A"])
        gV = desc.get("gram_V")
        gH = desc.get("gram_H")
        op = CoerciveOperator.from_matrix(A, None if gV is None else decode_array(gV),
                                          None if gH is None else decode_array(gH),
                                          **_constants(desc))
        return op, None
    raise ValidationError(f"unknown model type {kind!r}", "model.type")


def _constants(desc):
    return {k: float(desc[k]) for k in ("C3", "C4", "k") if k in desc}


def _require_neumann(model, name):
    if model is None:
        raise ValidationError(f"experiment {name!r} needs a Neumann model", "model")
    return model


def _constants_report(op):
    return {"C1": op.triple.C1, "C2": op.triple.C2, "C3": op.C3, "C4": op.C4, "k": op.k}


# -- experiments --------------------------------------------------------------


def run_compatibility(p, rng):
    op, _ = build_operator(p["model"])
    ev = SemigroupEvaluator(op)
    T = p["T"]
    rows, correct = [], 0
    half = p["cases"] // 2
    for case in range(p["cases"]):
        compatible = case < half
        u0, f = fvp.random_compatible_problem(ev, T, rng)
        yf = duhamel.compute_yf(ev, f, T, quad_tol=None)
        if compatible:
            u_T = ev.evolve(T, u0) + yf
        else:
            u_T = rng.standard_normal(ev.dim)
        rep = fvp.check_compatibility(ev, fvp.FvpData(f, u_T, T), levels=p["levels"],
                                      domain_tol=p["domain_tol"],
                                      growth_threshold=p["growth_threshold"],
                                      tail_tol=p["tail_tol"], y_f=yf)
        expected = IN_DOMAIN if compatible else DIVERGING
        ok = rep.verdict == expected
        correct += ok
        rows.append([case, "compatible" if compatible else "white_noise", expected, rep.verdict,
                     ok, rep.graph_norm_sequence[-1], rep.overflow_mode])
    acc = correct / p["cases"]
    table = Table(["case", "kind", "expected", "verdict", "correct", "last_graph_norm",
                   "overflow_mode"], rows)
    return ExperimentResult("compatibility", acc == 1.0, "accuracy", acc, 1.0, table,
                            {"accuracy": acc, "correct": correct, "cases": p["cases"]},
                            {"graph_norms": Table(table.header, rows)})


def run_roundtrip(p, rng):
    op, _ = build_operator(p["model"])
    ev = SemigroupEvaluator(op)
    grid = np.linspace(0.0, p["T"], p["grid"])
    rep = fvp.homeomorphism_roundtrip(ev, grid, p["trials"], rng)
    worst = max(rep.worst_data_error, rep.worst_trajectory_error)
    rows = [[i, d, t] for i, (d, t) in enumerate(zip(rep.data_errors, rep.trajectory_errors))]
    table = Table(["trial", "data_error_Y", "trajectory_error_X"], rows)
    report = rep.to_dict()
    report["worst_relative_error"] = worst
    report["stability_constant"] = fvp.stability_constant(op, p["T"])
    report["kappa"] = ev.kappa(p["T"])
    return ExperimentResult("roundtrip", worst <= p["tol"], "worst_relative_error", worst,
                            p["tol"], table, report)


def _random_source(rng, dim, T, nodes=9):
    return SourceTerm(np.linspace(0.0, T, nodes), rng.standard_normal((nodes, dim)))


def run_gronwall(p, rng):
    op, _ = build_operator(p["model"])
    ev = SemigroupEvaluator(op)
    grid = np.linspace(0.0, p["T"], p["grid"])
    rows, worst, worst_rep = [], math.inf, None
    for trial in range(p["trials"]):
        u0 = rng.standard_normal(op.dim)
        f = _random_source(rng, op.dim, p["T"])
        traj = duhamel.solve_forward_duhamel(ev, u0, f, grid, quad_tol=None, residual=False)
        rep = duhamel.verify_gronwall_bound(op, u0, f, traj, tol=p["tol"])
        scale = float(rep.rhs.max())
        rows.append([trial, rep.min_margin, rep.min_margin / scale, rep.passed])
        if rep.min_margin < worst:
            worst, worst_rep = rep.min_margin, rep
    plot = Table(["t", "lhs", "rhs", "prefactor"],
                 [[t, a, b, duhamel.gronwall_prefactor(op.C3, op.C4, op.k, t)]
                  for t, a, b in zip(worst_rep.grid, worst_rep.lhs, worst_rep.rhs)])
    report = {"min_margin": worst, "constants": _constants_report(op),
              "prefactor": "2 + (2C3^2+C4+1)/C4^2 e^{2kt}"}
    return ExperimentResult("gronwall", worst >= -p["tol"], "min_margin", worst, -p["tol"],
                            Table(["trial", "min_margin", "relative_margin", "passed"], rows),
                            report, {"worst_trial": plot})


def run_weyl(p, rng):
    _, model = build_operator(p["model"])
    model = _require_neumann(model, "weyl")
    rep = neumann.weyl_check(model)
    j = np.arange(model.N)
    rows = [[int(i), float(lam), rep.constant * float(i) ** rep.alpha if i else 0.0]
            for i, lam in zip(j, model.eigenvalues)]
    return ExperimentResult("weyl", rep.passed, "alpha", rep.alpha, f"{rep.bounds[0]}..{rep.bounds[1]}",
                            Table(["j", "lambda", "fit"], rows), rep.to_dict())


def run_instability(p, rng):
    _, model = build_operator(p["model"])
    model = _require_neumann(model, "instability")
    rows = neumann.instability_experiment(model, p["T"], p["modes"])
    worst = 0.0
    for r in rows:
        if not r.overflowed:
            worst = max(worst, abs(r.norm - r.expected) / r.expected)
    report = {"worst_relative_error": worst,
              "overflowed_modes": [r.j for r in rows if r.overflowed],
              "kappa": model.evaluator.kappa(p["T"])}
    return ExperimentResult("instability", worst <= p["rtol"], "worst_relative_error", worst,
                            p["rtol"], Table(neumann.INSTABILITY_HEADER, [list(r) for r in rows]),
                            report)


def _random_normal_operator(rng, n, self_adjoint):
    if self_adjoint:
        Q = ortho_group.rvs(n, random_state=rng)
        mu = rng.uniform(0.0, 5.0, n)
        A = (Q * mu) @ Q.T
    else:
        Q = unitary_group.rvs(n, random_state=rng)
        mu = rng.uniform(0.0, 5.0, n) + 1j * rng.uniform(-5.0, 5.0, n)
        A = (Q * mu) @ Q.conj().T
    return CoerciveOperator.from_matrix(A)


def run_logconvexity(p, rng):
    rows = []
    times = np.asarray(p["times"], dtype=float)
    step = p["fd_step"]
    agree = total = crit_bad = fd_bad = 0
    for idx in range(2 * p["operators"]):
        sa = idx < p["operators"]
        op = _random_normal_operator(rng, p["dim"], sa)
        ev = SemigroupEvaluator(op)
        for _ in range(p["samples"]):
            x = rng.standard_normal(op.dim) + (0 if sa else 1j * rng.standard_normal(op.dim))
            fd = log_height_curvature_fd(ev, x, times + step, step)
            U = np.stack([ev.evolve(t + step, x) for t in times])
            crit = logconv_criterion(op, U)
            scale = op.triple.norm_H(U) ** 4 * max(1.0, np.linalg.norm(op.matrix, 2)) ** 2
            c_ok = crit >= -1e-12 * scale
            f_ok = fd >= -p["tol"]
            agree += int(np.sum(c_ok == f_ok))
            total += times.size
            crit_bad += int(np.sum(~c_ok))
            fd_bad += int(np.sum(~f_ok))
            rows.append(["self_adjoint" if sa else "normal", idx,
                         float(np.min(crit / scale)), float(np.min(fd)), bool(np.all(c_ok == f_ok))])
    rate = agree / total
    passed = crit_bad == 0 and fd_bad == 0 and rate >= p["agreement"]
    report = {"agreement": rate, "criterion_failures": crit_bad, "fd_failures": fd_bad,
              "samples": total}
    return ExperimentResult("logconvexity", passed, "agreement", rate, p["agreement"],
                            Table(["class", "operator", "min_relative_criterion",
                                   "min_fd_curvature", "agree"], rows), report)


def run_domain_chain(p, rng):
    op, _ = build_operator(p["model"])
    ev = SemigroupEvaluator(op)
    d1, d2 = domain_chain_probe(ev, p["t"], p["t_prime"], p["levels"],
                                domain_tol=p["domain_tol"],
                                growth_threshold=p["growth_threshold"], tail_tol=p["tail_tol"])
    rows = [[d.t, n, g] for d in (d1, d2) for n, g in zip(d.truncation_levels, d.graph_norms)]
    passed = d1.verdict == IN_DOMAIN and d2.verdict == DIVERGING
    report = {"verdict_t": d1.verdict, "verdict_t_prime": d2.verdict,
              "overflow_mode_t_prime": d2.overflow_mode, "t": p["t"], "t_prime": p["t_prime"]}
    return ExperimentResult("domain_chain", passed, "verdicts", float(passed), 1.0,
                            Table(["t", "level", "graph_norm"], rows), report)


def _observed_orders(gaps):
    g = np.asarray(gaps)
    return np.log2(g[:-1] / g[1:])


def _stepper_sweep(op, u0, f, T, steps):
    ev = SemigroupEvaluator(op)
    gaps = []
    for n in steps:
        grid = np.linspace(0.0, T, n + 1)
        ref = duhamel.solve_forward_duhamel(ev, u0, f, grid, quad_tol=None, residual=False)
        cn = duhamel.solve_forward_stepper(op, u0, f, n, "crank-nicolson", T)
        gaps.append(cn.relative_x_error(ref))
    return gaps


def run_duhamel_vs_stepper(p, rng):
    T, steps = p["T"], p["steps"]
    rows, orders_all = [], []
    for label, desc in (("spectral", p["model"]), ("matrix", p["matrix_model"])):
        op, _ = build_operator(desc)
        ev = SemigroupEvaluator(op)
        u0 = rng.standard_normal(op.dim) / (1.0 + np.arange(op.dim)) ** 2
        om = rng.uniform(0.5, 3.0, op.dim)
        ph = rng.uniform(0.0, 2 * np.pi, op.dim)
        f = SourceTerm.from_function(lambda t, om=om, ph=ph: np.sin(np.multiply.outer(t, om) + ph),
                                     T, nodes=9, vectorized=True)
        gaps = _stepper_sweep(op, u0, f, T, steps)
        orders = _observed_orders(gaps)
        orders_all.extend(orders)
        for i, (n, g) in enumerate(zip(steps, gaps)):
            rows.append([label, n, g, orders[i - 1] if i else float("nan")])
        del ev
    orders_all = np.array(orders_all)
    dev = float(np.max(np.abs(orders_all - p["order"])))
    report = {"observed_orders": orders_all.tolist(), "max_order_deviation": dev}
    return ExperimentResult("duhamel_vs_stepper", dev <= p["order_tol"], "max_order_deviation",
                            dev, p["order_tol"],
                            Table(["backend", "steps", "x_norm_gap", "observed_order"], rows),
                            report)


REGISTRY = {
    "compatibility": run_compatibility,
    "domain_chain": run_domain_chain,
    "duhamel_vs_stepper": run_duhamel_vs_stepper,
    "gronwall": run_gronwall,
    "instability": run_instability,
    "logconvexity": run_logconvexity,
    "roundtrip": run_roundtrip,
    "weyl": run_weyl,
}


def list_experiments():
    return [(name, DESCRIPTIONS[name]) for name in sorted(REGISTRY)]


def run_experiment(name, params, rng):
    if name not in REGISTRY:
        raise ValidationError(f"unknown experiment {name!r}", "experiment")
    p = dict(DEFAULTS[name])
    p.update({k: v for k, v in params.items() if v is not None})
    result = REGISTRY[name](p, rng)
    result.report.update(experiment=name, anchor=ANCHORS[name], passed=result.passed,
                         parameters=p)
    return result
