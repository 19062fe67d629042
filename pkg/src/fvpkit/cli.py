"""fvpkit command line: run experiment suites from a JSON config.

    fvpkit run --config cfg.json [--out DIR] [--seed N]
    fvpkit list
    fvpkit validate --config cfg.json

Exit status: 0 all experiments passed, 2 some property failed, 3 bad
configuration (parse, schema or model errors, unwritable output).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor

import jsonschema
import numpy as np

from . import __version__, experiments
from .errors import ValidationError
from .io import dumps, write_csv, write_json
from .trajectory import SOBOLEV_AUDIT, reset_sobolev_audit

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 2, 3

_NAMES = sorted(experiments.REGISTRY)
_NUMBER = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_ENTRY = {"oneOf": [_NUMBER, {"type": "object", "required": ["re", "im"],
                              "properties": {"re": _NUMBER, "im": _NUMBER},
                              "additionalProperties": False}]}
_MATRIX = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": _ENTRY}}

MODEL_SCHEMA = {
    "type": "object",
    "required": ["type"],
    "oneOf": [
        {"properties": {
            "type": {"const": "neumann"},
            "N": {"type": "integer", "minimum": 2},
            "geometry": {"oneOf": [
                {"type": "object", "required": ["kind"], "additionalProperties": False,
                 "properties": {"kind": {"const": "interval"}, "L": _POS}},
                {"type": "object", "required": ["kind"], "additionalProperties": False,
                 "properties": {"kind": {"const": "rectangle"}, "Lx": _POS, "Ly": _POS}},
            ]}},
         "required": ["type", "N"], "additionalProperties": False},
        {"properties": {
            "type": {"const": "spectral"},
            "eigenvalues": {"type": "array", "minItems": 1, "items": _NUMBER},
            "v_weights": {"type": "array", "minItems": 1, "items": _POS},
            "C3": _POS, "C4": _POS, "k": {"type": "number", "minimum": 0}},
         "required": ["type", "eigenvalues"], "additionalProperties": False},
        {"properties": {
            "type": {"const": "matrix"},
            "A": _MATRIX, "gram_V": _MATRIX, "gram_H": _MATRIX,
            "C3": _POS, "C4": _POS, "k": {"type": "number", "minimum": 0}},
         "required": ["type", "A"], "additionalProperties": False},
    ],
}

_TOLERANCES = {
    "type": "object",
    "additionalProperties": False,
    "properties": {k: _NUMBER for k in ("tol", "rtol", "domain_tol", "growth_threshold",
                                         "tail_tol", "order", "order_tol", "agreement",
                                         "fd_step")},
}

_PARAMS = {
    "model": MODEL_SCHEMA,
    "matrix_model": MODEL_SCHEMA,
    "T": _POS,
    "grid": {"type": "integer", "minimum": 3},
    "levels": {"type": "array", "minItems": 1, "items": _INT1},
    "trials": _INT1, "cases": {"type": "integer", "minimum": 2}, "operators": _INT1,
    "dim": {"type": "integer", "minimum": 2}, "samples": _INT1,
    "modes": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
    "steps": {"type": "array", "minItems": 2, "items": _INT1},
    "times": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
    "t": _POS, "t_prime": _POS,
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "anyOf": [{"required": ["experiment"]}, {"required": ["experiments"]}],
    "properties": {
        "experiment": {"enum": _NAMES},
        "experiments": {"type": "array", "minItems": 1, "uniqueItems": True,
                        "items": {"enum": _NAMES}},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "tolerances": _TOLERANCES,
        "params": {"type": "object", "additionalProperties": False,
                   "properties": {n: {"type": "object", "additionalProperties": False,
                                      "properties": dict(_PARAMS, **_TOLERANCES["properties"])}
                                  for n in _NAMES}},
        **_PARAMS,
    },
}


class ConfigError(Exception):
    pass


def load_config(path):
    """Parse and schema-check a config file; raises ConfigError with diagnostics."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = ".".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{path}: field {where}: {e.message}")
        raise ConfigError("\n".join(lines))
    return cfg


def experiment_names(cfg):
    names = cfg.get("experiments") or [cfg["experiment"]]
    return list(dict.fromkeys(names))


def experiment_params(cfg, name):
    """Defaults < top-level keys < tolerances < params[name]."""
    known = experiments.DEFAULTS[name]
    p = {k: v for k, v in cfg.items() if k in known}
    p.update({k: v for k, v in cfg.get("tolerances", {}).items() if k in known})
    p.update(cfg.get("params", {}).get(name, {}))
    return p


def check_models(cfg):
    """Build every model the config names (semantic validation)."""
    for name in experiment_names(cfg):
        p = dict(experiments.DEFAULTS[name], **experiment_params(cfg, name))
        for key in ("model", "matrix_model"):
            if key in p:
                try:
                    experiments.build_operator(p[key])
                except ValidationError as exc:
                    raise ConfigError(f"experiment {name}: field {key}.{exc.field}: {exc}") from None


def experiment_rng(seed, name):
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def write_experiment(out, result):
    d = os.path.join(out, result.name)
    os.makedirs(os.path.join(d, "plotdata"), exist_ok=True)
    write_csv(os.path.join(d, "results.csv"), result.results.header, result.results.rows)
    write_json(os.path.join(d, "report.json"), result.report)
    tables = {"results": result.results, **result.plotdata}
    for key, tab in sorted(tables.items()):
        write_csv(os.path.join(d, "plotdata", f"{key}.csv"), tab.header, tab.rows)


def _ensure_writable(out):
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".fvpkit-write-test")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        raise ConfigError(f"output_dir {out}: not writable: {exc.strerror}") from None


def run(cfg, out, seed, threads=1, log=sys.stdout):
    """Run the configured experiments; returns (exit status, results)."""
    names = experiment_names(cfg)
    check_models(cfg)
    _ensure_writable(out)
    reset_sobolev_audit()

    def one(name):
        return experiments.run_experiment(name, experiment_params(cfg, name),
                                          experiment_rng(seed, name))

    try:
        if threads > 1 and len(names) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(one, names))
        else:
            results = [one(n) for n in names]
    except ValidationError as exc:
        raise ConfigError(f"field {exc.field}: {exc}") from None
    for r in results:
        write_experiment(out, r)
        print(f"{r.name}: {'PASS' if r.passed else 'FAIL'} {r.metric}={r.value:.6g} "
              f"(limit {r.limit})", file=log)
    summary = [[r.name, r.passed, r.metric, r.value, r.limit] for r in results]
    write_csv(os.path.join(out, "summary.csv"),
              ["experiment", "passed", "metric", "value", "limit"], summary)
    passed = all(r.passed for r in results)
    write_json(os.path.join(out, "report.json"), {
        "version": __version__,
        "seed": seed,
        "experiments": {r.name: r.report for r in results},
        "sobolev_audit": dict(SOBOLEV_AUDIT),
        "passed": passed,
    })
    return (EXIT_OK if passed else EXIT_FAIL), results


def _threads():
    try:
        return max(1, int(os.environ.get("FVPKIT_THREADS", "1")))
    except ValueError:
        return 1


def main(argv=None):
    ap = argparse.ArgumentParser(prog="fvpkit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiments named in a config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    r.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    sub.add_parser("list", help="list available experiments")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("--config", required=True)
    args = ap.parse_args(argv)

    if args.command == "list":
        for name, desc in experiments.list_experiments():
            print(f"{name}\t{desc}")
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            check_models(cfg)
            print(f"{args.config}: ok ({', '.join(experiment_names(cfg))})")
            return EXIT_OK
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        out = args.out or cfg.get("output_dir", "fvpkit-out")
        status, _ = run(cfg, out, seed, _threads())
        return status
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
