"""CSV/JSON output conventions: RFC-4180 rows, '.' decimals, 17 significant digits."""

import csv
import json
import math
from numbers import Integral, Real

import numpy as np


def fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, Integral):
        return str(int(value))
    if isinstance(value, Real):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(value)


def write_csv_rows(fh, header, rows):
    w = csv.writer(fh, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(c) for c in r])


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        write_csv_rows(fh, header, rows)


def coefficient_header(n, complex_=False):
    if complex_:
        return [f"coefficient_{i}_{p}" for i in range(n) for p in ("re", "im")]
    return [f"coefficient_{i}" for i in range(n)]


def coefficient_cells(v):
    v = np.asarray(v)
    if np.iscomplexobj(v):
        return [x for z in v for x in (z.real, z.imag)]
    return list(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, Integral):
        return int(obj)
    if isinstance(obj, Real):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def dumps(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))
