"""Deterministic text serialization helpers."""
import csv
import json

import numpy as np


def fmt(x):
    """Shortest round-trip decimal for a float (at most 17 significant digits)."""
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def dumps(obj, indent=None):
    return json.dumps(_plain(obj), sort_keys=True, indent=indent, allow_nan=False)


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj, indent=2))
        fh.write("\n")


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
