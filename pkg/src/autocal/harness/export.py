"""CSV and manifest output."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import yaml

from ..objectives import Trace
from .config import ScenarioConfig, config_to_dict

FMT = "{:.17g}"


def _num(v) -> str:
    return FMT.format(float(v))


def export_csv(history, path) -> Path:
    """One row per iteration/step: index, cost, theta entries, trace(P), accepted."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["index", "cost", *[f"theta_{n}" for n in history.theta_names], "trace_P", "accepted"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(history)):
            acc = history.accepted[i]
            w.writerow(
                [history.index[i], _num(history.cost[i]), *map(_num, history.theta[i]),
                 _num(history.trace_P[i]), "" if acc is None else int(bool(acc))]
            )
    return path


def read_history_csv(path) -> dict:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["index", "cost"]:
        raise ValueError(f"{path} is not a history file")
    header, body = rows[0], rows[1:]
    theta_cols = [h for h in header if h.startswith("theta_")]
    nt = len(theta_cols)
    return {
        "index": np.array([int(r[0]) for r in body], dtype=int),
        "cost": np.array([float(r[1]) for r in body]),
        "theta": np.array([[float(v) for v in r[2 : 2 + nt]] for r in body]).reshape(len(body), nt),
        "trace_P": np.array([float(r[2 + nt]) for r in body]),
        "accepted": [None if r[3 + nt] == "" else bool(int(r[3 + nt])) for r in body],
        "theta_names": [h[len("theta_"):] for h in theta_cols],
    }


def export_trace_csv(trace: Trace, path) -> Path:
    """States, inputs (blank on the final row) and references per sample."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nx, nu, nr = trace.states.shape[-1], trace.inputs.shape[-1], trace.refs.shape[-1]
    header = ["k", *[f"x{i}" for i in range(nx)], *[f"u{i}" for i in range(nu)], *[f"ref{i}" for i in range(nr)]]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(trace.N + 1):
            u = trace.inputs[k] if k < trace.N else [None] * nu
            w.writerow([k, *map(_num, trace.states[k]), *["" if v is None else _num(v) for v in u],
                        *map(_num, trace.refs[k])])
    return path


def read_trace_csv(path) -> Trace:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    nx = sum(h.startswith("x") for h in header)
    nu = sum(h.startswith("u") for h in header)
    states = np.array([[float(v) for v in r[1 : 1 + nx]] for r in body])
    inputs = np.array([[float(v) for v in r[1 + nx : 1 + nx + nu]] for r in body[:-1]]).reshape(len(body) - 1, nu)
    refs = np.array([[float(v) for v in r[1 + nx + nu :]] for r in body])
    return Trace(states, inputs, refs)


def write_manifest(cfg: ScenarioConfig, path, extra: dict | None = None) -> Path:
    """Resolved config, seed and any run facts, as YAML."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"config": config_to_dict(cfg), "seed": cfg.seed}
    if extra:
        doc.update(extra)
    path.write_text(yaml.safe_dump(_plain(doc), sort_keys=False))
    return path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
