"""Run-level metrics: decay factor, closed-loop cost, per-period cost."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateSequence
from ..objectives import Block, Specification, Trace


def decay_factor(costs) -> float:
    """Mean per-iteration fractional reduction of the normalized cost.

    With ``cbar_i = (c_i - c_n) / (c_0 - c_n)`` over ``c_0..c_n``, returns
    ``1/(n-1) * sum_{i=0}^{n-2} (cbar_i - cbar_{i+1}) / cbar_{i+1}``.
    """
    c = np.asarray(costs, dtype=float).ravel()
    if c.size < 3:
        raise DegenerateSequence(f"need at least 3 costs, got {c.size}")
    span = c[0] - c[-1]
    if span == 0 or not np.isfinite(span):
        raise DegenerateSequence("first and final cost coincide")
    cbar = (c - c[-1]) / span
    n = c.size - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = (cbar[: n - 1] - cbar[1:n]) / cbar[1:n]
    return float(np.sum(terms) / (n - 1))


def block_means(costs, block: int = 10) -> np.ndarray:
    """Means over consecutive blocks ``[0, block), [block, 2 block), ...``; a partial tail is dropped."""
    c = np.asarray(costs, dtype=float)
    m = c.size // block
    return c[: m * block].reshape(m, block).mean(axis=1)


def median_curve(histories) -> np.ndarray:
    return np.median(np.stack([h.costs for h in histories]), axis=0)


def run_cost(trace: Trace, blocks: tuple[Block, ...], start: int = 0, stop: int | None = None) -> float:
    """Specification cost of ``trace`` steps ``start..stop`` divided by their count."""
    stop = trace.N if stop is None else stop
    n = stop - start
    sub = Trace(trace.states[start : stop + 1], trace.inputs[start:stop], trace.refs[start : stop + 1])
    return float(Specification(blocks, n).cost(sub)) / n


def period_costs(trace: Trace, blocks: tuple[Block, ...], period_steps: int) -> np.ndarray:
    """Total specification cost over consecutive periods of ``period_steps``."""
    out = []
    for start in range(0, trace.N - period_steps + 1, period_steps):
        out.append(run_cost(trace, blocks, start, start + period_steps) * period_steps)
    return np.asarray(out)


def summary(costs) -> dict:
    c = np.asarray(costs, dtype=float)
    c = c[np.isfinite(c)]
    out = {"rows": int(c.size)}
    if c.size:
        out.update(first=float(c[0]), final=float(c[-1]), min=float(c.min()), max=float(c.max()))
    try:
        out["decay_factor"] = decay_factor(c)
    except DegenerateSequence:
        out["decay_factor"] = float("nan")
    return out
