"""Closed-loop rollouts shared by episodes, online runs and window replays."""

from __future__ import annotations

import numpy as np

from .controllers import Controller
from .objectives import Trace
from .plants import Plant


def rollout(
    plant: Plant,
    controller: Controller,
    params: dict,
    x0,
    z0,
    refs,
    noise=None,
    batch: tuple[int, ...] = (),
) -> tuple[Trace, np.ndarray]:
    """Simulate ``x_{k+1} = f(x_k, kappa(x_k, z_k)) + w_k`` for ``len(refs) - 1`` steps.

    ``params`` comes from ``controller.prepare`` and may carry batch axes
    ``batch``; ``x0`` and ``z0`` are broadcast over them. ``noise`` holds
    additive terms on the plant's internal state, shape ``(N, n_full)``.
    Returns the measured trace and a per-sample divergence mask. Diverged
    samples keep running on NaN-tolerant arithmetic; callers decide how to
    score them.
    """
    refs = np.asarray(refs, dtype=float)
    if refs.ndim == 1:
        refs = refs[:, None]
    N = refs.shape[0] - 1
    fast = controller.rollout_kernel(plant, params, plant.lift(x0), refs, noise, batch)
    if fast is not None:
        # stateless controller on a plant whose measured state is its full state
        states, inputs = fast
        with np.errstate(all="ignore"):
            diverged = plant.is_diverged(np.max(np.abs(states), axis=-2))
        return Trace(states, inputs, refs, np.asarray(z0, dtype=float)), diverged
    s = np.broadcast_to(plant.lift(x0), batch + (plant.n_full,)).copy()
    z = np.broadcast_to(np.asarray(z0, dtype=float), batch + (controller.n_z,)).copy()
    states = np.empty(batch + (N + 1, plant.n_x))
    inputs = np.empty(batch + (N, controller.n_u))
    states[..., 0, :] = plant.measure(s)
    # running elementwise peak of |s|; NaN and inf propagate through maximum
    peak = np.abs(s)
    with np.errstate(all="ignore"):
        for k in range(N):
            x = states[..., k, :]
            u, z = controller.act(x, refs[k], z, params)
            inputs[..., k, :] = u
            s = plant.step(s, u)
            if noise is not None:
                s = s + noise[k]
            states[..., k + 1, :] = plant.measure(s)
            np.maximum(peak, np.abs(s), out=peak)
        diverged = plant.is_diverged(peak)
    return Trace(states, inputs, refs, np.asarray(z0, dtype=float)), diverged
