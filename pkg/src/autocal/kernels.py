"""Compiled closed-loop kernels for rollouts whose per-step numpy overhead dominates."""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def mlp_double_integrator(W_in, b_in, W_lay, b_lay, W_out, b_out, x0, refs, noise, Ts, slope):
    """Leaky-ReLU MLP on ``(p - p_ref, v)`` driving a double integrator.

    Parameter arrays carry a leading flat batch axis. Returns states
    ``(B, N + 1, 2)`` and inputs ``(B, N, 1)``.
    """
    B = W_in.shape[0]
    H = W_in.shape[1]
    N = refs.shape[0] - 1
    states = np.empty((B, N + 1, 2))
    inputs = np.empty((B, N, 1))
    h1 = np.empty(H)
    for b in range(B):
        p = x0[b, 0]
        v = x0[b, 1]
        states[b, 0, 0] = p
        states[b, 0, 1] = v
        for k in range(N):
            e = p - refs[k, 0]
            for i in range(H):
                a = W_in[b, i, 0] * e + W_in[b, i, 1] * v + b_in[b, i]
                h1[i] = a if a > slope * a else slope * a
            u = b_out[b]
            for j in range(H):
                a = b_lay[b, j]
                for i in range(H):
                    a += W_lay[b, j, i] * h1[i]
                u += W_out[b, j] * (a if a > slope * a else slope * a)
            inputs[b, k, 0] = u
            p, v = p + Ts * v + noise[k, 0], v + Ts * u + noise[k, 1]
            states[b, k + 1, 0] = p
            states[b, k + 1, 1] = v
    return states, inputs
