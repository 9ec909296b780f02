"""Specification functions ``r`` over a window trace and the training cost.

A ``Specification`` is an ordered list of blocks. Each block maps a trace to
a segment of ``r`` and supplies the matching segment of the target ``y`` and
of the diagonal slack covariance ``C_v``. Blocks evaluate over arbitrary
leading batch axes so all sigma-point replays are scored at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, WindowTooShort


@dataclass
class Trace:
    """Closed-loop record ``x_0..x_N``, ``u_0..u_{N-1}``.

    ``states`` has shape ``(..., N+1, n_x)`` and ``inputs`` ``(..., N, n_u)``;
    ``refs`` has shape ``(N+1, n_ref)`` and holds the reference in force
    at each state. ``z0`` is the controller state at ``x_0``.
    """

    states: np.ndarray
    inputs: np.ndarray
    refs: np.ndarray
    z0: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.refs = np.asarray(self.refs, dtype=float)
        if self.refs.ndim == 1:
            self.refs = self.refs[:, None]
        N = self.inputs.shape[-2]
        if self.states.shape[-2] != N + 1 or self.refs.shape[0] != N + 1:
            raise DimensionMismatch(
                f"trace lengths disagree: states {self.states.shape}, inputs {self.inputs.shape}, "
                f"refs {self.refs.shape}"
            )

    @property
    def N(self) -> int:
        return self.inputs.shape[-2]

    def __getitem__(self, idx) -> "Trace":
        """Select along the batch axes."""
        return Trace(self.states[idx], self.inputs[idx], self.refs, self.z0)


class Block:
    """One stacked segment of ``r``. ``weight`` is the ``C_v`` diagonal entry."""

    weight: float = 1.0

    def size(self, N: int) -> int:
        raise NotImplementedError

    def evaluate(self, trace: Trace, N: int) -> np.ndarray:
        raise NotImplementedError

    def y_segment(self, trace: Trace, N: int) -> np.ndarray:
        return np.zeros(self.size(N))


def _ref_target(target, refs, ref_channel):
    if target == "reference":
        return refs[:, ref_channel]
    return np.full(refs.shape[0], float(target))


@dataclass(frozen=True)
class StateBlock(Block):
    """``scale * x_k[channel]`` for ``k = 1..N`` (or ``0..N``)."""

    channel: int
    scale: float = 1.0
    target: str | float = 0.0
    ref_channel: int = 0
    include_initial: bool = False
    weight: float = 1.0

    def _start(self):
        return 0 if self.include_initial else 1

    def size(self, N):
        return N + 1 - self._start()

    def evaluate(self, trace, N):
        return self.scale * trace.states[..., self._start() : N + 1, self.channel]

    def y_segment(self, trace, N):
        return self.scale * _ref_target(self.target, trace.refs[self._start() : N + 1], self.ref_channel)


@dataclass(frozen=True)
class InputBlock(Block):
    """``scale * u_k[channel]`` for ``k = 0..N-1`` against zero."""

    channel: int = 0
    scale: float = 1.0
    weight: float = 1.0

    def size(self, N):
        return N

    def evaluate(self, trace, N):
        return self.scale * trace.inputs[..., :N, self.channel]


def overshoot_penalty(positions, limit: float = 1.1, penalty: float = 10.0):
    """``penalty`` where ``max(positions) > limit`` (strict), else 0."""
    positions = np.asarray(positions, dtype=float)
    if positions.shape[-1] == 0:
        raise WindowTooShort("overshoot penalty needs a nonempty trace")
    with np.errstate(invalid="ignore"):
        hit = np.max(positions, axis=-1) > limit
    return np.where(hit, float(penalty), 0.0)


def sign_change_penalty(inputs):
    """Count sign flips between consecutive nonzero samples along the last axis.

    Exact zeros are skipped: they neither count nor reset the run.
    """
    s = np.sign(np.asarray(inputs, dtype=float))
    # forward-fill zeros with the last nonzero sign
    idx = np.where(s != 0, np.arange(s.shape[-1]), 0)
    idx = np.maximum.accumulate(idx, axis=-1)
    filled = np.take_along_axis(s, idx, axis=-1)
    a, b = filled[..., :-1], filled[..., 1:]
    return np.sum((a != 0) & (b != 0) & (a != b), axis=-1).astype(float)


@dataclass(frozen=True)
class OvershootBlock(Block):
    channel: int = 0
    limit: float = 1.1
    penalty: float = 10.0
    weight: float = 1.0

    def size(self, N):
        return 1

    def evaluate(self, trace, N):
        return overshoot_penalty(trace.states[..., 1 : N + 1, self.channel], self.limit, self.penalty)[..., None]


@dataclass(frozen=True)
class SignChangeBlock(Block):
    channel: int = 0
    scale: float = 1.0
    weight: float = 1.0

    def size(self, N):
        return 1

    def evaluate(self, trace, N):
        return self.scale * sign_change_penalty(trace.inputs[..., :N, self.channel])[..., None]


BLOCKS = {
    "state": StateBlock,
    "input": InputBlock,
    "overshoot": OvershootBlock,
    "sign_changes": SignChangeBlock,
}


@dataclass(frozen=True)
class Specification:
    """Stacked blocks over the first ``horizon`` transitions of a trace."""

    blocks: tuple[Block, ...]
    horizon: int

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not self.blocks:
            raise ValueError("a specification needs at least one block")
        for b in self.blocks:
            if not b.weight > 0:
                raise ValueError("block weights (slack variances) must be positive")

    @property
    def n_r(self) -> int:
        return sum(b.size(self.horizon) for b in self.blocks)

    def _check(self, trace: Trace):
        if trace.N < self.horizon:
            raise WindowTooShort(f"trace has {trace.N} steps, specification needs {self.horizon}")

    def r(self, trace: Trace) -> np.ndarray:
        self._check(trace)
        return np.concatenate([b.evaluate(trace, self.horizon) for b in self.blocks], axis=-1)

    def y(self, trace: Trace) -> np.ndarray:
        self._check(trace)
        return np.concatenate([b.y_segment(trace, self.horizon) for b in self.blocks])

    def cv_diag(self) -> np.ndarray:
        return np.concatenate([np.full(b.size(self.horizon), b.weight) for b in self.blocks])

    def C_v(self) -> np.ndarray:
        return np.diag(self.cv_diag())

    def cost(self, trace: Trace) -> np.ndarray:
        """``(y - r)' C_v^-1 (y - r)`` over the batch axes."""
        e = self.y(trace) - self.r(trace)
        return np.sum(e * e / self.cv_diag(), axis=-1)


def objective_cost(y, r, C_v=None) -> float:
    """``(y - r)' C_v^-1 (y - r)``; ``C_v`` defaults to the identity."""
    y = np.asarray(y, dtype=float).ravel()
    r = np.asarray(r, dtype=float).ravel()
    if y.shape != r.shape:
        raise DimensionMismatch(f"y has {y.size} entries, r has {r.size}")
    e = y - r
    if C_v is None:
        return float(e @ e)
    C_v = np.atleast_2d(np.asarray(C_v, dtype=float))
    if C_v.shape != (e.size, e.size):
        raise DimensionMismatch(f"C_v has shape {C_v.shape}, expected {(e.size, e.size)}")
    return float(e @ np.linalg.solve(C_v, e))


# ---------------------------------------------------------------------------
# standard objectives


def tracking_spec(horizon: int = 150, overshoot: bool = False, limit: float = 1.1, penalty: float = 10.0):
    """Positions against the reference plus inputs against zero."""
    blocks: list[Block] = [StateBlock(channel=0, target="reference"), InputBlock(channel=0)]
    if overshoot:
        blocks.append(OvershootBlock(channel=0, limit=limit, penalty=penalty))
    return Specification(tuple(blocks), horizon)


def lane_spec(horizon: int = 50, psi_scale: float = 0.1, input_scale: float = 10.0, steer_channel: int = 1):
    """Lateral position against the reference, scaled heading and steering rate."""
    return Specification(
        (
            StateBlock(channel=1, target="reference"),
            StateBlock(channel=2, scale=psi_scale),
            InputBlock(channel=steer_channel, scale=input_scale),
        ),
        horizon,
    )


def vehicle_tracking_spec(horizon: int = 20, sign_changes: bool = False, v_ref: float = 10.0):
    """``M (x_k - x_ref)`` for ``k = 0..N`` plus both inputs; optional steering sign flips."""
    blocks: list[Block] = [
        StateBlock(channel=1, target="reference", ref_channel=0, include_initial=True),
        StateBlock(channel=2, include_initial=True),
        StateBlock(channel=3, target=v_ref, include_initial=True),
        StateBlock(channel=4, include_initial=True),
        InputBlock(channel=0),
        InputBlock(channel=1),
    ]
    if sign_changes:
        blocks.append(SignChangeBlock(channel=1))
    return Specification(tuple(blocks), horizon)
