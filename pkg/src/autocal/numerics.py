"""Small dense-matrix helpers: Cholesky, DARE, finite differences, norms.

Everything here is a pure function over numpy arrays.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimensionMismatch, NoConvergence, NonFiniteOutput, NotPositiveDefinite

SYMMETRY_TOL = 1e-9
JITTER_REL = 1e-10


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def cholesky_lower(M) -> np.ndarray:
    """Lower-triangular ``A`` with ``A @ A.T == M``.

    Raises NotPositiveDefinite for asymmetric, indefinite or non-finite input.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric")
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def repair_pd(P: np.ndarray, tries: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrize ``P`` and add diagonal jitter until it factorizes.

    Returns ``(P_repaired, cholesky_factor)``. The jitter starts at
    ``1e-10 * (1 + trace(P) / n)`` and grows tenfold per retry.
    """
    P = symmetrize(np.asarray(P, dtype=float))
    n = P.shape[0]
    try:
        return P, cholesky_lower(P)
    except NotPositiveDefinite:
        pass
    base = JITTER_REL * (1.0 + abs(np.trace(P)) / n)
    for t in range(tries):
        Pj = P + base * 10.0**t * np.eye(n)
        try:
            return Pj, cholesky_lower(Pj)
        except NotPositiveDefinite:
            continue
    raise NotPositiveDefinite(f"matrix not positive definite after {tries} jitter attempts")


def cho_solve(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) X = B`` given the lower Cholesky factor ``L``."""
    from scipy.linalg import solve_triangular

    Y = solve_triangular(L, B, lower=True, check_finite=False)
    return solve_triangular(L.T, Y, lower=False, check_finite=False)


def weighted_sq_norm(v, Sigma) -> float:
    """``v^T Sigma v``."""
    v = np.asarray(v, dtype=float).ravel()
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.shape != (v.size, v.size):
        raise DimensionMismatch(f"vector of length {v.size} vs weight of shape {Sigma.shape}")
    return float(v @ Sigma @ v)


def riccati_residual(P, A, B, Q, R) -> float:
    """Max-entry residual of ``P = Q + A'PA - A'PB (R + B'PB)^-1 B'PA``."""
    BtPA = B.T @ P @ A
    rhs = Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)
    return float(np.max(np.abs(P - rhs)))


def dare_solve(A, B, Q, R, tol: float = 1e-10, max_iter: int = 100, residual_tol: float = 1e-8):
    """Solve the discrete algebraic Riccati equation by structured doubling.

    Each doubling step squares the number of Riccati fixed-point iterations
    covered, so ``k`` steps correspond to ``2**k`` plain iterations.

    Returns ``(P, K)`` with ``K = (R + B'PB)^-1 B'PA``; the optimal input is
    ``u = -K x``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n, m = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
        raise DimensionMismatch("inconsistent DARE dimensions")
    try:
        G = B @ np.linalg.solve(R, B.T)
    except np.linalg.LinAlgError:
        raise NoConvergence("R is singular") from None

    Ak, Gk, Hk = A.copy(), symmetrize(G), symmetrize(Q)
    eye = np.eye(n)
    with np.errstate(all="ignore"):
        for _ in range(max_iter):
            W = eye + Gk @ Hk
            try:
                WiA = np.linalg.solve(W, Ak)
                WiG = np.linalg.solve(W, Gk)
            except np.linalg.LinAlgError:
                raise NoConvergence("singular doubling step") from None
            H_next = symmetrize(Hk + Ak.T @ Hk @ WiA)
            G_next = symmetrize(Gk + Ak @ WiG @ Ak.T)
            A_next = Ak @ WiA
            if not np.all(np.isfinite(H_next)):
                raise NoConvergence("Riccati iterate diverged")
            step = np.max(np.abs(H_next - Hk))
            Ak, Gk, Hk = A_next, G_next, H_next
            if step <= tol * (1.0 + np.max(np.abs(Hk))):
                break
        else:
            raise NoConvergence(f"no convergence within {max_iter} doubling steps")

    P = Hk
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if riccati_residual(P, A, B, Q, R) > residual_tol * max(1.0, np.max(np.abs(P))):
        raise NoConvergence("DARE residual above tolerance")
    return P, K


def finite_diff_jacobian(
    g: Callable[[np.ndarray], np.ndarray],
    x0,
    eps: float = 1e-5,
    vectorized: bool = False,
) -> np.ndarray:
    """Central-difference Jacobian ``J[i, j] = d g_i / d x_j`` at ``x0``.

    With ``vectorized=True`` ``g`` receives all ``2n`` perturbed points at
    once as an ``(2n, n)`` array and must return ``(2n, m)``.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = x0.size
    steps = eps * np.eye(n)
    pts = np.concatenate([x0 + steps, x0 - steps])
    if vectorized:
        vals = np.asarray(g(pts), dtype=float)
        vals = vals.reshape(2 * n, -1)
    else:
        vals = np.stack([np.asarray(g(p), dtype=float).ravel() for p in pts])
    if not np.all(np.isfinite(vals)):
        raise NonFiniteOutput("perturbed evaluation produced NaN or Inf")
    return ((vals[:n] - vals[n:]) / (2.0 * eps)).T


def spectral_radius(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


def spectral_radius_power(A, squarings: int = 40) -> float:
    """Spectral radius from ``||A^k||^(1/k)`` with repeated squaring.

    Works for complex-conjugate dominant pairs where plain power iteration
    on a vector does not settle.
    """
    M = np.atleast_2d(np.asarray(A, dtype=float))
    nrm = np.linalg.norm(M)
    if nrm == 0.0:
        return 0.0
    log_norm = np.log(nrm)  # log ||A^(2^j)||
    M = M / nrm
    for j in range(squarings):
        M = M @ M
        nrm = np.linalg.norm(M)
        if nrm == 0.0:
            return 0.0
        log_norm = 2.0 * log_norm + np.log(nrm)
        M = M / nrm
    return float(np.exp(log_norm / 2.0**squarings))
