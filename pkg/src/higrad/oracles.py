"""Independent verification oracles used by tests and acceptance criteria.

These deliberately share no code with the implementations they check: dense
finite differences, dense normal equations, and brute-force direction
sampling.
"""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-4   # central differences at 64-bit: balances truncation/roundoff


def fd_jacobian(f, theta: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of f: R^t -> R^m, one column per parameter."""
    theta = np.asarray(theta, dtype=np.float64)
    cols = []
    for i in range(theta.shape[0]):
        tp = theta.copy()
        tp[i] += h
        tm = theta.copy()
        tm[i] -= h
        cols.append((np.asarray(f(tp)) - np.asarray(f(tm))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def fd_column(f, theta: np.ndarray, index: int, h: float = FD_STEP) -> np.ndarray:
    """Single Jacobian column d f / d theta_index by central differences."""
    tp = np.asarray(theta, dtype=np.float64).copy()
    tp[index] += h
    tm = np.asarray(theta, dtype=np.float64).copy()
    tm[index] -= h
    return (np.asarray(f(tp)) - np.asarray(f(tm))) / (2.0 * h)


def steepest_descent_oracle(j: np.ndarray, g: np.ndarray, delta: np.ndarray,
                            trials: int = 1000, seed: int = 0) -> bool:
    """True iff delta minimizes the linearized loss g.J.d among random
    directions d rescaled to the same semi-norm ||Lambda^{3/4} V^T d||."""
    u, s, vt = np.linalg.svd(np.asarray(j, dtype=np.float64), full_matrices=False)
    weights = s ** 0.75

    def semi_norm(vec):
        return np.linalg.norm(weights * (vt @ vec))

    target = semi_norm(delta)
    best = float(g @ (j @ delta))
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        d = rng.standard_normal(j.shape[1])
        sn = semi_norm(d)
        if sn == 0.0:
            continue
        change = float(g @ (j @ (d * (target / sn))))
        if change < best - 1e-12 * max(1.0, abs(best)):
            return False
    return True


def normal_equations_gn(j: np.ndarray, g: np.ndarray) -> np.ndarray:
    """-(J^T J)^{-1} J^T g via a dense factorization; fails on singular
    normal matrices."""
    j = np.asarray(j, dtype=np.float64)
    jtj = j.T @ j
    cond = np.linalg.cond(jtj)
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError("normal matrix is singular or near-singular")
    return -np.linalg.solve(jtj, j.T @ g)
