"""Optimizer update rules: gradient-family baselines, Gauss-Newton and
half-inverse gradient steps with kappa/beta/tau knobs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .autodiff import JacobianStack

GRAD_VARIANTS = ("sgd", "adam", "adagrad", "adadelta", "rmsprop")

# TensorFlow-2.5 style epsilon; Adam beta1/beta2 and RMSprop/Adadelta rho
# are the canonical values.
EPS = 1e-7
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
RMSPROP_RHO = 0.9
ADADELTA_RHO = 0.95


@dataclass
class GradOptimizerState:
    variant: str
    acc: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if self.variant not in GRAD_VARIANTS:
            raise ValueError(f"unknown optimizer variant {self.variant!r}")


def grad_step(state: GradOptimizerState, theta: np.ndarray, grad: np.ndarray,
              eta: float):
    """One canonical update of the named gradient method.

    Returns (theta', state); the state is updated in place and echoed back.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape:
        raise ValueError("gradient shape must match theta")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    state.step += 1
    acc = state.acc
    v = state.variant
    if v == "sgd":
        delta = -eta * grad
    elif v == "adam":
        m = acc.setdefault("m", np.zeros_like(theta))
        s = acc.setdefault("v", np.zeros_like(theta))
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * grad
        s *= ADAM_BETA2
        s += (1 - ADAM_BETA2) * grad * grad
        mhat = m / (1 - ADAM_BETA1 ** state.step)
        vhat = s / (1 - ADAM_BETA2 ** state.step)
        delta = -eta * mhat / (np.sqrt(vhat) + EPS)
    elif v == "adagrad":
        s = acc.setdefault("v", np.zeros_like(theta))
        s += grad * grad
        delta = -eta * grad / (np.sqrt(s) + EPS)
    elif v == "rmsprop":
        s = acc.setdefault("v", np.zeros_like(theta))
        s *= RMSPROP_RHO
        s += (1 - RMSPROP_RHO) * grad * grad
        delta = -eta * grad / (np.sqrt(s) + EPS)
    else:  # adadelta
        s = acc.setdefault("v", np.zeros_like(theta))
        d = acc.setdefault("d", np.zeros_like(theta))
        s *= ADADELTA_RHO
        s += (1 - ADADELTA_RHO) * grad * grad
        raw = -np.sqrt(d + EPS) / np.sqrt(s + EPS) * grad
        d *= ADADELTA_RHO
        d += (1 - ADADELTA_RHO) * raw * raw
        delta = eta * raw
    return theta + delta, state


@dataclass(frozen=True)
class HigConfig:
    eta: float
    kappa: float = -0.5
    tau: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")


# stacks whose small side exceeds this use the QR-accelerated SVD, and far
# larger ones the Gram-matrix eigendecomposition (see _fractional_apply)
_QR_THRESHOLD = 400
_GRAM_THRESHOLD = 2048


def _fractional_apply(jac: np.ndarray, g: np.ndarray, kappa: float, tau: float,
                      beta: float, method: str = "auto") -> np.ndarray:
    """sigma_max**beta * (V sigma**kappa U^T) g without materializing the
    fractional power of jac.

    method 'svd' decomposes jac directly; 'qr' factors the long side first
    (same accuracy, much faster for very rectangular stacks); 'gram'
    eigendecomposes the (s x s) Gram matrix, cheapest for huge stacks at the
    cost of squared conditioning in the smallest singular values.
    """
    rows, cols = jac.shape
    small = min(rows, cols)
    if method == "auto":
        if small <= _QR_THRESHOLD:
            method = "svd"
        elif small <= _GRAM_THRESHOLD:
            method = "qr"
        else:
            method = "gram"

    if method == "svd":
        f = linalg.svd(jac)
        u, s, v = f.u, f.sigma, f.v
        coef = linalg._power_spectrum(s, kappa, tau) * (u.T @ g)
        out = v @ coef
    elif method == "qr":
        if rows <= cols:
            # jac = R^T Q^T with Q (cols x rows)
            q, r = np.linalg.qr(jac.T)
            f = linalg.svd(r.T)
            s = f.sigma
            coef = linalg._power_spectrum(s, kappa, tau) * (f.u.T @ g)
            out = q @ (f.v @ coef)
        else:
            q, r = np.linalg.qr(jac)
            f = linalg.svd(r)
            s = f.sigma
            coef = linalg._power_spectrum(s, kappa, tau) * (f.u.T @ (q.T @ g))
            out = f.v @ coef
    elif method == "gram":
        if rows <= cols:
            gram = jac @ jac.T
            lam, q = np.linalg.eigh(gram)
            s = np.sqrt(np.maximum(lam[::-1], 0.0))
            q = q[:, ::-1]
            # V = jac^T U / sigma, folded into the coefficient
            vals = linalg._power_spectrum(s, kappa, tau)
            coef = np.where(s > 0, vals / np.maximum(s, 1e-300), 0.0) * (q.T @ g)
            out = jac.T @ (q @ coef)
        else:
            gram = jac.T @ jac
            lam, q = np.linalg.eigh(gram)
            s = np.sqrt(np.maximum(lam[::-1], 0.0))
            q = q[:, ::-1]
            vals = linalg._power_spectrum(s, kappa, tau)
            coef = np.where(s > 0, vals / np.maximum(s, 1e-300), 0.0) * (q.T @ (jac.T @ g))
            out = q @ coef
    else:
        raise ValueError(f"unknown method {method!r}")

    if beta != 0.0:
        sigma_max = s[0] if len(s) else 0.0
        if sigma_max <= 0.0:
            raise linalg.LinalgError("beta prefactor undefined: all singular values are zero")
        out = sigma_max ** beta * out
    return out


def hig_step(stack: JacobianStack, cfg: HigConfig, method: str = "auto") -> np.ndarray:
    """Half-inverse gradient update
    delta = -eta * sigma_max**beta * J^kappa_tau * stacked loss gradients."""
    return -cfg.eta * _fractional_apply(stack.jac, stack.loss_grads, cfg.kappa,
                                        cfg.tau, cfg.beta, method=method)


def gn_step(stack: JacobianStack, tau: float, method: str = "auto") -> np.ndarray:
    """Gauss-Newton update via the tau-truncated pseudoinverse (eta fixed to 1)."""
    return -_fractional_apply(stack.jac, stack.loss_grads, -1.0, tau, 0.0,
                              method=method)
