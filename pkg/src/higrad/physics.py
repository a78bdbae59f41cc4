"""The four differentiable forward models and their losses: gamma-scaled toy
problem, nonlinear oscillator chain, Poisson residual, quantum dipole.

Plain numpy reference implementations live here next to the autodiff graph
builders used for training; the numpy versions double as oracles for the
graphs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .autodiff import Graph, pack_complex, unpack_complex
from .linalg import ComplexTridiagonal, eigh_sym_tridiagonal, solve_tridiagonal_complex, \
    tridiagonal_matvec

# ---------------------------------------------------------------------------
# toy problem


def toy_forward(net_out: np.ndarray, gamma: float) -> np.ndarray:
    """(y1, gamma*y2): the downstream L2 loss then reproduces the
    ill-conditioned two-component objective."""
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    out = np.array(net_out, dtype=np.float64, copy=True)
    out[..., 1] *= gamma
    return out


# ---------------------------------------------------------------------------
# nonlinear oscillator chain

OSC_DT = 0.125
OSC_STEPS = 96
OSC_ALPHA = 1.0
OSC_CONTROL = (0.0, 3.0)


@dataclass
class OscillatorState:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.x, self.p])


def _interaction_force(x: np.ndarray, alpha: float) -> np.ndarray:
    """-dV/dx for V = alpha * sum_i (x_i - x_{i+1})^4, free ends."""
    f = np.zeros_like(x)
    d = x[:-1] - x[1:]
    cube = 4.0 * alpha * d ** 3
    f[:-1] -= cube
    f[1:] += cube
    return f


def oscillator_rhs(s: OscillatorState, u: float, alpha: float, c: np.ndarray):
    """Hamilton's equations: xdot = p, pdot = -x - 4a(x_i-x_{i+1})^3
    - 4a(x_i-x_{i-1})^3 - u*c (missing neighbors omitted)."""
    c = np.asarray(c, dtype=np.float64)
    xdot = s.p.copy()
    pdot = -s.x + _interaction_force(s.x, alpha) - u * c
    return OscillatorState(xdot, pdot)


def hamiltonian_energy(s: OscillatorState, u: float, alpha: float, c: np.ndarray) -> float:
    c = np.asarray(c, dtype=np.float64)
    d = s.x[:-1] - s.x[1:]
    return float(0.5 * np.sum(s.x ** 2) + 0.5 * np.sum(s.p ** 2)
                 + alpha * np.sum(d ** 4) + u * np.sum(s.x * c))


def rk4_rollout(s0: OscillatorState, u: np.ndarray, dt: float = OSC_DT,
                alpha: float = OSC_ALPHA, c=OSC_CONTROL) -> OscillatorState:
    """Classical RK4 with the control held constant within each step."""
    c = np.asarray(c, dtype=np.float64)
    s = OscillatorState(s0.x.copy(), s0.p.copy())

    def rhs(x, p, un):
        return p, -x + _interaction_force(x, alpha) - un * c

    for step, un in enumerate(np.asarray(u, dtype=np.float64)):
        k1x, k1p = rhs(s.x, s.p, un)
        k2x, k2p = rhs(s.x + 0.5 * dt * k1x, s.p + 0.5 * dt * k1p, un)
        k3x, k3p = rhs(s.x + 0.5 * dt * k2x, s.p + 0.5 * dt * k2p, un)
        k4x, k4p = rhs(s.x + dt * k3x, s.p + dt * k3p, un)
        s.x = s.x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        s.p = s.p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        if not (np.all(np.isfinite(s.x)) and np.all(np.isfinite(s.p))):
            raise FloatingPointError(f"oscillator rollout diverged at step {step}")
    return s


# ---------------------------------------------------------------------------
# Poisson problem (8x8 interior nodes, dx = 1, zero Dirichlet ghost values)

POISSON_N = 8


def laplacian_apply(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64).reshape(POISSON_N, POISSON_N)
    padded = np.zeros((POISSON_N + 2, POISSON_N + 2))
    padded[1:-1, 1:-1] = phi
    return (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2]
            + padded[1:-1, 2:] - 4.0 * phi)


def laplacian_matrix() -> np.ndarray:
    """Dense 64x64 operator equal to laplacian_apply on flattened fields."""
    n = POISSON_N * POISSON_N
    a = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        a[:, i] = laplacian_apply(e).ravel()
    return a


def poisson_loss(phi_pred: np.ndarray, rho: np.ndarray):
    """Physics-residual loss: y = A phi_pred, loss = 0.5 ||y - rho||^2."""
    y = laplacian_apply(phi_pred).ravel()
    rho = np.asarray(rho, dtype=np.float64).ravel()
    return 0.5 * float(np.sum((y - rho) ** 2)), y


# ---------------------------------------------------------------------------
# quantum dipole (infinite well on [0, 2], 16 grid points incl. boundaries)

QM_POINTS = 16
QM_DX = 2.0 / (QM_POINTS - 1)
QM_N = QM_POINTS - 2          # free interior values
QM_DT = 0.05
QM_STEPS = 384
QM_GRID = QM_DX * np.arange(1, QM_N + 1)


@dataclass
class WaveFunction:
    """Interior grid values of the wave function (boundaries fixed at 0)."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)

    @classmethod
    def from_complex(cls, psi: np.ndarray) -> "WaveFunction":
        psi = np.asarray(psi, dtype=np.complex128)
        return cls(psi.real.copy(), psi.imag.copy())

    def complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    def norm_sq(self) -> float:
        return float(np.sum(self.re ** 2 + self.im ** 2))


def build_quantum_hamiltonian(u: float) -> ComplexTridiagonal:
    """H = -Laplacian (3-point, Dirichlet) + u * diag(x_j); real symmetric."""
    diag = 2.0 / QM_DX ** 2 + u * QM_GRID
    off = np.full(QM_N - 1, -1.0 / QM_DX ** 2)
    return ComplexTridiagonal(off, diag, off)


def cn_step(psi: WaveFunction, u_n: float, dt: float = QM_DT) -> WaveFunction:
    """Crank-Nicolson (Cayley form): (I + i dt/2 H) psi' = (I - i dt/2 H) psi."""
    h = build_quantum_hamiltonian(u_n)
    z = 0.5j * dt
    minus = ComplexTridiagonal(-z * h.lower, 1.0 - z * h.diag, -z * h.upper)
    plus = ComplexTridiagonal(z * h.lower, 1.0 + z * h.diag, z * h.upper)
    rhs = tridiagonal_matvec(minus, psi.complex())
    return WaveFunction.from_complex(solve_tridiagonal_complex(plus, rhs))


def cn_rollout(psi0: WaveFunction, u: np.ndarray, dt: float = QM_DT) -> WaveFunction:
    psi = psi0
    for un in np.asarray(u, dtype=np.float64):
        psi = cn_step(psi, float(un), dt)
    return psi


def eigenstates():
    """Three lowest eigenpairs of H(u=0): (Psi0, Psi1, Psi2, energies).

    States are real, unit-norm, sign-fixed by a positive first component.
    """
    h = build_quantum_hamiltonian(0.0)
    values, vectors = eigh_sym_tridiagonal(h.diag.real, h.lower.real)
    states = []
    for k in range(3):
        v = vectors[:, k]
        if v[0] < 0:
            v = -v
        states.append(v)
    return states[0], states[1], states[2], values[:3]


def _inner(a: np.ndarray, b: np.ndarray) -> complex:
    return complex(np.sum(np.conj(a) * b))


def overlap_loss(psi_a, psi_b) -> float:
    """1 - |<a, b>|^2 with the plain discrete inner product."""
    a = psi_a.complex() if isinstance(psi_a, WaveFunction) else np.asarray(psi_a, dtype=np.complex128)
    b = psi_b.complex() if isinstance(psi_b, WaveFunction) else np.asarray(psi_b, dtype=np.complex128)
    return float(1.0 - abs(_inner(a, b)) ** 2)


def _energy_component_loss(psi_a, psi_b, state: np.ndarray) -> float:
    a = psi_a.complex() if isinstance(psi_a, WaveFunction) else np.asarray(psi_a, dtype=np.complex128)
    b = psi_b.complex() if isinstance(psi_b, WaveFunction) else np.asarray(psi_b, dtype=np.complex128)
    return float((abs(_inner(a, state)) - abs(_inner(state, b))) ** 2)


def low_energy_loss(psi_a, psi_b, psi1: np.ndarray | None = None) -> float:
    if psi1 is None:
        _, psi1, _, _ = eigenstates()
    return _energy_component_loss(psi_a, psi_b, psi1)


def high_energy_loss(psi_a, psi_b, psi2: np.ndarray | None = None) -> float:
    if psi2 is None:
        _, _, psi2, _ = eigenstates()
    return _energy_component_loss(psi_a, psi_b, psi2)


# ---------------------------------------------------------------------------
# experiment graphs (network + solver compositions)


def build_toy_graph(spec: nn.MlpSpec, gamma: float) -> Graph:
    g = nn.build_forward_graph(spec)
    out = g.const_affine(g.output, np.diag([1.0, gamma]))
    g.mark_output(out)
    return g


def build_oscillator_graph(spec: nn.MlpSpec, steps: int = OSC_STEPS, dt: float = OSC_DT,
                           alpha: float = OSC_ALPHA, c=OSC_CONTROL) -> Graph:
    """Network output (one control value per step) drives an unrolled RK4
    rollout of the two-mass chain from the origin; output = final state."""
    c = np.asarray(c, dtype=np.float64)
    if spec.layer_sizes[-1] != steps:
        raise ValueError("network output size must equal the step count")
    g = nn.build_forward_graph(spec)
    u = g.output

    n = c.shape[0]
    if n != 2:
        raise ValueError("graph rollout is built for the two-mass chain")
    # d^3 coefficient matrices for the state layout [x1, x2, p1, p2]
    diff = np.array([[1.0], [-1.0]])                 # x -> x1 - x2
    spread = np.array([[-4.0 * alpha, 4.0 * alpha]])  # d3 -> force on (p1, p2)
    neg_eye = -np.eye(n)
    c_row = -c[None, :]

    s = g.const(np.zeros(2 * n))

    def rhs(state, u_n):
        x = g.slice(state, 0, n)
        p = g.slice(state, n, 2 * n)
        d = g.const_affine(x, diff)
        d3 = g.mul(g.square(d), d)
        pdot = g.add(g.add(g.const_affine(x, neg_eye), g.const_affine(d3, spread)),
                     g.const_affine(u_n, c_row))
        return g.concat(p, pdot)

    for step in range(steps):
        u_n = g.slice(u, step, step + 1)
        k1 = rhs(s, u_n)
        k2 = rhs(g.add(s, g.scale(k1, dt / 2)), u_n)
        k3 = rhs(g.add(s, g.scale(k2, dt / 2)), u_n)
        k4 = rhs(g.add(s, g.scale(k3, dt)), u_n)
        ksum = g.add(g.add(k1, k4), g.scale(g.add(k2, k3), 2.0))
        s = g.add(s, g.scale(ksum, dt / 6.0))
    g.mark_output(s)
    return g


def build_poisson_graph(spec: nn.MlpSpec) -> Graph:
    """Network predicts phi from rho; output is the physics residual input
    y = A phi entering the loss 0.5 ||y - rho||^2."""
    g = nn.build_forward_graph(spec)
    out = g.const_affine(g.output, laplacian_matrix().T)
    g.mark_output(out)
    return g


def build_quantum_graph(spec: nn.MlpSpec, steps: int = QM_STEPS, dt: float = QM_DT) -> Graph:
    """Network output (one control value per CN step) drives the unrolled
    Crank-Nicolson rollout from the ground state; output = final interior
    wave function, complex-packed as [re | im]."""
    if spec.layer_sizes[-1] != steps:
        raise ValueError("network output size must equal the step count")
    g = nn.build_forward_graph(spec)
    u = g.output

    psi0, _, _, _ = eigenstates()
    kin = 2.0 / QM_DX ** 2
    off = dt / (2.0 * QM_DX ** 2)   # -i dt/2 * (-1/dx^2) has imag part +off
    ones = g.const(np.ones(QM_N))
    grid_row = QM_GRID[None, :]
    kin_const = np.full(QM_N, kin)
    band_minus = g.const(pack_complex(np.full(QM_N - 1, 1j * off)))
    band_plus = g.const(pack_complex(np.full(QM_N - 1, -1j * off)))

    psi = g.const(pack_complex(psi0.astype(np.complex128)))
    for step in range(steps):
        u_n = g.slice(u, step, step + 1)
        hdiag = g.const_affine(u_n, grid_row, kin_const)
        diag_minus = g.concat(ones, g.scale(hdiag, -dt / 2))
        diag_plus = g.concat(ones, g.scale(hdiag, dt / 2))
        rhs = g.ctridiag_matvec(band_minus, diag_minus, band_minus, psi)
        psi = g.ctridiag_solve(band_plus, diag_plus, band_plus, rhs)
    g.mark_output(psi)
    return g


# ---------------------------------------------------------------------------
# per-sample losses and loss gradients (inputs to the Jacobian stack)


def l2_loss_and_grads(y: np.ndarray, targets: np.ndarray):
    """l_i = 0.5 ||y_i - t_i||^2; gradient y_i - t_i."""
    diff = y - targets
    return 0.5 * np.sum(diff * diff, axis=-1), diff


def overlap_loss_and_grads(y_packed: np.ndarray, target_packed: np.ndarray):
    """Per-sample overlap loss 1 - |<target, y>|^2 and its gradient with
    respect to the packed [re | im] output."""
    y = unpack_complex(y_packed)
    t = unpack_complex(target_packed)
    c = np.sum(np.conj(t) * y, axis=-1, keepdims=True)
    losses = 1.0 - np.abs(c[..., 0]) ** 2
    grads = pack_complex(-2.0 * c * t)
    return losses, grads
