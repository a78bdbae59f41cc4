"""Seeded, deterministic training/test data generators for the four
experiments. All generators use numpy's PCG64 generator; identical seeds
give bit-identical streams.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import physics

OSCILLATOR_RANGE = 0.025

GENERATOR_INFO = {
    "rng": "numpy.random.PCG64",
    "numpy": np.__version__,
    "oscillator_range": OSCILLATOR_RANGE,
    "version": 1,
}

POISSON_MODES = 4        # modes summed per source sample
POISSON_MAX_WAVENUMBER = 4


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    seed: int
    experiment: str

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets must have equal length")

    def __len__(self) -> int:
        return len(self.inputs)


def gen_toy(n: int = 1024, seed: int = 0) -> Dataset:
    """x ~ U[-1, 1], targets (sin 6x, cos 9x)."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 1))
    targets = np.column_stack([np.sin(6.0 * x[:, 0]), np.cos(9.0 * x[:, 0])])
    return Dataset(x, targets, seed, "toy")


def gen_oscillator(n: int = 4096, seed: int = 0) -> Dataset:
    """Random target states (x1, x2, p1, p2) ~ U[-r, r]^4 with
    r = OSCILLATOR_RANGE; the network also receives the target as its input.

    The range keeps transient control amplitudes inside the RK4 stability
    region of the quartic oscillator at dt = 0.125: larger ranges let training
    excursions reach amplitudes where the local stiffness exceeds the
    integrator's stability limit, and the time-discretization error of the
    quartic term then sets a loss floor proportional to the squared amplitude.
    """
    rng = np.random.default_rng(seed)
    r = OSCILLATOR_RANGE
    targets = rng.uniform(-r, r, size=(n, 4))
    return Dataset(targets.copy(), targets, seed, "oscillator")


def _poisson_mode_table():
    r = np.arange(1, physics.POISSON_N + 1)
    k = np.arange(1, POISSON_MAX_WAVENUMBER + 1)
    # sin(pi k r / 9) evaluated on the interior nodes
    return np.sin(np.pi * np.outer(k, r) / (physics.POISSON_N + 1))


def gen_poisson(n: int, seed: int = 0) -> Dataset:
    """Smooth random sources: per sample, 4 Fourier modes with wavenumbers
    drawn from {1..4}^2 and Normal(0,1) amplitudes, mean-subtracted."""
    rng = np.random.default_rng(seed)
    table = _poisson_mode_table()
    fields = np.zeros((n, physics.POISSON_N, physics.POISSON_N))
    for i in range(n):
        kr = rng.integers(1, POISSON_MAX_WAVENUMBER + 1, size=POISSON_MODES)
        kc = rng.integers(1, POISSON_MAX_WAVENUMBER + 1, size=POISSON_MODES)
        amps = rng.normal(0.0, 1.0, size=POISSON_MODES)
        for a, jr, jc in zip(amps, kr, kc):
            fields[i] += a * np.outer(table[jr - 1], table[jc - 1])
        fields[i] -= fields[i].mean()
    flat = fields.reshape(n, -1)
    return Dataset(flat.copy(), flat, seed, "poisson")


def gen_quantum(n: int = 1024, seed: int = 0) -> Dataset:
    """Randomized unit-norm superpositions of the first and second excited
    states: cos(theta) e^{i phi1} Psi1 + sin(theta) e^{i phi2} Psi2."""
    rng = np.random.default_rng(seed)
    _, psi1, psi2, _ = physics.eigenstates()
    theta = rng.uniform(0.0, np.pi / 2.0, size=n)
    phi1 = rng.uniform(0.0, 2.0 * np.pi, size=n)
    phi2 = rng.uniform(0.0, 2.0 * np.pi, size=n)
    coeff1 = np.cos(theta) * np.exp(1j * phi1)
    coeff2 = np.sin(theta) * np.exp(1j * phi2)
    states = coeff1[:, None] * psi1[None, :] + coeff2[:, None] * psi2[None, :]
    packed = np.concatenate([states.real, states.imag], axis=-1)
    return Dataset(packed.copy(), packed, seed, "quantum")


GENERATORS = {
    "toy": gen_toy,
    "oscillator": gen_oscillator,
    "poisson": gen_poisson,
    "quantum": gen_quantum,
}


def export_dataset(ds: Dataset, path: str) -> None:
    """One record per line (input fields then target fields, as repr'd
    64-bit floats) with a JSON sidecar describing the layout."""
    with open(path, "w", encoding="utf-8") as f:
        for x, t in zip(ds.inputs, ds.targets):
            f.write(",".join(repr(float(v)) for v in np.concatenate([x, t])) + "\n")
    sidecar = {
        "experiment": ds.experiment,
        "seed": ds.seed,
        "n": len(ds),
        "input_dim": int(ds.inputs.shape[1]),
        "target_dim": int(ds.targets.shape[1]),
        "generator": GENERATOR_INFO,
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2)
