"""Differentiable-physics training laboratory built around half-inverse
gradient optimization."""

from . import autodiff, datasets, figures, harness, linalg, nn, optim, oracles, physics

__all__ = [
    "autodiff",
    "datasets",
    "figures",
    "harness",
    "linalg",
    "nn",
    "optim",
    "oracles",
    "physics",
]

__version__ = "0.1.0"
