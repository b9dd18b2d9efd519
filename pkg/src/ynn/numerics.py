"""Dense float64 primitives: matmul, activations with derivatives, seeded RNG.

Everything downstream of this module is deterministic given a seed. The
generator is numpy's PCG64, which produces an identical stream for a given
64-bit seed on every platform; per-layer streams are spawned from a
SeedSequence so adding a layer never shifts another layer's draws.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ActivationKind(Enum):
    IDENTITY = "identity"
    TANH = "tanh"
    SIGMOID = "sigmoid"

    @classmethod
    def from_name(cls, name: str) -> "ActivationKind":
        try:
            return cls(str(name).lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown activation {name!r} (expected one of: {valid})") from None


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check.

    Summation runs in ascending index order (numpy C-order contraction),
    so results are bit-reproducible.
    """
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def activate(x: np.ndarray, kind: ActivationKind) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if kind is ActivationKind.IDENTITY:
        return x.copy()
    if kind is ActivationKind.TANH:
        return np.tanh(x)
    if kind is ActivationKind.SIGMOID:
        # exp may overflow for very negative x; the limit 0.0 is correct
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-x))
    raise ValueError(f"unhandled activation {kind}")


def activate_deriv(x: np.ndarray, kind: ActivationKind) -> np.ndarray:
    """Elementwise derivative of `activate` evaluated at x."""
    x = np.asarray(x, dtype=DTYPE)
    if kind is ActivationKind.IDENTITY:
        return np.ones_like(x)
    if kind is ActivationKind.TANH:
        t = np.tanh(x)
        return 1.0 - t * t
    if kind is ActivationKind.SIGMOID:
        s = activate(x, ActivationKind.SIGMOID)
        return s * (1.0 - s)
    raise ValueError(f"unhandled activation {kind}")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """n independent child generators derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def uniform_matrix(rng: np.random.Generator, rows: int, cols: int,
                   lo: float, hi: float) -> np.ndarray:
    """i.i.d. uniform entries in [lo, hi), drawn row-major."""
    if lo > hi:
        raise ValueError(f"uniform bounds reversed: lo={lo} > hi={hi}")
    return rng.uniform(lo, hi, size=(rows, cols)).astype(DTYPE, copy=False)
