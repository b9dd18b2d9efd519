"""Gradients of a scalar loss with respect to every weight.

Two modes are provided for propagating a gradient through a level's coupled
fixed point:

* ``ExactAdjoint`` (default): implicit differentiation of the equation
  system. The adjoint row lambda solves lambda (I - A) = d_real, where
  A[k, j] = w_kj f'(real_k) for k != j, and the pre-coupling gradient is
  d_meta_j = lambda_j w_jj f'(meta_j).  This mode is validated against
  finite differences and is the oracle for everything else.
* ``PaperEq6``: the closed formula
  d_meta = d_real . C . diag(f'(real)) . diag(w_jj) . diag(f'(meta)) with C
  the node block with unit diagonal.  It coincides with the exact gradient
  when the off-diagonal couplings vanish and the activation is the identity;
  outside that regime it is kept behind a flag for fidelity experiments and
  its divergence is reported, not asserted.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .forward import LevelCache, _coupling_jacobian, forward_network
from .model import Network
from .numerics import DTYPE, ActivationKind, activate, activate_deriv


class AdjointSolveError(RuntimeError):
    """The adjoint system I - A is numerically singular."""


class GradMode(Enum):
    PAPER_EQ6 = "paper"
    EXACT_ADJOINT = "exact_adjoint"

    @classmethod
    def from_name(cls, name: str) -> "GradMode":
        try:
            return cls(str(name).lower())
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown grad mode {name!r} (expected one of: {valid})") from None


@dataclass
class GradientSet:
    d_inter: list[np.ndarray]
    d_clique: list[np.ndarray | None]

    @classmethod
    def zeros_like(cls, net: Network) -> "GradientSet":
        return cls(
            d_inter=[np.zeros_like(w) for w in net.inter],
            d_clique=[None if c is None else np.zeros_like(c) for c in net.cliques],
        )

    def add_(self, other: "GradientSet") -> "GradientSet":
        for a, b in zip(self.d_inter, other.d_inter):
            a += b
        for a, b in zip(self.d_clique, other.d_clique):
            if a is not None:
                a += b
        return self

    def scale_(self, factor: float) -> "GradientSet":
        for a in self.d_inter:
            a *= factor
        for a in self.d_clique:
            if a is not None:
                a *= factor
        return self


def coupling_operator(cw: np.ndarray) -> np.ndarray:
    """Node block with the diagonal replaced by ones."""
    block = cw[1:, :].copy()
    m = block.shape[1]
    block[np.arange(m), np.arange(m)] = 1.0
    return block


def layer_input_gradient(d_meta_next: np.ndarray, w_next: np.ndarray,
                         real: np.ndarray, kind: ActivationKind) -> np.ndarray:
    """Pull a pre-coupling gradient back to the previous level's coupled row.

    Uses only the node rows of w_next (the bias row feeds the constant 1),
    then chains through the activation that produced the consumed values.
    """
    if d_meta_next.shape[0] != w_next.shape[1]:
        raise ValueError(f"gradient width {d_meta_next.shape} does not match "
                         f"weight columns {w_next.shape}")
    return (d_meta_next @ w_next[1:, :].T) * activate_deriv(real, kind)


def paper_meta_gradient(d_real: np.ndarray, cache: LevelCache, cw: np.ndarray,
                        kind: ActivationKind) -> np.ndarray:
    block = cw[1:, :]
    m = block.shape[1]
    diag = block[np.arange(m), np.arange(m)]
    v = d_real @ coupling_operator(cw)
    return v * activate_deriv(cache.real, kind) * diag * activate_deriv(cache.meta, kind)


def exact_meta_gradient(d_real: np.ndarray, cache: LevelCache, cw: np.ndarray,
                        kind: ActivationKind, cond_limit: float = 1e12):
    """Adjoint row and exact pre-coupling gradient.

    Returns (lambda, d_meta); lambda is the sensitivity of the loss to the
    rhs of each node's equation and replaces d_real in the clique weight
    gradient.
    """
    block = cw[1:, :]
    m = block.shape[1]
    a = _coupling_jacobian(cache.real, cw, kind)
    system = np.eye(m, dtype=DTYPE) - a
    if np.linalg.cond(system) > cond_limit:
        raise AdjointSolveError(
            "adjoint system is near-singular; project the clique back into the "
            "contractive regime (rho < 1) before differentiating")
    # row form lambda (I - A) = d_real  <=>  (I - A)^T lambda^T = d_real^T
    lam = np.linalg.solve(system.T, d_real)
    diag = block[np.arange(m), np.arange(m)]
    d_meta = lam * diag * activate_deriv(cache.meta, kind)
    return lam, d_meta


def design_vector(cache: LevelCache, j: int, kind: ActivationKind) -> np.ndarray:
    """Augmented row (1, f(real_1), ..., f(meta_j), ..., f(real_m)); j is 0-based."""
    m = cache.real.shape[0]
    if not 0 <= j < m:
        raise IndexError(f"node index {j} out of range for width {m}")
    row = np.concatenate(([1.0], activate(cache.real, kind)))
    row[j + 1] = activate(cache.meta[j : j + 1], kind)[0]
    return row


def clique_weight_gradient(sensitivity: np.ndarray, cache: LevelCache,
                           kind: ActivationKind) -> np.ndarray:
    """Column j is sensitivity_j times the j-th design vector."""
    m = cache.real.shape[0]
    grad = np.empty((m + 1, m), dtype=DTYPE)
    for j in range(m):
        grad[:, j] = sensitivity[j] * design_vector(cache, j, kind)
    return grad


def backward_network(net: Network, caches: list[LevelCache], x: np.ndarray,
                     d_output: np.ndarray, mode: GradMode = GradMode.EXACT_ADJOINT) -> GradientSet:
    """Walk levels last to first; the output gradient is the gradient of the
    final level's pre-coupling row."""
    grads = GradientSet.zeros_like(net)
    x = np.asarray(x, dtype=DTYPE)
    d_meta = np.asarray(d_output, dtype=DTYPE)
    for i in range(net.depth - 1, -1, -1):
        if i == 0:
            prev_aug = np.concatenate(([1.0], x))
        else:
            prev_aug = np.concatenate(([1.0], caches[i - 1].activated_real))
        grads.d_inter[i] = np.outer(prev_aug, d_meta)
        if i == 0:
            break
        prev_spec = net.specs[i - 1]
        d_real = layer_input_gradient(d_meta, net.inter[i], caches[i - 1].real,
                                      prev_spec.activation)
        cw = net.cliques[i - 1]
        if cw is not None:
            if mode is GradMode.EXACT_ADJOINT:
                lam, d_meta = exact_meta_gradient(d_real, caches[i - 1], cw,
                                                  prev_spec.activation)
                sensitivity = lam
            else:
                d_meta = paper_meta_gradient(d_real, caches[i - 1], cw,
                                             prev_spec.activation)
                sensitivity = d_real
            grads.d_clique[i - 1] = clique_weight_gradient(
                sensitivity, caches[i - 1], prev_spec.activation)
        else:
            d_meta = d_real
    return grads


def finite_difference_gradient(net: Network, x: np.ndarray, loss_fn,
                               h: float = 1e-5, tol: float = 1e-12,
                               max_iter: int = 400) -> GradientSet:
    """Central differences over every weight; the independent oracle.

    loss_fn maps the network output row to a scalar. Each probe re-runs the
    full forward solve at a tight tolerance so solver error stays far below
    the difference quotient.
    """
    if h <= 0:
        raise ValueError(f"h must be > 0, got {h}")

    def loss_at(candidate: Network) -> float:
        out, _ = forward_network(candidate, x, tol=tol, max_iter=max_iter)
        return float(loss_fn(out))

    grads = GradientSet.zeros_like(net)

    def probe(getter, setter):
        base = getter()
        setter(base + h)
        up = loss_at(net)
        setter(base - h)
        down = loss_at(net)
        setter(base)
        return (up - down) / (2.0 * h)

    for i in range(net.depth):
        w = net.inter[i]
        for r in range(w.shape[0]):
            for c in range(w.shape[1]):
                grads.d_inter[i][r, c] = probe(
                    lambda: w[r, c],
                    lambda v: w.__setitem__((r, c), v))
        cw = net.cliques[i]
        if cw is not None:
            for r in range(cw.shape[0]):
                for c in range(cw.shape[1]):
                    grads.d_clique[i][r, c] = probe(
                        lambda: cw[r, c],
                        lambda v: cw.__setitem__((r, c), v))
    return grads
