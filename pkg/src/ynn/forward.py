"""Forward pass: pre-coupling values plus the per-level coupled fixed point.

Each level first computes its pre-coupling ("meta") row from the previous
level's activated values, then, when the level carries a clique, solves

    n_j = b_j + sum_{k != j} f(n_k) w_kj + f(meta_j) w_jj

for all nodes simultaneously.  Jacobi iteration is the primary method (it is
synchronous and order-independent; it contracts whenever the off-diagonal
column-sum bound rho is < 1 and |f'| <= 1), with a damped Newton fallback for
iterates outside the contractive regime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DTYPE, ActivationKind, activate, activate_deriv


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None, level: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.level = level


class DivergenceError(SolverError):
    """A solver iterate became non-finite."""


DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100


@dataclass
class LevelCache:
    meta: np.ndarray             # pre-coupling row
    real: np.ndarray             # coupled row (equals meta on clique-free levels)
    activated_real: np.ndarray   # f(real), what the next level consumes
    solver_iterations: int
    residual: float


def compute_meta(prev_activated_aug: np.ndarray, w: np.ndarray) -> np.ndarray:
    """[1, activated previous row] times the inter-layer weights."""
    prev_activated_aug = np.asarray(prev_activated_aug, dtype=DTYPE)
    if prev_activated_aug.shape != (w.shape[0],):
        raise ValueError(
            f"augmented input length {prev_activated_aug.shape} does not match "
            f"weight rows {w.shape}")
    return prev_activated_aug @ w


def clique_rhs(real: np.ndarray, meta: np.ndarray, cw: np.ndarray,
               kind: ActivationKind) -> np.ndarray:
    block = cw[1:, :]
    m = block.shape[1]
    diag = block[np.arange(m), np.arange(m)]
    f_real = activate(real, kind)
    f_meta = activate(meta, kind)
    # sum_{k != j} f(real_k) w_kj  =  (f_real @ block)_j - f_real_j w_jj
    return cw[0] + f_real @ block + (f_meta - f_real) * diag


def _coupling_jacobian(real: np.ndarray, cw: np.ndarray, kind: ActivationKind) -> np.ndarray:
    """A with A[k, j] = w_kj f'(real_k) for k != j, zero diagonal.

    Row-vector convention: a perturbation delta of the coupled row maps to a
    perturbation delta @ A of the rhs.
    """
    block = cw[1:, :]
    m = block.shape[1]
    a = block * activate_deriv(real, kind)[:, None]
    a[np.arange(m), np.arange(m)] = 0.0
    return a


def solve_clique(meta: np.ndarray, cw: np.ndarray, kind: ActivationKind,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> LevelCache:
    """Jacobi fixed-point iteration, then damped Newton if Jacobi stalls."""
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    meta = np.asarray(meta, dtype=DTYPE)
    m = meta.shape[0]

    real = clique_rhs(np.zeros(m, dtype=DTYPE), meta, cw, kind)
    iterations = 0
    residual = np.inf
    for _ in range(max_iter):
        iterations += 1
        nxt = clique_rhs(real, meta, cw, kind)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError("non-finite iterate in Jacobi phase", residual=float(residual))
        residual = float(np.max(np.abs(nxt - real)))
        real = nxt
        if residual <= tol:
            break

    if residual > tol:
        real, newton_iters, residual = _newton_phase(real, meta, cw, kind, tol, max_iter)
        iterations += newton_iters
        if residual > tol:
            raise SolverError(
                f"clique solve did not converge (residual {residual:.3e} > tol {tol:.3e})",
                residual=residual)

    return LevelCache(meta=meta, real=real, activated_real=activate(real, kind),
                      solver_iterations=iterations, residual=residual)


def _newton_phase(real, meta, cw, kind, tol, max_iter):
    """Damped Newton on g(n) = n - rhs(n); Jacobian is I - A^T for columns."""
    m = real.shape[0]
    eye = np.eye(m, dtype=DTYPE)
    g = real - clique_rhs(real, meta, cw, kind)
    residual = float(np.max(np.abs(g)))
    iterations = 0
    for _ in range(max_iter):
        if residual <= tol:
            break
        iterations += 1
        jac = eye - _coupling_jacobian(real, cw, kind).T
        try:
            step = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError:
            raise SolverError("singular Newton system in clique solve",
                              residual=residual) from None
        damping = 1.0
        for _ in range(30):
            trial = real + damping * step
            g_trial = trial - clique_rhs(trial, meta, cw, kind)
            if np.all(np.isfinite(g_trial)) and np.max(np.abs(g_trial)) < residual:
                real, g = trial, g_trial
                residual = float(np.max(np.abs(g)))
                break
            damping *= 0.5
        else:
            break  # no damping factor improves; give up
        if not np.all(np.isfinite(real)):
            raise DivergenceError("non-finite iterate in Newton phase", residual=residual)
    return real, iterations, residual


def forward_network(net, x: np.ndarray, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER):
    """Full forward pass.

    Returns (output, caches). The output is the final level's pre-coupling
    row; no activation is applied to it (classification probabilities come
    from the softmax inside the loss).
    """
    x = np.asarray(x, dtype=DTYPE)
    if x.shape != (net.input_width,):
        raise ValueError(f"input shape {x.shape} does not match input_width {net.input_width}")

    caches: list[LevelCache] = []
    prev_aug = np.concatenate(([1.0], x))
    for i, spec in enumerate(net.specs):
        meta = compute_meta(prev_aug, net.inter[i])
        cw = net.cliques[i]
        if cw is not None:
            try:
                cache = solve_clique(meta, cw, spec.activation, tol=tol, max_iter=max_iter)
            except SolverError as exc:
                raise SolverError(f"level {i}: {exc}", residual=exc.residual, level=i) from exc
        else:
            cache = LevelCache(meta=meta, real=meta.copy(),
                               activated_real=activate(meta, spec.activation),
                               solver_iterations=0, residual=0.0)
        caches.append(cache)
        prev_aug = np.concatenate(([1.0], cache.activated_real))
    return caches[-1].meta, caches
