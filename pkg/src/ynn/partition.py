"""Neural-module construction: sparsify the learned clique, cut it into
bounded-size modules with a global minimum cut, and solve block-by-block.

The cut algorithm is Stoer-Wagner (hand-rolled rather than taken from a
graph library so tie-breaking is fully deterministic: among minimum cuts the
lexicographically smallest side containing node 0 wins). A brute-force
bipartition oracle guards it in the tests.
"""

from __future__ import annotations

import numpy as np

from .forward import DEFAULT_MAX_ITER, DEFAULT_TOL, LevelCache, solve_clique
from .numerics import DTYPE, ActivationKind, activate


def sparsify_clique(cw: np.ndarray, tau: float) -> np.ndarray:
    """Zero off-diagonal couplings with |w| < tau; diagonal and bias kept."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    out = cw.copy()
    block = out[1:, :]
    m = block.shape[1]
    idx = np.arange(m)
    diag = block[idx, idx].copy()
    block[np.abs(block) < tau] = 0.0
    block[idx, idx] = diag
    return out


def symmetrize(cw: np.ndarray) -> np.ndarray:
    """Undirected edge weights s_kj = |w_kj| + |w_jk|, zero diagonal."""
    block = np.abs(cw[1:, :])
    s = block + block.T
    np.fill_diagonal(s, 0.0)
    return s


def _normalize_side(side, n: int) -> tuple[int, ...]:
    side = sorted(side)
    if 0 not in side:
        side = sorted(set(range(n)) - set(side))
    return tuple(side)


def min_cut(graph: np.ndarray) -> tuple[tuple[int, ...], float]:
    """Global minimum-weight cut of a symmetric non-negative weight matrix.

    Returns (side, cut_weight); the side is reported as the sorted group
    containing node 0.
    """
    graph = np.asarray(graph, dtype=DTYPE)
    n = graph.shape[0]
    if graph.shape != (n, n) or n < 2:
        raise ValueError(f"min_cut needs a square matrix with >= 2 nodes, got {graph.shape}")

    w = graph.copy()
    groups: dict[int, list[int]] = {v: [v] for v in range(n)}
    active = list(range(n))
    best_weight = np.inf
    best_side: tuple[int, ...] | None = None

    while len(active) > 1:
        # minimum cut phase: grow from the first active vertex by maximum
        # attachment; the last-added vertex defines the cut of the phase
        start = active[0]
        in_set = [start]
        attach = {v: w[start, v] for v in active if v != start}
        while attach:
            sel = max(attach, key=lambda v: (attach[v], -v))
            cut_of_phase = attach.pop(sel)
            in_set.append(sel)
            for v in attach:
                attach[v] += w[sel, v]
        t = in_set[-1]
        s = in_set[-2]
        side = _normalize_side(groups[t], n)
        if (cut_of_phase < best_weight - 1e-15
                or (abs(cut_of_phase - best_weight) <= 1e-15
                    and (best_side is None or side < best_side))):
            best_weight = float(cut_of_phase)
            best_side = side
        # contract t into s
        w[s, :] += w[t, :]
        w[:, s] += w[:, t]
        w[s, s] = 0.0
        groups[s].extend(groups[t])
        del groups[t]
        active.remove(t)
    return best_side, best_weight


def connected_components(graph: np.ndarray) -> list[list[int]]:
    n = graph.shape[0]
    seen = [False] * n
    comps = []
    for root in range(n):
        if seen[root]:
            continue
        stack, comp = [root], []
        seen[root] = True
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in np.flatnonzero(graph[v] > 0):
                if not seen[u]:
                    seen[u] = True
                    stack.append(int(u))
        comps.append(sorted(comp))
    return comps


def build_modules(cw: np.ndarray, tau: float, ns_max: int) -> list[list[int]]:
    """Sparsify, split into components, then recursively cut oversized ones.

    Each returned module is a sorted list of 0-based node indices; modules
    are ordered by their smallest member and every module has at most ns_max
    nodes. Each cut strictly shrinks a side, so the recursion terminates.
    """
    if ns_max < 1:
        raise ValueError(f"ns_max must be >= 1, got {ns_max}")
    graph = symmetrize(sparsify_clique(cw, tau))

    modules: list[list[int]] = []

    def split(nodes: list[int]) -> None:
        if len(nodes) <= ns_max:
            modules.append(sorted(nodes))
            return
        sub = graph[np.ix_(nodes, nodes)]
        if not np.any(sub > 0):
            for v in nodes:
                modules.append([v])
            return
        for comp in connected_components(sub):
            comp_nodes = [nodes[i] for i in comp]
            if len(comp_nodes) <= ns_max:
                modules.append(sorted(comp_nodes))
                continue
            sub_comp = graph[np.ix_(comp_nodes, comp_nodes)]
            side, _ = min_cut(sub_comp)
            side_set = set(side)
            a = [comp_nodes[i] for i in range(len(comp_nodes)) if i in side_set]
            b = [comp_nodes[i] for i in range(len(comp_nodes)) if i not in side_set]
            # larger side first; ties by lowest contained index
            first, second = sorted((a, b), key=lambda grp: (-len(grp), grp[0]))
            split(first)
            split(second)

    for comp in connected_components(graph):
        split(comp)
    modules.sort(key=lambda mod: mod[0])
    return modules


def validate_partition(modules: list[list[int]], m: int, ns_max: int | None = None) -> None:
    seen: set[int] = set()
    for mod in modules:
        if not mod:
            raise ValueError("empty module")
        if ns_max is not None and len(mod) > ns_max:
            raise ValueError(f"module {mod} exceeds size bound {ns_max}")
        overlap = seen.intersection(mod)
        if overlap:
            raise ValueError(f"nodes {sorted(overlap)} appear in more than one module")
        seen.update(mod)
    if seen != set(range(m)):
        raise ValueError("modules do not cover all nodes")


def block_solve(meta: np.ndarray, cw: np.ndarray, modules: list[list[int]],
                kind: ActivationKind, tol: float = DEFAULT_TOL,
                max_iter: int = DEFAULT_MAX_ITER) -> LevelCache:
    """Solve each module's sub-system independently; cross-module couplings
    are dropped, which is exact whenever they are already zero."""
    meta = np.asarray(meta, dtype=DTYPE)
    m = meta.shape[0]
    validate_partition(modules, m)
    real = np.empty(m, dtype=DTYPE)
    iterations = 0
    residual = 0.0
    for module_index, mod in enumerate(modules):
        idx = np.asarray(mod, dtype=int)
        sub_cw = np.empty((len(mod) + 1, len(mod)), dtype=DTYPE)
        sub_cw[0] = cw[0][idx]
        sub_cw[1:] = cw[1:][np.ix_(idx, idx)]
        try:
            sub = solve_clique(meta[idx], sub_cw, kind, tol=tol, max_iter=max_iter)
        except Exception as exc:
            raise type(exc)(f"module {module_index} ({mod}): {exc}") from exc
        real[idx] = sub.real
        iterations = max(iterations, sub.solver_iterations)
        residual = max(residual, sub.residual)
    return LevelCache(meta=meta, real=real, activated_real=activate(real, kind),
                      solver_iterations=iterations, residual=residual)


def partition_to_text(modules: list[list[int]]) -> str:
    """One module per line, sorted indices, space-separated."""
    return "\n".join(" ".join(str(v) for v in mod) for mod in modules) + "\n"
