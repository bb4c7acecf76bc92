"""Hermite polynomials, diagram-formula Gaussian moments and cumulants.

Moments of products of Hermite polynomials of jointly Gaussian, unit-variance
variables are expanded over index sets: symmetric nonnegative integer matrices
with zero diagonal whose row sums equal the Hermite degrees.  Restricting the
sum to index sets whose graph is connected yields joint cumulants.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial, prod
from typing import Sequence

import numpy as np

MAX_TOTAL_DEGREE = 64


def hermite_eval(q: int, x):
    """Probabilists' Hermite polynomial H_q evaluated by the three-term recursion."""
    if q < 0:
        raise ValueError("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if q == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = x.copy()
    for k in range(1, q):
        h_prev, h = h, x * h - k * h_prev
    return h if h.ndim else float(h)


@dataclass(frozen=True)
class IndexSet:
    """One diagram class: symmetric k with zero diagonal and row sums q."""

    n: int
    k: tuple[tuple[int, ...], ...]
    q: tuple[int, ...]

    def __post_init__(self):
        k = np.asarray(self.k)
        if k.shape != (self.n, self.n) or len(self.q) != self.n:
            raise ValueError("shape mismatch")
        if np.any(np.diag(k) != 0):
            raise ValueError("diagonal must vanish")
        if np.any(k != k.T) or np.any(k < 0):
            raise ValueError("k must be symmetric and nonnegative")
        if tuple(int(v) for v in k.sum(axis=1)) != tuple(self.q):
            raise ValueError("row sums must equal q")

    def matrix(self) -> np.ndarray:
        return np.asarray(self.k, dtype=int)

    def edges(self) -> set[tuple[int, int]]:
        return {(i, j) for i in range(self.n) for j in range(i + 1, self.n) if self.k[i][j] > 0}


@dataclass(frozen=True)
class DiagramGraph:
    nodes: int
    edges: frozenset

    @classmethod
    def from_index_set(cls, kappa: IndexSet) -> "DiagramGraph":
        return cls(kappa.n, frozenset(kappa.edges()))


def enumerate_index_sets(q: Sequence[int]) -> list[IndexSet]:
    """All index sets with row sums q, in lexicographic order of the upper triangle.

    Depth-first search over the pairs (0,1), (0,2), ..., (n-2,n-1).  Once the
    last pair touching row i is placed, row i must be saturated.
    """
    q = tuple(int(v) for v in q)
    if any(v < 0 for v in q):
        raise ValueError("degrees must be nonnegative")
    if sum(q) > MAX_TOTAL_DEGREE:
        raise ValueError(f"total degree {sum(q)} exceeds guard {MAX_TOTAL_DEGREE}")
    n = len(q)
    if sum(q) % 2:
        return []
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    # last pair index at which each row can still receive mass
    last = [-1] * n
    for idx, (i, j) in enumerate(pairs):
        last[i] = max(last[i], idx)
        last[j] = max(last[j], idx)
    remaining = list(q)
    k = [[0] * n for _ in range(n)]
    out: list[IndexSet] = []

    def rows_closed(idx: int) -> bool:
        return all(remaining[r] == 0 for r in range(n) if last[r] <= idx)

    if not pairs:
        return [IndexSet(n, tuple(tuple(r) for r in k), q)] if all(v == 0 for v in q) else []

    def dfs(idx: int) -> None:
        if idx == len(pairs):
            out.append(IndexSet(n, tuple(tuple(r) for r in k), q))
            return
        i, j = pairs[idx]
        for v in range(min(remaining[i], remaining[j]) + 1):
            k[i][j] = k[j][i] = v
            remaining[i] -= v
            remaining[j] -= v
            if rows_closed(idx):
                dfs(idx + 1)
            remaining[i] += v
            remaining[j] += v
        k[i][j] = k[j][i] = 0

    dfs(0)
    return out


def connected_components(kappa: IndexSet) -> int:
    """Number of connected components of the graph with an edge wherever k_ij > 0."""
    parent = list(range(kappa.n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in kappa.edges():
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    return len({find(a) for a in range(kappa.n)})


def _check_dims(q: Sequence[int], C) -> np.ndarray:
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape != (len(q), len(q)):
        raise ValueError(f"covariance shape {C.shape} does not match {len(q)} degrees")
    return C


def _diagram_weight(kappa: IndexSet, C: np.ndarray) -> float:
    w = 1.0
    for i in range(kappa.n):
        for j in range(i + 1, kappa.n):
            kij = kappa.k[i][j]
            if kij:
                w *= C[i, j] ** kij / factorial(kij)
    return w


def gaussian_product_moment(q: Sequence[int], C) -> float:
    """E[prod_r H_{q_r}(Z_r)] for unit-variance Gaussians with correlations C (diagonal unused)."""
    C = _check_dims(q, C)
    total = sum(_diagram_weight(kappa, C) for kappa in enumerate_index_sets(q))
    return prod(factorial(v) for v in q) * total


def joint_cumulant(q: Sequence[int], C) -> float:
    """Joint cumulant of (H_{q_1}(Z_1), ..., H_{q_n}(Z_n)): the connected part of the diagram sum."""
    C = _check_dims(q, C)
    if len(q) == 1:
        return 1.0 if q[0] == 0 else 0.0
    total = sum(
        _diagram_weight(kappa, C)
        for kappa in enumerate_index_sets(q)
        if connected_components(kappa) == 1
    )
    return prod(factorial(v) for v in q) * total


def sample_cumulants(samples, order: int) -> float:
    """Biased (moment) estimator of the cumulant of the given order, 2 <= order <= 4."""
    if order not in (2, 3, 4):
        raise ValueError("order must be 2, 3 or 4")
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    c = x - x.mean()
    m2 = np.mean(c**2)
    if order == 2:
        return float(m2)
    if order == 3:
        return float(np.mean(c**3))
    return float(np.mean(c**4) - 3.0 * m2**2)
