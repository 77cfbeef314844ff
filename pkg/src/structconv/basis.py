"""Basis stacks for grid and graph convolutions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import reduce
from math import prod
from typing import Sequence

import numpy as np

from .errors import ArgumentError, ShapeError
from .sparse import BasisStack, SparseMatrix
from .tensor import IndexBijection, canonical_multi_index

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    """A grid ``S̄`` together with the bijection used to number its nodes."""

    shape: tuple[int, ...]
    omega: IndexBijection | None = None

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        if not shape or any(d < 1 for d in shape):
            raise ShapeError(f"grid dims must be >= 1, got {shape}")
        object.__setattr__(self, "shape", shape)
        if self.omega is None:
            object.__setattr__(self, "omega", IndexBijection(shape))
        elif self.omega.shape != shape:
            raise ShapeError(f"bijection shape {self.omega.shape} does not match grid {shape}")

    @property
    def size(self) -> int:
        return prod(self.shape)

    def coords(self) -> np.ndarray:
        """0-based grid coordinates of node ``n`` (0-based node number) in row n."""
        canon = np.array(list(np.ndindex(*self.shape)), dtype=np.int64).reshape(self.size, len(self.shape))
        return canon[self.omega.order()]

    def node_lookup(self) -> np.ndarray:
        """Array of grid shape mapping 0-based coordinates to 0-based node numbers."""
        lookup = np.empty(self.size, dtype=np.int64)
        lookup[self.omega.order()] = np.arange(self.size)
        return lookup.reshape(self.shape)


@dataclass(frozen=True)
class KernelSpec:
    """Regular right cuboid of shifts: sizes, strides and offsets per grid dimension."""

    sizes: tuple[int, ...]
    strides: tuple[int, ...] = ()
    offsets: tuple[int, ...] = ()

    def __post_init__(self):
        sizes = tuple(int(k) for k in self.sizes)
        if not sizes or any(k < 1 for k in sizes):
            raise ArgumentError(f"kernel sizes must be >= 1, got {sizes}")
        strides = tuple(int(d) for d in self.strides) or (1,) * len(sizes)
        offsets = tuple(int(e) for e in self.offsets) or (0,) * len(sizes)
        if len(strides) != len(sizes) or len(offsets) != len(sizes):
            raise ArgumentError("sizes, strides and offsets must have the same length")
        if any(d < 1 for d in strides):
            raise ArgumentError(f"strides must be >= 1, got {strides}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "strides", strides)
        object.__setattr__(self, "offsets", offsets)

    @property
    def K(self) -> int:
        return prod(self.sizes)


def shift_matrix(grid: GridSpec, d: Sequence[int]) -> SparseMatrix:
    """Adjacency of "node n is node m shifted by d": entry (m, n) is 1 iff coords(n) - coords(m) = d."""
    d = np.asarray(d, dtype=np.int64)
    if d.shape != (len(grid.shape),):
        raise ShapeError(f"shift {tuple(d)} has wrong length for grid {grid.shape}")
    coords = grid.coords()
    target = coords + d
    inside = np.all((target >= 0) & (target < np.array(grid.shape)), axis=1)
    rows = np.nonzero(inside)[0]
    cols = grid.node_lookup()[tuple(target[inside].T)]
    return SparseMatrix((grid.size, grid.size), rows, cols, np.ones(len(rows)))


def cuboid_offsets(spec: KernelSpec) -> list[tuple[int, ...]]:
    """Shift vectors ``Δ_k,i = ε_i + (ω⁻¹k)_i δ_i`` with 1-based k, in canonical order."""
    out = []
    for k in range(1, spec.K + 1):
        idx = canonical_multi_index(spec.sizes, k)
        out.append(tuple(e + i * s for e, i, s in zip(spec.offsets, idx, spec.strides)))
    return out


def grid_basis(grid: GridSpec, spec: KernelSpec, subsample: Sequence[int] | None = None) -> BasisStack:
    """Shift-matrix basis of a CNN-style grid convolution with zero padding.

    With ``subsample`` (one factor per dimension, each dividing the grid dim)
    only output nodes whose 0-based coordinates are multiples of the factor are
    kept; they are renumbered with the canonical bijection of the coarse grid.
    """
    if len(spec.sizes) != len(grid.shape):
        raise ShapeError(f"kernel of order {len(spec.sizes)} on grid of order {len(grid.shape)}")
    shifts = cuboid_offsets(spec)
    if subsample is None:
        return BasisStack(shift_matrix(grid, d) for d in shifts)
    factors = tuple(int(f) for f in subsample)
    if len(factors) != len(grid.shape) or any(f < 1 or s % f for f, s in zip(factors, grid.shape)):
        raise ArgumentError(f"subsampling factors {factors} must divide grid dims {grid.shape}")
    coarse = GridSpec(tuple(s // f for s, f in zip(grid.shape, factors)))
    coarse_lookup = coarse.node_lookup()
    coords = grid.coords()
    mats = []
    for d in shifts:
        target = coords + np.asarray(d)
        ok = np.all((target >= 0) & (target < np.array(grid.shape)), axis=1)
        ok &= np.all(target % np.array(factors) == 0, axis=1)
        rows = np.nonzero(ok)[0]
        cols = coarse_lookup[tuple((target[ok] // np.array(factors)).T)]
        mats.append(SparseMatrix((grid.size, coarse.size), rows, cols, np.ones(len(rows))))
    return BasisStack(mats)


def identity_basis(n: int) -> BasisStack:
    """The K=1 basis of 1×1 convolutions."""
    if n < 1:
        raise ArgumentError(f"N must be >= 1, got {n}")
    return BasisStack([SparseMatrix.identity(n)])


@dataclass(frozen=True)
class Graph:
    """Weighted directed graph over nodes 1..N with optional relation labels."""

    n: int
    edges: tuple[tuple[int, int, float, str | None], ...] = field(default=())

    def __post_init__(self):
        if self.n < 1:
            raise ArgumentError(f"graph needs at least one node, got {self.n}")
        seen = set()
        edges = []
        for e in self.edges:
            u, v, w = int(e[0]), int(e[1]), float(e[2])
            label = e[3] if len(e) > 3 else None
            if not (1 <= u <= self.n and 1 <= v <= self.n):
                raise ArgumentError(f"edge ({u}, {v}) outside nodes 1..{self.n}")
            if (u, v, label) in seen:
                raise ArgumentError(f"duplicate edge ({u}, {v}, {label})")
            seen.add((u, v, label))
            edges.append((u, v, w, label))
        object.__setattr__(self, "edges", tuple(edges))

    @property
    def labels(self) -> set[str]:
        return {e[3] for e in self.edges if e[3] is not None}

    def adjacency(self, label: str | None = None) -> np.ndarray:
        """Dense adjacency ``a[u-1, v-1] = w``.

        Without ``label`` every edge counts (parallel edges of different
        relations are summed); with it, only that relation's edges.
        """
        a = np.zeros((self.n, self.n))
        for u, v, w, lab in self.edges:
            if label is None or lab == label:
                a[u - 1, v - 1] += w
        return a

    def symmetric_adjacency(self) -> np.ndarray:
        a = self.adjacency()
        return np.maximum(a, a.T)


def _inv_sqrt_degree(a: np.ndarray) -> np.ndarray:
    deg = a.sum(axis=1)
    out = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=out, where=deg > 0)
    return out


def normalized_laplacian(g: Graph) -> np.ndarray:
    """Symmetric normalised Laplacian ``I - D^{-1/2} A D^{-1/2}`` of the symmetrised graph."""
    a = g.symmetric_adjacency()
    r = _inv_sqrt_degree(a)
    return np.eye(g.n) - a * np.outer(r, r)


def gcn_basis(g: Graph, renormalized: bool = True) -> BasisStack:
    """K=1 GCN basis.

    By default the self-loop renormalised operator ``D̃^{-1/2}(A+I)D̃^{-1/2}``;
    with ``renormalized=False`` the normalised Laplacian instead.
    """
    if not renormalized:
        return BasisStack([SparseMatrix.from_dense(normalized_laplacian(g))])
    a = g.symmetric_adjacency() + np.eye(g.n)
    r = _inv_sqrt_degree(a)
    return BasisStack([SparseMatrix.from_dense(a * np.outer(r, r))])


def largest_eigenvalue(lap: np.ndarray, max_iter: int = 100, rtol: float = 1e-9) -> float:
    """Power-iteration estimate of the top eigenvalue of a normalised Laplacian.

    Falls back to 2.0, the upper bound of that spectrum, when iteration fails
    to converge or yields a non-positive value.
    """
    n = lap.shape[0]
    v = np.cos(np.arange(1, n + 1) * 1.3) + 1.1  # fixed start, not an eigenvector of typical graphs
    v /= np.linalg.norm(v)
    lam = None
    for _ in range(max_iter):
        w = lap @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        new = float(v @ w)
        v = w / norm
        if lam is not None and abs(new - lam) <= rtol * abs(new):
            if new > 0:
                return new
            break
        lam = new
    log.debug("power iteration did not converge; using lambda_max=2")
    return 2.0


def chebyshev_basis(g: Graph, K: int, lambda_max: float | None = None) -> BasisStack:
    """``A_k = T_{k-1}(L̃)`` with ``L̃ = 2L/λ_max - I`` for k = 1..K."""
    if K < 1:
        raise ArgumentError(f"Chebyshev order K must be >= 1, got {K}")
    lap = normalized_laplacian(g)
    lam = largest_eigenvalue(lap) if lambda_max is None else float(lambda_max)
    scaled = 2.0 * lap / lam - np.eye(g.n)
    terms = [np.eye(g.n)]
    if K > 1:
        terms.append(scaled)
    while len(terms) < K:
        terms.append(2.0 * scaled @ terms[-1] - terms[-2])
    return BasisStack(SparseMatrix.from_dense(t) for t in terms)


def random_walk_basis(g: Graph, K: int) -> BasisStack:
    """Adjacency powers ``A_k = adj^k`` for k = 1..K (unnormalised)."""
    if K < 1:
        raise ArgumentError(f"walk length K must be >= 1, got {K}")
    adj = g.adjacency()
    terms = [adj]
    while len(terms) < K:
        terms.append(terms[-1] @ adj)
    return BasisStack(SparseMatrix.from_dense(t) for t in terms)


def relation_sort_basis(g: Graph, sorts: Sequence[Sequence[str]]) -> BasisStack:
    """One matrix per relation sort ``(r_1 … r_L)``: the product of the relations' adjacencies."""
    if not sorts:
        raise ArgumentError("at least one sort is required")
    known = g.labels
    mats = []
    for sort in sorts:
        if not sort:
            raise ArgumentError("empty relation sort")
        for r in sort:
            if r not in known:
                raise ArgumentError(f"unknown relation label {r!r}")
        mats.append(SparseMatrix.from_dense(reduce(np.matmul, [g.adjacency(r) for r in sort])))
    return BasisStack(mats)


def shift_stack(grid: GridSpec, shifts: Sequence[Sequence[int]]) -> BasisStack:
    return BasisStack(shift_matrix(grid, d) for d in shifts)

