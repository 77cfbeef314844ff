"""Dense tensor algebra: index bijections, slicing, flattening, outer and mixed products.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. Multi-indices are 1-based at this module's boundary, matching the
file formats; conversion to 0-based happens here and nowhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Sequence

import numpy as np

from .errors import ShapeError, SingularBasisError, TensorIndexError

PIVOT_RTOL = 1e-12


def _as_shape(shape: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in shape)
    if any(d < 1 for d in dims):
        raise ShapeError(f"shape dims must be >= 1, got {dims}")
    return dims


def cardinality(shape: Sequence[int]) -> int:
    """Number of entries of a tensor of ``shape`` (1 for the empty shape)."""
    return prod(_as_shape(shape))


def canonical_index(shape: Sequence[int], s: Sequence[int]) -> int:
    """Row-major linear index (1-based) of the 1-based multi-index ``s``."""
    dims = _as_shape(shape)
    coords = tuple(int(c) for c in s)
    if len(coords) != len(dims):
        raise TensorIndexError(f"multi-index {coords} has wrong length for shape {dims}")
    k = 0
    for c, d in zip(coords, dims):
        if not 1 <= c <= d:
            raise TensorIndexError(f"coordinate {c} out of range 1..{d} in {coords}")
        k = k * d + (c - 1)
    return k + 1


def canonical_multi_index(shape: Sequence[int], k: int) -> tuple[int, ...]:
    """Inverse of :func:`canonical_index`."""
    dims = _as_shape(shape)
    k = int(k)
    if not 1 <= k <= prod(dims):
        raise TensorIndexError(f"linear index {k} out of range 1..{prod(dims)}")
    r = k - 1
    coords = []
    for d in reversed(dims):
        r, c = divmod(r, d)
        coords.append(c + 1)
    return tuple(reversed(coords))


@dataclass(frozen=True)
class IndexBijection:
    """A bijection between the index set of ``shape`` and ``1..K``.

    ``table[j]`` is the 1-based linear index assigned to the multi-index whose
    canonical linear index is ``j + 1``. ``table=None`` means the canonical
    bijection.
    """

    shape: tuple[int, ...]
    table: tuple[int, ...] | None = None
    _inverse: tuple[int, ...] | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "shape", _as_shape(self.shape))
        if self.table is None:
            return
        table = tuple(int(t) for t in self.table)
        n = prod(self.shape)
        if sorted(table) != list(range(1, n + 1)):
            raise ShapeError(f"bijection table is not a permutation of 1..{n}")
        inverse = [0] * n
        for j, t in enumerate(table):
            inverse[t - 1] = j + 1
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "_inverse", tuple(inverse))

    @property
    def size(self) -> int:
        return prod(self.shape)

    @property
    def is_canonical(self) -> bool:
        return self.table is None or self.table == tuple(range(1, self.size + 1))

    def forward(self, s: Sequence[int]) -> int:
        j = canonical_index(self.shape, s)
        return j if self.table is None else self.table[j - 1]

    def inverse(self, k: int) -> tuple[int, ...]:
        if not 1 <= k <= self.size:
            raise TensorIndexError(f"linear index {k} out of range 1..{self.size}")
        j = k if self._inverse is None else self._inverse[k - 1]
        return canonical_multi_index(self.shape, j)

    def order(self) -> np.ndarray:
        """0-based canonical positions listed in target order: ``order()[k-1] = ω_S(ω⁻¹k) - 1``."""
        if self._inverse is None:
            return np.arange(self.size)
        return np.asarray(self._inverse, dtype=np.intp) - 1


def slice_tensor(a: np.ndarray, s: Sequence[int]) -> np.ndarray:
    """Return the slice ``a_s`` for a 1-based prefix multi-index ``s``."""
    a = np.asarray(a, dtype=np.float64)
    s = tuple(int(c) for c in s)
    if len(s) > a.ndim:
        raise ShapeError(f"prefix of length {len(s)} exceeds tensor order {a.ndim}")
    for c, d in zip(s, a.shape):
        if not 1 <= c <= d:
            raise TensorIndexError(f"coordinate {c} out of range 1..{d}")
    return a[tuple(c - 1 for c in s)]


def flatten(a: np.ndarray, omega: IndexBijection) -> np.ndarray:
    """Merge the leading axes governed by ``omega`` into one axis of length K."""
    a = np.asarray(a, dtype=np.float64)
    n = len(omega.shape)
    if a.shape[:n] != omega.shape:
        raise ShapeError(f"bijection shape {omega.shape} does not match prefix of {a.shape}")
    flat = a.reshape((omega.size,) + a.shape[n:])
    if omega.is_canonical:
        return flat.copy()
    return flat[omega.order()]


def unflatten(a: np.ndarray, omega: IndexBijection) -> np.ndarray:
    """Inverse of :func:`flatten`."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 1 or a.shape[0] != omega.size:
        raise ShapeError(f"leading dim of {a.shape} does not match bijection size {omega.size}")
    if omega.is_canonical:
        out = a.copy()
    else:
        out = np.empty_like(a)
        out[omega.order()] = a
    return out.reshape(omega.shape + a.shape[1:])


def outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Tensor product of shape ``a.shape + b.shape``."""
    return np.multiply.outer(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def mixed_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``Σ_k a_k ⊗ b_k`` for ``a`` of shape ⟨K⟩S and ``b`` of shape ⟨K⟩T."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError("mixed product operands need a leading axis")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"leading dims differ: {a.shape[0]} vs {b.shape[0]}")
    k = a.shape[0]
    out = a.reshape(k, -1).T @ b.reshape(k, -1)
    return out.reshape(a.shape[1:] + b.shape[1:])


def gauss_solve(m: np.ndarray, rhs: np.ndarray, pivot_rtol: float = PIVOT_RTOL) -> np.ndarray:
    """Solve ``m @ X = rhs`` by Gaussian elimination with partial pivoting.

    A pivot whose magnitude is below ``pivot_rtol`` times the largest absolute
    entry of its (original) row is treated as singular.
    """
    a = np.array(m, dtype=np.float64)
    b = np.array(rhs, dtype=np.float64)
    vector_rhs = b.ndim == 1
    if vector_rhs:
        b = b[:, None]
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n:
        raise ShapeError(f"cannot solve system with matrix {a.shape} and rhs {b.shape}")
    row_max = np.abs(a).max(axis=1) if n else np.zeros(0)
    if n and np.any(row_max == 0.0):
        raise SingularBasisError("matrix has a zero row")
    for col in range(n):
        p = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[p, col]) <= pivot_rtol * row_max[p]:
            raise SingularBasisError(f"pivot {a[p, col]:.3e} in column {col + 1} below tolerance")
        if p != col:
            a[[col, p]] = a[[p, col]]
            b[[col, p]] = b[[p, col]]
            row_max[[col, p]] = row_max[[p, col]]
        lam = a[col + 1 :, col] / a[col, col]
        a[col + 1 :, col:] -= np.outer(lam, a[col, col:])
        b[col + 1 :] -= np.outer(lam, b[col])
    x = np.empty_like(b)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x[:, 0] if vector_rhs else x


def solve_basis_coefficients(basis: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Find the unique Θ with ``mixed_product(basis, Θ) == phi``.

    ``basis`` has shape ⟨K⟩S with K = |S̄| and its slices must span the space
    of tensors of shape S. ``phi`` has shape ST; the result has shape ⟨K⟩T.
    """
    basis = np.asarray(basis, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    k = basis.shape[0]
    s_shape = basis.shape[1:]
    if k != prod(s_shape):
        raise ShapeError(f"basis of {k} tensors cannot span shape {s_shape} (needs {prod(s_shape)})")
    if phi.shape[: len(s_shape)] != s_shape:
        raise ShapeError(f"phi shape {phi.shape} does not start with {s_shape}")
    t_shape = phi.shape[len(s_shape) :]
    a_flat = basis.reshape(k, k)
    phi_flat = phi.reshape(k, -1)
    theta = gauss_solve(a_flat.T, phi_flat)
    return theta.reshape((k,) + t_shape)


def numerical_rank(m: np.ndarray, tol: float = 1e-10) -> int:
    """Count pivots above ``tol * max|m|`` during row reduction with partial pivoting."""
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"numerical_rank expects a matrix, got shape {a.shape}")
    if a.size == 0:
        return 0
    threshold = tol * np.abs(a).max()
    rows, cols = a.shape
    rank = 0
    for col in range(cols):
        if rank == rows:
            break
        p = rank + int(np.argmax(np.abs(a[rank:, col])))
        if abs(a[p, col]) <= threshold:
            continue
        a[[rank, p]] = a[[p, rank]]
        lam = a[rank + 1 :, col] / a[rank, col]
        a[rank + 1 :, col:] -= np.outer(lam, a[rank, col:])
        rank += 1
    return rank
