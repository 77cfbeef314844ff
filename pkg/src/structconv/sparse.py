"""Sparse basis matrices and basis stacks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError


class SparseMatrix:
    """An M×N matrix stored as row-major sorted (row, col, value) triples.

    Indices are 0-based internally. Duplicate positions are rejected rather
    than summed. Explicit zeros are kept if given; :meth:`from_dense` drops them.
    """

    __slots__ = ("shape", "rows", "cols", "vals", "indptr")

    def __init__(self, shape, rows, cols, vals):
        m, n = (int(d) for d in shape)
        if m < 1 or n < 1:
            raise ShapeError(f"sparse matrix dims must be >= 1, got {(m, n)}")
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if not (len(rows) == len(cols) == len(vals)):
            raise ShapeError("rows, cols and vals must have equal length")
        if len(rows) and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
            raise ShapeError(f"entry index out of range for shape {(m, n)}")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows) > 1:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if dup.any():
                i = int(np.argmax(dup))
                raise ShapeError(f"duplicate entry at ({rows[i] + 1}, {cols[i] + 1})")
        self.shape = (m, n)
        self.rows, self.cols, self.vals = rows, cols, vals
        self.indptr = np.searchsorted(rows, np.arange(m + 1)).astype(np.int64)
        for arr in (self.rows, self.cols, self.vals, self.indptr):
            arr.flags.writeable = False

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise ShapeError(f"expected a matrix, got shape {a.shape}")
        rows, cols = np.nonzero(a)
        return cls(a.shape, rows, cols, a[rows, cols])

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n)
        return cls((n, n), idx, idx, np.ones(n))

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        coo = sp.coo_matrix(m)
        coo.sum_duplicates()
        return cls(coo.shape, coo.row, coo.col, coo.data)

    @property
    def nnz(self) -> int:
        return len(self.vals)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.vals
        return out

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, self.cols, self.indptr), shape=self.shape)

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix(self.shape[::-1], self.cols, self.rows, self.vals)

    def __matmul__(self, other: "SparseMatrix") -> "SparseMatrix":
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        if self.shape[1] != other.shape[0]:
            raise ShapeError(f"cannot multiply {self.shape} by {other.shape}")
        prod_ = (self.to_scipy() @ other.to_scipy()).tocoo()
        prod_.eliminate_zeros()
        return SparseMatrix.from_scipy(prod_)

    def rmatmul_dense(self, x: np.ndarray) -> np.ndarray:
        """Return ``selfᵀ @ x`` for a dense ``x`` of shape ⟨..., M, P⟩ (batch axes allowed).

        Nonzeros are visited in row-major order; for every nonzero (m, n, v) the
        row ``v * x[..., m, :]`` is accumulated into output row n.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-2] != self.shape[0]:
            raise ShapeError(f"basis rows M={self.shape[0]} do not match input rows {x.shape[-2]}")
        out = np.zeros(x.shape[:-2] + (self.shape[1], x.shape[-1]))
        if self.nnz:
            contrib = x[..., self.rows, :] * self.vals[:, None]
            lead = (slice(None),) * (x.ndim - 2)
            np.add.at(out, lead + (self.cols,), contrib)
        return out

    def equals(self, other: "SparseMatrix") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.vals, other.vals)
        )

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


@dataclass(frozen=True)
class BasisStack:
    """K sparse matrices of a common shape ⟨M, N⟩ (the structure of a convolution)."""

    matrices: tuple[SparseMatrix, ...]

    def __init__(self, matrices: Iterable[SparseMatrix]):
        mats = tuple(matrices)
        if not mats:
            raise ShapeError("a basis stack needs at least one matrix")
        shape = mats[0].shape
        for k, a in enumerate(mats, start=1):
            if a.shape != shape:
                raise ShapeError(f"basis matrix {k} has shape {a.shape}, expected {shape}")
        object.__setattr__(self, "matrices", mats)

    @classmethod
    def from_dense(cls, a) -> "BasisStack":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 3:
            raise ShapeError(f"expected a ⟨K,M,N⟩ tensor, got shape {a.shape}")
        return cls(SparseMatrix.from_dense(m) for m in a)

    @property
    def K(self) -> int:
        return len(self.matrices)

    @property
    def M(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def N(self) -> int:
        return self.matrices[0].shape[1]

    @property
    def nnz(self) -> int:
        return sum(a.nnz for a in self.matrices)

    def __len__(self):
        return self.K

    def __getitem__(self, k):
        return self.matrices[k]

    def __iter__(self):
        return iter(self.matrices)

    def to_dense(self) -> np.ndarray:
        return np.stack([a.to_dense() for a in self.matrices])

    def concat(self, other: "BasisStack") -> "BasisStack":
        return BasisStack(self.matrices + other.matrices)

    def equals(self, other: "BasisStack") -> bool:
        return self.K == other.K and all(a.equals(b) for a, b in zip(self, other))


def as_basis(a) -> BasisStack:
    if isinstance(a, BasisStack):
        return a
    if isinstance(a, Sequence) and a and all(isinstance(m, SparseMatrix) for m in a):
        return BasisStack(a)
    return BasisStack.from_dense(a)
