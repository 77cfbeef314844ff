"""Convolution over arbitrary structures: ``y = Σ_k A_kᵀ x Θ_k``.

Provides the factorised evaluation, its dense materialisation Φ, composition of
two convolutions, and the three batched contraction routes with a
multiply-add cost model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ArgumentError, ShapeError, SizeError
from .sparse import BasisStack, SparseMatrix, as_basis
from .tensor import canonical_index

DEFAULT_PHI_CAP = 10**8


class Path(str, Enum):
    """Contraction routes of the basis/input/parameter triangle."""

    GREEN = "green"  # basis·input first: bmp,kmn -> bknp
    BLUE = "blue"  # basis·parameter first: kmn,kpq -> mnpq
    RED = "red"  # input·parameter first: bmp,kpq -> bkmq

    @property
    def description(self) -> str:
        return {
            Path.GREEN: "via-basis-first",
            Path.BLUE: "via-dense-phi",
            Path.RED: "via-params-first",
        }[self]


# tie-break order when costs are equal
_PATH_PRIORITY = (Path.GREEN, Path.RED, Path.BLUE)


@dataclass(frozen=True)
class ContractionPlan:
    path: Path
    cost: int
    intermediate_shape: tuple[int, ...]
    costs: dict = field(default_factory=dict, compare=False)


class MultiplyAddCounter:
    """Accumulates the number of scalar multiply-adds performed by the kernels."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


def path_costs(B: int, M: int, N: int, P: int, Q: int, K: int, nnz: int) -> dict[Path, int]:
    """Closed-form multiply-add counts of each contraction route."""
    return {
        Path.GREEN: B * P * nnz + B * K * N * P * Q,
        Path.BLUE: nnz * P * Q + B * M * N * P * Q,
        Path.RED: B * K * M * P * Q + B * Q * nnz,
    }


def plan_contraction(B: int, M: int, N: int, P: int, Q: int, K: int, nnz: int) -> ContractionPlan:
    """Pick the cheapest route; ties resolve green, then red, then blue."""
    dims = dict(B=B, M=M, N=N, P=P, Q=Q, K=K)
    for name, v in dims.items():
        if v < 1:
            raise ArgumentError(f"{name} must be >= 1, got {v}")
    if not 0 <= nnz <= K * M * N:
        raise ArgumentError(f"nnz={nnz} outside 0..K*M*N={K * M * N}")
    costs = path_costs(B, M, N, P, Q, K, nnz)
    best = min(_PATH_PRIORITY, key=lambda p: (costs[p], _PATH_PRIORITY.index(p)))
    return _plan_for(best, B, M, N, P, Q, K, costs)


def _plan_for(path, B, M, N, P, Q, K, costs) -> ContractionPlan:
    shapes = {
        Path.GREEN: (B, K, N, P),
        Path.BLUE: (M, N, P, Q),
        Path.RED: (B, K, M, Q),
    }
    return ContractionPlan(path, costs[path], shapes[path], dict(costs))


def _check_dims(A: BasisStack, x: np.ndarray, theta: np.ndarray) -> None:
    if theta.ndim != 3:
        raise ShapeError(f"Θ must have shape ⟨K,P,Q⟩, got {theta.shape}")
    if theta.shape[0] != A.K:
        raise ShapeError(f"basis size K={A.K} does not match Θ size K={theta.shape[0]}")
    if x.shape[-2] != A.M:
        raise ShapeError(f"input entries M={x.shape[-2]} do not match basis M={A.M}")
    if x.shape[-1] != theta.shape[1]:
        raise ShapeError(f"input channels P={x.shape[-1]} do not match Θ P={theta.shape[1]}")


def _green(A, X, theta, counter):
    # T[b,k] = A_kᵀ X_b, then Y_b = Σ_k T[b,k] Θ_k
    B, _, P = X.shape
    Q = theta.shape[2]
    Y = np.zeros((B, A.N, Q))
    for k, a in enumerate(A):
        t = a.rmatmul_dense(X)
        counter.add(B * P * a.nnz)
        Y += t @ theta[k]
        counter.add(B * A.N * P * Q)
    return Y


def _blue(A, X, theta, counter):
    phi = _phi(A, theta, counter)
    B, M, P = X.shape
    counter.add(B * M * A.N * P * theta.shape[2])
    return np.einsum("bmp,mnpq->bnq", X, phi)


def _red(A, X, theta, counter):
    # R[b,k] = X_b Θ_k, then Y_b = Σ_k A_kᵀ R[b,k]
    B, M, P = X.shape
    Q = theta.shape[2]
    Y = np.zeros((B, A.N, Q))
    for k, a in enumerate(A):
        r = X @ theta[k]
        counter.add(B * M * P * Q)
        Y += a.rmatmul_dense(r)
        counter.add(B * Q * a.nnz)
    return Y


_KERNELS = {Path.GREEN: _green, Path.BLUE: _blue, Path.RED: _red}


def convolve_batched(A, X, theta, plan="auto", counter: MultiplyAddCounter | None = None) -> np.ndarray:
    """Evaluate ``Y_b = Σ_k A_kᵀ X_b Θ_k`` for every batch slice.

    ``plan`` is a :class:`ContractionPlan`, a path name (``"green"``, ``"blue"``,
    ``"red"``) or ``"auto"``.
    """
    A = as_basis(A)
    X = np.asarray(X, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if X.ndim != 3:
        raise ShapeError(f"batched input must have shape ⟨B,M,P⟩, got {X.shape}")
    _check_dims(A, X, theta)
    if isinstance(plan, ContractionPlan):
        path = plan.path
    elif plan == "auto":
        B, M, P = X.shape
        path = plan_contraction(B, M, A.N, P, theta.shape[2], A.K, A.nnz).path
    else:
        path = Path(plan)
    return _KERNELS[path](A, X, theta, counter or MultiplyAddCounter())


def convolve(A, x, theta) -> np.ndarray:
    """Evaluate ``y = Σ_k A_kᵀ x Θ_k`` with sparse basis matrices.

    Terms are accumulated in increasing k.
    """
    A = as_basis(A)
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"input must have shape ⟨M,P⟩, got {x.shape}")
    _check_dims(A, x, theta)
    return _green(A, x[None], theta, MultiplyAddCounter())[0]


def _phi(A: BasisStack, theta: np.ndarray, counter: MultiplyAddCounter, cap: int = DEFAULT_PHI_CAP):
    M, N = A.M, A.N
    _, P, Q = theta.shape
    if M * N * P * Q > cap:
        raise SizeError(f"Φ would have {M * N * P * Q} entries, above the cap of {cap}")
    phi = np.zeros((M, N, P, Q))
    for k, a in enumerate(A):
        np.add.at(phi, (a.rows, a.cols), a.vals[:, None, None] * theta[k])
        counter.add(a.nnz * P * Q)
    return phi


def materialize_phi(A, theta, cap: int = DEFAULT_PHI_CAP) -> np.ndarray:
    """Dense transform ``Φ = Σ_k A_k ⊗ Θ_k`` of shape ⟨M,N,P,Q⟩."""
    A = as_basis(A)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 3 or theta.shape[0] != A.K:
        raise ShapeError(f"Θ shape {theta.shape} incompatible with basis size K={A.K}")
    return _phi(A, theta, MultiplyAddCounter(), cap)


def apply_dense_phi(phi, x) -> np.ndarray:
    """General linear transform ``y_nq = Σ_mp x_mp Φ_mnpq``."""
    phi = np.asarray(phi, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if phi.ndim != 4 or x.ndim != 2:
        raise ShapeError(f"expected Φ of order 4 and x of order 2, got {phi.shape} and {x.shape}")
    if (phi.shape[0], phi.shape[2]) != x.shape:
        raise ShapeError(f"input shape {x.shape} does not match Φ (M,P)={(phi.shape[0], phi.shape[2])}")
    return np.einsum("mp,mnpq->nq", x, phi)


def compose(A1, theta1, A2, theta2) -> tuple[BasisStack, np.ndarray]:
    """Fuse two convolutions applied in sequence (first ``A1, theta1``) into one.

    The fused size is K1·K2; index ``(k1, k2)`` maps to position
    ``canonical_index((K1, K2), (k1, k2))``.
    """
    A1, A2 = as_basis(A1), as_basis(A2)
    theta1 = np.asarray(theta1, dtype=np.float64)
    theta2 = np.asarray(theta2, dtype=np.float64)
    if theta1.ndim != 3 or theta1.shape[0] != A1.K:
        raise ShapeError(f"first Θ shape {theta1.shape} incompatible with K'={A1.K}")
    if theta2.ndim != 3 or theta2.shape[0] != A2.K:
        raise ShapeError(f"second Θ shape {theta2.shape} incompatible with K''={A2.K}")
    if (A1.N, theta1.shape[2]) != (A2.M, theta2.shape[1]):
        raise ShapeError(
            f"first output ⟨N',Q'⟩={(A1.N, theta1.shape[2])} does not match "
            f"second input ⟨M'',P''⟩={(A2.M, theta2.shape[1])}"
        )
    K1, K2 = A1.K, A2.K
    mats: list[SparseMatrix | None] = [None] * (K1 * K2)
    thetas = np.empty((K1 * K2, theta1.shape[1], theta2.shape[2]))
    for k1 in range(K1):
        for k2 in range(K2):
            k = canonical_index((K1, K2), (k1 + 1, k2 + 1)) - 1
            mats[k] = A1[k1] @ A2[k2]
            thetas[k] = theta1[k1] @ theta2[k2]
    return BasisStack(mats), thetas


def merge_duplicate_heads(A, theta) -> tuple[BasisStack, np.ndarray]:
    """Merge basis matrices that are equal (same pattern and values) by summing their Θ.

    Keeps the first occurrence's position; order of the survivors is preserved.
    """
    A = as_basis(A)
    theta = np.asarray(theta, dtype=np.float64)
    kept: list[SparseMatrix] = []
    merged: list[np.ndarray] = []
    for a, t in zip(A, theta):
        for i, b in enumerate(kept):
            if a.equals(b):
                merged[i] = merged[i] + t
                break
        else:
            kept.append(a)
            merged.append(t.copy())
    return BasisStack(kept), np.stack(merged)
