"""Reduced parametrisations of the ⟨K,P,Q⟩ parameter tensor Θ."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

from .conv import convolve
from .errors import ArgumentError, ShapeError
from .sparse import as_basis
from .tensor import mixed_product


@dataclass(frozen=True)
class GroupedParams:
    """Block-diagonal Θ_k: ``blocks`` has shape ⟨K, ν, P/ν, Q/ν⟩."""

    blocks: np.ndarray

    @property
    def groups(self) -> int:
        return self.blocks.shape[1]

    def expand(self) -> np.ndarray:
        return expand_grouped(self)

    def count(self) -> int:
        return int(self.blocks.size)


@dataclass(frozen=True)
class DepthwiseParams:
    """``Θ_kpq = Θ⁽¹⁾_kp Θ⁽²⁾_pq`` with ``theta1`` ⟨K,P⟩ and ``theta2`` ⟨P,Q⟩."""

    theta1: np.ndarray
    theta2: np.ndarray

    def expand(self) -> np.ndarray:
        return expand_depthwise(self)

    def count(self) -> int:
        return int(np.size(self.theta1) + np.size(self.theta2))


ChannelFactor = Union[np.ndarray, GroupedParams, DepthwiseParams]


@dataclass(frozen=True)
class ControlledSeparableParams:
    """``Θ_k = Σ_h basis[h, k] · channel_h``.

    ``basis`` is ⟨H,K⟩. ``channel`` is an ⟨H,P,Q⟩ tensor, or a grouped or
    depth-wise factor whose leading size plays the role of H.
    """

    basis: np.ndarray
    channel: ChannelFactor

    def channel_tensor(self) -> np.ndarray:
        c = self.channel
        return np.asarray(c, dtype=np.float64) if isinstance(c, np.ndarray) else c.expand()

    def expand(self) -> np.ndarray:
        return expand_controlled_separable(self)

    def count(self) -> int:
        c = self.channel
        return int(np.size(self.basis)) + (int(np.size(c)) if isinstance(c, np.ndarray) else c.count())


def expand_grouped(p: GroupedParams) -> np.ndarray:
    blocks = np.asarray(p.blocks, dtype=np.float64)
    if blocks.ndim != 4:
        raise ShapeError(f"grouped blocks must have shape ⟨K,ν,P/ν,Q/ν⟩, got {blocks.shape}")
    K, nu, bp, bq = blocks.shape
    theta = np.zeros((K, nu * bp, nu * bq))
    for g in range(nu):
        theta[:, g * bp : (g + 1) * bp, g * bq : (g + 1) * bq] = blocks[:, g]
    return theta


def grouped_from_dense_blocks(theta: np.ndarray, groups: int) -> GroupedParams:
    """Pick the diagonal blocks out of a ⟨K,P,Q⟩ tensor."""
    theta = np.asarray(theta, dtype=np.float64)
    K, P, Q = theta.shape
    if groups < 1 or P % groups or Q % groups:
        raise ArgumentError(f"group count {groups} must divide P={P} and Q={Q}")
    bp, bq = P // groups, Q // groups
    blocks = np.stack([theta[:, g * bp : (g + 1) * bp, g * bq : (g + 1) * bq] for g in range(groups)], axis=1)
    return GroupedParams(blocks)


def expand_depthwise(p: DepthwiseParams) -> np.ndarray:
    t1 = np.asarray(p.theta1, dtype=np.float64)
    t2 = np.asarray(p.theta2, dtype=np.float64)
    if t1.ndim != 2 or t2.ndim != 2 or t1.shape[1] != t2.shape[0]:
        raise ShapeError(f"depth-wise factors {t1.shape} and {t2.shape} need shapes ⟨K,P⟩ and ⟨P,Q⟩")
    return t1[:, :, None] * t2[None, :, :]


def expand_controlled_separable(p: ControlledSeparableParams) -> np.ndarray:
    basis = np.asarray(p.basis, dtype=np.float64)
    channel = p.channel_tensor()
    if basis.ndim != 2 or channel.ndim != 3:
        raise ShapeError(f"expected basis ⟨H,K⟩ and channel ⟨H,P,Q⟩, got {basis.shape} and {channel.shape}")
    H, K = basis.shape
    if channel.shape[0] != H:
        raise ShapeError(f"basis factor has H={H} but channel factor has H={channel.shape[0]}")
    PQ = channel.shape[1] * channel.shape[2]
    if not H < K < PQ:
        warnings.warn(f"controlled separability saves parameters only when H < K << PQ (H={H}, K={K}, PQ={PQ})")
    return mixed_product(basis, channel)


def convolve_controlled_separable(A, x, p: ControlledSeparableParams) -> np.ndarray:
    """Reassociated evaluation ``Σ_h (Σ_k basis_hk A_k)ᵀ x channel_h`` without expanding Θ."""
    A = as_basis(A)
    basis = np.asarray(p.basis, dtype=np.float64)
    channel = p.channel_tensor()
    if basis.shape[1] != A.K:
        raise ShapeError(f"basis factor has K={basis.shape[1]} but the basis stack has K={A.K}")
    x = np.asarray(x, dtype=np.float64)
    dense = A.to_dense()
    y = np.zeros((A.N, channel.shape[2]))
    for h in range(basis.shape[0]):
        combined = np.tensordot(basis[h], dense, axes=1)
        y += combined.T @ x @ channel[h]
    return y


def convolve_grouped_split(A, x, p: GroupedParams) -> np.ndarray:
    """Run ν independent convolutions on channel slices and concatenate the outputs."""
    blocks = np.asarray(p.blocks, dtype=np.float64)
    _, nu, bp, _ = blocks.shape
    x = np.asarray(x, dtype=np.float64)
    outs = [convolve(A, x[:, g * bp : (g + 1) * bp], blocks[:, g]) for g in range(nu)]
    return np.concatenate(outs, axis=1)


def parameter_count(scheme: str, K: int, P: int, Q: int, groups: int | None = None, H: int | None = None) -> int:
    """Number of free parameters: KPQ, KPQ/ν, KP+PQ or H(K+PQ)."""
    if min(K, P, Q) < 1:
        raise ArgumentError(f"dims must be >= 1, got K={K}, P={P}, Q={Q}")
    if scheme == "dense":
        return K * P * Q
    if scheme == "grouped":
        if groups is None or groups < 1 or P % groups or Q % groups:
            raise ArgumentError(f"group count {groups} must divide P={P} and Q={Q}")
        return K * P * Q // groups
    if scheme == "depthwise":
        return K * P + P * Q
    if scheme == "controlled":
        if H is None or H < 1:
            raise ArgumentError(f"controlled separability needs H >= 1, got {H}")
        return H * (K + P * Q)
    raise ArgumentError(f"unknown scheme {scheme!r}")
