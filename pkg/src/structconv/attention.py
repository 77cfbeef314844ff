"""Attention as content-based convolution.

An attention mechanism maps two entry encodings ⟨M,P′⟩ and ⟨N,Q′⟩ to an
⟨M,N⟩ score matrix; after masking and normalisation each head's matrix is
used as a basis matrix of an ordinary convolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .basis import GridSpec, shift_matrix
from .conv import convolve
from .errors import ArgumentError, ShapeError
from .sparse import BasisStack, SparseMatrix

NEG_INF = -np.inf
DEFAULT_SLOPE = 0.2


@dataclass(frozen=True)
class BiaffineParams:
    """Parameters Ξ = (ξ, μ, ν, Λ) of the bi-affine mechanism.

    Λ is given either directly (``lam``, ⟨P′,Q′⟩) or factorised as
    ``lam_key @ lam_query.T`` with ``lam_key`` ⟨P′,D⟩ and ``lam_query`` ⟨Q′,D⟩.
    Omitted terms are zero.
    """

    xi: float = 0.0
    mu: np.ndarray | None = None
    nu: np.ndarray | None = None
    lam: np.ndarray | None = None
    lam_key: np.ndarray | None = None
    lam_query: np.ndarray | None = None

    def __post_init__(self):
        if self.lam is not None and (self.lam_key is not None or self.lam_query is not None):
            raise ArgumentError("give either Λ or its key/query factors, not both")
        if (self.lam_key is None) != (self.lam_query is None):
            raise ArgumentError("factorised Λ needs both key and query factors")
        if self.lam_key is not None:
            k, q = np.asarray(self.lam_key), np.asarray(self.lam_query)
            if k.ndim != 2 or q.ndim != 2 or k.shape[1] != q.shape[1]:
                raise ShapeError(f"key factor {k.shape} and query factor {q.shape} must share D")

    @property
    def factorised(self) -> bool:
        return self.lam_key is not None

    def dims(self) -> tuple[int | None, int | None]:
        """(P′, Q′) implied by the parameters, None where unconstrained."""
        p = q = None
        if self.mu is not None:
            p = len(self.mu)
        if self.nu is not None:
            q = len(self.nu)
        if self.lam is not None:
            p, q = np.shape(self.lam)
        if self.lam_key is not None:
            p, q = np.shape(self.lam_key)[0], np.shape(self.lam_query)[0]
        return p, q

    def bilinear(self) -> np.ndarray | None:
        """Λ as a dense ⟨P′,Q′⟩ matrix (None if absent)."""
        if self.lam is not None:
            return np.asarray(self.lam, dtype=np.float64)
        if self.lam_key is not None:
            return np.asarray(self.lam_key, dtype=np.float64) @ np.asarray(self.lam_query, dtype=np.float64).T
        return None

    def expanded(self) -> "BiaffineParams":
        return BiaffineParams(self.xi, self.mu, self.nu, self.bilinear())

    @property
    def has_bilinear(self) -> bool:
        lam = self.bilinear()
        return lam is not None and bool(np.any(lam != 0))


class Mask:
    """Log-domain mask: 0 at allowed positions, −∞ elsewhere, stored as the allowed set."""

    __slots__ = ("shape", "rows", "cols")

    def __init__(self, shape, rows, cols):
        m, n = (int(d) for d in shape)
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        if len(rows) != len(cols):
            raise ShapeError("mask rows and cols must have equal length")
        if len(rows) and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
            raise ShapeError(f"mask position out of range for shape {(m, n)}")
        order = np.lexsort((cols, rows))
        keep = np.ones(len(rows), dtype=bool)
        rows, cols = rows[order], cols[order]
        keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        self.shape = (m, n)
        self.rows, self.cols = rows[keep], cols[keep]

    @classmethod
    def from_allowed(cls, allowed: np.ndarray) -> "Mask":
        allowed = np.asarray(allowed, dtype=bool)
        r, c = np.nonzero(allowed)
        return cls(allowed.shape, r, c)

    @classmethod
    def from_log(cls, h: np.ndarray) -> "Mask":
        h = np.asarray(h, dtype=np.float64)
        if not np.all((h == 0) | (h == NEG_INF)):
            raise ArgumentError("log-domain mask entries must be exactly 0 or -inf")
        return cls.from_allowed(h == 0)

    @classmethod
    def full(cls, m: int, n: int) -> "Mask":
        return cls.from_allowed(np.ones((m, n), dtype=bool))

    @classmethod
    def causal(cls, n: int) -> "Mask":
        """Entry m may influence entry n only when m <= n (no influence on predecessors)."""
        return cls.from_allowed(np.triu(np.ones((n, n), dtype=bool)))

    @classmethod
    def from_graph(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Mask":
        """Allowed set taken verbatim from 1-based (u, v) edges."""
        pairs = np.array([(u - 1, v - 1) for u, v in edges], dtype=np.int64).reshape(-1, 2)
        return cls((n, n), pairs[:, 0], pairs[:, 1])

    @property
    def allowed_count(self) -> int:
        return len(self.rows)

    def allowed(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        out[self.rows, self.cols] = True
        return out

    def log_matrix(self) -> np.ndarray:
        return np.where(self.allowed(), 0.0, NEG_INF)


@dataclass(frozen=True)
class Step:
    """One normalisation step: ``mask``, ``leaky_relu``, ``softmax_columns``, ``softmax_rows`` or ``scale``."""

    op: str
    value: float | None = None

    KINDS = ("mask", "leaky_relu", "softmax_columns", "softmax_rows", "scale")

    def __post_init__(self):
        if self.op not in self.KINDS:
            raise ArgumentError(f"unknown pipeline step {self.op!r}")
        if self.op == "leaky_relu" and self.value is None:
            object.__setattr__(self, "value", DEFAULT_SLOPE)
        if self.op == "scale" and self.value is None:
            raise ArgumentError("scale step needs a constant")


def validate_pipeline(steps: Sequence[Step]) -> tuple[Step, ...]:
    steps = tuple(steps)
    ops = [s.op for s in steps]
    softmax = [i for i, o in enumerate(ops) if o.startswith("softmax")]
    if len(softmax) > 1:
        raise ArgumentError("a pipeline may contain at most one softmax step")
    if softmax and "mask" in ops and ops.index("mask") > softmax[0]:
        raise ArgumentError("mask must precede softmax")
    return steps


def biaffine_attention(xp, yp, params: BiaffineParams, mask: Mask | None = None) -> np.ndarray:
    """``x′Λy′ᵀ + (x′μ)⊗1 + 1⊗(y′ν) + ξ`` as an ⟨M,N⟩ matrix.

    With a mask, only the allowed cells are evaluated and the rest are −∞.
    """
    xp = np.asarray(xp, dtype=np.float64)
    yp = np.asarray(yp, dtype=np.float64)
    if xp.ndim != 2 or yp.ndim != 2:
        raise ShapeError(f"auxiliary inputs must be matrices, got {xp.shape} and {yp.shape}")
    p, q = params.dims()
    if p is not None and p != xp.shape[1]:
        raise ShapeError(f"x′ has P′={xp.shape[1]} but the mechanism expects P′={p}")
    if q is not None and q != yp.shape[1]:
        raise ShapeError(f"y′ has Q′={yp.shape[1]} but the mechanism expects Q′={q}")
    M, N = xp.shape[0], yp.shape[0]
    row_term = xp @ np.asarray(params.mu, dtype=np.float64) if params.mu is not None else np.zeros(M)
    col_term = yp @ np.asarray(params.nu, dtype=np.float64) if params.nu is not None else np.zeros(N)
    if params.factorised:
        left = xp @ np.asarray(params.lam_key, dtype=np.float64)
        right = yp @ np.asarray(params.lam_query, dtype=np.float64)
    elif params.lam is not None:
        left = xp @ np.asarray(params.lam, dtype=np.float64)
        right = yp
    else:
        left = right = None
    if mask is None:
        out = row_term[:, None] + col_term[None, :] + float(params.xi)
        if left is not None:
            out = left @ right.T + out
        return out
    if mask.shape != (M, N):
        raise ShapeError(f"mask shape {mask.shape} does not match scores {(M, N)}")
    out = np.full((M, N), NEG_INF)
    r, c = mask.rows, mask.cols
    vals = row_term[r] + col_term[c] + float(params.xi)
    if left is not None:
        vals = np.einsum("id,id->i", left[r], right[c]) + vals
    out[r, c] = vals
    return out


def biaffine_attention_indexwise(xp, yp, params: BiaffineParams) -> np.ndarray:
    """Index form ``Σ Λ_pq x′_mp y′_nq + Σ μ_p x′_mp + Σ ν_q y′_nq + ξ``; reference only."""
    xp = np.asarray(xp, dtype=np.float64)
    yp = np.asarray(yp, dtype=np.float64)
    M, P = xp.shape
    N, Q = yp.shape
    lam = params.bilinear()
    lam = np.zeros((P, Q)) if lam is None else lam
    mu = np.zeros(P) if params.mu is None else np.asarray(params.mu, dtype=np.float64)
    nu = np.zeros(Q) if params.nu is None else np.asarray(params.nu, dtype=np.float64)
    return (
        np.einsum("pq,mp,nq->mn", lam, xp, yp)
        + np.einsum("p,mp->m", mu, xp)[:, None]
        + np.einsum("q,nq->n", nu, yp)[None, :]
        + params.xi
    )


def apply_mask(scores, mask: Mask) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != mask.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match scores {scores.shape}")
    return np.where(mask.allowed(), scores, NEG_INF)


def softmax_columns(scores, return_flags: bool = False):
    """Column-wise softmax in which −∞ maps to 0.

    A column with no finite entry becomes all zeros; with ``return_flags`` a
    boolean vector marking such columns is returned as well.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2:
        raise ShapeError(f"softmax expects a matrix, got shape {s.shape}")
    empty = ~np.any(np.isfinite(s), axis=0) if s.shape[0] else np.ones(s.shape[1], dtype=bool)
    top = np.where(empty, 0.0, np.max(s, axis=0, initial=NEG_INF))
    e = np.exp(s - top[None, :])
    total = e.sum(axis=0)
    out = np.divide(e, total[None, :], out=np.zeros_like(e), where=~empty[None, :])
    return (out, empty) if return_flags else out


def softmax_rows(scores, return_flags: bool = False):
    res = softmax_columns(np.asarray(scores, dtype=np.float64).T, return_flags)
    return (res[0].T, res[1]) if return_flags else res.T


def leaky_relu(scores, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    if not 0 < slope < 1:
        raise ArgumentError(f"leaky ReLU slope must lie in (0, 1), got {slope}")
    s = np.asarray(scores, dtype=np.float64)
    return np.where(s >= 0, s, slope * s)


def run_pipeline(scores, steps: Sequence[Step], mask: Mask | None = None) -> np.ndarray:
    out = np.asarray(scores, dtype=np.float64)
    for step in validate_pipeline(steps):
        if step.op == "mask":
            if mask is None:
                raise ArgumentError("pipeline has a mask step but no mask was given")
            out = apply_mask(out, mask)
        elif step.op == "leaky_relu":
            out = leaky_relu(out, step.value)
        elif step.op == "softmax_columns":
            out = softmax_columns(out)
        elif step.op == "softmax_rows":
            out = softmax_rows(out)
        else:
            out = out * step.value
    return out


Mechanism = Union[BiaffineParams, SparseMatrix, np.ndarray]


@dataclass
class AttentionConvSpec:
    """An attention convolution of size K.

    Each head is either a :class:`BiaffineParams` (content-based; its scores go
    through ``pipeline``) or a fixed ⟨M,N⟩ matrix used as-is, e.g. a shift
    matrix from :func:`positional_heads`.
    """

    heads: list[Mechanism]
    theta: np.ndarray
    pipeline: tuple[Step, ...] = ()
    wiring: str = "general"
    mask: Mask | None = None
    last_empty_columns: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.wiring not in ("general", "cross", "self"):
            raise ArgumentError(f"unknown wiring {self.wiring!r}")
        self.pipeline = validate_pipeline(self.pipeline)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 3 or self.theta.shape[0] != len(self.heads):
            raise ShapeError(f"Θ shape {self.theta.shape} does not match K={len(self.heads)} heads")

    @property
    def K(self) -> int:
        return len(self.heads)


def _wire(x, xp, yp, spec: AttentionConvSpec):
    P = x.shape[1]
    if spec.wiring == "self":
        for h in spec.heads:
            if isinstance(h, BiaffineParams):
                p, q = h.dims()
                if p not in (None, P) or q not in (None, P):
                    raise ShapeError(f"self-attention requires P′ = Q′ = P (P={P}, P′={p}, Q′={q})")
        return x, x
    if spec.wiring == "cross":
        if yp is None:
            raise ArgumentError("cross-attention needs the auxiliary input y′")
        for h in spec.heads:
            if isinstance(h, BiaffineParams) and h.dims()[0] not in (None, P):
                raise ShapeError(f"cross-attention requires P′ = P (P={P}, P′={h.dims()[0]})")
        return x, np.asarray(yp, dtype=np.float64)
    if xp is None or yp is None:
        raise ArgumentError("general wiring needs both auxiliary inputs x′ and y′")
    return np.asarray(xp, dtype=np.float64), np.asarray(yp, dtype=np.float64)


def attention_heads(x, spec: AttentionConvSpec, xp=None, yp=None) -> list[np.ndarray]:
    """Dense ⟨M,N⟩ basis matrix of every head after its pipeline."""
    x = np.asarray(x, dtype=np.float64)
    xp, yp = _wire(x, xp, yp, spec)
    M, N = xp.shape[0], yp.shape[0]
    if spec.wiring == "self" and N != M:
        raise ShapeError(f"self-attention requires N = M (N={N}, M={M})")
    if xp.shape[0] != x.shape[0]:
        raise ShapeError(f"x′ has M={xp.shape[0]} entries but x has M={x.shape[0]}")
    mats = []
    spec.last_empty_columns = []
    for head in spec.heads:
        if isinstance(head, BiaffineParams):
            masked_first = spec.mask is not None and "mask" in [s.op for s in spec.pipeline]
            scores = biaffine_attention(xp, yp, head, spec.mask if masked_first else None)
            a = run_pipeline(scores, spec.pipeline, spec.mask)
            spec.last_empty_columns.append(~np.any(np.isfinite(scores), axis=0))
        else:
            a = head.to_dense() if isinstance(head, SparseMatrix) else np.asarray(head, dtype=np.float64)
            spec.last_empty_columns.append(np.zeros(N, dtype=bool))
        if a.shape != (M, N):
            raise ShapeError(f"head matrix has shape {a.shape}, expected {(M, N)}")
        mats.append(a)
    return mats


def attention_convolve(x, spec: AttentionConvSpec, xp=None, yp=None) -> np.ndarray:
    """``y = Σ_k a(x′, y′; Ξ_k)ᵀ x Θ_k`` evaluated through the sparse convolution kernel."""
    x = np.asarray(x, dtype=np.float64)
    if spec.theta.shape[1] != x.shape[1]:
        raise ShapeError(f"x has P={x.shape[1]} channels but Θ expects P={spec.theta.shape[1]}")
    mats = attention_heads(x, spec, xp, yp)
    basis = BasisStack(h if isinstance(h, SparseMatrix) else SparseMatrix.from_dense(a) for h, a in zip(spec.heads, mats))
    return convolve(basis, x, spec.theta)


def gat_head(x, theta_k, params: BiaffineParams, mask: Mask, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    """Graph-attention head: bi-affine scores of ``xΘ_k`` (no bilinear term), masked, leaky ReLU, column softmax."""
    if params.has_bilinear:
        raise ArgumentError("GAT heads have no bilinear term (Λ must be 0)")
    h = np.asarray(x, dtype=np.float64) @ np.asarray(theta_k, dtype=np.float64)
    scores = biaffine_attention(h, h, BiaffineParams(params.xi, params.mu, params.nu), mask)
    return softmax_columns(leaky_relu(scores, slope))


def gat_convolve(x, theta, heads: Sequence[BiaffineParams], mask: Mask, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    mats = [gat_head(x, theta[k], heads[k], mask, slope) for k in range(len(heads))]
    return convolve(BasisStack(SparseMatrix.from_dense(a) for a in mats), x, theta)


def transformer_head(xp, yp, lam_key, lam_query, scale: float | None = None, mask: Mask | None = None) -> np.ndarray:
    """Scaled dot-product head ``softmax_columns(scale · (x′Λ_key)(y′Λ_query)ᵀ + H)``; scale defaults to 1/√D."""
    lam_key = np.asarray(lam_key, dtype=np.float64)
    lam_query = np.asarray(lam_query, dtype=np.float64)
    if lam_key.ndim != 2 or lam_query.ndim != 2 or lam_key.shape[1] != lam_query.shape[1]:
        raise ShapeError(f"key factor {lam_key.shape} and query factor {lam_query.shape} must share D")
    if scale is None:
        scale = 1.0 / np.sqrt(lam_key.shape[1])
    keys = np.asarray(xp, dtype=np.float64) @ lam_key
    queries = np.asarray(yp, dtype=np.float64) @ lam_query
    scores = scale * (keys @ queries.T)
    if mask is not None:
        scores = apply_mask(scores, mask)
    return softmax_columns(scores)


def expand_transformer_theta(theta_value, theta_o_block) -> np.ndarray:
    """Per-head parameter ``Θ_k = Θ_value Θ_Oᵀ`` (⟨P,D⟩ × ⟨Q,D⟩ᵀ)."""
    tv = np.asarray(theta_value, dtype=np.float64)
    to = np.asarray(theta_o_block, dtype=np.float64)
    if tv.ndim != 2 or to.ndim != 2 or tv.shape[1] != to.shape[1]:
        raise ShapeError(f"value factor {tv.shape} and output block {to.shape} must share D")
    return tv @ to.T


def split_output_projection(theta_o, K: int) -> list[np.ndarray]:
    """Split the ⟨Q, K·D⟩ output projection into K blocks of shape ⟨Q,D⟩."""
    theta_o = np.asarray(theta_o, dtype=np.float64)
    if theta_o.ndim != 2 or theta_o.shape[1] % K:
        raise ShapeError(f"output projection {theta_o.shape} cannot be split into {K} blocks")
    return np.split(theta_o, K, axis=1)


def multihead_concat_project(x, head_mats, theta_values, theta_o) -> np.ndarray:
    """``[h_1 … h_K] Θ_Oᵀ`` with ``h_k = A_kᵀ x Θ_value,k``."""
    x = np.asarray(x, dtype=np.float64)
    hs = [np.asarray(a).T @ x @ np.asarray(tv) for a, tv in zip(head_mats, theta_values)]
    return np.concatenate(hs, axis=1) @ np.asarray(theta_o, dtype=np.float64).T


def multihead_sum(x, head_mats, theta_values, theta_o) -> np.ndarray:
    """Same map written as one convolution with ``Θ_k = Θ_value,k Θ_O,kᵀ``."""
    blocks = split_output_projection(theta_o, len(head_mats))
    theta = np.stack([expand_transformer_theta(tv, b) for tv, b in zip(theta_values, blocks)])
    basis = BasisStack(SparseMatrix.from_dense(a) for a in head_mats)
    return convolve(basis, x, theta)


def positional_heads(grid: GridSpec, shifts: Sequence[int]) -> BasisStack:
    """Index-based heads: 1-D shift matrices to complement content-based heads."""
    if len(grid.shape) != 1:
        raise ArgumentError(f"positional heads need a 1-D grid, got shape {grid.shape}")
    if not shifts:
        raise ArgumentError("at least one shift is required")
    return BasisStack(shift_matrix(grid, (int(d),)) for d in shifts)
