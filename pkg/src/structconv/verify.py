"""Randomised self-check of every algebraic property the library promises.

Instances come from :class:`XorShift64`, a small generator whose stream is
fully specified so other implementations can reproduce it:

    state_0 = seed XOR 0x9E3779B97F4A7C15   (replaced by that constant if it is 0)
    x ^= x << 13; x ^= x >> 7; x ^= x << 17   (64-bit wrap-around)
    uniform [0, 1):  (x >> 11) * 2**-53
    uniform [-1, 1): 2 * u - 1
    integer in [lo, hi]: lo + x % (hi - lo + 1)

Arrays are filled in row-major order, one draw per entry.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import attention as att
from .basis import (
    Graph,
    GridSpec,
    KernelSpec,
    chebyshev_basis,
    cuboid_offsets,
    gcn_basis,
    grid_basis,
    normalized_laplacian,
    largest_eigenvalue,
    random_walk_basis,
    shift_matrix,
)
from .conv import (
    MultiplyAddCounter,
    Path,
    apply_dense_phi,
    compose,
    convolve,
    convolve_batched,
    materialize_phi,
    path_costs,
)
from .params import (
    ControlledSeparableParams,
    GroupedParams,
    convolve_controlled_separable,
    convolve_grouped_split,
    expand_controlled_separable,
    expand_grouped,
    parameter_count,
)
from .sparse import BasisStack
from .tensor import (
    IndexBijection,
    canonical_index,
    canonical_multi_index,
    flatten,
    mixed_product,
    numerical_rank,
    solve_basis_coefficients,
    unflatten,
)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class XorShift64:
    def __init__(self, seed: int = 0):
        state = (int(seed) ^ _GOLDEN) & _MASK64
        self.state = state or _GOLDEN

    def next_u64(self) -> int:
        x = self.state
        x ^= (x << 13) & _MASK64
        x ^= x >> 7
        x ^= (x << 17) & _MASK64
        self.state = x
        return x

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, *shape: int) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        vals = np.array([2.0 * self.random() - 1.0 for _ in range(n)])
        return vals.reshape(shape) if shape else vals[0]

    def integer(self, lo: int, hi: int) -> int:
        return lo + self.next_u64() % (hi - lo + 1)

    def sparse_dense(self, shape, density: float = 0.4) -> np.ndarray:
        vals = self.uniform(*shape)
        keep = np.array([self.random() < density for _ in range(vals.size)]).reshape(shape)
        return np.where(keep, vals, 0.0)


@dataclass
class PropertyResult:
    name: str
    passed: bool
    max_error: float
    instances: int
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"[{status}] {self.name:<26} max_err={self.max_error:.3e}  n={self.instances}{extra}"


def _rel(a, b) -> float:
    scale = max(np.abs(b).max(initial=0.0), 1.0)
    return float(np.abs(np.asarray(a) - np.asarray(b)).max(initial=0.0) / scale)


def _abs(a, b) -> float:
    return float(np.abs(np.asarray(a) - np.asarray(b)).max(initial=0.0))


def _random_basis(rng: XorShift64, K, M, N) -> BasisStack:
    return BasisStack.from_dense(rng.sparse_dense((K, M, N)))


def check_bijectivity(rng, tol):
    worst = 0
    n = 0
    for shape in [(1,), (7,), (2, 3), (8, 10), (3, 4, 5), (2, 2, 2, 2), (10, 10, 10)]:
        size = int(np.prod(shape))
        for k in range(1, size + 1):
            worst = max(worst, abs(canonical_index(shape, canonical_multi_index(shape, k)) - k))
        n += 1
    return worst, n, worst == 0


def check_flatten_roundtrip(rng, tol):
    worst = 0.0
    for _ in range(20):
        shape = (rng.integer(1, 4), rng.integer(1, 4))
        tail = (rng.integer(1, 3),)
        a = rng.uniform(*(shape + tail))
        perm = list(range(1, shape[0] * shape[1] + 1))
        for i in range(len(perm) - 1, 0, -1):
            j = rng.integer(0, i)
            perm[i], perm[j] = perm[j], perm[i]
        omega = IndexBijection(shape, tuple(perm))
        worst = max(worst, _abs(unflatten(flatten(a, omega), omega), a))
    return worst, 20, worst == 0.0


def check_mixed_bilinearity(rng, tol):
    worst = 0.0
    for _ in range(50):
        K, s, t = rng.integer(1, 5), rng.integer(1, 5), rng.integer(1, 5)
        a, a2, b = rng.uniform(K, s), rng.uniform(K, s), rng.uniform(K, t)
        alpha, beta = rng.uniform(), rng.uniform()
        lhs = mixed_product(alpha * a + beta * a2, b)
        rhs = alpha * mixed_product(a, b) + beta * mixed_product(a2, b)
        worst = max(worst, _rel(lhs, rhs))
    return worst, 50, worst < 1e-12


def check_inversion(rng, tol):
    worst = 0.0
    n = 0
    while n < 50:
        s_shape = [(1,), (2,), (3,), (2, 2), (4,), (2, 3), (3, 3), (4, 4), (2, 2, 2), (2, 2, 4)][n % 10]
        K = int(np.prod(s_shape))
        A = rng.uniform(*((K,) + s_shape))
        if np.linalg.cond(A.reshape(K, K)) >= 1e6:
            continue
        phi = rng.uniform(*(s_shape + (rng.integer(1, 3),)))
        theta = solve_basis_coefficients(A, phi)
        err = np.abs(mixed_product(A, theta) - phi).max() / np.abs(phi).max()
        worst = max(worst, float(err))
        n += 1
    return worst, n, worst < 1e-9


def check_rank_bound(rng, tol):
    violations = 0
    for trial in range(100):
        K = rng.integer(1, 4)
        if trial % 2 == 0:
            # vector slices: a ⟨K,s⟩, b ⟨K,t⟩
            s, t = rng.integer(1, 8), rng.integer(1, 8)
            a, b = rng.uniform(K, s), rng.uniform(K, t)
        else:
            # matrix slices of random low rank, scalar coefficients
            s, t = rng.integer(1, 8), rng.integer(1, 8)
            a = np.stack([rng.uniform(s, 2) @ rng.uniform(2, t) if rng.integer(0, 1) else rng.uniform(s, t) for _ in range(K)])
            b = rng.uniform(K)
        m = mixed_product(a, b)
        bound = 0
        for k in range(K):
            ra = numerical_rank(np.atleast_2d(a[k]), 1e-10)
            rb = numerical_rank(np.atleast_2d(b[k]), 1e-10)
            bound += ra * rb
        violations += numerical_rank(m, 1e-10) > bound
    return float(violations), 100, violations == 0


def check_factorisation(rng, tol):
    worst = 0.0
    for _ in range(100):
        M, N, P, Q, K = (rng.integer(1, 8), rng.integer(1, 8), rng.integer(1, 5), rng.integer(1, 5), rng.integer(1, 6))
        A = _random_basis(rng, K, M, N)
        theta, x = rng.uniform(K, P, Q), rng.uniform(M, P)
        worst = max(worst, _abs(convolve(A, x, theta), apply_dense_phi(materialize_phi(A, theta), x)))
    return worst, 100, worst < 1e-12


def check_linearity(rng, tol):
    worst = 0.0
    for _ in range(30):
        M, N, P, Q, K = (rng.integer(1, 6) for _ in range(5))
        A = _random_basis(rng, K, M, N)
        t1, t2 = rng.uniform(K, P, Q), rng.uniform(K, P, Q)
        x1, x2 = rng.uniform(M, P), rng.uniform(M, P)
        al, be = rng.uniform(), rng.uniform()
        worst = max(
            worst,
            _abs(convolve(A, al * x1 + be * x2, t1), al * convolve(A, x1, t1) + be * convolve(A, x2, t1)),
            _abs(convolve(A, x1, al * t1 + be * t2), al * convolve(A, x1, t1) + be * convolve(A, x1, t2)),
        )
    return worst, 30, worst < 1e-12


def check_composition(rng, tol):
    worst = 0.0
    for _ in range(100):
        M1, N1, N2 = rng.integer(1, 6), rng.integer(1, 6), rng.integer(1, 6)
        P, Q1, Q2 = rng.integer(1, 4), rng.integer(1, 4), rng.integer(1, 4)
        K1, K2 = rng.integer(1, 3), rng.integer(1, 3)
        A1, A2 = _random_basis(rng, K1, M1, N1), _random_basis(rng, K2, N1, N2)
        t1, t2 = rng.uniform(K1, P, Q1), rng.uniform(K2, Q1, Q2)
        x = rng.uniform(M1, P)
        A, t = compose(A1, t1, A2, t2)
        worst = max(worst, _rel(convolve(A, x, t), convolve(A2, convolve(A1, x, t1), t2)))
    return worst, 100, worst < 1e-10


def check_path_agreement(rng, tol):
    worst = 0.0
    count_mismatch = 0
    for _ in range(100):
        B, M, N, P, Q, K = (rng.integer(1, 5) for _ in range(6))
        A = _random_basis(rng, K, M, N)
        X, theta = rng.uniform(B, M, P), rng.uniform(K, P, Q)
        costs = path_costs(B, M, N, P, Q, K, A.nnz)
        outs = {}
        for p in Path:
            c = MultiplyAddCounter()
            outs[p] = convolve_batched(A, X, theta, p.value, c)
            count_mismatch += c.count != costs[p]
        worst = max(worst, _rel(outs[Path.BLUE], outs[Path.GREEN]), _rel(outs[Path.RED], outs[Path.GREEN]))
    return worst, 100, worst < 1e-10 and count_mismatch == 0, f"count_mismatches={count_mismatch}"


def check_shift_composition(rng, tol):
    worst = 0.0
    n = 0
    for _ in range(40):
        shape = (rng.integer(3, 10),) if rng.integer(0, 1) else (rng.integer(3, 7), rng.integer(3, 7))
        g = GridSpec(shape)
        d1 = tuple(rng.integer(0, s // 2) for s in shape)
        d2 = tuple(rng.integer(0, s // 2) for s in shape)
        # non-negative shifts keep every intermediate node in the grid
        prod_ = (shift_matrix(g, d1) @ shift_matrix(g, d2)).to_dense()
        direct = shift_matrix(g, tuple(a + b for a, b in zip(d1, d2))).to_dense()
        worst = max(worst, _abs(prod_, direct))
        n += 1
    return worst, n, worst == 0.0


def _cnn_oracle(img, kernel, offsets):
    """Nested loops: y[s] = Σ_k x[s - Δ_k] Θ_k, zero outside the image."""
    H, W = img.shape
    y = np.zeros_like(img)
    for i in range(H):
        for j in range(W):
            acc = 0.0
            for k, (di, dj) in enumerate(offsets):
                si, sj = i - di, j - dj
                if 0 <= si < H and 0 <= sj < W:
                    acc += img[si, sj] * kernel[k]
            y[i, j] = acc
    return y


def check_cnn_equivalence(rng, tol):
    worst = 0.0
    for _ in range(20):
        H, W = rng.integer(1, 12), rng.integer(1, 12)
        kh, kw = rng.integer(1, 5), rng.integer(1, 5)
        spec = KernelSpec((kh, kw), offsets=(-(kh + 1) // 2, -(kw + 1) // 2))
        A = grid_basis(GridSpec((H, W)), spec)
        img, kern = rng.uniform(H, W), rng.uniform(kh * kw)
        y = convolve(A, img.reshape(-1, 1), kern.reshape(-1, 1, 1)).reshape(H, W)
        worst = max(worst, _abs(y, _cnn_oracle(img, kern, cuboid_offsets(spec))))
    return worst, 20, worst < 1e-12


def check_translation_equivariance(rng, tol):
    worst = 0.0
    checked = 0
    for trial in range(20):
        two_d = trial % 2 == 1
        shape = (rng.integer(6, 10), rng.integer(6, 10)) if two_d else (rng.integer(8, 16),)
        sizes = tuple(rng.integer(1, 3) for _ in shape)
        spec = KernelSpec(sizes, offsets=tuple(-1 for _ in shape))
        g = GridSpec(shape)
        A = grid_basis(g, spec)
        theta = rng.uniform(spec.K, 2, 2)
        x = rng.uniform(g.size, 2)
        t = tuple(rng.integer(-2, 2) for _ in shape)
        grid_x = x.reshape(shape + (2,))
        shifted = np.zeros_like(grid_x)
        for s in np.ndindex(*shape):
            src = tuple(a - b for a, b in zip(s, t))
            if all(0 <= c < d for c, d in zip(src, shape)):
                shifted[s] = grid_x[src]
        y = convolve(A, x, theta).reshape(shape + (2,))
        ys = convolve(A, shifted.reshape(-1, 2), theta).reshape(shape + (2,))
        deltas = cuboid_offsets(spec)
        for s in np.ndindex(*shape):
            src = tuple(a - b for a, b in zip(s, t))

            def inside(p):
                return all(0 <= c < d for c, d in zip(p, shape))

            if not inside(src):
                continue
            taps = [tuple(a - b for a, b in zip(s, dk)) for dk in deltas]
            taps_src = [tuple(a - b for a, b in zip(src, dk)) for dk in deltas]
            if all(inside(p) for p in taps + taps_src):
                worst = max(worst, _abs(ys[s], y[src]))
                checked += 1
    return worst, 20, worst == 0.0 and checked > 0


def _random_graph(rng, n, p=0.3, directed=False):
    edges = []
    for u in range(1, n + 1):
        for v in range(1, n + 1):
            if u != v and (directed or u < v) and rng.random() < p:
                edges.append((u, v, 0.5 + rng.random()))
    return Graph(n, tuple(edges))


def check_chebyshev(rng, tol):
    worst = 0.0
    for _ in range(10):
        g = _random_graph(rng, rng.integer(2, 20))
        A = chebyshev_basis(g, 6).to_dense()
        lap = normalized_laplacian(g)
        scaled = 2 * lap / largest_eigenvalue(lap) - np.eye(g.n)
        for k in range(2, 6):
            worst = max(worst, _abs(A[k], 2 * scaled @ A[k - 1] - A[k - 2]))
    return worst, 10, worst < 1e-10


def check_gcn(rng, tol):
    worst = 0.0
    ok = True
    for _ in range(10):
        g = _random_graph(rng, rng.integer(1, 20), directed=True)
        a = gcn_basis(g).to_dense()[0]
        worst = max(worst, _abs(a, a.T))
        ok &= bool(a.min() >= 0.0 and a.max() <= 1.0)
    return worst, 10, ok and worst == 0.0


def check_random_walk(rng, tol):
    worst = 0.0
    for _ in range(10):
        g = _random_graph(rng, rng.integer(2, 12), directed=True)
        A = random_walk_basis(g, 5).to_dense()
        for k in range(1, 5):
            worst = max(worst, _rel(A[k], A[k - 1] @ A[0]))
    return worst, 10, worst < 1e-10


def check_grouped(rng, tol):
    worst = 0.0
    off_block = 0.0
    for _ in range(20):
        nu, bp, bq = rng.integer(1, 3), rng.integer(1, 3), rng.integer(1, 3)
        K, M, N = rng.integer(1, 3), rng.integer(1, 5), rng.integer(1, 5)
        p = GroupedParams(rng.uniform(K, nu, bp, bq))
        theta = expand_grouped(p)
        mask = np.kron(np.eye(nu), np.ones((bp, bq))).astype(bool)
        off_block = max(off_block, float(np.abs(theta[:, ~mask]).max(initial=0.0)))
        A = _random_basis(rng, K, M, N)
        x = rng.uniform(M, nu * bp)
        worst = max(worst, _abs(convolve(A, x, theta), convolve_grouped_split(A, x, p)))
    return worst, 20, worst < 1e-11 and off_block == 0.0


def check_controlled(rng, tol):
    worst = 0.0
    for _ in range(30):
        H, K, P, Q = rng.integer(1, 3), rng.integer(1, 5), rng.integer(1, 4), rng.integer(1, 4)
        M, N = rng.integer(1, 5), rng.integer(1, 5)
        p = ControlledSeparableParams(rng.uniform(H, K), rng.uniform(H, P, Q))
        A = _random_basis(rng, K, M, N)
        x = rng.uniform(M, P)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            theta = expand_controlled_separable(p)
        worst = max(worst, _abs(convolve(A, x, theta), convolve_controlled_separable(A, x, p)))
    return worst, 30, worst < 1e-11


def check_parameter_counts(rng, tol):
    bad = 0
    n = 0
    for K, P, Q in itertools.product(range(1, 5), range(1, 7), range(1, 7)):
        n += 1
        bad += parameter_count("dense", K, P, Q) != K * P * Q
        bad += parameter_count("depthwise", K, P, Q) != K * P + P * Q
        for H in range(1, 4):
            bad += parameter_count("controlled", K, P, Q, H=H) != H * (K + P * Q)
        for nu in range(1, 7):
            if P % nu == 0 and Q % nu == 0:
                bad += parameter_count("grouped", K, P, Q, groups=nu) * nu != K * P * Q
    return float(bad), n, bad == 0


def check_softmax(rng, tol):
    worst = 0.0
    masked_nonzero = 0
    for _ in range(50):
        M, N = rng.integer(1, 6), rng.integer(1, 6)
        allowed = rng.uniform(M, N) > -0.3
        mask = att.Mask.from_allowed(allowed)
        out = att.softmax_columns(att.apply_mask(3 * rng.uniform(M, N), mask))
        cols = allowed.any(axis=0)
        if cols.any():
            worst = max(worst, float(np.abs(out[:, cols].sum(axis=0) - 1).max()))
        masked_nonzero += int(np.count_nonzero(out[~allowed]))
    return worst, 50, worst < 1e-12 and masked_nonzero == 0, f"masked_nonzero={masked_nonzero}"


def check_mask_sparsity(rng, tol):
    worst = 0.0
    for _ in range(30):
        M, N, P = rng.integer(1, 6), rng.integer(1, 6), rng.integer(1, 3)
        mask = att.Mask.from_allowed(rng.uniform(M, N) > 0.2)
        head = att.BiaffineParams(rng.uniform(), rng.uniform(P), rng.uniform(P), rng.uniform(P, P))
        scores = att.biaffine_attention(rng.uniform(M, P), rng.uniform(N, P), head, mask)
        out = att.run_pipeline(scores, (att.Step("mask"), att.Step("leaky_relu"), att.Step("softmax_columns")), mask)
        excess = np.count_nonzero(out) - mask.allowed_count
        worst = max(worst, float(max(excess, 0)))
    return worst, 30, worst == 0.0


def check_degeneracy(rng, tol):
    mismatches = 0
    for _ in range(20):
        M, N, P, Q, K = (rng.integer(1, 5) for _ in range(5))
        const = rng.sparse_dense((K, M, N))
        theta = rng.uniform(K, P, Q)
        x = rng.uniform(M, P)
        spec = att.AttentionConvSpec(list(const), theta)
        y_att = att.attention_convolve(x, spec, rng.uniform(M, 2), rng.uniform(N, 2))
        y_conv = convolve(BasisStack.from_dense(const), x, theta)
        mismatches += not np.array_equal(y_att, y_conv)
    return float(mismatches), 20, mismatches == 0


def check_transformer_factorisation(rng, tol):
    worst = 0.0
    for _ in range(50):
        M, N, P, Q, D = (rng.integer(1, 5) for _ in range(5))
        xp, yp = rng.uniform(M, P), rng.uniform(N, Q)
        key, query = rng.uniform(P, D), rng.uniform(Q, D)
        head = att.transformer_head(xp, yp, key, query)
        expanded = att.biaffine_attention(xp, yp, att.BiaffineParams(lam=key @ query.T))
        worst = max(worst, _abs(head, att.softmax_columns(expanded / np.sqrt(D))))
    return worst, 50, worst < 1e-12


def check_multihead_sum(rng, tol):
    worst = 0.0
    for _ in range(50):
        M, N, P, Q, D, K = (rng.integer(1, 4) for _ in range(6))
        heads = [att.softmax_columns(rng.uniform(M, N)) for _ in range(K)]
        tv = [rng.uniform(P, D) for _ in range(K)]
        to = rng.uniform(Q, K * D)
        x = rng.uniform(M, P)
        worst = max(worst, _abs(att.multihead_sum(x, heads, tv, to), att.multihead_concat_project(x, heads, tv, to)))
    return worst, 50, worst < 1e-12


def check_softmax_shift_invariance(rng, tol):
    worst = 0.0
    for _ in range(30):
        M, N = rng.integer(1, 6), rng.integer(1, 6)
        s = rng.uniform(M, N)
        c = 5 * rng.uniform(N)
        worst = max(worst, _abs(att.softmax_columns(s + c[None, :]), att.softmax_columns(s)))
    return worst, 30, worst < 1e-12


def check_attention_linearity(rng, tol):
    worst = 0.0
    for _ in range(20):
        M, N, P, Q, Pa, Qa = (rng.integer(1, 4) for _ in range(6))
        heads = [att.BiaffineParams(rng.uniform(), rng.uniform(Pa), rng.uniform(Qa), rng.uniform(Pa, Qa)) for _ in range(2)]
        spec = att.AttentionConvSpec(heads, rng.uniform(2, P, Q), (att.Step("softmax_columns"),))
        xp, yp = rng.uniform(M, Pa), rng.uniform(N, Qa)
        x1, x2 = rng.uniform(M, P), rng.uniform(M, P)
        al, be = rng.uniform(), rng.uniform()
        lhs = att.attention_convolve(al * x1 + be * x2, spec, xp, yp)
        rhs = al * att.attention_convolve(x1, spec, xp, yp) + be * att.attention_convolve(x2, spec, xp, yp)
        worst = max(worst, _abs(lhs, rhs))
    return worst, 20, worst < 1e-12


PROPERTIES: dict[str, Callable] = {
    "bijectivity": check_bijectivity,
    "flatten_roundtrip": check_flatten_roundtrip,
    "mixed_bilinearity": check_mixed_bilinearity,
    "inversion": check_inversion,
    "rank_bound": check_rank_bound,
    "factorisation": check_factorisation,
    "linearity": check_linearity,
    "composition": check_composition,
    "path_agreement": check_path_agreement,
    "shift_composition": check_shift_composition,
    "cnn_equivalence": check_cnn_equivalence,
    "translation_equivariance": check_translation_equivariance,
    "chebyshev": check_chebyshev,
    "gcn": check_gcn,
    "random_walk": check_random_walk,
    "grouped": check_grouped,
    "controlled_separability": check_controlled,
    "parameter_counts": check_parameter_counts,
    "softmax": check_softmax,
    "mask_sparsity": check_mask_sparsity,
    "degeneracy": check_degeneracy,
    "transformer_factorisation": check_transformer_factorisation,
    "multihead_sum": check_multihead_sum,
    "softmax_shift_invariance": check_softmax_shift_invariance,
    "attention_linearity": check_attention_linearity,
}


def run_suite(seed: int = 0, only: list[str] | None = None, tol: float | None = None) -> list[PropertyResult]:
    """Run the selected properties, each with its own generator derived from ``seed``.

    ``tol`` is passed through to each check; checks use their own fixed
    tolerances and ignore it.
    """
    names = list(PROPERTIES) if not only else only
    unknown = [n for n in names if n not in PROPERTIES]
    if unknown:
        raise KeyError(f"unknown properties: {', '.join(unknown)}")
    results = []
    for i, name in enumerate(PROPERTIES):
        if name not in names:
            continue
        rng = XorShift64(seed * 1000003 + i)
        out = PROPERTIES[name](rng, tol)
        worst, n, passed = out[:3]
        detail = out[3] if len(out) > 3 else ""
        results.append(PropertyResult(name, bool(passed), float(worst), int(n), detail))
    return results
