"""Command-line interface: ``structconv {basis,conv,attn,plan,verify,bench}``.

Exit codes: 0 success, 1 validation/usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path as FsPath

import numpy as np

from . import io
from .attention import attention_convolve, attention_heads, positional_heads
from .basis import (
    GridSpec,
    KernelSpec,
    chebyshev_basis,
    gcn_basis,
    grid_basis,
    identity_basis,
    random_walk_basis,
    relation_sort_basis,
)
from .conv import MultiplyAddCounter, Path, compose, convolve_batched, path_costs, plan_contraction
from .errors import StructConvError
from .sparse import BasisStack
from .verify import PROPERTIES, XorShift64, run_suite

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _per_dim(values, ndim, name):
    if values is None:
        return None
    if len(values) == 1:
        return values * ndim
    if len(values) != ndim:
        raise UsageError(f"--{name} needs 1 or {ndim} values, got {len(values)}")
    return values


def _need(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"basis {args.kind} requires {', '.join(missing)}")


def cmd_basis(args) -> int:
    kind = args.kind
    if kind == "grid":
        _need(args, "dims", "kernel")
        nd = len(args.dims)
        spec = KernelSpec(
            _per_dim(args.kernel, nd, "kernel"),
            _per_dim(args.strides, nd, "strides") or (),
            _per_dim(args.offsets, nd, "offsets") or (),
        )
        A = grid_basis(GridSpec(args.dims), spec, _per_dim(args.subsample, nd, "subsample"))
    elif kind == "identity":
        _need(args, "n")
        A = identity_basis(args.n)
    elif kind == "shift-heads":
        _need(args, "dims", "shifts")
        A = positional_heads(GridSpec(args.dims), args.shifts)
    else:
        _need(args, "graph")
        g = io.read_graph(args.graph, args.n)
        if kind == "gcn":
            A = gcn_basis(g, renormalized=not args.plain_laplacian)
        elif kind == "chebyshev":
            _need(args, "order")
            A = chebyshev_basis(g, args.order)
        elif kind == "walk":
            _need(args, "order")
            A = random_walk_basis(g, args.order)
        else:
            _need(args, "sorts_file")
            sorts = [line.replace(".", " ").split() for line in FsPath(args.sorts_file).read_text().splitlines()]
            A = relation_sort_basis(g, [s for s in sorts if s and not s[0].startswith("#")])
    io.write_basis(args.out, A)
    print(f"K={A.K} M={A.M} N={A.N} nnz={A.nnz}")
    return EXIT_OK


def _print_plan(B, M, N, P, Q, K, nnz, chosen: Path | None = None):
    plan = plan_contraction(B, M, N, P, Q, K, nnz)
    for p in Path:
        mark = " *" if p is (chosen or plan.path) else ""
        print(f"{p.value:<6}{p.description:<18}cost={plan.costs[p]}{mark}")
    return plan


def cmd_conv(args) -> int:
    if args.action == "apply":
        A = io.read_basis(args.basis)
        x = io.read_tensor(args.input)
        theta = io.read_params(args.params)
        if x.ndim == 2:
            x_b = x[None]
        elif x.ndim == 3:
            x_b = x
        else:
            raise UsageError(f"input must be ⟨M,P⟩ or ⟨B,M,P⟩, got shape {x.shape}")
        if theta.ndim != 3:
            raise UsageError(f"parameters must be ⟨K,P,Q⟩, got shape {theta.shape}")
        B, M, P = x_b.shape
        if (M, P, A.K) != (A.M, theta.shape[1], theta.shape[0]):
            raise UsageError(
                f"shape mismatch: input {x.shape}, basis (K,M,N)={(A.K, A.M, A.N)}, params {theta.shape}"
            )
        chosen = None if args.path == "auto" else Path(args.path)
        plan = _print_plan(B, M, A.N, P, theta.shape[2], A.K, A.nnz, chosen)
        path = chosen or plan.path
        counter = MultiplyAddCounter()
        y = convolve_batched(A, x_b, theta, path.value, counter)
        print(f"path={path.value} multiply_adds={counter.count}")
        io.write_tensor(args.out, y[0] if x.ndim == 2 else y, args.format)
        return EXIT_OK
    A1, A2 = io.read_basis(args.basis1), io.read_basis(args.basis2)
    t1, t2 = io.read_params(args.params1), io.read_params(args.params2)
    A, theta = compose(A1, t1, A2, t2)
    io.write_basis(args.out_basis, A)
    io.write_tensor(args.out_params, theta, args.format)
    print(f"K={A.K} M={A.M} N={A.N} nnz={A.nnz}")
    return EXIT_OK


def cmd_attn(args) -> int:
    spec = io.read_attention_spec(args.spec)
    x = io.read_tensor(args.input)
    xp = io.read_tensor(args.x_aux) if args.x_aux else None
    yp = io.read_tensor(args.y_aux) if args.y_aux else None
    if args.dump_heads:
        out_dir = FsPath(args.dump_heads)
        out_dir.mkdir(parents=True, exist_ok=True)
        for k, a in enumerate(attention_heads(x, spec, xp, yp), start=1):
            io.write_tensor(out_dir / f"head_{k}.json", a, "json")
    y = attention_convolve(x, spec, xp, yp)
    for k, empty in enumerate(spec.last_empty_columns, start=1):
        if np.any(empty):
            cols = ",".join(str(i + 1) for i in np.nonzero(empty)[0])
            print(f"warning: head {k} has fully masked columns {cols} (set to zero)")
    io.write_tensor(args.out, y, args.format)
    print(f"N={y.shape[0]} Q={y.shape[1]}")
    return EXIT_OK


def cmd_plan(args) -> int:
    _print_plan(args.B, args.M, args.N, args.P, args.Q, args.K, args.nnz)
    return EXIT_OK


def cmd_verify(args) -> int:
    for path in args.basis or []:
        io.read_basis(path)
    for path in args.tensor or []:
        io.read_tensor(path)
    only = [n for item in args.only or [] for n in item.split(",") if n]
    unknown = [n for n in only if n not in PROPERTIES]
    if unknown:
        raise UsageError(f"unknown properties {unknown}; choose from {', '.join(PROPERTIES)}")
    results = run_suite(args.seed, only or None, args.tol)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def _bench_basis(kind: str, entries: int, K: int, rng: XorShift64) -> BasisStack:
    if kind == "grid":
        return grid_basis(GridSpec((entries,)), KernelSpec((K,), offsets=(-(K + 1) // 2,)))
    if kind == "identity":
        return identity_basis(entries)
    return BasisStack.from_dense(rng.sparse_dense((K, entries, entries), 0.1))


def cmd_bench(args) -> int:
    rng = XorShift64(args.seed)
    tol = 1e-9 if args.tol is None else args.tol
    header = f"{'B':>4} {'M':>6} {'P':>4} {'K':>3} {'nnz':>8} {'path':<6} {'predicted':>12} {'counted':>12} {'ratio':>6} {'ms':>9}"
    print(header)
    for B in args.batch:
        for M in args.entries:
            for P in args.channels:
                K = 1 if args.basis_kind == "identity" else args.kernel
                A = _bench_basis(args.basis_kind, M, K, rng)
                X = rng.uniform(B, M, P)
                theta = rng.uniform(A.K, P, P)
                costs = path_costs(B, M, A.N, P, P, A.K, A.nnz)
                outs = {}
                for p in Path:
                    counter = MultiplyAddCounter()
                    outs[p] = convolve_batched(A, X, theta, p.value, counter)
                    if counter.count != costs[p]:
                        print(f"counter mismatch on {p.value}: {counter.count} != {costs[p]}", file=sys.stderr)
                        return EXIT_NUMERIC
                ref = outs[Path.GREEN]
                scale = max(np.abs(ref).max(), 1.0)
                for p in (Path.BLUE, Path.RED):
                    err = np.abs(outs[p] - ref).max() / scale
                    if err > tol:
                        print(f"paths disagree: {p.value} vs green rel_err={err:.3e}", file=sys.stderr)
                        return EXIT_NUMERIC
                best = plan_contraction(B, M, A.N, P, P, A.K, A.nnz).path
                for p in Path:
                    t0 = time.perf_counter()
                    for _ in range(args.repeat):
                        counter = MultiplyAddCounter()
                        convolve_batched(A, X, theta, p.value, counter)
                    ms = (time.perf_counter() - t0) * 1e3 / args.repeat
                    mark = "*" if p is best else ""
                    print(
                        f"{B:>4} {M:>6} {P:>4} {A.K:>3} {A.nnz:>8} {p.value + mark:<6} "
                        f"{costs[p]:>12} {counter.count:>12} {counter.count / costs[p]:>6.1f} {ms:>9.3f}"
                    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for generated instances")
    common.add_argument("--tol", type=float, default=None, help="agreement tolerance for bench (default 1e-9)")
    common.add_argument("--format", choices=("json", "binary"), default="json", help="tensor output format")

    parser = _Parser(prog="structconv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("basis", parents=[common], help="build a basis stack file")
    b.add_argument("kind", choices=("grid", "identity", "gcn", "chebyshev", "walk", "sorts", "shift-heads"))
    b.add_argument("--out", required=True)
    b.add_argument("--dims", type=_ints)
    b.add_argument("--kernel", type=_ints)
    b.add_argument("--strides", type=_ints)
    b.add_argument("--offsets", type=_ints)
    b.add_argument("--subsample", type=_ints)
    b.add_argument("--shifts", type=_ints)
    b.add_argument("--n", type=int)
    b.add_argument("--graph")
    b.add_argument("--order", type=int)
    b.add_argument("--sorts-file")
    b.add_argument("--plain-laplacian", action="store_true", help="gcn: use I - D^-1/2 A D^-1/2")
    b.set_defaults(func=cmd_basis)

    c = sub.add_parser("conv", parents=[common], help="apply or compose convolutions")
    c.add_argument("action", choices=("apply", "compose"))
    c.add_argument("--basis")
    c.add_argument("--input")
    c.add_argument("--params")
    c.add_argument("--out")
    c.add_argument("--path", choices=("auto", "green", "blue", "red"), default="auto")
    c.add_argument("--basis1")
    c.add_argument("--params1")
    c.add_argument("--basis2")
    c.add_argument("--params2")
    c.add_argument("--out-basis")
    c.add_argument("--out-params")
    c.set_defaults(func=_conv_dispatch)

    a = sub.add_parser("attn", parents=[common], help="evaluate an attention convolution")
    a.add_argument("action", choices=("apply",))
    a.add_argument("--spec", required=True)
    a.add_argument("--input", required=True)
    a.add_argument("--x-aux")
    a.add_argument("--y-aux")
    a.add_argument("--out", required=True)
    a.add_argument("--dump-heads", metavar="DIR")
    a.set_defaults(func=cmd_attn)

    p = sub.add_parser("plan", parents=[common], help="cost of each contraction path")
    for name in ("B", "M", "N", "P", "Q", "K", "nnz"):
        p.add_argument(f"--{name}", type=int, required=True)
    p.set_defaults(func=cmd_plan)

    v = sub.add_parser("verify", parents=[common], help="run the property suite")
    v.add_argument("--only", action="append", help="property names (repeatable or comma-separated)")
    v.add_argument("--basis", action="append", help="validate a basis file first")
    v.add_argument("--tensor", action="append", help="validate a tensor file first")
    v.set_defaults(func=cmd_verify)

    bn = sub.add_parser("bench", parents=[common], help="time the three contraction paths")
    bn.add_argument("--batch", type=_ints, default=(1, 8))
    bn.add_argument("--entries", type=_ints, default=(64, 256))
    bn.add_argument("--channels", type=_ints, default=(4, 16))
    bn.add_argument("--kernel", type=int, default=3)
    bn.add_argument("--basis-kind", choices=("grid", "identity", "random"), default="grid")
    bn.add_argument("--repeat", type=int, default=3)
    bn.set_defaults(func=cmd_bench)
    return parser


def _conv_dispatch(args) -> int:
    required = ("basis", "input", "params", "out") if args.action == "apply" else (
        "basis1", "params1", "basis2", "params2", "out_basis", "out_params"
    )
    missing = [f"--{n.replace('_', '-')}" for n in required if getattr(args, n) is None]
    if missing:
        raise UsageError(f"conv {args.action} requires {', '.join(missing)}")
    return cmd_conv(args)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, StructConvError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
