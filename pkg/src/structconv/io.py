"""File formats.

* tensor: JSON ``{"data": [...], "shape": [...]}`` or binary ``UCNV`` (magic,
  u32 order, u64 dims, little-endian f64 row-major data);
* basis stack: JSON ``{"K", "M", "N", "entries": [[k, row, col, value], ...]}``, 1-based;
* graph: text lines ``u v w [label]``, 1-based ids, ``#`` comments,
  optional ``# nodes: N`` directive;
* reduced parameters: JSON tagged by ``"scheme"``;
* attention spec: JSON with ``K``, ``wiring``, ``pipeline``, ``heads`` and Θ.

JSON output is canonical: sorted keys, no whitespace, floats with 17
significant digits, so a read/write round trip is byte-stable.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .attention import (
    AttentionConvSpec,
    BiaffineParams,
    Mask,
    Step,
    expand_transformer_theta,
    split_output_projection,
)
from .basis import Graph
from .errors import ArgumentError, ShapeError
from .params import ControlledSeparableParams, DepthwiseParams, GroupedParams
from .sparse import BasisStack, SparseMatrix

MAGIC = b"UCNV"


class FormatError(ArgumentError):
    """A file does not conform to its format."""


def _fmt_float(v: float) -> str:
    v = float(v)
    if math.isnan(v) or math.isinf(v):
        raise FormatError(f"non-finite value {v} cannot be written as JSON")
    if v == 0.0:
        v = 0.0  # drop the sign of -0.0
    s = format(v, ".17g")
    if "." not in s and "e" not in s:
        s += ".0"
    return s


def canonical_json(obj: Any) -> str:
    """Serialise with sorted keys, compact separators and 17-significant-digit floats."""
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ",".join(json.dumps(str(k)) + ":" + canonical_json(v) for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return canonical_json(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    raise FormatError(f"cannot serialise {type(obj).__name__}")


def _write_text(path, text: str) -> None:
    Path(path).write_text(text + "\n", encoding="utf-8")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


# tensors

def tensor_to_obj(a) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def tensor_from_obj(obj) -> np.ndarray:
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise FormatError("tensor object needs 'shape' and 'data'")
    shape = tuple(int(d) for d in obj["shape"])
    if any(d < 1 for d in shape):
        raise FormatError(f"tensor dims must be >= 1, got {shape}")
    data = np.asarray(obj["data"], dtype=np.float64)
    if data.ndim != 1 or data.size != math.prod(shape):
        raise FormatError(f"tensor of shape {shape} needs {math.prod(shape)} values, got {data.size}")
    return data.reshape(shape)


def encode_tensor_binary(a) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    header = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + a.tobytes()


def decode_tensor_binary(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise FormatError("missing UCNV magic bytes")
    if len(buf) < 8:
        raise FormatError("truncated tensor header")
    (order,) = struct.unpack_from("<I", buf, 4)
    end = 8 + 8 * order
    if len(buf) < end:
        raise FormatError("truncated tensor header")
    shape = struct.unpack_from(f"<{order}Q", buf, 8)
    count = math.prod(shape)
    if len(buf) != end + 8 * count:
        raise FormatError(f"tensor of shape {shape} needs {8 * count} data bytes, got {len(buf) - end}")
    return np.frombuffer(buf, dtype="<f8", offset=end).astype(np.float64).reshape(shape)


def write_tensor(path, a, fmt: str = "json") -> None:
    if fmt == "binary":
        Path(path).write_bytes(encode_tensor_binary(a))
    elif fmt == "json":
        _write_text(path, canonical_json(tensor_to_obj(a)))
    else:
        raise ArgumentError(f"unknown tensor format {fmt!r}")


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] == MAGIC:
        return decode_tensor_binary(raw)
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: neither a binary nor a JSON tensor") from exc
    return tensor_from_obj(obj)


# basis stacks

def basis_to_obj(A: BasisStack) -> dict:
    entries = []
    for k, a in enumerate(A, start=1):
        entries.extend([k, int(r) + 1, int(c) + 1, float(v)] for r, c, v in zip(a.rows, a.cols, a.vals))
    return {"K": A.K, "M": A.M, "N": A.N, "entries": entries}


def basis_from_obj(obj) -> BasisStack:
    try:
        K, M, N = int(obj["K"]), int(obj["M"]), int(obj["N"])
        entries = obj["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"basis object needs integer K, M, N and an entries list ({exc})") from exc
    if min(K, M, N) < 1:
        raise FormatError(f"basis dims must be >= 1, got K={K}, M={M}, N={N}")
    per_k: list[list] = [[] for _ in range(K)]
    for e in entries:
        if len(e) != 4:
            raise FormatError(f"basis entry {e} must be [k, row, col, value]")
        k, r, c = int(e[0]), int(e[1]), int(e[2])
        if not (1 <= k <= K and 1 <= r <= M and 1 <= c <= N):
            raise FormatError(f"basis entry {e} out of range for K={K}, M={M}, N={N}")
        per_k[k - 1].append((r - 1, c - 1, float(e[3])))
    mats = []
    for k, trip in enumerate(per_k, start=1):
        arr = np.array(trip, dtype=np.float64).reshape(-1, 3)
        try:
            mats.append(SparseMatrix((M, N), arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2]))
        except ShapeError as exc:
            raise FormatError(f"basis matrix {k}: {exc}") from exc
    return BasisStack(mats)


def write_basis(path, A: BasisStack) -> None:
    _write_text(path, canonical_json(basis_to_obj(A)))


def read_basis(path) -> BasisStack:
    return basis_from_obj(_read_json(path))


# graphs

def parse_graph(text: str, n: int | None = None) -> Graph:
    edges = []
    declared = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if body.startswith("nodes:"):
                declared = int(body.split(":", 1)[1])
            continue
        stripped = stripped.split("#", 1)[0].strip()
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) not in (3, 4):
            raise FormatError(f"line {lineno}: expected 'u v w [label]', got {line!r}")
        try:
            u, v, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
        edges.append((u, v, w, parts[3] if len(parts) == 4 else None))
    size = n or declared or max((max(e[0], e[1]) for e in edges), default=0)
    if size < 1:
        raise FormatError("graph has no nodes; add a '# nodes: N' line")
    try:
        return Graph(size, tuple(edges))
    except ArgumentError as exc:
        raise FormatError(str(exc)) from exc


def read_graph(path, n: int | None = None) -> Graph:
    return parse_graph(Path(path).read_text(encoding="utf-8"), n)


def format_graph(g: Graph) -> str:
    lines = [f"# nodes: {g.n}"]
    for u, v, w, label in g.edges:
        lines.append(f"{u} {v} {_fmt_float(w)}" + (f" {label}" if label is not None else ""))
    return "\n".join(lines)


# reduced parameters

def reduced_to_obj(p) -> dict:
    if isinstance(p, GroupedParams):
        return {"scheme": "grouped", "blocks": tensor_to_obj(p.blocks)}
    if isinstance(p, DepthwiseParams):
        return {"scheme": "depthwise", "theta1": tensor_to_obj(p.theta1), "theta2": tensor_to_obj(p.theta2)}
    if isinstance(p, ControlledSeparableParams):
        c = p.channel
        channel = tensor_to_obj(c) if isinstance(c, np.ndarray) else reduced_to_obj(c)
        return {"scheme": "controlled", "basis": tensor_to_obj(p.basis), "channel": channel}
    raise FormatError(f"not a reduced parametrisation: {type(p).__name__}")


def reduced_from_obj(obj):
    scheme = obj.get("scheme") if isinstance(obj, dict) else None
    if scheme == "grouped":
        return GroupedParams(tensor_from_obj(obj["blocks"]))
    if scheme == "depthwise":
        return DepthwiseParams(tensor_from_obj(obj["theta1"]), tensor_from_obj(obj["theta2"]))
    if scheme == "controlled":
        ch = obj["channel"]
        channel = reduced_from_obj(ch) if "scheme" in ch else tensor_from_obj(ch)
        return ControlledSeparableParams(tensor_from_obj(obj["basis"]), channel)
    raise FormatError(f"unknown reduced-parameter scheme {scheme!r}")


def read_params(path):
    """Read Θ from a tensor file or a reduced-parameter file, returning the ⟨K,P,Q⟩ expansion."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: neither a binary nor a JSON parameter file") from exc
        if isinstance(obj, dict) and "scheme" in obj:
            return reduced_from_obj(obj).expand()
    return read_tensor(path)


# masks and attention specs

def mask_to_obj(mask: Mask) -> dict:
    allowed = [[int(r) + 1, int(c) + 1] for r, c in zip(mask.rows, mask.cols)]
    return {"M": mask.shape[0], "N": mask.shape[1], "allowed": allowed}


def mask_from_obj(obj) -> Mask:
    pairs = np.array(obj.get("allowed", []), dtype=np.int64).reshape(-1, 2)
    try:
        return Mask((int(obj["M"]), int(obj["N"])), pairs[:, 0] - 1, pairs[:, 1] - 1)
    except ShapeError as exc:
        raise FormatError(f"mask: {exc}") from exc


def _step_to_obj(step: Step) -> dict:
    out = {"op": step.op}
    if step.value is not None:
        out["value"] = step.value
    return out


def _opt_tensor(obj, key):
    return tensor_from_obj(obj[key]) if key in obj else None


def head_from_obj(obj):
    if "fixed" in obj:
        return SparseMatrix.from_dense(tensor_from_obj(obj["fixed"]))
    lam = _opt_tensor(obj, "Lambda")
    key = _opt_tensor(obj, "Lambda_key")
    query = _opt_tensor(obj, "Lambda_query")
    mu = _opt_tensor(obj, "mu")
    nu = _opt_tensor(obj, "nu")
    return BiaffineParams(float(obj.get("xi", 0.0)), mu, nu, lam, key, query)


def head_to_obj(head) -> dict:
    if isinstance(head, SparseMatrix):
        return {"fixed": tensor_to_obj(head.to_dense())}
    if isinstance(head, np.ndarray):
        return {"fixed": tensor_to_obj(head)}
    out: dict = {"xi": float(head.xi)}
    for name, val in (
        ("mu", head.mu),
        ("nu", head.nu),
        ("Lambda", head.lam),
        ("Lambda_key", head.lam_key),
        ("Lambda_query", head.lam_query),
    ):
        if val is not None:
            out[name] = tensor_to_obj(val)
    return out


def attention_spec_from_obj(obj) -> AttentionConvSpec:
    """Build a spec; Θ is ``theta`` ⟨K,P,Q⟩ or ``theta_value`` ⟨K,P,D⟩ with ``theta_O`` ⟨Q,K·D⟩."""
    try:
        heads = [head_from_obj(h) for h in obj["heads"]]
        K = int(obj.get("K", len(heads)))
        if K != len(heads):
            raise FormatError(f"K={K} but {len(heads)} heads given")
        if "theta" in obj:
            theta = tensor_from_obj(obj["theta"])
        elif "theta_value" in obj and "theta_O" in obj:
            tv = tensor_from_obj(obj["theta_value"])
            blocks = split_output_projection(tensor_from_obj(obj["theta_O"]), K)
            theta = np.stack([expand_transformer_theta(tv[k], blocks[k]) for k in range(K)])
        else:
            raise FormatError("attention spec needs 'theta' or 'theta_value' + 'theta_O'")
        pipeline = tuple(Step(s["op"], s.get("value")) for s in obj.get("pipeline", []))
        mask = mask_from_obj(obj["mask"]) if obj.get("mask") is not None else None
        return AttentionConvSpec(heads, theta, pipeline, obj.get("wiring", "general"), mask)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed attention spec ({exc})") from exc


def attention_spec_to_obj(spec: AttentionConvSpec) -> dict:
    out = {
        "K": spec.K,
        "wiring": spec.wiring,
        "pipeline": [_step_to_obj(s) for s in spec.pipeline],
        "heads": [head_to_obj(h) for h in spec.heads],
        "theta": tensor_to_obj(spec.theta),
    }
    if spec.mask is not None:
        out["mask"] = mask_to_obj(spec.mask)
    return out


def read_attention_spec(path) -> AttentionConvSpec:
    return attention_spec_from_obj(_read_json(path))


def write_attention_spec(path, spec: AttentionConvSpec) -> None:
    _write_text(path, canonical_json(attention_spec_to_obj(spec)))


def write_json(path, obj) -> None:
    _write_text(path, canonical_json(obj))
