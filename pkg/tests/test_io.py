import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from structconv import io
from structconv.attention import AttentionConvSpec, BiaffineParams, Mask, Step
from structconv.basis import Graph, GridSpec, KernelSpec, grid_basis
from structconv.params import ControlledSeparableParams, DepthwiseParams, GroupedParams
from structconv.sparse import SparseMatrix


def test_canonical_json_formatting():
    assert io.canonical_json({"b": 1, "a": [1.0, -0.0, 0.1]}) == '{"a":[1.0,0.0,0.10000000000000001],"b":1}'
    with pytest.raises(io.FormatError):
        io.canonical_json(float("nan"))


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 4)), elements=finite))
def test_tensor_json_roundtrip_exact(a):
    obj = json.loads(io.canonical_json(io.tensor_to_obj(a)))
    back = io.tensor_from_obj(obj)
    assert np.array_equal(back, a + 0.0)
    assert io.canonical_json(io.tensor_to_obj(back)) == io.canonical_json(io.tensor_to_obj(a))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2)), elements=finite))
def test_tensor_binary_roundtrip(a):
    buf = io.encode_tensor_binary(a)
    assert buf[:4] == b"UCNV"
    assert len(buf) == 4 + 4 + 8 * 3 + 8 * a.size
    np.testing.assert_array_equal(io.decode_tensor_binary(buf), a)


def test_tensor_files_byte_stable(tmp_path):
    a = np.random.default_rng(0).normal(size=(3, 2))
    for fmt in ("json", "binary"):
        p1, p2 = tmp_path / f"a.{fmt}", tmp_path / f"b.{fmt}"
        io.write_tensor(p1, a, fmt)
        io.write_tensor(p2, io.read_tensor(p1), fmt)
        assert p1.read_bytes() == p2.read_bytes()


@pytest.mark.parametrize(
    "payload",
    [b"UCNV\x01\x00", b"UCNV\x01\x00\x00\x00\x02\x00\x00\x00\x00\x00\x00\x00\x00", b"\xff\xfe\x00", b'{"shape":[2],"data":[1.0]}'],
)
def test_corrupted_tensor_rejected(tmp_path, payload):
    p = tmp_path / "bad"
    p.write_bytes(payload)
    with pytest.raises(io.FormatError):
        io.read_tensor(p)


def test_basis_roundtrip_is_one_based(tmp_path):
    A = grid_basis(GridSpec((4,)), KernelSpec((2,), (1,), (-1,)))
    obj = io.basis_to_obj(A)
    assert obj["entries"][0] == [1, 1, 1, 1.0]
    p = tmp_path / "basis.json"
    io.write_basis(p, A)
    back = io.read_basis(p)
    assert back.equals(A)
    q = tmp_path / "again.json"
    io.write_basis(q, back)
    assert p.read_bytes() == q.read_bytes()


@pytest.mark.parametrize(
    "obj",
    [
        {"K": 1, "M": 2, "N": 2, "entries": [[1, 3, 1, 1.0]]},
        {"K": 1, "M": 2, "N": 2, "entries": [[1, 1, 1, 1.0], [1, 1, 1, 2.0]]},
        {"K": 1, "M": 2, "entries": []},
        {"K": 1, "M": 2, "N": 2, "entries": [[1, 1, 1]]},
    ],
)
def test_corrupted_basis_rejected(obj):
    with pytest.raises(io.FormatError):
        io.basis_from_obj(obj)


def test_graph_text_roundtrip():
    text = "# nodes: 4\n1 2 1.5 r\n2 3 1 # trailing comment\n"
    g = io.parse_graph(text)
    assert g.n == 4
    assert g.edges == ((1, 2, 1.5, "r"), (2, 3, 1.0, None))
    assert io.parse_graph(io.format_graph(g)) == g


def test_graph_errors():
    with pytest.raises(io.FormatError):
        io.parse_graph("1 2")
    with pytest.raises(io.FormatError):
        io.parse_graph("")
    with pytest.raises(io.FormatError):
        io.parse_graph("1 5 1.0", n=3)


@pytest.mark.filterwarnings("ignore:controlled separability")
@pytest.mark.parametrize(
    "p",
    [
        GroupedParams(np.arange(8.0).reshape(1, 2, 2, 2)),
        DepthwiseParams(np.ones((2, 3)), np.arange(6.0).reshape(3, 2)),
        ControlledSeparableParams(np.ones((1, 9)), np.ones((1, 2, 2))),
        ControlledSeparableParams(np.ones((2, 9)), GroupedParams(np.ones((2, 2, 1, 1)))),
    ],
)
def test_reduced_params_roundtrip(tmp_path, p):
    path = tmp_path / "p.json"
    io.write_json(path, io.reduced_to_obj(p))
    np.testing.assert_array_equal(io.read_params(path), p.expand())


def test_read_params_plain_tensor(tmp_path):
    t = np.ones((2, 1, 3))
    io.write_tensor(tmp_path / "t.bin", t, "binary")
    np.testing.assert_array_equal(io.read_params(tmp_path / "t.bin"), t)


def test_attention_spec_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    heads = [
        BiaffineParams(0.5, rng.normal(size=2), None, rng.normal(size=(2, 2))),
        BiaffineParams(0.0, None, None, None, rng.normal(size=(2, 1)), rng.normal(size=(2, 1))),
        SparseMatrix.identity(3),
    ]
    spec = AttentionConvSpec(
        heads, rng.normal(size=(3, 2, 2)), (Step("mask"), Step("leaky_relu"), Step("softmax_columns")), "self", Mask.causal(3)
    )
    p = tmp_path / "spec.json"
    io.write_attention_spec(p, spec)
    back = io.read_attention_spec(p)
    q = tmp_path / "again.json"
    io.write_attention_spec(q, back)
    assert p.read_bytes() == q.read_bytes()
    assert back.wiring == "self" and back.pipeline[1].value == 0.2
    np.testing.assert_array_equal(back.mask.allowed(), spec.mask.allowed())


def test_attention_spec_value_output_factorisation():
    obj = {
        "heads": [{}],
        "theta_value": io.tensor_to_obj(np.array([[[1.0], [0.0]]])),
        "theta_O": io.tensor_to_obj(np.array([[2.0], [3.0]])),
    }
    spec = io.attention_spec_from_obj(obj)
    np.testing.assert_array_equal(spec.theta[0], [[2.0, 3.0], [0.0, 0.0]])


def test_attention_spec_errors():
    with pytest.raises(io.FormatError):
        io.attention_spec_from_obj({"heads": [{}]})
    with pytest.raises(io.FormatError):
        io.attention_spec_from_obj({"K": 2, "heads": [{}], "theta": io.tensor_to_obj(np.ones((1, 1, 1)))})
