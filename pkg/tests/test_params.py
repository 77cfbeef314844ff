import itertools

import numpy as np
import pytest

from structconv.basis import GridSpec, KernelSpec, grid_basis
from structconv.conv import convolve
from structconv.errors import ArgumentError, ShapeError
from structconv.params import (
    ControlledSeparableParams,
    DepthwiseParams,
    GroupedParams,
    convolve_controlled_separable,
    convolve_grouped_split,
    expand_controlled_separable,
    expand_depthwise,
    expand_grouped,
    grouped_from_dense_blocks,
    parameter_count,
)
from structconv.sparse import BasisStack


def test_grouped_single_group_is_dense():
    rng = np.random.default_rng(0)
    theta = rng.normal(size=(2, 3, 4))
    np.testing.assert_array_equal(expand_grouped(GroupedParams(theta[:, None])), theta)


def test_grouped_scalar_blocks_are_diagonal():
    blocks = np.arange(1.0, 7.0).reshape(2, 3, 1, 1)
    theta = expand_grouped(GroupedParams(blocks))
    for k in range(2):
        np.testing.assert_array_equal(theta[k], np.diag(blocks[k, :, 0, 0]))


def test_grouped_block_placement():
    blocks = np.arange(1.0, 9.0).reshape(1, 2, 2, 2)
    theta = expand_grouped(GroupedParams(blocks))[0]
    assert np.count_nonzero(theta) == 8
    np.testing.assert_array_equal(theta[:2, :2], blocks[0, 0])
    np.testing.assert_array_equal(theta[2:, 2:], blocks[0, 1])
    assert not theta[:2, 2:].any() and not theta[2:, :2].any()


def test_grouped_roundtrip_and_divisibility():
    blocks = np.random.default_rng(1).normal(size=(3, 2, 2, 3))
    theta = expand_grouped(GroupedParams(blocks))
    np.testing.assert_array_equal(grouped_from_dense_blocks(theta, 2).blocks, blocks)
    with pytest.raises(ArgumentError):
        grouped_from_dense_blocks(theta, 4)


def test_grouped_split_equals_dense():
    rng = np.random.default_rng(2)
    A = grid_basis(GridSpec((7,)), KernelSpec((3,), (1,), (-2,)))
    p = GroupedParams(rng.normal(size=(3, 2, 3, 2)))
    x = rng.normal(size=(7, 6))
    np.testing.assert_allclose(convolve_grouped_split(A, x, p), convolve(A, x, p.expand()), atol=1e-12)


def test_depthwise_examples():
    t2 = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(expand_depthwise(DepthwiseParams(np.ones((3, 2)), t2)), np.stack([t2] * 3))
    np.testing.assert_array_equal(expand_depthwise(DepthwiseParams(np.array([[2.0]]), np.array([[3.0]]))), [[[6.0]]])
    theta = expand_depthwise(DepthwiseParams(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [7.0]])))
    np.testing.assert_array_equal(theta[0], [[5.0], [14.0]])
    np.testing.assert_array_equal(theta[1], [[15.0], [28.0]])


def test_depthwise_shape_error():
    with pytest.raises(ShapeError):
        expand_depthwise(DepthwiseParams(np.ones((2, 3)), np.ones((2, 2))))


def test_controlled_example():
    p = ControlledSeparableParams(np.array([[1.0, 2.0]]), np.array([[[3.0]]]))
    with pytest.warns(UserWarning):
        theta = p.expand()
    np.testing.assert_array_equal(theta, [[[3.0]], [[6.0]]])


def test_controlled_identity_basis():
    rng = np.random.default_rng(3)
    channel = rng.normal(size=(3, 2, 2))
    with pytest.warns(UserWarning):
        theta = expand_controlled_separable(ControlledSeparableParams(np.eye(3), channel))
    np.testing.assert_array_equal(theta, channel)


def test_controlled_no_warning_in_saving_regime(recwarn):
    rng = np.random.default_rng(4)
    expand_controlled_separable(ControlledSeparableParams(rng.normal(size=(2, 9)), rng.normal(size=(2, 4, 4))))
    assert not recwarn.list


def test_controlled_h_mismatch():
    with pytest.raises(ShapeError):
        expand_controlled_separable(ControlledSeparableParams(np.ones((2, 3)), np.ones((3, 2, 2))))


@pytest.mark.parametrize("factor", ["dense", "grouped", "depthwise"])
def test_controlled_reassociated_equals_dense(factor):
    rng = np.random.default_rng(5)
    A = BasisStack.from_dense(rng.normal(size=(9, 6, 5)) * (rng.random((9, 6, 5)) < 0.5))
    H = 2
    if factor == "dense":
        channel = rng.normal(size=(H, 4, 4))
    elif factor == "grouped":
        channel = GroupedParams(rng.normal(size=(H, 2, 2, 2)))
    else:
        channel = DepthwiseParams(rng.normal(size=(H, 4)), rng.normal(size=(4, 4)))
    p = ControlledSeparableParams(rng.normal(size=(H, 9)), channel)
    x = rng.normal(size=(6, 4))
    np.testing.assert_allclose(convolve_controlled_separable(A, x, p), convolve(A, x, p.expand()), atol=1e-11)


def test_parameter_count_examples():
    assert parameter_count("dense", 9, 64, 64) == 36864
    assert parameter_count("grouped", 9, 64, 64, groups=2) == 18432
    assert parameter_count("controlled", 9, 64, 64, H=4) == 16420
    assert parameter_count("depthwise", 9, 64, 64) == 9 * 64 + 64 * 64


def test_parameter_count_errors():
    with pytest.raises(ArgumentError):
        parameter_count("grouped", 3, 4, 6, groups=4)
    with pytest.raises(ArgumentError):
        parameter_count("controlled", 3, 4, 4)
    with pytest.raises(ArgumentError):
        parameter_count("bogus", 3, 4, 4)


def test_parameter_count_matches_objects():
    rng = np.random.default_rng(6)
    for K, P, Q in itertools.product((1, 2, 3), (2, 4), (2, 4)):
        for nu in (1, 2):
            p = GroupedParams(rng.normal(size=(K, nu, P // nu, Q // nu)))
            assert p.count() == parameter_count("grouped", K, P, Q, groups=nu)
        assert DepthwiseParams(np.ones((K, P)), np.ones((P, Q))).count() == parameter_count("depthwise", K, P, Q)
        for H in (1, 2):
            c = ControlledSeparableParams(np.ones((H, K)), np.ones((H, P, Q)))
            assert c.count() == parameter_count("controlled", K, P, Q, H=H)
