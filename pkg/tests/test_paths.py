import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphon_stackelberg.paths import MatrixPath, TimeGrid, pointwise, resample, stack_blocks


def test_grid_basics():
    g = TimeGrid(2.0, 8)
    assert g.h == 0.25
    np.testing.assert_allclose(g.times, np.linspace(0, 2, 9))
    assert g.refine(2).N == 16
    with pytest.raises(ValueError):
        TimeGrid(-1.0, 4)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_left_constant_stages():
    g = TimeGrid(1.0, 4)
    p = MatrixPath(g, np.arange(5.0).reshape(5, 1, 1))
    np.testing.assert_array_equal(p.stages[:, :, 0, 0], np.repeat(np.arange(4.0)[:, None], 3, axis=1))


def test_hermite_midpoint_exact_for_cubic():
    g = TimeGrid(1.0, 5)
    t = g.times
    y = t ** 3 - t
    dy = 3 * t ** 2 - 1
    p = MatrixPath.from_solution(g, y.reshape(-1, 1, 1), dy[:-1].reshape(-1, 1, 1), dy[1:].reshape(-1, 1, 1))
    tm = t[:-1] + g.h / 2
    np.testing.assert_allclose(p.stages[:, 1, 0, 0], tm ** 3 - tm, atol=1e-14)


def test_algebra_and_matmul_dispatch():
    g = TimeGrid(1.0, 3)
    a = MatrixPath.constant(g, [[1.0, 2.0], [3.0, 4.0]])
    b = MatrixPath.constant(g, np.eye(2))
    np.testing.assert_allclose((a @ b).nodes, a.nodes)
    np.testing.assert_allclose((2 * a - a).nodes, a.nodes)
    m = np.array([[0.0, 1.0], [1.0, 0.0]])
    left = m @ a
    assert isinstance(left, MatrixPath)
    np.testing.assert_allclose(left.nodes[0], m @ a.nodes[0])
    np.testing.assert_allclose(a.T().nodes[0], a.nodes[0].T)
    assert a.sup_norm() == 4.0


def test_stack_blocks_fills_zeros():
    g = TimeGrid(1.0, 2)
    a = MatrixPath.constant(g, np.ones((2, 2)))
    big = stack_blocks([[a, None], [None, np.eye(1)]])
    assert big.shape == (3, 3)
    np.testing.assert_array_equal(big.nodes[1], [[1, 1, 0], [1, 1, 0], [0, 0, 1]])


def test_resample_left_constant():
    coarse = MatrixPath(TimeGrid(1.0, 2), np.array([0.0, 1.0, 2.0]).reshape(3, 1, 1))
    fine = resample(coarse, TimeGrid(1.0, 4))
    np.testing.assert_array_equal(fine.nodes[:, 0, 0], [0, 0, 1, 1, 2])


def test_mismatched_lengths_rejected():
    with pytest.raises(ValueError):
        MatrixPath(TimeGrid(1.0, 3), np.zeros((3, 1, 1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.floats(-3, 3), st.floats(-3, 3))
def test_pointwise_is_linear(N, x, y):
    g = TimeGrid(1.0, N)
    rng = np.random.default_rng(N)
    p = MatrixPath(g, rng.standard_normal((N + 1, 2, 2)))
    q = MatrixPath(g, rng.standard_normal((N + 1, 2, 2)))
    r = pointwise(lambda a, b: x * a + y * b, p, q)
    np.testing.assert_allclose(r.stages, x * p.stages + y * q.stages)
