import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphon_stackelberg import graphon as gr


def test_constant_graphon_aggregate():
    G = gr.constant_graphon(4, 0.5)
    X = np.arange(4.0).reshape(4, 1, 1)
    np.testing.assert_allclose(gr.aggregate(G, X)[:, 0, 0], 0.5 * 1.5)


def test_step_graphon_row_sums():
    G = gr.step_graphon(8, [0.0, 0.5, 1.0], [[0.8, 0.2], [0.2, 0.8]])
    holds, c, dev = gr.constant_row_sum(G)
    assert holds
    assert c == pytest.approx(0.5)
    G2 = gr.step_graphon(8, [0.0, 0.25, 1.0], [[0.8, 0.2], [0.2, 0.8]])
    holds, _, dev = gr.constant_row_sum(G2)
    assert not holds and dev > 0.1


def test_aggregate_index_mismatch_message():
    G = gr.constant_graphon(4, 0.5)
    with pytest.raises(gr.GraphonError, match="first unmatched index"):
        gr.aggregate(G, np.zeros((3, 1, 1)))


def test_interpolate_and_distance():
    G1 = gr.constant_graphon(4, 0.2)
    G2 = gr.constant_graphon(4, 0.6)
    Gs = gr.interpolate(G1, G2, 0.25)
    np.testing.assert_allclose(Gs.values, 0.3)
    assert gr.distance(G1, Gs) == pytest.approx(0.1)


def test_sampled_graphon_validation():
    with pytest.raises(gr.GraphonError):
        gr.sampled_graphon([[0.0, 1.0], [0.5, 0.0]])
    with pytest.raises(gr.GraphonError):
        gr.sampled_graphon([[1.5, 0.0], [0.0, 1.0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000))
def test_operator_norm_bounded_by_sup(M, seed):
    rng = np.random.default_rng(seed)
    W = rng.uniform(0, 1, (M, M))
    G = gr.sampled_graphon(0.5 * (W + W.T))
    X = rng.standard_normal((M, 2, 1))
    lhs = gr.l2_norm(G.grid, gr.aggregate(G, X))
    assert lhs <= gr.sup_norm(G) * gr.l2_norm(G.grid, X) + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10_000), st.floats(-2, 2))
def test_aggregate_linear(M, seed, a):
    rng = np.random.default_rng(seed)
    W = rng.uniform(0, 1, (M, M))
    G = gr.sampled_graphon(0.5 * (W + W.T))
    X, Y = rng.standard_normal((2, M, 1, 1))
    np.testing.assert_allclose(gr.aggregate(G, a * X + Y), a * gr.aggregate(G, X) + gr.aggregate(G, Y),
                               atol=1e-12)
