import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphon_stackelberg import config, fixtures, gfbsde, model
from graphon_stackelberg import graphon as gr
from graphon_stackelberg.paths import MatrixPath


@pytest.fixture(scope="module")
def scalar_problem():
    return config.build_gfbsde(fixtures.gfbsde_scalar(N=100))


@pytest.fixture(scope="module")
def scalar_solution(scalar_problem):
    return gfbsde.continuation_solve(scalar_problem)


def test_manufactured_solution_exact():
    doc = fixtures.gfbsde_manufactured()
    p = config.build_gfbsde(doc)
    s = gfbsde.continuation_solve(p)
    x = np.array(doc["manufactured"]["x"]).reshape(-1, 1, 1)
    y = np.array(doc["manufactured"]["y"]).reshape(-1, 1, 1)
    np.testing.assert_allclose(s.m.nodes, np.broadcast_to(x, s.m.nodes.shape), atol=1e-12)
    np.testing.assert_allclose(s.mean_Y.nodes, np.broadcast_to(y, s.mean_Y.nodes.shape), atol=1e-12)
    res = gfbsde.residual(p, s)
    assert max(res.values()) <= 1e-12


def test_nonmonotone_rejected():
    p = config.build_gfbsde(fixtures.gfbsde_nonmonotone())
    rep = gfbsde.check_S1_S2(p)
    assert not rep["pass"] and rep["K1"] <= 0
    with pytest.raises(gfbsde.MonotonicityError, match="outside theorem hypotheses"):
        gfbsde.continuation_solve(p)


def test_residuals_and_their_order():
    out = []
    for N in (50, 200):
        p = config.build_gfbsde(fixtures.gfbsde_scalar(N=N))
        out.append(gfbsde.residual(p, gfbsde.continuation_solve(p), paths=400))
    for res in out:
        assert res["terminal_res"] <= 1e-12
        # the forward equation is the Euler step itself
        assert res["forward_res"] <= 1e-12
    # backward defect per unit time is O(h^{1/2}): quartering h halves it
    assert out[0]["backward_res"] / out[1]["backward_res"] == pytest.approx(2.0, rel=0.15)


def test_homogeneity_of_energy(scalar_problem, scalar_solution):
    e1 = scalar_solution.energy()["energy"]
    e2 = gfbsde.continuation_solve(scalar_problem.scaled_data(2.0)).energy()["energy"]
    assert e2 / e1 == pytest.approx(4.0, rel=1e-6)


def test_apriori_estimate(scalar_problem, scalar_solution):
    rep = gfbsde.apriori_estimate_check(scalar_problem, scalar_solution)
    assert 0 < rep["lhs"] and np.isfinite(rep["ratio"])


def test_uniqueness_probe(scalar_problem, scalar_solution):
    other = gfbsde.continuation_solve(scalar_problem, init_scale=1.0, init_seed=4)
    for a, b in ((scalar_solution.m, other.m), (scalar_solution.eta, other.eta),
                 (scalar_solution.zeta, other.zeta)):
        np.testing.assert_allclose(a.nodes, b.nodes, atol=1e-8)


def test_sample_mean_matches_moment_path(scalar_problem, scalar_solution):
    X, Y, Z, _ = scalar_solution.sample(4000, seed=3)
    mean = X.mean(axis=2)
    se = X.std(axis=2, ddof=1) / np.sqrt(4000)
    h = scalar_problem.grid.h
    gap = np.abs(mean - scalar_solution.m.nodes)
    assert np.all(gap <= 4 * se + 5 * h)


def test_stability_slope():
    doc = fixtures.gfbsde_stability(N=50)
    p = config.build_gfbsde(doc)
    G2 = config.build_graphon(doc["options"]["stability"]["target_graphon"])
    rep = gfbsde.stability_experiment(p, p.graphon, G2, scales=(0.5, 0.25, 0.125))
    assert 1.8 <= rep["slope"] <= 2.2
    assert rep["pass"] and not rep["skipped"]


def test_difference_energy_zero_for_same_solution(scalar_solution):
    assert gfbsde.difference_energy(scalar_solution, scalar_solution) == pytest.approx(0.0, abs=1e-14)


def test_moments_of_ornstein_uhlenbeck():
    from graphon_stackelberg.paths import TimeGrid
    g = TimeGrid(1.0, 100)
    F = MatrixPath.constant(g, [[-1.0]])
    zero = MatrixPath.zeros(g, (1, 1))
    c = MatrixPath.constant(g, [[0.5]])
    mu, S = gfbsde.linear_sde_moments(F, zero, zero, c, np.array([[2.0]]), np.array([[4.0]]))
    t = g.times
    np.testing.assert_allclose(mu[:, 0, 0], 2 * np.exp(-t), rtol=1e-8)
    var = 0.25 * (1 - np.exp(-2 * t)) / 2
    np.testing.assert_allclose(S[:, 0, 0], 4 * np.exp(-2 * t) + var, rtol=1e-8)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_monotonicity_constant_dominates_coercivity_margin(seed):
    spec = config.build_game(fixtures.random_game(np.random.default_rng(seed), n1=1, M=4, N=20))
    margin = model.validate_A3(spec)["margin"]
    p = model.build_follower_gfbsde(spec, MatrixPath.zeros(spec.grid, (1, 1)))
    assert gfbsde.check_S1_S2(p)["K1"] >= margin - 1e-10


def test_graphon_swap_changes_solution(scalar_problem, scalar_solution):
    other = gfbsde.continuation_solve(scalar_problem.with_graphon(gr.constant_graphon(scalar_problem.M, 0.1)))
    assert gfbsde.difference_energy(scalar_solution, other) > 0
