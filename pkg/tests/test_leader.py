import numpy as np
import pytest

from graphon_stackelberg import config, fixtures, leader, mc
from graphon_stackelberg.paths import MatrixPath


def _closed_form_riccati(a, b, G, t, T):
    r1 = (-a + np.sqrt(a * a + 4 * b)) / 2
    r2 = (-a - np.sqrt(a * a + 4 * b)) / 2
    kap = (G - r1) / (G - r2) * np.exp((r1 - r2) * (t - T))
    return (r1 - r2 * kap) / (1 - kap)


@pytest.mark.parametrize("name", ["decoupled_eq", "coupled_eq", "noisy_eq"])
def test_pipeline_consistency(name, request):
    eq = request.getfixturevalue(name)
    d = eq.diagnostics
    assert d["population_mean_gap"] <= 1e-8
    assert d["reduction_mean_gap"] <= 1e-8
    assert d["ansatz_residual"] <= 1e-8
    assert d["mean_stationarity"] <= 1e-10


def test_shooting_agrees_with_reduction(coupled_eq):
    Mh, Nh = leader.shooting_fbode(coupled_eq.aggregate, coupled_eq.leader_mean)
    np.testing.assert_allclose(Mh.nodes, coupled_eq.reduction.Mhat.nodes, atol=1e-9)
    np.testing.assert_allclose(Nh.nodes, coupled_eq.reduction.Nhat.nodes, atol=1e-9)


def test_decoupled_fluctuation_gain_closed_form(decoupled_eq):
    # Al = -0.3, Bl = 1, Ql11 = 1, Rl = 1, Gl11 = 0.5: Pi' = Pi^2 + 0.6 Pi - 1 and Kfl = -Pi
    g = decoupled_eq.spec.grid
    ref = _closed_form_riccati(0.6, 1.0, 0.5, g.times, g.T)
    np.testing.assert_allclose(decoupled_eq.Pi.P.nodes[:, 0, 0], ref, atol=1e-10)
    np.testing.assert_allclose(decoupled_eq.leader_policy.Kfl.nodes[:, 0, 0], -ref, atol=1e-10)


def test_mean_response_reproduces_equilibrium(noisy_eq):
    Mh, Xb = leader.mean_response(noisy_eq, noisy_eq.leader_policy.abar)
    np.testing.assert_allclose(Mh.nodes, noisy_eq.population_mean.nodes, atol=1e-9)
    np.testing.assert_allclose(Xb.nodes, noisy_eq.leader_mean.nodes, atol=1e-9)


@pytest.mark.parametrize("name", ["coupled_eq", "noisy_eq"])
def test_mean_cost_vertex_at_equilibrium(name, request):
    eq = request.getfixturevalue(name)
    g = eq.spec.grid
    rng = np.random.default_rng(3)
    for _ in range(3):
        b0, b1 = rng.standard_normal(2)
        beta = MatrixPath(g, (b0 + b1 * np.cos(2 * g.times))[:, None, None])
        s = 0.1
        J = [leader.leader_mean_cost(eq, eq.leader_policy.abar + lam * beta) for lam in (-s, 0.0, s)]
        curv = (J[0] + J[2] - 2 * J[1]) / (2 * s * s)
        assert curv > 0
        assert abs((J[2] - J[0]) / (2 * s) / (2 * curv)) <= 1e-6


def test_mean_cost_matches_monte_carlo(noisy_eq):
    ens = mc.simulate(noisy_eq, mc.SimConfig(paths=4000, seed=1, indices=(0,)))
    m, se = mc.evaluate_costs(noisy_eq, ens)["leader"]
    exact = leader.leader_mean_cost(noisy_eq, noisy_eq.leader_policy.abar)
    # Euler bias is O(h); allow it on top of the sampling error
    assert abs(m - exact) <= 3 * se + 5 * noisy_eq.spec.grid.h * abs(exact)


def test_leader_covariance_matches_samples(noisy_eq):
    ens = mc.simulate(noisy_eq, mc.SimConfig(paths=4000, seed=2, indices=(0,)))
    emp = np.var(ens.Xl[-1, :, 0, 0], ddof=1)
    exact = noisy_eq.leader_covariance().nodes[-1, 0, 0]
    assert abs(emp - exact) <= 0.1 * exact


def test_fluctuation_stationarity(noisy_eq):
    rng = np.random.default_rng(0)
    Xfl = rng.standard_normal((50, 1, 1))
    res, scale = leader.fluctuation_stationarity(noisy_eq.spec, noisy_eq.Pi, noisy_eq.leader_policy.Kfl, 17, Xfl)
    assert np.max(np.abs(res)) <= 1e-12 * max(1.0, scale)


def test_row_sum_violation_fails_at_aggregation():
    spec = config.build_game(fixtures.row_sum_violation())
    with pytest.raises(leader.StageError) as exc:
        leader.assemble_stackelberg_equilibrium(spec)
    assert exc.value.stage == "aggregate"
    assert "constant row sums" in str(exc.value)


def test_zero_cost_gives_zero_controls():
    doc = fixtures.zero_cost()
    spec = config.build_game(doc)
    eq = leader.assemble_stackelberg_equilibrium(spec, check=False)
    assert np.max(np.abs(eq.leader_policy.abar.nodes)) == 0.0
    assert np.max(np.abs(eq.follower_policy.Kx.nodes)) == 0.0
    assert np.max(np.abs(eq.followers.solution.phi.nodes)) == 0.0


def test_timings_recorded(decoupled_spec):
    t = {}
    leader.assemble_stackelberg_equilibrium(decoupled_spec, timings=t)
    assert {"follower_riccati", "aggregate", "augmented_riccati", "follower_resolve"} <= set(t)
