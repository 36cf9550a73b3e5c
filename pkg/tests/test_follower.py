import numpy as np
import pytest

from graphon_stackelberg import follower, gfbsde, model
from graphon_stackelberg.paths import MatrixPath


def _closed_form_riccati(a, b, G, t, T):
    """Solution of ``P' = P^2 + a P - b`` with ``P(T) = G`` via its two equilibria."""
    r1 = (-a + np.sqrt(a * a + 4 * b)) / 2
    r2 = (-a - np.sqrt(a * a + 4 * b)) / 2
    kap = (G - r1) / (G - r2) * np.exp((r1 - r2) * (t - T))
    return (r1 - r2 * kap) / (1 - kap)


def test_decoupled_riccati_closed_form(decoupled_spec):
    # A = -0.5, B = [1, 0], E = [0, 1], R = I, Q11 = 1, G11 = 0.5: P' = P^2 + P - 1
    from graphon_stackelberg.ode import solve_follower_riccati_woodbury
    ric = solve_follower_riccati_woodbury(decoupled_spec)
    g = decoupled_spec.grid
    np.testing.assert_allclose(ric.P.nodes[:, 0, 0], _closed_form_riccati(1.0, 1.0, 0.5, g.times, g.T),
                               atol=1e-10)


@pytest.fixture(scope="module")
def coupled_response(coupled_spec):
    lm = MatrixPath.constant(coupled_spec.grid, [[0.4]])
    return lm, follower.follower_response(coupled_spec, lm)


def test_matches_continuation_solver(coupled_spec, coupled_response):
    lm, eq = coupled_response
    p = model.build_follower_gfbsde(coupled_spec, lm)
    s = gfbsde.continuation_solve(p)
    np.testing.assert_allclose(s.m.nodes, eq.solution.m.nodes, atol=1e-8)
    Y = eq.riccati.P.nodes[:, None] @ eq.solution.m.nodes + eq.solution.phi.nodes
    np.testing.assert_allclose(s.mean_Y.nodes, Y, atol=1e-8)


def test_aggregate_is_fixed_point(coupled_spec, coupled_response):
    from graphon_stackelberg import graphon as gr
    _, eq = coupled_response
    sol = eq.solution
    for k in (0, 50, 200):
        np.testing.assert_allclose(gr.aggregate(coupled_spec.graphon, sol.m.nodes[k]), sol.agg.nodes[k],
                                   atol=1e-10)


def test_initialization_does_not_matter(coupled_spec, coupled_response):
    lm, eq = coupled_response
    rng = np.random.default_rng(5)
    init = MatrixPath(coupled_spec.grid, rng.standard_normal(eq.solution.agg.nodes.shape))
    other = follower.follower_response(coupled_spec, lm, riccati=eq.riccati, init=init)
    np.testing.assert_allclose(other.solution.m.nodes, eq.solution.m.nodes, atol=1e-9)


def test_stationarity_at_random_states(coupled_spec, coupled_response):
    _, eq = coupled_response
    rng = np.random.default_rng(0)
    X = rng.standard_normal((coupled_spec.M, 1, 1))
    for k in (0, 100, 200):
        res, scale = follower.stationarity_residual(coupled_spec, eq.riccati, eq.policy, X,
                                                    eq.solution.phi.nodes[k], eq.solution.agg.nodes[k], k)
        assert np.max(np.abs(res)) <= 1e-12 * max(1.0, np.max(scale))


def test_adjoint_diffusion_matches_realised_control(coupled_spec, coupled_response):
    _, eq = coupled_response
    f = coupled_spec.follower
    X = np.full((coupled_spec.M, 1, 1), 0.7)
    k = 40
    phi, agg = eq.solution.phi.nodes[k], eq.solution.agg.nodes[k]
    q = follower.adjoint_diffusion(coupled_spec, eq.riccati, X, phi, agg, k)
    a = eq.policy.control(k, X, phi, agg)
    direct = eq.riccati.P.nodes[k] @ (f.D.nodes[k] @ X + f.E.nodes[k] @ a + f.F.nodes[k] @ agg + f.sigma.nodes[k])
    np.testing.assert_allclose(q, direct, atol=1e-12)
