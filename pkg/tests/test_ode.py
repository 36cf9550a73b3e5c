import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphon_stackelberg import ode
from graphon_stackelberg.paths import MatrixPath, TimeGrid

from conftest import expm


def _const(g, a):
    return MatrixPath.constant(g, np.atleast_2d(np.asarray(a, dtype=float)))


def _radon(L, terminal, times, T):
    """``P = Y X^-1`` with ``(X, Y)' = L (X, Y)``, ``X_T = I``, ``Y_T = terminal`` (oracle)."""
    n = terminal.shape[0]
    end = np.vstack([np.eye(n), terminal])
    out = []
    for t in times:
        w = expm(L * (t - T)) @ end
        out.append(w[n:] @ np.linalg.inv(w[:n]))
    return np.array(out)


def test_rk4_linear_scalar_against_exponential():
    g = TimeGrid(1.0, 40)
    sol = ode.integrate(lambda k, j, y: -0.7 * y, np.array([[2.0]]), g, "backward")
    np.testing.assert_allclose(sol.nodes[:, 0, 0], 2.0 * np.exp(0.7 * (1.0 - g.times)), rtol=1e-8)


def test_rk4_order():
    def solve(g):
        t = g.times
        A = MatrixPath(g, np.sin(3 * t)[:, None, None])
        st_ = np.stack([np.sin(3 * t[:-1]), np.sin(3 * (t[:-1] + g.h / 2)), np.sin(3 * t[1:])], axis=1)
        A = MatrixPath(g, A.nodes, st_[..., None, None])
        return ode.solve_linear(A, None, np.array([[1.0]]), "forward")

    assert ode.empirical_order(solve, TimeGrid(2.0, 20)) >= 3.5


def test_woodbury_deterministic_against_hamiltonian_oracle():
    g = TimeGrid(1.0, 400)
    A = np.array([[0.2, 0.5], [-0.3, 0.1]])
    B = np.array([[1.0], [0.5]])
    Q = np.array([[1.0, 0.2], [0.2, 0.5]])
    R = np.array([[2.0]])
    G = np.array([[0.3, 0.0], [0.0, 0.1]])
    z = np.zeros((2, 2))
    sol = ode.riccati_woodbury(_const(g, A), _const(g, B), _const(g, z), _const(g, np.zeros((2, 1))),
                               _const(g, Q), _const(g, R), G)
    L = np.block([[A, -B @ np.linalg.solve(R, B.T)], [-Q, -A.T]])
    ref = _radon(L, G, g.times, g.T)
    np.testing.assert_allclose(sol.P.nodes, ref, atol=1e-9)


def test_asymmetric_against_linear_fractional_oracle():
    g = TimeGrid(1.0, 300)
    A = np.array([[0.1, 0.4], [0.0, -0.2]])
    Bh = np.array([[-0.5, 0.1], [0.2, -0.4]])
    Hh = np.array([[0.3, 0.0], [0.1, 0.2]])
    Ih = np.array([[1.0, 0.2], [0.0, 0.5]])
    c = 0.6
    F = np.array([[0.2, 0.1], [0.0, 0.3]])
    P = ode.riccati_asymmetric(_const(g, A), _const(g, Bh), _const(g, Hh), _const(g, Ih), c, F)
    L = np.block([[A, Bh], [c * Ih, Hh]])
    np.testing.assert_allclose(P.nodes, _radon(L, F, g.times, g.T), atol=1e-9)


def test_augmented_reduces_to_deterministic_form():
    g = TimeGrid(1.0, 200)
    A = np.array([[0.1, 0.3], [-0.2, 0.0]])
    B = -np.array([[1.0, 0.2], [0.2, 0.5]])
    Q = np.array([[0.5, 0.1], [0.1, 0.4]])
    F = np.eye(2) * 0.2
    z = np.zeros((2, 2))
    sol = ode.riccati_augmented(_const(g, A), _const(g, B), _const(g, z), _const(g, z), _const(g, z),
                                _const(g, Q), F)
    L = np.block([[A, B], [Q, -A.T]])
    np.testing.assert_allclose(sol.P.nodes, _radon(L, F, g.times, g.T), atol=1e-9)
    assert sol.diagnostics["max_relative_asymmetry"] < 1e-12


def test_regularity_error_names_node():
    g = TimeGrid(1.0, 10)
    one = _const(g, 1.0)
    with pytest.raises(ode.RegularityError) as exc:
        ode.riccati_woodbury(one, one, one, one, one, _const(g, 1e-12), np.array([[0.0]]))
    assert exc.value.node == g.N


def test_blowup_cap():
    g = TimeGrid(2.0, 200)
    with pytest.raises(ode.IntegrationError, match="escape"):
        ode.integrate(lambda k, j, y: -y @ y, np.array([[1.0]]), g, "backward", cap=1e3)


def test_linear_bvp_closed_form():
    g = TimeGrid(1.0, 200)
    L = _const(g, [[0.0, 1.0], [1.0, 0.0]])
    w = ode.solve_linear_bvp(L, MatrixPath.zeros(g, (2, 1)), [1.0], [[0.0]], [[0.0]])
    t = g.times
    np.testing.assert_allclose(w.nodes[:, 0, 0], np.cosh(1.0 - t) / np.cosh(1.0), atol=1e-10)
    np.testing.assert_allclose(w.nodes[:, 1, 0], -np.sinh(1.0 - t) / np.cosh(1.0), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 2))
def test_woodbury_and_original_forms_agree(seed, n):
    rng = np.random.default_rng(seed)
    g = TimeGrid(1.0, 100)
    m = 2 * n
    A, D = 0.5 * rng.standard_normal((2, n, n))
    B, E = 0.5 * rng.standard_normal((2, n, m))
    S = rng.standard_normal((m, m))
    R = S @ S.T / m + 0.5 * np.eye(m)
    L = rng.standard_normal((n, n))
    Q = L @ L.T / n
    G = 0.5 * np.eye(n)
    args = [_const(g, x) for x in (A, B, D, E, Q, R)] + [G]
    Pw = ode.riccati_woodbury(*args)
    Po = ode.riccati_original(*args)
    np.testing.assert_allclose(Pw.P.nodes, Po.P.nodes, rtol=1e-8, atol=1e-10)
    # the Woodbury solution is symmetric and positive semidefinite
    assert np.all(np.linalg.eigvalsh(Pw.P.nodes) > -1e-10)
