import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphon_stackelberg import config, fixtures, model


def test_decoupled_passes_all(decoupled_spec):
    for fn in (model.validate_A1, model.validate_A2, model.validate_A3, model.validate_A4):
        assert fn(decoupled_spec)["pass"]


def test_indefinite_Qf_named():
    rep = model.validate_A1(config.build_game(fixtures.indefinite_Qf()))
    assert not rep["pass"]
    assert [w["name"] for w in rep["witnesses"]] == ["Qf"]
    assert rep["witnesses"][0]["min_eig"] == pytest.approx(-0.1)


def test_A3_margin_generic(coupled_spec):
    # K = min(q11, eig([B;E] R^-1 [B;E]')) = min(1.5, diag(1, 0.64 * 2)) = 1
    # coupling = (1 + 3 * 0.8) * (0.1 + 0.15 + 0.1) = 1.19
    rep = model.validate_A3(coupled_spec)
    assert rep["pass"]
    assert rep["K"] == pytest.approx(1.0)
    assert rep["coupling_value"] == pytest.approx(1.19)
    assert rep["margin"] == pytest.approx(1.0 - 0.595)


def test_A4_row_sums():
    rep = model.validate_A4(config.build_game(fixtures.row_sum_violation()))
    assert not rep["pass"]
    # blocks 0.8/0.2 with masses 1/4, 3/4: row sums 0.8/4 + 0.2*3/4 = 0.35 and 0.2/4 + 0.8*3/4 = 0.65,
    # index-averaged row sum (2 * 0.35 + 6 * 0.65) / 8 = 0.575
    assert rep["max_deviation"] == pytest.approx(0.575 - 0.35)
    assert model.validate_A4(config.build_game(fixtures.generic_coupled()))["c"] == pytest.approx(0.5)


def test_dimension_mismatch_rejected(decoupled_spec):
    from dataclasses import replace
    with pytest.raises(model.SpecError, match="follower initial mean"):
        replace(decoupled_spec, x0f_mean=np.zeros((3, 1, 1)))


def test_spectral_norm():
    a = np.array([[3.0, 0.0], [4.0, 0.0]])
    assert model.spectral_norm(a) == pytest.approx(5.0)


def test_follower_gfbsde_blocks(coupled_spec):
    from graphon_stackelberg.paths import MatrixPath
    lm = MatrixPath.constant(coupled_spec.grid, [[0.2]])
    p = model.build_follower_gfbsde(coupled_spec, lm)
    assert p.n == 1 and p.M == coupled_spec.M
    # Y-driver carries -Qf11, the X drift carries Af and the graphon channel of the driver -Qf12
    np.testing.assert_allclose(p.A[(1, 1)].nodes[..., 0, 0], -1.5)
    np.testing.assert_allclose(p.A[(2, 1)].nodes[..., 0, 0], 0.1)
    np.testing.assert_allclose(p.B[1].nodes[..., 0, 0], 0.1)
    np.testing.assert_allclose(p.g.nodes[..., 0, 0], 0.3 * 0.2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 2))
def test_random_games_pass_standing_assumptions(seed, n1):
    spec = config.build_game(fixtures.random_game(np.random.default_rng(seed), n1=n1, N=20))
    for fn in (model.validate_A1, model.validate_A3, model.validate_A4):
        assert fn(spec)["pass"]
