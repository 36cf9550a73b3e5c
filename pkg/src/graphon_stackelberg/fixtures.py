"""Configuration documents for reference problems and random test instances.

Every builder returns a plain JSON-compatible ``dict`` that
:func:`graphon_stackelberg.config.build_game` (or ``build_gfbsde``) accepts,
so the same instances serve the test-suite, the demos and the CLI.
"""

from __future__ import annotations

import numpy as np


def _l(a):
    return np.asarray(a, dtype=float).tolist()


def _follower_Q(n1, n2, q11, q12=0.0, q13=0.0, q22=1.0, q33=1.0):
    """PSD block weight on ``(X, GX, X^l)`` with scalar-times-identity blocks."""
    I1, I2 = np.eye(n1), np.eye(n2)
    Q = np.zeros((2 * n1 + n2, 2 * n1 + n2))
    Q[:n1, :n1] = q11 * I1
    Q[n1:2 * n1, n1:2 * n1] = q22 * I1
    Q[2 * n1:, 2 * n1:] = q33 * I2
    Q[:n1, n1:2 * n1] = Q[n1:2 * n1, :n1] = q12 * I1
    if q13:
        Q[:n1, 2 * n1:] = q13 * np.eye(n1, n2)
        Q[2 * n1:, :n1] = q13 * np.eye(n2, n1)
    return Q


def decoupled_scalar(N: int = 200, M: int = 4, T: float = 1.0) -> dict:
    """Scalar game without graphon coupling; follower and leader separate.

    Each follower controls drift and volatility through separate channels
    (``m1 = 2``) so that the coercivity constant is positive.
    """
    return {
        "name": "decoupled_scalar",
        "dims": {"n1": 1, "n2": 1, "m1": 2, "m2": 1},
        "time": {"T": T, "N": N},
        "graphon": {"kind": "constant", "M": M, "value": 0.5},
        "follower": {
            "A": -0.5, "B": [[1.0, 0.0]], "E": [[0.0, 1.0]], "b": 0.2, "sigma": 0.3,
            "Q": _l(_follower_Q(1, 1, 1.0, q22=0.0, q33=0.0)), "R": _l(np.eye(2)),
            "G": _l(np.diag([0.5, 0.0, 0.0])),
        },
        "leader": {
            "A": -0.3, "B": 1.0, "b": 0.1, "sigma": 0.2,
            "Q": _l(np.diag([1.0, 0.0])), "R": 1.0, "G": _l(np.diag([0.5, 0.0])),
        },
        "initial": {"follower": {"mean": [1.0], "cov": [[0.04]]},
                    "leader": {"mean": [0.5], "cov": [[0.0]]}},
        "options": {"seed": 7, "paths": 2000},
    }


def generic_coupled(N: int = 200, M: int = 8, T: float = 1.0, noise: float = 0.0) -> dict:
    """Scalar game with graphon coupling in state, volatility and costs.

    The 2-block step graphon has equal block masses, so row sums are
    constant (0.5) and the leader aggregation applies.
    """
    half = M // 2
    return {
        "name": "generic_coupled" if noise == 0.0 else "noisy_coupled",
        "dims": {"n1": 1, "n2": 1, "m1": 2, "m2": 1},
        "time": {"T": T, "N": N},
        "graphon": {"kind": "step", "M": 2 * half, "boundaries": [0.0, 0.5, 1.0],
                    "blocks": [[0.8, 0.2], [0.2, 0.8]]},
        "follower": {
            "A": 0.1, "B": [[1.0, 0.0]], "C": 0.15, "D": 0.2 * (noise > 0), "E": [[0.0, 0.8]],
            "F": 0.1, "b": 0.1, "sigma": noise,
            "Q": _l(_follower_Q(1, 1, 1.5, q12=-0.1, q13=-0.3, q22=0.5, q33=0.5)),
            "R": _l(np.diag([1.0, 0.5])), "G": _l(_follower_Q(1, 1, 0.6, q12=0.0, q13=-0.2,
                                                             q22=0.3, q33=0.3)),
        },
        "leader": {
            "A": -0.2, "B": 1.0, "C": 0.3, "D": 0.1 * (noise > 0), "E": 0.2 * (noise > 0),
            "F": 0.1 * (noise > 0), "b": 0.05, "sigma": noise,
            "Q": _l([[1.0, -0.4], [-0.4, 0.5]]), "R": 1.0, "G": _l([[0.5, -0.2], [-0.2, 0.3]]),
        },
        "initial": {"follower": {"mean": _l(np.linspace(0.5, 1.5, 2 * half)),
                                 "cov": [[0.05 if noise else 0.0]]},
                    "leader": {"mean": [0.3], "cov": [[0.02 if noise else 0.0]]}},
        "options": {"seed": 11, "paths": 2000},
    }


def deterministic_coupled(N: int = 200, M: int = 8, T: float = 1.0) -> dict:
    """Coupled game without any diffusion, so every simulated path is the mean path.

    With ``Ef = 0`` the control coercivity part of the follower condition
    fails, so the standing checks are switched off; the Riccati equations
    are still regular and the equilibrium exists.
    """
    doc = generic_coupled(N, M, T)
    doc["name"] = "deterministic_coupled"
    doc["follower"]["E"] = [[0.0, 0.0]]
    doc["follower"]["F"] = 0.0
    doc["options"]["check_assumptions"] = False
    return doc


def noisy_coupled(N: int = 200, M: int = 8, T: float = 1.0) -> dict:
    return generic_coupled(N, M, T, noise=0.3)


def random_game(rng: np.random.Generator, n1: int = 1, n2: int = 1, M: int = 8,
                N: int = 200, T: float = 1.0, coupling: float = 0.25) -> dict:
    """Random game designed to pass (A1), (A3) and (A4).

    ``m1 = 2 n1`` with ``[Bf; Ef]`` square and well conditioned; the coupling
    terms are scaled to ``coupling`` times the available margin.
    """
    m1, m2 = 2 * n1, n2
    BE = np.eye(2 * n1) + 0.3 * rng.standard_normal((2 * n1, 2 * n1))
    while np.linalg.svd(BE, compute_uv=False).min() < 0.5:
        BE = np.eye(2 * n1) + 0.3 * rng.standard_normal((2 * n1, 2 * n1))
    Bf, Ef = BE[:n1], BE[n1:]
    S = rng.standard_normal((m1, m1))
    Rf = S @ S.T / m1 + 0.5 * np.eye(m1)
    q11 = 1.0 + rng.uniform(0, 1)
    K = min(q11, np.linalg.eigvalsh(BE @ np.linalg.solve(Rf, BE.T)).min())
    G = rng.uniform(0.0, 1.0, (2, 2))
    G = 0.5 * (G + G.T)
    blocks = [[G[0, 0], G[0, 1]], [G[0, 1], G[0, 0]]]  # equal row sums
    supG = max(G[0, 0], G[0, 1])
    budget = coupling * 2 * K / (1 + 3 * supG)
    parts = rng.dirichlet(np.ones(3)) * budget

    def mat(n, m, norm):
        a = rng.standard_normal((n, m))
        return a / np.linalg.norm(a, 2) * norm

    Cf, Ff = mat(n1, n1, parts[0]), mat(n1, n1, parts[1])
    q12 = parts[2]
    Qf = _follower_Q(n1, n2, q11, q12=-q12, q13=rng.uniform(-0.3, 0.3), q22=1.0, q33=1.0)
    Gf = _follower_Q(n1, n2, rng.uniform(0.2, 1.0), q12=0.0, q13=rng.uniform(-0.2, 0.2),
                     q22=0.5, q33=0.5)
    Gf[n1:2 * n1, n1:2 * n1] = 0.5 * np.eye(n1)
    Lq = rng.standard_normal((n1 + n2, n1 + n2))
    Ql = Lq @ Lq.T / (n1 + n2) + 0.1 * np.eye(n1 + n2)
    Lg = rng.standard_normal((n1 + n2, n1 + n2))
    Gl = 0.3 * Lg @ Lg.T / (n1 + n2)
    half = M // 2
    return {
        "name": "random_game",
        "dims": {"n1": n1, "n2": n2, "m1": m1, "m2": m2},
        "time": {"T": T, "N": N},
        "graphon": {"kind": "step", "M": 2 * half, "boundaries": [0.0, 0.5, 1.0], "blocks": blocks},
        "follower": {
            "A": _l(0.3 * rng.standard_normal((n1, n1))), "B": _l(Bf), "C": _l(Cf),
            "D": _l(0.2 * rng.standard_normal((n1, n1))), "E": _l(Ef), "F": _l(Ff),
            "b": _l(0.2 * rng.standard_normal(n1)), "sigma": _l(0.2 * rng.standard_normal(n1)),
            "Q": _l(Qf), "R": _l(Rf), "G": _l(Gf),
        },
        "leader": {
            "A": _l(0.3 * rng.standard_normal((n2, n2))), "B": _l(np.eye(n2, m2)),
            "C": _l(0.3 * rng.standard_normal((n2, n1))), "b": _l(0.1 * rng.standard_normal(n2)),
            "Q": _l(Ql), "R": _l(np.eye(m2)), "G": _l(Gl),
        },
        "initial": {"follower": {"mean": _l(rng.uniform(-1, 1, (2 * half, n1))),
                                 "cov": _l(0.02 * np.eye(n1))},
                    "leader": {"mean": _l(rng.uniform(-1, 1, n2)), "cov": _l(np.zeros((n2, n2)))}},
        "options": {"seed": int(rng.integers(1 << 30))},
    }


def indefinite_Qf(N: int = 50) -> dict:
    doc = decoupled_scalar(N=N)
    doc["name"] = "indefinite_Qf"
    doc["follower"]["Q"] = _l(np.diag([-0.1, 0.0, 0.0]))
    return doc


def row_sum_violation(N: int = 50) -> dict:
    """Unequal block masses make the row sums of the step graphon differ."""
    doc = generic_coupled(N=N)
    doc["name"] = "row_sum_violation"
    doc["graphon"] = {"kind": "step", "M": 8, "boundaries": [0.0, 0.25, 1.0],
                      "blocks": [[0.8, 0.2], [0.2, 0.8]]}
    return doc


def zero_cost(N: int = 50, M: int = 4) -> dict:
    """All cost weights zero: every optimal control vanishes."""
    doc = decoupled_scalar(N=N, M=M)
    doc["name"] = "zero_cost"
    doc["follower"]["Q"] = _l(np.zeros((3, 3)))
    doc["follower"]["G"] = _l(np.zeros((3, 3)))
    doc["leader"]["Q"] = _l(np.zeros((2, 2)))
    doc["leader"]["G"] = _l(np.zeros((2, 2)))
    # the coercivity condition fails trivially; the equilibrium (all controls zero) still exists
    doc["options"]["check_assumptions"] = False
    return doc


# -- aggregated FBSDE problems -------------------------------------------------

def _gfbsde_doc(name, n, M, N, T, graphon, sec):
    return {"name": name, "dims": {"n": n}, "time": {"T": T, "N": N},
            "graphon": graphon, "gfbsde": sec}


def gfbsde_scalar(N: int = 200, M: int = 8, T: float = 1.0, c: float = 0.5) -> dict:
    """Scalar monotone problem with graphon coupling in all three channels."""
    sec = {"A11": -1.0, "A12": -0.3, "A13": -0.1, "A21": 0.3, "A22": -1.0, "A23": -0.2,
           "A31": 0.1, "A32": -0.2, "A33": -1.0, "B1": -0.2, "B2": 0.3, "B3": 0.1,
           "G1": 0.5, "G2": 0.2, "b": 0.3, "sigma": 0.4, "g": -0.2, "h": 0.1,
           "x0": _l(np.linspace(-1.0, 1.0, M)), "x0_cov": 0.04}
    return _gfbsde_doc("gfbsde_scalar", 1, M, N, T, {"kind": "constant", "M": M, "value": c}, sec)


def gfbsde_stability(N: int = 100, M: int = 8) -> dict:
    """Scalar problem plus a sweep towards a two-block step graphon."""
    doc = gfbsde_scalar(N=N, M=M)
    doc["name"] = "gfbsde_stability"
    doc["options"] = {"stability": {
        "target_graphon": {"kind": "step", "M": M, "boundaries": [0.0, 0.5, 1.0],
                           "blocks": [[0.9, 0.1], [0.1, 0.9]]},
        "scales": [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125]}}
    return doc


def gfbsde_manufactured(N: int = 50, M: int = 4, T: float = 1.0) -> dict:
    """Constant solution ``X = x, Y = x + r, Z = 0`` with ``A = -I`` and ``G1 = I``.

    The forcings cancel every drift, so the Euler discretization is exact.
    """
    x = np.linspace(0.5, 2.0, M)
    c = 0.4
    r = 0.25
    agg = c * x.mean()
    # drift of X: -y + B2*agg + b = 0, diffusion: B3*agg + sigma = 0,
    # Y driver: -x + B1*agg + g = 0, terminal: y = x + G2*agg + h
    B1, B2, B3 = 0.3, 0.2, 0.1
    y = x + r
    sec = {"A11": -1.0, "A22": -1.0, "A33": -1.0, "B1": B1, "B2": B2, "B3": B3,
           "G1": 1.0, "G2": 0.0,
           "b": {"per_index": _l(y - B2 * agg)}, "sigma": -B3 * agg,
           "g": {"per_index": _l(x - B1 * agg)},
           "h": _l(np.full(M, r)), "x0": _l(x)}
    doc = _gfbsde_doc("gfbsde_manufactured", 1, M, N, T, {"kind": "constant", "M": M, "value": c}, sec)
    doc["manufactured"] = {"x": _l(x), "y": _l(y)}
    return doc


def gfbsde_nonmonotone(N: int = 50, M: int = 4, scale: float = 10.0) -> dict:
    doc = gfbsde_scalar(N=N, M=M)
    doc["name"] = "gfbsde_nonmonotone"
    doc["gfbsde"]["B1"] = scale
    doc["graphon"]["value"] = 1.0
    return doc


CORPUS = {
    "decoupled_scalar": decoupled_scalar,
    "generic_coupled": generic_coupled,
    "noisy_coupled": noisy_coupled,
    "deterministic_coupled": deterministic_coupled,
    "indefinite_Qf": indefinite_Qf,
    "row_sum_violation": row_sum_violation,
    "zero_cost": zero_cost,
    "gfbsde_scalar": gfbsde_scalar,
    "gfbsde_stability": gfbsde_stability,
    "gfbsde_manufactured": gfbsde_manufactured,
    "gfbsde_nonmonotone": gfbsde_nonmonotone,
}
