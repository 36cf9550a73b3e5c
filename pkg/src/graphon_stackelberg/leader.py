"""Leader problem: aggregation of the followers under constant row sums,
the asymmetric-Riccati reduction, the augmented deterministic mean system
and the leader feedback; plus the end-to-end Stackelberg-Nash assembly.

The leader state is split into its mean ``E[X^l]`` and fluctuation
``X^l - E[X^l]``.  Fluctuations are handled by a standard LQ Riccati
``Pi``; the means of the leader and of the follower population, together
with the aggregate follower costate, form a deterministic forward-backward
system whose optimality conditions are decoupled by one augmented Riccati
equation.
"""

from __future__ import annotations

import functools
import time
from dataclasses import dataclass, field

import numpy as np

from . import graphon as gr
from .follower import (FollowerEquilibrium, HattedCoefficients, assemble_hatted,
                       follower_feedback, follower_response)
from .model import GameSpec, validate_A1, validate_A3, validate_A4
from .ode import (IntegrationError, LinearPropagator, RiccatiSolution, riccati_asymmetric,
                  riccati_augmented, riccati_woodbury, solve_follower_riccati_woodbury,
                  solve_linear_bvp)
from .paths import MatrixPath, pointwise, stack_blocks

_T = lambda a: np.swapaxes(a, -1, -2)

ANSATZ_TOL = 1e-8


class LeaderError(RuntimeError):
    """A leader-side construction failed (assumption, invertibility or ansatz check)."""


class StageError(RuntimeError):
    """Failure inside the equilibrium pipeline; ``stage`` names the step."""

    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage
        self.cause = exc


# ---------------------------------------------------------------------------
# aggregation of the follower system
# ---------------------------------------------------------------------------

@dataclass
class AggregateSystem:
    """Two-point boundary ODE for ``(Mhat, Nhat)``, the index averages of ``(X, phi)``::

        Mhat' = Acc Mhat + B Nhat + b
        Nhat' = c I Mhat + H Nhat + g0 + g_lead E[X^l]
        Mhat_0 = M0,  Nhat_T = c Gf12 Mhat_T + Gf13 E[X^l_T]
    """

    Acc: MatrixPath
    B: MatrixPath
    I: MatrixPath
    H: MatrixPath
    b: MatrixPath
    g0: MatrixPath
    g_lead: MatrixPath
    c: float
    M0: np.ndarray
    Gf12: np.ndarray
    Gf13: np.ndarray

    @property
    def cI(self) -> MatrixPath:
        return self.I * self.c

    def g(self, leader_mean: MatrixPath) -> MatrixPath:
        return self.g0 + self.g_lead @ leader_mean


def aggregate_follower_system(spec: GameSpec, hatted: HattedCoefficients) -> AggregateSystem:
    rep = validate_A4(spec)
    if not rep["pass"]:
        raise LeaderError("leader aggregation requires constant row sums "
                          f"(max deviation {rep['max_deviation']:.3g})")
    c = float(rep["c"])
    f = spec.follower
    w = spec.graphon.grid.weights
    M0 = np.einsum("u,uij->ij", w, spec.x0f_mean)
    return AggregateSystem(hatted.A + hatted.C * c, hatted.B, hatted.I, hatted.H,
                           hatted.b, hatted.g0, hatted.g_lead, c, M0, f.Gb(1, 2), f.Gb(1, 3))


def solve_aggregate_riccati(agg: AggregateSystem) -> MatrixPath:
    """Asymmetric Riccati ``Phat`` with ``Nhat = Phat Mhat + N^l``."""
    return riccati_asymmetric(agg.Acc, agg.B, agg.H, agg.I, agg.c, agg.c * agg.Gf12)


@dataclass
class AggregateReduction:
    Phat: MatrixPath
    Nl: MatrixPath
    Mhat: MatrixPath
    Nhat: MatrixPath
    residual: float


def reduce_via_asymmetric_riccati(agg: AggregateSystem, Phat: MatrixPath, leader_mean: MatrixPath,
                                  tol: float = ANSATZ_TOL) -> AggregateReduction:
    """Backward ``N^l``, forward ``Mhat`` and a check of ``Nhat = Phat Mhat + N^l``.

    The reconstructed ``Nhat`` is compared with an independent backward
    solve of its own equation driven by ``Mhat``; the sup difference
    (including the terminal condition) must be at most ``tol``.
    """
    g = agg.g(leader_mean)
    Fl = agg.H - Phat @ agg.B
    Nl = LinearPropagator(Fl, "backward").solve(g - Phat @ agg.b,
                                                agg.Gf13 @ leader_mean.terminal(), name="N^l")
    Mhat = LinearPropagator(agg.Acc + agg.B @ Phat, "forward").solve(
        agg.B @ Nl + agg.b, agg.M0, name="Mhat")
    Nhat = Phat @ Mhat + Nl
    NT = agg.c * agg.Gf12 @ Mhat.terminal() + agg.Gf13 @ leader_mean.terminal()
    direct = LinearPropagator(agg.H, "backward").solve(agg.cI @ Mhat + g, NT, name="Nhat check")
    res = float(np.max(np.abs(direct.nodes - Nhat.nodes)))
    if not res <= tol:
        raise LeaderError(f"ansatz verification failed: |Nhat - (Phat Mhat + N^l)| = {res:.3g}")
    return AggregateReduction(Phat, Nl, Mhat, Nhat, res)


def shooting_fbode(agg: AggregateSystem, leader_mean: MatrixPath):
    """Direct shooting solve of the aggregate boundary problem; returns ``(Mhat, Nhat)``."""
    n1 = agg.Acc.shape[-1]
    L = stack_blocks([[agg.Acc, agg.B], [agg.cI, agg.H]])
    f = pointwise(lambda a, b: np.concatenate([a, b], axis=-2), agg.b, agg.g(leader_mean))
    w = solve_linear_bvp(L, f, agg.M0, agg.c * agg.Gf12, agg.Gf13 @ leader_mean.terminal())
    return w.map(lambda a: a[..., :n1, :]), w.map(lambda a: a[..., n1:, :])


# ---------------------------------------------------------------------------
# augmented mean system
# ---------------------------------------------------------------------------

@dataclass
class TildeSystem:
    """Deterministic optimality system of the leader mean problem.

    State ``Xt = (z, -psi)`` with ``z = (Mhat, E[X^l])``, costate
    ``Yt = (y, N^l)``::

        Xt' = At Xt + Bt Yt + bt,      Yt' = Qt Xt - At' Yt + gt,
        Xt_0 = xt0,                    Yt_T = Ft Xt_T.

    The mean control is ``abar = Hx Xt + Ht Yt + hoff``.  ``Ct``, ``Dt``,
    ``Et`` are zero (the system carries no noise) and kept for the general
    Riccati interface.
    """

    At: MatrixPath
    Bt: MatrixPath
    Ct: MatrixPath
    Dt: MatrixPath
    Et: MatrixPath
    Qt: MatrixPath
    Ft: np.ndarray
    bt: MatrixPath
    gt: MatrixPath
    xt0: np.ndarray
    Hx: MatrixPath
    Ht: MatrixPath
    hoff: MatrixPath
    parts: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.At.shape[-1]


def _min_eig(a):
    return np.linalg.eigvalsh(0.5 * (a + _T(a))).min()


def fluctuation_riccati(spec: GameSpec) -> RiccatiSolution:
    """LQ Riccati for ``X^l - E[X^l]`` with weights ``Ql11``, ``Rl``, ``Gl11``."""
    l = spec.leader
    try:
        return riccati_woodbury(l.A, l.B, l.D, l.E, l.Qb(1, 1), l.R, l.Gb(1, 1), eps=spec.eps_R,
                                name="leader fluctuation Riccati")
    except IntegrationError as exc:
        raise LeaderError(f"{exc}; the leader weight Rl + El' Pi El must stay positive definite "
                          "(the implementation requires Rl positive definite)") from exc


def build_tilde_system(spec: GameSpec, agg: AggregateSystem, Phat: MatrixPath,
                       Pi: RiccatiSolution) -> TildeSystem:
    l = spec.leader
    grid = spec.grid
    n1, n2, m2 = spec.follower.n1, l.n2, l.m2
    P = Pi.P
    Z11 = np.zeros((n1, n1))
    # z = (Mhat, E X^l)
    Az = stack_blocks([[agg.Acc + agg.B @ Phat, np.zeros((n1, n2))], [l.C, l.A]])
    Bz = stack_blocks([[agg.B], [np.zeros((n2, n1))]])
    Cz = stack_blocks([[np.zeros((n1, m2))], [l.B]])
    bz = stack_blocks([[agg.b], [l.b]])
    Fhat = agg.H - Phat @ agg.B
    glz0 = agg.g0 - Phat @ agg.b
    K = stack_blocks([[MatrixPath.zeros(grid, (n1, n1)), agg.g_lead]])
    Hz = np.hstack([Z11, agg.Gf13])
    Sz = np.block([[np.zeros((n2, n1)), np.eye(n2)], [np.eye(n1), np.zeros((n1, n2))]])
    Qz = Sz.T @ l.Q @ Sz
    Gz = Sz.T @ l.G @ Sz
    # fluctuation diffusion offset s = L z + El abar + sigma_l
    L = stack_blocks([[l.F, l.D]])
    Qs = Qz + L.T() @ P @ L
    S = L.T() @ P @ l.E
    Rbar = l.R + l.E.T() @ P @ l.E
    ev = min(_min_eig(Rbar.nodes[k]) for k in range(grid.N + 1))
    if ev < spec.eps_R:
        raise LeaderError(f"leader mean weight Rl + El' Pi El is singular (min eig {ev:.3g})")
    q = L.T() @ P @ l.sigma
    r = l.E.T() @ P @ l.sigma
    Ri = Rbar.map(np.linalg.inv)
    Ae = Az - Cz @ Ri @ S.T()
    Qe = Qs - S @ Ri @ S.T()
    be = bz - Cz @ Ri @ r
    qe = q - S @ Ri @ r
    d = n1 + n2
    At = stack_blocks([[Ae, None], [None, -Fhat.T()]])
    Bt = stack_blocks([[-(Cz @ Ri @ Cz.T()), Bz], [Bz.T(), None]])
    Qt = stack_blocks([[-Qe, K.T()], [K, None]])
    Qt = Qt.map(lambda a: 0.5 * (a + _T(a)))
    Ft = np.block([[Gz, Hz.T], [Hz, Z11]])
    bt = stack_blocks([[be], [MatrixPath.zeros(grid, (n1, 1))]])
    gt = stack_blocks([[-qe], [glz0]])
    xt0 = np.vstack([agg.M0, spec.x0l_mean, np.zeros((n1, 1))])
    zero = MatrixPath.zeros(grid, (d + n1, d + n1))
    Hx = stack_blocks([[-(Ri @ S.T()), np.zeros((m2, n1))]])
    Ht = stack_blocks([[-(Ri @ Cz.T()), np.zeros((m2, n1))]])
    hoff = -(Ri @ r)
    parts = {"Az": Az, "Bz": Bz, "Cz": Cz, "bz": bz, "K": K, "Hz": Hz, "Qz": Qz, "Gz": Gz,
             "L": L, "S": S, "Rbar": Rbar, "q": q, "r": r, "Fhat": Fhat, "glz0": glz0,
             "Rbar_min_eig": float(ev), "n1": n1, "n2": n2}
    return TildeSystem(At, Bt, zero, zero, zero, Qt, Ft, bt, gt, xt0, Hx, Ht, hoff, parts)


def solve_leader_riccati(tilde: TildeSystem, eps: float = 1e-8) -> RiccatiSolution:
    return riccati_augmented(tilde.At, tilde.Bt, tilde.Ct, tilde.Dt, tilde.Et, tilde.Qt,
                             tilde.Ft, eps=eps)


@dataclass
class LeaderFinal:
    phi: MatrixPath
    X: MatrixPath
    Y: MatrixPath
    Z: MatrixPath


def solve_leader_final_system(tilde: TildeSystem, Ptil: RiccatiSolution) -> LeaderFinal:
    """``phi`` backward from 0, then the (deterministic) state forward.

    ``phi' + (P Bt + At') phi + P bt - gt = 0`` and
    ``Xt' = (At + Bt P) Xt + Bt phi + bt``; ``Yt = P Xt + phi`` and ``Zt = 0``.
    """
    P = Ptil.P if isinstance(Ptil, RiccatiSolution) else Ptil
    Lphi = -(P @ tilde.Bt + tilde.At.T())
    phi = LinearPropagator(Lphi, "backward").solve(tilde.gt - P @ tilde.bt,
                                                  np.zeros((tilde.dim, 1)), name="leader phi")
    X = LinearPropagator(tilde.At + tilde.Bt @ P, "forward").solve(
        tilde.Bt @ phi + tilde.bt, tilde.xt0, name="leader mean state")
    Y = P @ X + phi
    return LeaderFinal(phi, X, Y, MatrixPath.zeros(P.grid, (tilde.dim, 1)))


@dataclass
class LeaderPolicy:
    """``alpha^l = Gx Xt + Gphi phi + goff + Kfl (X^l - E[X^l])``.

    ``abar`` is the deterministic mean control path (already evaluated on
    the equilibrium state); ``Kfl`` the fluctuation feedback gain.
    """

    Gx: MatrixPath
    Gphi: MatrixPath
    goff: MatrixPath
    Kfl: MatrixPath
    abar: MatrixPath

    def control(self, k: int, Xl, Xl_mean, stage: int | None = None):
        pick = (lambda p: p.nodes[k]) if stage is None else (lambda p: p.stages[k, stage])
        return pick(self.abar) + pick(self.Kfl) @ (Xl - Xl_mean)


def fluctuation_gain(spec: GameSpec, Pi: RiccatiSolution) -> MatrixPath:
    l = spec.leader
    P = Pi.P
    return pointwise(lambda B, D, E, R, P_: -np.linalg.solve(R + _T(E) @ P_ @ E, _T(B) @ P_ + _T(E) @ P_ @ D),
                     l.B, l.D, l.E, l.R, P)


def leader_feedback(spec: GameSpec, tilde: TildeSystem, Ptil: RiccatiSolution, final: LeaderFinal,
                    Pi: RiccatiSolution) -> LeaderPolicy:
    P = Ptil.P
    Gx = tilde.Hx + tilde.Ht @ P
    Gphi = tilde.Ht
    abar = Gx @ final.X + Gphi @ final.phi + tilde.hoff
    return LeaderPolicy(Gx, Gphi, tilde.hoff, fluctuation_gain(spec, Pi), abar)


def mean_stationarity(tilde: TildeSystem, final: LeaderFinal, abar: MatrixPath) -> float:
    """``sup |Rbar abar + S' z + Cz' y + r|`` with ``y`` the first costate block."""
    pr = tilde.parts
    d = pr["n1"] + pr["n2"]
    z = final.X.map(lambda a: a[..., :d, :])
    y = final.Y.map(lambda a: a[..., :d, :])
    res = pr["Rbar"] @ abar + pr["S"].T() @ z + pr["Cz"].T() @ y + pr["r"]
    return float(np.max(np.abs(res.nodes)))


def fluctuation_stationarity(spec: GameSpec, Pi: RiccatiSolution, Kfl: MatrixPath, k: int, Xfl):
    """``Rl a + Bl' y + El' z`` for the fluctuation block along sampled deviations.

    ``y = Pi Xfl`` and ``z = Pi (Dl Xfl + El a)`` are the random parts of the
    fluctuation costate, ``a = Kfl Xfl``.  Returns ``(residual, scale)``.
    """
    l = spec.leader
    P = Pi.P.nodes[k]
    a = Kfl.nodes[k] @ Xfl
    y = P @ Xfl
    z = P @ (l.D.nodes[k] @ Xfl + l.E.nodes[k] @ a)
    terms = (l.R.nodes[k] @ a, _T(l.B.nodes[k]) @ y, _T(l.E.nodes[k]) @ z)
    res = sum(terms)
    scale = max(float(np.max(np.abs(t))) for t in terms) if np.size(Xfl) else 0.0
    return res, scale


# ---------------------------------------------------------------------------
# equilibrium assembly
# ---------------------------------------------------------------------------

@dataclass
class StackelbergEquilibrium:
    """All stage outputs of the Stackelberg-Nash pipeline."""

    spec: GameSpec
    follower_riccati: RiccatiSolution
    hatted: HattedCoefficients
    aggregate: AggregateSystem
    Phat: MatrixPath
    reduction: AggregateReduction
    Pi: RiccatiSolution
    tilde: TildeSystem
    Ptil: RiccatiSolution
    final: LeaderFinal
    leader_policy: LeaderPolicy
    leader_mean: MatrixPath
    population_mean: MatrixPath
    followers: FollowerEquilibrium
    diagnostics: dict = field(default_factory=dict)

    @property
    def follower_policy(self):
        return self.followers.policy

    def leader_covariance(self) -> MatrixPath:
        """Covariance of ``X^l`` under the equilibrium fluctuation feedback."""
        from .gfbsde import linear_sde_moments

        spec, l = self.spec, self.spec.leader
        K = self.leader_policy.Kfl
        F = l.A + l.B @ K
        S = l.D + l.E @ K
        s = l.F @ self.population_mean + l.D @ self.leader_mean + l.E @ self.leader_policy.abar + l.sigma
        n2 = l.n2
        zero = MatrixPath.zeros(spec.grid, (n2, 1))
        _, Sig = linear_sde_moments(F, zero, S, s, np.zeros((n2, 1)), spec.x0l_cov)
        return MatrixPath(spec.grid, Sig)


def _stage(name, fn, *args, timings=None, **kw):
    t0 = time.perf_counter()
    try:
        return fn(*args, **kw)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc
    finally:
        if timings is not None:
            timings[name] = time.perf_counter() - t0


def assemble_stackelberg_equilibrium(spec: GameSpec, check: bool = True,
                                     timings: dict | None = None) -> StackelbergEquilibrium:
    """Follower Riccati, aggregation, leader mean system, leader policy and follower re-solve.

    Failures are raised as :class:`StageError` naming the stage; ``timings``
    (if given) receives the wall time of every stage that ran.
    """
    st = functools.partial(_stage, timings=timings)
    if check:
        # constant row sums are enforced by the aggregation stage itself
        for name, fn in (("A1", validate_A1), ("A3", validate_A3)):
            rep = fn(spec)
            if not rep["pass"]:
                raise StageError(f"validate_{name}", LeaderError(f"{name} failed: {rep['witnesses']}"))
    ric = st("follower_riccati", solve_follower_riccati_woodbury, spec)
    hat = st("hatted", assemble_hatted, spec, ric)
    agg = st("aggregate", aggregate_follower_system, spec, hat)
    Phat = st("asymmetric_riccati", solve_aggregate_riccati, agg)
    Pi = st("leader_fluctuation_riccati", fluctuation_riccati, spec)
    tilde = st("tilde_system", build_tilde_system, spec, agg, Phat, Pi)
    Ptil = st("augmented_riccati", solve_leader_riccati, tilde, spec.eps_R)
    final = st("final_system", solve_leader_final_system, tilde, Ptil)
    pol = st("leader_feedback", leader_feedback, spec, tilde, Ptil, final, Pi)
    n1, n2 = spec.follower.n1, spec.leader.n2
    Mhat = final.X.map(lambda a: a[..., :n1, :])
    Xbar = final.X.map(lambda a: a[..., n1:n1 + n2, :])
    red = st("aggregate_reduction", reduce_via_asymmetric_riccati, agg, Phat, Xbar)
    fol = st("follower_resolve", follower_response, spec, Xbar, riccati=ric)
    w = spec.graphon.grid.weights
    pop = np.einsum("u,kuij->kij", w, fol.solution.m.nodes)
    gap = float(np.max(np.abs(pop - Mhat.nodes)))
    gap_red = float(np.max(np.abs(red.Mhat.nodes - Mhat.nodes)))
    if gap > 1e-8:
        raise StageError("consistency", LeaderError(
            f"population mean of re-solved followers differs from Mhat by {gap:.3g}"))
    diag = {"c": agg.c, "population_mean_gap": gap, "reduction_mean_gap": gap_red,
            "ansatz_residual": red.residual, "mean_stationarity": mean_stationarity(tilde, final, pol.abar),
            "follower_riccati_min_regularity": ric.min_regularity,
            "leader_fluctuation_min_regularity": Pi.min_regularity,
            "augmented_min_sv": Ptil.min_regularity, "Rbar_min_eig": tilde.parts["Rbar_min_eig"],
            "augmented_asymmetry": Ptil.diagnostics.get("max_relative_asymmetry"),
            "follower_fixed_point_iterations": fol.solution.iterations}
    return StackelbergEquilibrium(spec, ric, hat, agg, Phat, red, Pi, tilde, Ptil, final, pol,
                                  Xbar, Mhat, fol, diag)


# ---------------------------------------------------------------------------
# response of the mean system to a different leader mean control
# ---------------------------------------------------------------------------

def mean_response(eq: StackelbergEquilibrium, abar: MatrixPath):
    """``(Mhat, E[X^l])`` when the leader uses mean control ``abar`` and followers respond.

    Solves the boundary problem ``z' = Az z + Bz N + Cz abar + bz``,
    ``N' = Fhat N + K z + glz0``, ``z_0 = (M0, x0l)``, ``N_T = Hz z_T`` by shooting.
    """
    pr = eq.tilde.parts
    n1, n2 = pr["n1"], pr["n2"]
    L = stack_blocks([[pr["Az"], pr["Bz"]], [pr["K"], pr["Fhat"]]])
    f = pointwise(lambda a, b: np.concatenate([a, b], axis=-2),
                  pr["Cz"] @ abar + pr["bz"], pr["glz0"])
    z0 = np.vstack([eq.aggregate.M0, eq.spec.x0l_mean])
    w = solve_linear_bvp(L, f, z0, pr["Hz"], np.zeros((n1, 1)))
    return w.map(lambda a: a[..., :n1, :]), w.map(lambda a: a[..., n1:n1 + n2, :])


def _simpson(path: MatrixPath) -> float:
    st = path.stages
    h = path.grid.h
    return float(np.sum(h / 6.0 * (st[:, 0] + 4.0 * st[:, 1] + st[:, 2])))


def leader_mean_cost(eq: StackelbergEquilibrium, abar: MatrixPath) -> float:
    """Exact leader cost for mean control ``abar`` with the optimal fluctuation feedback.

    ``J = 1/2 [ int (z'Qz z + abar'Rl abar + s'Pi s) dt + z_T'Gz z_T + tr(Pi_0 cov0) ]``,
    integrated by Simpson's rule on the solution's stage values.
    """
    spec, pr, l = eq.spec, eq.tilde.parts, eq.spec.leader
    Mh, Xb = mean_response(eq, abar)
    z = pointwise(lambda a, b: np.concatenate([a, b], axis=-2), Mh, Xb)
    P = eq.Pi.P
    s = pr["L"] @ z + l.E @ abar + l.sigma
    integrand = pointwise(lambda z_, Q, a, R, s_, P_: (_T(z_) @ Q @ z_ + _T(a) @ R @ a + _T(s_) @ P_ @ s_)[..., 0, 0],
                          z, pr["Qz"], abar, l.R, s, P)
    zT = z.terminal()
    term = float((zT.T @ pr["Gz"] @ zT)[0, 0]) + float(np.trace(P.nodes[0] @ spec.x0l_cov))
    return 0.5 * (_simpson(integrand) + term)
