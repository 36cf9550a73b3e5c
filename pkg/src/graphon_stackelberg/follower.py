"""Follower Nash equilibrium: hatted coefficients, feedback law and the
aggregate fixed point for the forward-backward system ``(X, phi)``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import graphon as gr
from .ode import (LinearPropagator, RegularityError, RiccatiSolution,
                  solve_follower_riccati_woodbury)
from .paths import MatrixPath

_T = lambda a: np.swapaxes(a, -1, -2)


class FixedPointError(RuntimeError):
    """The aggregate fixed point did not converge."""

    def __init__(self, message, history):
        super().__init__(f"{message}; residual history tail {history[-5:]}")
        self.history = history


@dataclass
class HattedCoefficients:
    """Coefficients of the reduced follower system after ``p = P X + phi``.

    ``g0`` is the part of the backward forcing independent of the leader and
    ``g_lead`` the matrix multiplying ``E[X^l]`` (equal to ``-Qf13``).
    """

    A: MatrixPath
    B: MatrixPath
    C: MatrixPath
    D: MatrixPath
    E: MatrixPath
    F: MatrixPath
    H: MatrixPath
    I: MatrixPath
    b: MatrixPath
    sigma: MatrixPath
    g0: MatrixPath
    g_lead: MatrixPath
    P: MatrixPath
    Rhat_min_sv: float

    def g(self, leader_mean: MatrixPath) -> MatrixPath:
        return self.g0 + self.g_lead @ leader_mean


@dataclass
class FollowerPolicy:
    """``alpha = Kx X + Kphi phi + Kagg GX + koff``."""

    Kx: MatrixPath
    Kphi: MatrixPath
    Kagg: MatrixPath
    koff: MatrixPath

    def control(self, k: int, X, phi, agg, stage: int | None = None):
        pick = (lambda p: p.nodes[k]) if stage is None else (lambda p: p.stages[k, stage])
        return pick(self.Kx) @ X + pick(self.Kphi) @ phi + pick(self.Kagg) @ agg + pick(self.koff)


@dataclass
class FollowerSolution:
    """Per-index deterministic representatives of the follower equilibrium.

    ``m`` is ``E[X^u]``, ``phi`` the offset in ``p = P X + phi`` and ``agg``
    the aggregate ``G m``; all have shape ``(M, n1, 1)`` per node.
    """

    m: MatrixPath
    phi: MatrixPath
    agg: MatrixPath
    iterations: int
    history: list = field(default_factory=list)


def _pieces(A, B, C, D, E, F, b, s, Q12, R, P):
    """Shared sub-expressions, evaluated on aligned node or stage arrays."""
    n = P.shape[-1]
    RiB = np.linalg.solve(R, _T(B))              # R^{-1} B'
    RiE = np.linalg.solve(R, _T(E))              # R^{-1} E'
    Rhat = np.eye(n) + P @ E @ RiE
    Rh_P = np.linalg.solve(Rhat, P)              # Rhat^{-1} P
    Dm = D - E @ RiB @ P                         # D - E R^{-1} B' P
    return RiB, RiE, Rhat, Rh_P, Dm


def _hatted_arrays(A, B, C, D, E, F, b, s, Q12, R, P):
    RiB, RiE, Rhat, Rh_P, Dm = _pieces(A, B, C, D, E, F, b, s, Q12, R, P)
    BRiE = B @ RiE
    ERiE = E @ RiE
    ERB = E @ RiB                                # E R^{-1} B'
    left = -_T(D) + P @ BRiE                     # -D' + P B R^{-1} E'
    Ah = A - B @ RiB @ P - BRiE @ Rh_P @ Dm
    Bh = -B @ RiB + BRiE @ Rh_P @ ERB
    Ch = C - BRiE @ Rh_P @ F
    bh = b - BRiE @ Rh_P @ s
    Dh = D - ERB @ P - ERiE @ Rh_P @ Dm
    Eh = -ERB + ERiE @ Rh_P @ ERB
    Fh = F - ERiE @ Rh_P @ F
    sh = s - ERiE @ Rh_P @ s
    Hh = -_T(A) + P @ B @ RiB - left @ Rh_P @ ERB
    Ih = -Q12 - P @ C + left @ Rh_P @ F
    g0 = -P @ b + left @ Rh_P @ s
    return Ah, Bh, Ch, Dh, Eh, Fh, Hh, Ih, bh, sh, g0, Rhat


def _apply(fn, f, P: MatrixPath):
    args = (f.A, f.B, f.C, f.D, f.E, f.F, f.b, f.sigma, f.Qb(1, 2), f.R)
    nodes = fn(*[a.nodes for a in args], P.nodes)
    stages = fn(*[a.stages for a in args], P.stages)
    return [MatrixPath(P.grid, n, s) for n, s in zip(nodes, stages)]


def _P_of(P):
    return P.P if isinstance(P, RiccatiSolution) else P


def assemble_hatted(spec, P, eps: float | None = None) -> HattedCoefficients:
    """Hatted coefficients from the follower Riccati solution ``P``."""
    f = getattr(spec, "follower", spec)
    eps = getattr(spec, "eps_R", 1e-8) if eps is None else eps
    Pp = _P_of(P)
    out = _apply(_hatted_arrays, f, Pp)
    Rhat = out[-1]
    sv = np.linalg.svd(Rhat.nodes, compute_uv=False).min()
    if sv < eps:
        raise RegularityError(f"Rhat = I + P E R^-1 E' singular (min sv {sv:.3g})")
    Ah, Bh, Ch, Dh, Eh, Fh, Hh, Ih, bh, sh, g0 = out[:-1]
    return HattedCoefficients(Ah, Bh, Ch, Dh, Eh, Fh, Hh, Ih, bh, sh, g0,
                              -f.Qb(1, 3), Pp, float(sv))


def _policy_arrays(A, B, C, D, E, F, b, s, Q12, R, P):
    RiB, RiE, Rhat, Rh_P, Dm = _pieces(A, B, C, D, E, F, b, s, Q12, R, P)
    Kx = -np.linalg.solve(R, _T(B) @ P + _T(E) @ Rh_P @ Dm)
    Kphi = -np.linalg.solve(R, _T(B) - _T(E) @ Rh_P @ E @ RiB)
    Kagg = -RiE @ Rh_P @ F
    koff = -RiE @ Rh_P @ s
    return Kx, Kphi, Kagg, koff


def follower_feedback(spec, P) -> FollowerPolicy:
    f = getattr(spec, "follower", spec)
    return FollowerPolicy(*_apply(_policy_arrays, f, _P_of(P)))


def adjoint_diffusion(spec, P, X, phi, agg, k: int):
    """``q = Rhat^{-1} P [(D - E R^{-1} B' P) X - E R^{-1} B' phi + F GX + sigma]`` at node ``k``."""
    f = getattr(spec, "follower", spec)
    Pp = _P_of(P)
    args = [p.nodes[k] for p in (f.A, f.B, f.C, f.D, f.E, f.F, f.b, f.sigma,
                                 f.Qb(1, 2), f.R)] + [Pp.nodes[k]]
    RiB, RiE, Rhat, Rh_P, Dm = _pieces(*args)
    E, F, s = args[4], args[5], args[7]
    return Rh_P @ (Dm @ X - E @ RiB @ phi + F @ agg + s)


def stationarity_residual(spec, P, policy: FollowerPolicy, X, phi, agg, k: int):
    """Residual of ``R alpha + B' p + E' q`` with ``q`` taken as the diffusion of ``p``.

    ``p = P X + phi`` has diffusion ``P (D X + E alpha + F GX + sigma)``; this
    uses the realised control, so it checks the feedback law independently of
    the closed form for ``q``.
    """
    f = getattr(spec, "follower", spec)
    Pk = _P_of(P).nodes[k]
    alpha = policy.control(k, X, phi, agg)
    p = Pk @ X + phi
    q = Pk @ (f.D.nodes[k] @ X + f.E.nodes[k] @ alpha + f.F.nodes[k] @ agg + f.sigma.nodes[k])
    res = f.R.nodes[k] @ alpha + _T(f.B.nodes[k]) @ p + _T(f.E.nodes[k]) @ q
    scale = (np.abs(f.R.nodes[k] @ alpha) + np.abs(_T(f.B.nodes[k]) @ p)
             + np.abs(_T(f.E.nodes[k]) @ q))
    return res, scale


def solve_follower_fb_system(hatted: HattedCoefficients, G: gr.GraphonGrid, x0_mean,
                             Gf12, Gf13, leader_mean: MatrixPath, tol: float = 1e-10,
                             max_iter: int = 200, init=None) -> FollowerSolution:
    """Fixed point on the deterministic aggregate ``a = G m``.

    Given ``a``, ``phi' = H phi + I a + g`` runs backward from
    ``Gf12 a_T + Gf13 E[X^l_T]`` and ``m' = A m + B phi + C a + b`` forward
    from the initial means; ``a`` is then re-aggregated.  The step is damped
    by 0.5 whenever the residual grows.
    """
    grid = hatted.A.grid
    M = G.M
    x0 = np.asarray(x0_mean, dtype=float)
    n1 = hatted.A.shape[-1]
    if x0.shape != (M, n1, 1):
        raise gr.GraphonError(f"initial means must have shape {(M, n1, 1)}, got {x0.shape}")
    back = LinearPropagator(hatted.H, "backward")
    fwd = LinearPropagator(hatted.A, "forward")
    g = hatted.g(leader_mean)
    g_st = g.stages[:, :, None]
    b_st = hatted.b.stages[:, :, None]
    Gf12 = np.asarray(Gf12, dtype=float)
    term_lead = np.asarray(Gf13, dtype=float) @ leader_mean.terminal()
    Ist, Bst, Cst = hatted.I.stages[:, :, None], hatted.B.stages[:, :, None], hatted.C.stages[:, :, None]

    def sweep(agg_st, agg_T):
        f_phi = MatrixPath(grid, np.zeros((grid.N + 1, M, n1, 1)), Ist @ agg_st + g_st)
        phi = back.solve(f_phi, Gf12 @ agg_T + term_lead, name="follower phi")
        f_m = MatrixPath(grid, np.zeros((grid.N + 1, M, n1, 1)),
                         Bst @ phi.stages + Cst @ agg_st + b_st)
        m = fwd.solve(f_m, x0, name="follower mean")
        return m, phi

    def aggregate_path(m: MatrixPath) -> MatrixPath:
        return m.map(lambda a: gr.aggregate_axis(G, a, a.ndim - 3))

    if init is None:
        agg = MatrixPath(grid, np.zeros((grid.N + 1, M, n1, 1)))
    else:
        agg = init
    history = []
    step = 1.0
    m = phi = None
    for it in range(1, max_iter + 1):
        m, phi = sweep(agg.stages, agg.nodes[-1])
        new = aggregate_path(m)
        res = float(max(np.max(np.abs(new.nodes - agg.nodes)), np.max(np.abs(new.stages - agg.stages))))
        if history and res > history[-1]:
            step = 0.5
        history.append(res)
        if not np.isfinite(res):
            raise FixedPointError("follower fixed point diverged", history)
        if res <= tol:
            agg = new
            break
        agg = new if step == 1.0 else agg + step * (new - agg)
    else:
        raise FixedPointError(f"follower fixed point not converged in {max_iter} iterations", history)
    m, phi = sweep(agg.stages, agg.nodes[-1])
    return FollowerSolution(m, phi, aggregate_path(m), len(history), history)


@dataclass
class FollowerEquilibrium:
    """Everything needed to simulate or evaluate the follower Nash equilibrium."""

    riccati: RiccatiSolution
    hatted: HattedCoefficients
    policy: FollowerPolicy
    solution: FollowerSolution
    leader_mean: MatrixPath


def follower_response(spec, leader_mean: MatrixPath, riccati: RiccatiSolution | None = None,
                      tol: float = 1e-10, max_iter: int = 200, init=None) -> FollowerEquilibrium:
    """Follower Nash equilibrium for a given leader mean path."""
    ric = riccati if riccati is not None else solve_follower_riccati_woodbury(spec)
    hat = assemble_hatted(spec, ric)
    pol = follower_feedback(spec, ric)
    f = spec.follower
    sol = solve_follower_fb_system(hat, spec.graphon, spec.x0f_mean, f.Gb(1, 2), f.Gb(1, 3),
                                   leader_mean, tol=tol, max_iter=max_iter, init=init)
    return FollowerEquilibrium(ric, hat, pol, sol, leader_mean)
