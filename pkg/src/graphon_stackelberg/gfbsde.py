"""Linear graphon-aggregated FBSDEs: monotonicity check, continuation solver,
residuals, a-priori energy and graphon-stability harness.

The problem, per index ``u`` with one Brownian motion ``W^u``::

    dX = (A21 X + A22 Y + A23 Z + B2 GX + b) dt + (A31 X + A32 Y + A33 Z + B3 GX + sigma) dW
    dY = (A11 X + A12 Y + A13 Z + B1 GX + g) dt + Z dW
    X_0 = x0,  Y_T = G1 X_T + G2 GX_T + h

Coefficients and forcings are deterministic, so the aggregate ``GX`` equals
``G m`` with ``m = E[X]`` and the solution is affine in ``X``:
``Y = Pi X + eta`` and ``Z = Lam X + zeta`` with deterministic per-index
``Pi``, ``eta``, ``Lam``, ``zeta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import graphon as gr
from .ode import (IntegrationError, LinearPropagator, RegularityError, integrate)
from .paths import MatrixPath, TimeGrid, pointwise, resample

_T = lambda a: np.swapaxes(a, -1, -2)

SINGULAR_TOL = 1e-10


class MonotonicityError(RuntimeError):
    """The problem lies outside the monotonicity hypotheses or continuation stalled."""


def _as_index_path(p, M: int, shape, grid: TimeGrid, name: str) -> MatrixPath:
    """Broadcast a path (or constant array) to an explicit leading index axis."""
    if not isinstance(p, MatrixPath):
        p = MatrixPath.constant(grid, np.asarray(p, dtype=float))
    if p.grid != grid:
        raise ValueError(f"{name}: path lives on a different grid")
    tgt = (M,) + tuple(shape)
    nodes, stages = p.nodes, p.stages
    if nodes.ndim == len(shape) + 1:
        nodes, stages = nodes[:, None], stages[:, :, None]
    try:
        nodes = np.broadcast_to(nodes, (grid.N + 1,) + tgt).copy()
        stages = np.broadcast_to(stages, (grid.N, 3) + tgt).copy()
    except ValueError as exc:
        raise ValueError(f"{name}: cannot broadcast {p.shape} to {tgt}") from exc
    return MatrixPath(grid, nodes, stages)


def _as_index_array(a, M, shape, name):
    a = np.asarray(a, dtype=float)
    try:
        return np.broadcast_to(a, (M,) + tuple(shape)).copy()
    except ValueError as exc:
        raise ValueError(f"{name}: cannot broadcast {a.shape} to {(M,) + tuple(shape)}") from exc


@dataclass
class GfbsdeProblem:
    """Coefficients of the aggregated FBSDE.

    ``A`` maps ``(i, j)`` to paths, ``B`` maps ``i`` to paths.  Paths and
    terminal matrices may be index-free (``n x n``) or per index
    (``M x n x n``); they are broadcast to an explicit index axis.
    """

    A: dict
    B: dict
    G1: np.ndarray
    G2: np.ndarray
    b: MatrixPath
    sigma: MatrixPath
    g: MatrixPath
    h: np.ndarray
    graphon: gr.GraphonGrid
    x0_mean: np.ndarray
    x0_cov: np.ndarray | None = None

    def __post_init__(self):
        grid = self.A[(1, 1)].grid
        M = self.graphon.M
        n = self.A[(1, 1)].shape[-1]
        self.A = {(i, j): _as_index_path(self.A[(i, j)], M, (n, n), grid, f"A{i}{j}")
                  for i in (1, 2, 3) for j in (1, 2, 3)}
        self.B = {i: _as_index_path(self.B[i], M, (n, n), grid, f"B{i}") for i in (1, 2, 3)}
        self.b = _as_index_path(self.b, M, (n, 1), grid, "b")
        self.sigma = _as_index_path(self.sigma, M, (n, 1), grid, "sigma")
        self.g = _as_index_path(self.g, M, (n, 1), grid, "g")
        self.G1 = _as_index_array(self.G1, M, (n, n), "G1")
        self.G2 = _as_index_array(self.G2, M, (n, n), "G2")
        self.h = _as_index_array(self.h, M, (n, 1), "h")
        self.x0_mean = _as_index_array(self.x0_mean, M, (n, 1), "x0_mean")
        cov = np.zeros((n, n)) if self.x0_cov is None else self.x0_cov
        self.x0_cov = _as_index_array(cov, M, (n, n), "x0_cov")

    @property
    def grid(self) -> TimeGrid:
        return self.A[(1, 1)].grid

    @property
    def n(self) -> int:
        return self.A[(1, 1)].shape[-1]

    @property
    def M(self) -> int:
        return self.graphon.M

    def scaled_data(self, s: float) -> "GfbsdeProblem":
        """Multiply all data ``(x0, b, sigma, g, h)`` by ``s``."""
        return replace(self, b=self.b * s, sigma=self.sigma * s, g=self.g * s, h=self.h * s,
                       x0_mean=self.x0_mean * s, x0_cov=self.x0_cov * (s * s))

    def with_data(self, **kw) -> "GfbsdeProblem":
        return replace(self, **kw)

    def with_graphon(self, G: gr.GraphonGrid) -> "GfbsdeProblem":
        if G.M != self.M:
            raise gr.GraphonError("replacement graphon must use the same index grid")
        return replace(self, graphon=G)

    def on_grid(self, grid: TimeGrid) -> "GfbsdeProblem":
        """Re-sample coefficient paths (left-constant) on another time grid."""
        rs = lambda p: resample(p, grid)
        return replace(self, A={k: rs(v) for k, v in self.A.items()},
                       B={k: rs(v) for k, v in self.B.items()},
                       b=rs(self.b), sigma=rs(self.sigma), g=rs(self.g))

    def data_energy(self) -> float:
        """``E[|x0|^2 + |h|^2 + int (|b|^2 + |sigma|^2 + |g|^2) dt]`` averaged over the index."""
        w = self.graphon.grid.weights
        x0 = np.sum(self.x0_mean ** 2, axis=(-2, -1)) + np.trace(self.x0_cov, axis1=-2, axis2=-1)
        hh = np.sum(self.h ** 2, axis=(-2, -1))
        integrand = sum(np.sum(p.nodes ** 2, axis=(-2, -1)) for p in (self.b, self.sigma, self.g))
        integral = _trapezoid(integrand, self.grid.h)
        return float(w @ (x0 + hh + integral))


def _trapezoid(vals, h):
    return h * (0.5 * vals[0] + vals[1:-1].sum(axis=0) + 0.5 * vals[-1])


# ---------------------------------------------------------------------------
# monotonicity
# ---------------------------------------------------------------------------

def _kernel(G: gr.GraphonGrid) -> np.ndarray:
    s = np.sqrt(G.grid.weights)
    return s[:, None] * G.values * s[None, :]


def monotonicity_operator(p: GfbsdeProblem, A_nodes: dict, B_nodes: dict) -> np.ndarray:
    """Symmetrized ``3 n M`` matrix of the monotonicity quadratic form at one node.

    Index-major ordering ``(u, [x, y, z])`` in ``sqrt(w)``-scaled coordinates.
    """
    n, M = p.n, p.M
    blk = np.zeros((M, 3 * n, 3 * n))
    for i in (1, 2, 3):
        for j in (1, 2, 3):
            # row of the quadratic form pairs x with the Y-driver row A1j,
            # y with the forward drift row A2j and z with the diffusion row A3j
            blk[:, (i - 1) * n:i * n, (j - 1) * n:j * n] = A_nodes[(i, j)]
    Bcol = np.concatenate([B_nodes[1], B_nodes[2], B_nodes[3]], axis=-2)  # (M, 3n, n)
    K = _kernel(p.graphon)
    op = np.zeros((M, 3 * n, M, 3 * n))
    op[:, :, :, :n] += K[:, None, :, None] * Bcol[:, :, None, :]
    for u in range(M):
        op[u, :, u, :] += blk[u]
    op = op.reshape(M * 3 * n, M * 3 * n)
    return 0.5 * (op + op.T)


def _terminal_forms(p: GfbsdeProblem):
    n, M = p.n, p.M
    g1 = float(np.linalg.eigvalsh(0.5 * (p.G1 + _T(p.G1))).min())
    K = _kernel(p.graphon)
    op = (K[:, None, :, None] * p.G2[:, :, None, :]).reshape(M * n, M * n)
    g2 = float(np.linalg.eigvalsh(0.5 * (op + op.T)).min())
    return g1, g2


def check_S1_S2(p: GfbsdeProblem, nodes=None) -> dict:
    """Best monotonicity constant ``K1`` over the grid plus terminal PSD checks.

    ``K1 = -max_t lambda_max`` of the symmetrized operator; ``K1 <= 0`` puts
    the problem outside the hypotheses of the continuation method.
    """
    grid = p.grid
    ks = range(grid.N + 1) if nodes is None else nodes
    finite = all(np.all(np.isfinite(v.nodes)) for v in list(p.A.values()) + list(p.B.values()))
    bound = max(float(np.max(np.abs(v.nodes))) for v in list(p.A.values()) + list(p.B.values()))
    worst, worst_k = -np.inf, 0
    for k in ks:
        op = monotonicity_operator(p, {key: v.nodes[k] for key, v in p.A.items()},
                                   {key: v.nodes[k] for key, v in p.B.items()})
        lam = float(np.linalg.eigvalsh(op).max())
        if lam > worst:
            worst, worst_k = lam, k
    K1 = -worst
    g1, g2 = _terminal_forms(p)
    wit = []
    if not finite:
        wit.append({"name": "S1", "reason": "non-finite coefficients"})
    if K1 <= 0:
        wit.append({"name": "S2", "reason": "monotonicity constant not positive",
                    "K1": K1, "node": worst_k})
    if g1 < -1e-10:
        wit.append({"name": "G1", "reason": "terminal matrix not PSD", "min_eig": g1})
    if g2 < -1e-10:
        wit.append({"name": "G2", "reason": "graphon terminal form not PSD", "min_eig": g2})
    return {"check": "S1_S2", "pass": not wit, "margin": K1, "witnesses": wit, "K1": K1,
            "K1_node": worst_k, "G1_min_eig": g1, "G2_form_min_eig": g2, "coefficient_bound": bound}


# ---------------------------------------------------------------------------
# solution container
# ---------------------------------------------------------------------------

@dataclass
class GfbsdeSolution:
    """Affine representation of the solution plus closed-loop coefficients.

    ``X`` satisfies ``dX = (Fx X + fx) dt + (Sx X + cx) dW``.
    """

    problem: GfbsdeProblem
    Pi: MatrixPath
    eta: MatrixPath
    Lam: MatrixPath
    zeta: MatrixPath
    m: MatrixPath
    agg: MatrixPath
    Fx: MatrixPath
    fx: MatrixPath
    Sx: MatrixPath
    cx: MatrixPath
    alpha: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def mean_Y(self) -> MatrixPath:
        return self.Pi @ self.m + self.eta

    @property
    def mean_Z(self) -> MatrixPath:
        return self.Lam @ self.m + self.zeta

    def second_moment(self) -> tuple:
        """``(mean, E[X X'])`` paths from the exact moment ODEs."""
        p = self.problem
        S0 = p.x0_cov + p.x0_mean @ _T(p.x0_mean)
        return linear_sde_moments(self.Fx, self.fx, self.Sx, self.cx, p.x0_mean, S0)

    def energy(self) -> dict:
        """``sup E|X|^2 + sup E|Y|^2 + int E|Z|^2`` (index-averaged, exact moments)."""
        mu, S = self.second_moment()
        w = self.problem.graphon.grid.weights
        ex = _quad_moment(None, None, mu, S) @ w
        ey = _quad_moment(self.Pi.nodes, self.eta.nodes, mu, S) @ w
        ez = _quad_moment(self.Lam.nodes, self.zeta.nodes, mu, S) @ w
        total = float(ex.max() + ey.max() + _trapezoid(ez, self.problem.grid.h))
        return {"energy": total, "sup_EX2": float(ex.max()), "sup_EY2": float(ey.max()),
                "int_EZ2": float(_trapezoid(ez, self.problem.grid.h))}

    def sample(self, paths: int, seed: int = 0, dW=None, x0=None):
        """Euler-Maruyama sample paths ``(X, Y, Z, dW)`` of shape ``(N + 1, M, P, n, 1)``."""
        p = self.problem
        grid, M, n = p.grid, p.M, p.n
        from .mc import GFBSDE_INIT, GFBSDE_NOISE, brownian_increments, initial_draws

        if dW is None:
            dW = brownian_increments(seed, kind=GFBSDE_NOISE, count=M, paths=paths, N=grid.N, h=grid.h)
        if x0 is None:
            x0 = initial_draws(seed, kind=GFBSDE_INIT, mean=p.x0_mean, cov=p.x0_cov, paths=paths)
        X = np.empty((grid.N + 1, M, paths, n, 1))
        X[0] = x0
        Fx, fx, Sx, cx = (q.nodes[:, :, None] for q in (self.Fx, self.fx, self.Sx, self.cx))
        for k in range(grid.N):
            x = X[k]
            X[k + 1] = (x + (Fx[k] @ x + fx[k]) * grid.h
                        + (Sx[k] @ x + cx[k]) * dW[k][..., None, None])
        Y = self.Pi.nodes[:, :, None] @ X + self.eta.nodes[:, :, None]
        Z = self.Lam.nodes[:, :, None] @ X + self.zeta.nodes[:, :, None]
        return X, Y, Z, dW


def _quad_moment(C, d, mu, S):
    """``E|C X + d|^2`` per node and index from mean ``mu`` and second moment ``S``."""
    if C is None:
        return np.trace(S, axis1=-2, axis2=-1)
    q = np.trace(C @ S @ _T(C), axis1=-2, axis2=-1)
    cross = 2.0 * np.sum(d * (C @ mu), axis=(-2, -1))
    return q + cross + np.sum(d * d, axis=(-2, -1))


def linear_sde_moments(F: MatrixPath, f: MatrixPath, S: MatrixPath, c: MatrixPath, mean0, second0):
    """Exact first and second moments of ``dX = (F X + f) dt + (S X + c) dW``.

    Returns the mean path and the second-moment path ``E[X X']`` (RK4).
    """
    st = {k: v.stages for k, v in (("F", F), ("f", f), ("S", S), ("c", c))}

    def rhs(k, j, y):
        mu, Sig = y[..., :, :1], y[..., :, 1:]
        Fk, fk, Sk, ck = st["F"][k, j], st["f"][k, j], st["S"][k, j], st["c"][k, j]
        dmu = Fk @ mu + fk
        cm = ck @ _T(mu)
        dS = (Fk @ Sig + Sig @ _T(Fk) + fk @ _T(mu) + mu @ _T(fk)
              + Sk @ Sig @ _T(Sk) + Sk @ _T(cm) + cm @ _T(Sk) + ck @ _T(ck))
        return np.concatenate([dmu, dS], axis=-1)

    y0 = np.concatenate([np.asarray(mean0, dtype=float), np.asarray(second0, dtype=float)], axis=-1)
    out = integrate(rhs, y0, F.grid, "forward", name="moment ODE")
    return out.nodes[..., :, :1], out.nodes[..., :, 1:]


# ---------------------------------------------------------------------------
# alpha = 0: closed form
# ---------------------------------------------------------------------------

def solve_alpha0(p: GfbsdeProblem, K1: float) -> GfbsdeSolution:
    """Solve the decoupled base system with ``Y = X + Ytil``.

    ``Ytil' = K1 Ytil + g - b`` backward from ``h`` (deterministic since the
    forcings are), ``Z = sigma / (1 + K1)`` and ``m' = -K1 m - K1 Ytil + b``.
    """
    grid, M, n = p.grid, p.M, p.n
    eye = np.broadcast_to(np.eye(n), (M, n, n))
    L = MatrixPath.constant(grid, K1 * eye)
    Ytil = LinearPropagator(L, "backward").solve(p.g - p.b, p.h, name="base BSDE")
    Fx = MatrixPath.constant(grid, -K1 * eye)
    m = LinearPropagator(Fx, "forward").solve(p.b - K1 * Ytil, p.x0_mean, name="base SDE")
    zeta = p.sigma * (1.0 / (1.0 + K1))
    Pi = MatrixPath.constant(grid, eye)
    Lam = MatrixPath.zeros(grid, (M, n, n))
    agg = m.map(lambda a: gr.aggregate_axis(p.graphon, a, a.ndim - 3))
    return GfbsdeSolution(p, Pi, Ytil, Lam, zeta, m, agg,
                          Fx=Fx, fx=p.b - K1 * Ytil, Sx=Lam, cx=p.sigma - K1 * zeta,
                          alpha=0.0, diagnostics={"K1": K1})


# ---------------------------------------------------------------------------
# continuation
# ---------------------------------------------------------------------------

def mixed_coefficients(p: GfbsdeProblem, alpha: float, K1: float):
    """Coefficients of the alpha-family joining the base system to ``p``."""
    M, n = p.M, p.n
    eye = np.broadcast_to(np.eye(n), (M, n, n))
    a = {}
    for key, path in p.A.items():
        base = -(1.0 - alpha) * K1 * eye if key in ((1, 1), (2, 2), (3, 3)) else 0.0
        a[key] = path.map(lambda v, base=base: alpha * v + base)
    Bm = {i: p.B[i] * alpha for i in (1, 2, 3)}
    T1 = (1.0 - alpha) * eye + alpha * p.G1
    T2 = alpha * p.G2
    return a, Bm, T1, T2


def _solve_pi(a: dict, T1, grid: TimeGrid, alpha: float):
    n = T1.shape[-1]
    eye = np.eye(n)
    st = {k: v.stages for k, v in a.items()}

    def lam(k, j, P):
        a33, a31, a32 = st[(3, 3)][k, j], st[(3, 1)][k, j], st[(3, 2)][k, j]
        return np.linalg.solve(eye - P @ a33, P @ (a31 + a32 @ P))

    def rhs(k, j, P):
        L = lam(k, j, P)
        g = lambda key: st[key][k, j]
        return (g((1, 1)) + g((1, 2)) @ P + g((1, 3)) @ L
                - P @ g((2, 1)) - P @ g((2, 2)) @ P - P @ g((2, 3)) @ L)

    minsv = np.empty(grid.N + 1)

    def post(k, P):
        kk = min(k, grid.N - 1)
        j = 0 if k < grid.N else 2
        sv = np.linalg.svd(eye - P @ st[(3, 3)][kk, j], compute_uv=False).min()
        minsv[k] = sv
        if sv < SINGULAR_TOL:
            raise RegularityError(f"I - Pi A33 singular at alpha={alpha:.6g} (min sv {sv:.3g})", k)
        return P

    post(grid.N, T1)
    Pi = integrate(rhs, T1, grid, "backward", post_step=post, cap=1e8, name="continuation Pi")
    return Pi, float(minsv.min())


class _Step:
    """Linear maps of one alpha-level: the forcings are affine in the aggregate."""

    def __init__(self, p: GfbsdeProblem, alpha: float, K1: float):
        self.p, self.alpha = p, alpha
        a, Bm, T1, T2 = mixed_coefficients(p, alpha, K1)
        grid, n = p.grid, p.n
        self.Pi, self.minsv = _solve_pi(a, T1, grid, alpha)
        eye = np.eye(n)
        Pi = self.Pi
        Xi = pointwise(lambda P, a33: np.linalg.solve(eye - P @ a33, P), Pi, a[(3, 3)])
        self.Xi = Xi
        self.Lam = pointwise(lambda X, a31, a32, P: X @ (a31 + a32 @ P), Xi, a[(3, 1)], a[(3, 2)], Pi)
        # eta' = Leta eta + Keta_a agg + ceta
        self.Leta = pointwise(lambda a12, P, a22, a13, a23, X, a32: a12 - P @ a22 + (a13 - P @ a23) @ X @ a32,
                              a[(1, 2)], Pi, a[(2, 2)], a[(1, 3)], a[(2, 3)], Xi, a[(3, 2)])
        W = pointwise(lambda a13, P, a23, X: (a13 - P @ a23) @ X, a[(1, 3)], Pi, a[(2, 3)], Xi)
        self.Keta = pointwise(lambda W_, B1, B2, B3, P: W_ @ B3 + B1 - P @ B2, W, Bm[1], Bm[2], Bm[3], Pi)
        self.ceta = pointwise(lambda W_, s, g, P, b: W_ @ s + g - P @ b, W, p.sigma, p.g, Pi, p.b)
        # m' = Lm m + Km_eta eta + Km_a agg + cm
        self.Lm = pointwise(lambda a21, a22, P, a23, L: a21 + a22 @ P + a23 @ L,
                            a[(2, 1)], a[(2, 2)], Pi, a[(2, 3)], self.Lam)
        self.Km_eta = pointwise(lambda a22, a23, X, a32: a22 + a23 @ X @ a32,
                                a[(2, 2)], a[(2, 3)], Xi, a[(3, 2)])
        self.Km_a = pointwise(lambda a23, X, B3, B2: a23 @ X @ B3 + B2, a[(2, 3)], Xi, Bm[3], Bm[2])
        self.cm = pointwise(lambda a23, X, s, b: a23 @ X @ s + b, a[(2, 3)], Xi, p.sigma, p.b)
        # diffusion of X: Sx X + (a32 eta + a33 zeta + B3 agg + sigma)
        self.Sx = pointwise(lambda a31, a32, P, a33, L: a31 + a32 @ P + a33 @ L,
                            a[(3, 1)], a[(3, 2)], Pi, a[(3, 3)], self.Lam)
        self.a, self.Bm, self.T2 = a, Bm, T2
        self.back = LinearPropagator(self.Leta, "backward")
        self.fwd = LinearPropagator(self.Lm, "forward")

    def sweep(self, agg: MatrixPath):
        p = self.p
        f_eta = self.Keta @ agg + self.ceta
        eta = self.back.solve(f_eta, self.T2 @ agg.terminal() + p.h, name="continuation eta")
        f_m = self.Km_eta @ eta + self.Km_a @ agg + self.cm
        m = self.fwd.solve(f_m, p.x0_mean, name="continuation mean")
        return eta, m

    def solution(self, eta, m, agg, diagnostics) -> GfbsdeSolution:
        p, a = self.p, self.a
        zeta = pointwise(lambda X, a32, e, B3, ag, s: X @ (a32 @ e + B3 @ ag + s),
                         self.Xi, a[(3, 2)], eta, self.Bm[3], agg, p.sigma)
        fx = self.Km_eta @ eta + self.Km_a @ agg + self.cm
        cx = pointwise(lambda a32, e, a33, z, B3, ag, s: a32 @ e + a33 @ z + B3 @ ag + s,
                       a[(3, 2)], eta, a[(3, 3)], zeta, self.Bm[3], agg, p.sigma)
        return GfbsdeSolution(p, self.Pi, eta, self.Lam, zeta, m, agg, self.Lm, fx,
                              self.Sx, cx, alpha=self.alpha, diagnostics=diagnostics)


def _aggregate(p: GfbsdeProblem, m: MatrixPath) -> MatrixPath:
    return m.map(lambda a: gr.aggregate_axis(p.graphon, a, a.ndim - 3))


def _picard(step: _Step, agg0: MatrixPath, tol: float, max_iter: int):
    agg = agg0
    history = []
    relax = 1.0
    for _ in range(max_iter):
        eta, m = step.sweep(agg)
        new = _aggregate(step.p, m)
        res = float(max(np.max(np.abs(new.nodes - agg.nodes)), np.max(np.abs(new.stages - agg.stages))))
        if not np.isfinite(res):
            return None, history + [res]
        if history and res > history[-1]:
            relax = 0.5
        history.append(res)
        if res <= tol:
            return new, history
        if len(history) > 10 and res > 10 * history[0]:
            return None, history
        agg = new if relax == 1.0 else agg + relax * (new - agg)
    return None, history


def continuation_solve(p: GfbsdeProblem, K1: float | None = None, delta: float = 0.25,
                       adaptive: bool = True, delta_floor: float = 1.0 / 64, tol: float = 1e-10,
                       max_iter: int = 100, init_scale: float = 0.0, init_seed: int = 0) -> GfbsdeSolution:
    """Advance ``alpha`` from 0 to 1 and return the solution at ``alpha = 1``.

    At each level ``Pi`` is solved directly and the aggregate is found by
    Picard iteration warm-started from the previous level (optionally
    perturbed by ``init_scale`` for uniqueness probes).  A failed level
    halves the step when ``adaptive``; below ``delta_floor`` the solve
    aborts.
    """
    if K1 is None:
        rep = check_S1_S2(p)
        K1 = rep["K1"]
        if not rep["pass"]:
            raise MonotonicityError(
                f"outside theorem hypotheses: K1={K1:.4g}, witnesses={rep['witnesses']}")
    if K1 <= 0:
        raise MonotonicityError(f"outside theorem hypotheses: K1={K1:.4g} <= 0")
    rng = np.random.default_rng(init_seed)
    base = solve_alpha0(p, K1)
    agg = base.agg
    alpha, d = 0.0, delta
    levels, iters = [], []
    step = None
    eta = m = None
    while alpha < 1.0:
        target = min(1.0, alpha + d)
        try:
            step = _Step(p, target, K1)
            start = agg
            if init_scale:
                start = agg + MatrixPath(p.grid, init_scale * rng.standard_normal(agg.nodes.shape),
                                         init_scale * rng.standard_normal(agg.stages.shape))
            new, hist = _picard(step, start, tol, max_iter)
        except (IntegrationError, np.linalg.LinAlgError) as exc:
            new, hist = None, [str(exc)]
        if new is None:
            if not adaptive or d / 2 < delta_floor:
                raise MonotonicityError(
                    f"monotonicity margin too small at alpha={target:.6g} "
                    f"(step {d:.4g}, inner history tail {hist[-3:]})")
            d /= 2
            continue
        agg = new
        alpha = target
        levels.append(alpha)
        iters.append(len(hist))
    eta, m = step.sweep(agg)
    diag = {"K1": K1, "alpha_levels": levels, "inner_iterations": iters,
            "min_sv_I_minus_Pi_A33": step.minsv}
    return step.solution(eta, m, _aggregate(p, m), diag)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def residual(p: GfbsdeProblem, s: GfbsdeSolution, paths: int = 200, seed: int = 0, sample=None) -> dict:
    """Euler residuals of sampled ``(X, Y, Z)``, per unit time, RMS over paths.

    ``forward_res`` and ``backward_res`` are ``max_k`` of the step defect
    divided by ``h``; ``terminal_res`` is the defect of the terminal condition.
    """
    grid, h = p.grid, p.grid.h
    X, Y, Z, dW = s.sample(paths, seed) if sample is None else sample
    agg = s.agg.nodes[:, :, None]
    A = {k: v.nodes[:, :, None] for k, v in p.A.items()}
    B = {k: v.nodes[:, :, None] for k, v in p.B.items()}
    b, sg, g = (q.nodes[:, :, None] for q in (p.b, p.sigma, p.g))
    dw = dW[..., None, None]
    sl = slice(0, grid.N)

    def row(i, k_sl):
        return (A[(i, 1)][k_sl] @ X[k_sl] + A[(i, 2)][k_sl] @ Y[k_sl] + A[(i, 3)][k_sl] @ Z[k_sl]
                + B[i][k_sl] @ agg[k_sl])

    fwd = X[1:] - X[:-1] - (row(2, sl) + b[sl]) * h - (row(3, sl) + sg[sl]) * dw
    bwd = Y[1:] - Y[:-1] - (row(1, sl) + g[sl]) * h - Z[:-1] * dw
    term = Y[-1] - (p.G1[:, None] @ X[-1] + p.G2[:, None] @ agg[-1] + p.h[:, None])
    rms = lambda r: np.sqrt(np.mean(np.sum(r * r, axis=(-2, -1)), axis=-1))
    return {"forward_res": float(rms(fwd).max() / h), "backward_res": float(rms(bwd).max() / h),
            "terminal_res": float(rms(term).max())}


def apriori_estimate_check(p: GfbsdeProblem, s: GfbsdeSolution) -> dict:
    """Energy of the solution against the data energy; zero data gives ratio 0."""
    e = s.energy()
    d = p.data_energy()
    ratio = 0.0 if d == 0.0 and e["energy"] == 0.0 else (e["energy"] / d if d > 0 else np.inf)
    return {"check": "apriori_estimate", "lhs": e["energy"], "rhs": d, "ratio": float(ratio), **e}


def difference_energy(s1: GfbsdeSolution, s2: GfbsdeSolution) -> float:
    """Energy of ``(X1 - X2, Y1 - Y2, Z1 - Z2)`` driven by the same noise and initial draw."""
    p = s1.problem
    n = p.n

    def blk(a, b_, c, d):
        top = np.concatenate([a, b_], axis=-1)
        bot = np.concatenate([c, d], axis=-1)
        return np.concatenate([top, bot], axis=-2)

    Z0 = lambda q: np.zeros_like(q)
    # state (D, X2) with D = X1 - X2
    F = pointwise(lambda F1, F2: blk(F1, F1 - F2, Z0(F1), F2), s1.Fx, s2.Fx)
    f = pointwise(lambda f1, f2: np.concatenate([f1 - f2, f2], axis=-2), s1.fx, s2.fx)
    S = pointwise(lambda S1, S2: blk(S1, S1 - S2, Z0(S1), S2), s1.Sx, s2.Sx)
    c = pointwise(lambda c1, c2: np.concatenate([c1 - c2, c2], axis=-2), s1.cx, s2.cx)
    M = p.M
    mean0 = np.concatenate([np.zeros((M, n, 1)), p.x0_mean], axis=-2)
    sec0 = np.zeros((M, 2 * n, 2 * n))
    sec0[:, n:, n:] = p.x0_cov + p.x0_mean @ _T(p.x0_mean)
    mu, Sg = linear_sde_moments(F, f, S, c, mean0, sec0)
    w = p.graphon.grid.weights
    sel = lambda C1, C2: np.concatenate([C1, C1 - C2], axis=-1)
    shp = s1.Pi.nodes.shape
    pick_D = np.concatenate([np.broadcast_to(np.eye(n), shp), np.zeros(shp)], axis=-1)
    ex = _quad_moment(pick_D, np.zeros_like(s1.eta.nodes), mu, Sg) @ w
    ey = _quad_moment(sel(s1.Pi.nodes, s2.Pi.nodes), s1.eta.nodes - s2.eta.nodes, mu, Sg) @ w
    ez = _quad_moment(sel(s1.Lam.nodes, s2.Lam.nodes), s1.zeta.nodes - s2.zeta.nodes, mu, Sg) @ w
    return float(ex.max() + ey.max() + _trapezoid(ez, p.grid.h))


def stability_experiment(p: GfbsdeProblem, G1: gr.GraphonGrid, G2: gr.GraphonGrid,
                         scales=(1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125), **solve_kw) -> dict:
    """Solve under ``G1`` and interpolants towards ``G2`` and fit the log-log slope.

    The fitted slope of difference energy against ``|G1 - Gs|_inf`` should be
    close to 2; points whose interpolant fails the monotonicity check are
    skipped and listed.
    """
    base_p = p.with_graphon(G1)
    base = continuation_solve(base_p, **solve_kw)
    data = p.data_energy()
    pts, skipped = [], []
    for s in scales:
        Gs = gr.interpolate(G1, G2, s)
        ps = p.with_graphon(Gs)
        rep = check_S1_S2(ps)
        if not rep["pass"]:
            skipped.append({"s": s, "reason": rep["witnesses"]})
            continue
        sol = continuation_solve(ps, K1=rep["K1"], **{k: v for k, v in solve_kw.items() if k != "K1"})
        dG = gr.distance(G1, Gs)
        pts.append({"s": s, "dG": dG, "E_diff": difference_energy(base, sol)})
    good = [q for q in pts if q["dG"] > 0 and q["E_diff"] > 0]
    slope = None
    if len(good) >= 2:
        x = np.log([q["dG"] for q in good])
        y = np.log([q["E_diff"] for q in good])
        slope = float(np.polyfit(x, y, 1)[0])
    K_emp = max((q["E_diff"] / (q["dG"] ** 2 * data) for q in good), default=0.0) if data > 0 else None
    ok = slope is not None and slope >= 1.8
    return {"check": "graphon_stability", "pass": ok, "slope": slope, "K_emp": K_emp,
            "data_energy": data, "points": pts, "skipped": skipped}
