"""Fixed-step RK4 integration of matrix ODEs and the Riccati equations.

Right-hand sides are written as ``rhs(k, j, y)``: the derivative at stage
``j`` (fractions 0, 1/2, 1) of cell ``k``.  Coefficient paths supply their
stage values directly, so a cell-constant coefficient is honoured exactly
and solved paths carry Hermite midpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .paths import MatrixPath, TimeGrid

EPS_R = 1e-8
BLOWUP_CAP = 1e8


class IntegrationError(RuntimeError):
    """Non-finite values, blow-up or lost invertibility during a solve."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


class RegularityError(IntegrationError):
    """A matrix that must stay invertible became (numerically) singular."""


# ---------------------------------------------------------------------------
# generic integrators
# ---------------------------------------------------------------------------

def integrate(rhs, y_start, grid: TimeGrid, direction: str = "backward",
              cap: float | None = None, post_step=None, name: str = "ode") -> MatrixPath:
    """RK4 on ``grid``; ``y_start`` is the terminal value when integrating backward.

    ``post_step(k, y)`` may return a modified state (e.g. symmetrized) and
    may raise to abort.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    N, h = grid.N, grid.h
    y = np.array(y_start, dtype=float)
    nodes = np.empty((N + 1,) + y.shape)
    d_left = np.empty((N,) + y.shape)
    d_right = np.empty((N,) + y.shape)
    if direction == "forward":
        nodes[0] = y
        order = range(N)
    else:
        nodes[N] = y
        order = range(N - 1, -1, -1)
    for k in order:
        if direction == "forward":
            k1 = rhs(k, 0, y)
            k2 = rhs(k, 1, y + 0.5 * h * k1)
            k3 = rhs(k, 1, y + 0.5 * h * k2)
            k4 = rhs(k, 2, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            nxt = k + 1
        else:
            k1 = rhs(k, 2, y)
            k2 = rhs(k, 1, y - 0.5 * h * k1)
            k3 = rhs(k, 1, y - 0.5 * h * k2)
            k4 = rhs(k, 0, y - h * k3)
            y = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            nxt = k
        if post_step is not None:
            y = post_step(nxt, y)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"{name}: non-finite value", nxt)
        if cap is not None and np.max(np.abs(y)) > cap:
            raise IntegrationError(f"{name}: escape beyond {cap:g}", nxt)
        nodes[nxt] = y
    for k in range(N):
        d_left[k] = rhs(k, 0, nodes[k])
        d_right[k] = rhs(k, 2, nodes[k + 1])
    return MatrixPath.from_solution(grid, nodes, d_left, d_right)


def integrate_matrix_ode(rhs, value, grid: TimeGrid, direction: str = "backward") -> MatrixPath:
    """Public entry: RK4 path of ``dY/dt = rhs(k, j, Y)`` from an end value."""
    return integrate(rhs, value, grid, direction)


def _linear_step(L0, Lm, L1, y, f0, fm, f1, h):
    k1 = L0 @ y + f0
    k2 = Lm @ (y + 0.5 * h * k1) + fm
    k3 = Lm @ (y + 0.5 * h * k2) + fm
    k4 = L1 @ (y + h * k3) + f1
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _lift(a, ndim):
    """Insert singleton axes after the time axis so ``a`` broadcasts to ``ndim``."""
    extra = ndim - a.ndim
    if extra <= 0:
        return a
    return a.reshape(a.shape[:1] + (1,) * extra + a.shape[1:])


class LinearPropagator:
    """RK4 one-step maps for ``y' = L(t) y + f(t)``, precomputed for every cell.

    ``L`` is a :class:`MatrixPath` with trailing shape ``(..., d, d)``; the
    leading batch axes (e.g. follower index) broadcast against the forcing.
    Applying the propagator costs one small matmul per step, which makes
    repeated solves with different forcings cheap.
    """

    def __init__(self, L: MatrixPath, direction: str = "forward"):
        self.L = L
        self.grid = L.grid
        self.direction = direction
        h = self.grid.h
        S = L.stages
        d = L.shape[-1]
        eye = np.broadcast_to(np.eye(d), S[:, 0].shape)
        zero = np.zeros_like(S[:, 0])
        if direction == "forward":
            a, m, b, hh = S[:, 0], S[:, 1], S[:, 2], h
        elif direction == "backward":
            a, m, b, hh = S[:, 2], S[:, 1], S[:, 0], -h
        else:
            raise ValueError("direction must be 'forward' or 'backward'")
        self._a, self._m, self._b, self._h = a, m, b, hh
        self.Phi = _linear_step(a, m, b, eye, zero, zero, zero, hh)
        self.Wa = _linear_step(a, m, b, zero, eye, zero, zero, hh)
        self.Wm = _linear_step(a, m, b, zero, zero, eye, zero, hh)
        self.Wb = _linear_step(a, m, b, zero, zero, zero, eye, hh)

    def solve(self, f: MatrixPath | None, y_start, name: str = "linear ode") -> MatrixPath:
        grid = self.grid
        N = grid.N
        y = np.asarray(y_start, dtype=float)
        if f is None:
            fst = np.zeros((N, 3) + (self.Phi[0] @ y).shape)
        else:
            fst = f.stages
        if self.direction == "forward":
            fa, fm, fb = fst[:, 0], fst[:, 1], fst[:, 2]
        else:
            fa, fm, fb = fst[:, 2], fst[:, 1], fst[:, 0]
        lift = lambda a: _lift(a, fa.ndim)
        forcing = lift(self.Wa) @ fa + lift(self.Wm) @ fm + lift(self.Wb) @ fb
        shape = np.broadcast_shapes((self.Phi[0] @ y).shape, forcing.shape[1:])
        nodes = np.empty((N + 1,) + shape)
        y = np.broadcast_to(y, shape)
        Phi = self.Phi
        if self.direction == "forward":
            nodes[0] = y
            for k in range(N):
                y = Phi[k] @ y + forcing[k]
                nodes[k + 1] = y
        else:
            nodes[N] = y
            for k in range(N - 1, -1, -1):
                y = Phi[k] @ y + forcing[k]
                nodes[k] = y
        if not np.all(np.isfinite(nodes)):
            bad = int(np.argmax(~np.all(np.isfinite(nodes.reshape(N + 1, -1)), axis=1)))
            raise IntegrationError(f"{name}: non-finite value", bad)
        S = self.L.stages
        d_left = _lift(S[:, 0], nodes.ndim) @ nodes[:-1] + fst[:, 0]
        d_right = _lift(S[:, 2], nodes.ndim) @ nodes[1:] + fst[:, 2]
        return MatrixPath.from_solution(grid, nodes, d_left, d_right)


def solve_linear(L: MatrixPath, f: MatrixPath | None, y_start, direction: str) -> MatrixPath:
    return LinearPropagator(L, direction).solve(f, y_start)


def solve_linear_bvp(L: MatrixPath, f: MatrixPath, x0, terminal_map, terminal_offset):
    """Shooting solve of ``w' = L w + f`` with ``w = (u, v)``.

    ``u(0) = x0`` is prescribed and ``v(T) = terminal_map @ u(T) + terminal_offset``.
    The fundamental matrix is integrated once and the unknown ``v(0)`` comes
    from a dense linear solve.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1, 1)
    p = x0.shape[0]
    d = L.shape[-1]
    q = d - p
    prop = LinearPropagator(L, "forward")
    Phi = np.eye(d)
    for k in range(L.grid.N):
        Phi = prop.Phi[k] @ Phi
    part = prop.solve(f, np.zeros((d, 1))).terminal()
    Gm = np.asarray(terminal_map, dtype=float).reshape(q, p)
    go = np.asarray(terminal_offset, dtype=float).reshape(q, 1)
    Puu, Puv = Phi[:p, :p], Phi[:p, p:]
    Pvu, Pvv = Phi[p:, :p], Phi[p:, p:]
    lhs = Pvv - Gm @ Puv
    rhs = Gm @ (Puu @ x0 + part[:p]) + go - Pvu @ x0 - part[p:]
    v0 = np.linalg.solve(lhs, rhs)
    return prop.solve(f, np.vstack([x0, v0]))


# ---------------------------------------------------------------------------
# Riccati equations
# ---------------------------------------------------------------------------

@dataclass
class RiccatiSolution:
    """Riccati path plus a per-node regularity log.

    ``regularity`` holds the minimum eigenvalue (Woodbury form) or minimum
    singular value (other forms) of the matrix that must stay invertible.
    """

    P: MatrixPath
    regularity: np.ndarray
    kind: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def min_regularity(self) -> float:
        return float(np.min(self.regularity))


def _cell_of_node(k: int, N: int) -> int:
    return min(k, N - 1)


def _stage_getter(path: MatrixPath):
    st = path.stages
    return lambda k, j: st[k, j]


def _node_coeff(path: MatrixPath, k: int):
    return path.stages[_cell_of_node(k, path.grid.N), 0 if k < path.grid.N else 2]


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _tr(a):
    return np.swapaxes(a, -1, -2)


def riccati_woodbury(A, B, D, E, Q, R, G, eps: float = EPS_R,
                     symmetrize: bool = True, name: str = "follower Riccati") -> RiccatiSolution:
    """Standard stochastic LQ Riccati equation, backward from ``P_T = G``.

    ``P' + PA + A'P + D'PD + Q - (B'P + E'PD)'(R + E'PE)^{-1}(B'P + E'PD) = 0``.
    All arguments are paths (``G`` an array); leading batch axes are allowed.
    """
    grid = A.grid
    gA, gB, gD, gE, gQ, gR = map(_stage_getter, (A, B, D, E, Q, R))

    def rhs(k, j, P):
        a, b, d, e = gA(k, j), gB(k, j), gD(k, j), gE(k, j)
        S = _tr(b) @ P + _tr(e) @ P @ d
        K = gR(k, j) + _tr(e) @ P @ e
        return -(P @ a + _tr(a) @ P + _tr(d) @ P @ d + gQ(k, j) - _tr(S) @ np.linalg.solve(K, S))

    log = np.empty((grid.N + 1,) + np.shape(G)[:-2])

    def regularity(k, P):
        e = _node_coeff(E, k)
        K = _node_coeff(R, k) + _tr(e) @ P @ e
        val = np.linalg.eigvalsh(_sym(K)).min(axis=-1)
        log[k] = val
        if np.min(val) < eps:
            raise RegularityError(f"{name}: regularity lost, min eig of R + E'PE = {np.min(val):.3g}", k)

    def post(k, P):
        if symmetrize:
            P = _sym(P)
        regularity(k, P)
        return P

    G = np.asarray(G, dtype=float)
    regularity(grid.N, G)
    P = integrate(rhs, G, grid, "backward", post_step=post, name=name)
    return RiccatiSolution(P, log, "woodbury")


def riccati_original(A, B, D, E, Q, R, G, eps: float = EPS_R,
                     name: str = "follower Riccati (original form)") -> RiccatiSolution:
    """Original form with ``Rhat = I + P E R^{-1} E'`` (no symmetrization)."""
    grid = A.grid
    gA, gB, gD, gE, gQ, gR = map(_stage_getter, (A, B, D, E, Q, R))
    n = np.shape(G)[-1]
    eye = np.eye(n)

    def rhs(k, j, P):
        a, b, d, e = gA(k, j), gB(k, j), gD(k, j), gE(k, j)
        r = gR(k, j)
        RiB = np.linalg.solve(r, _tr(b))      # R^{-1} B'
        RiE = np.linalg.solve(r, _tr(e))      # R^{-1} E'
        Rhat = eye + P @ e @ RiE
        M1 = d - e @ RiB @ P
        left = _tr(d) - P @ b @ RiE
        return -(_tr(a) @ P + P @ a - P @ b @ RiB @ P
                 + left @ np.linalg.solve(Rhat, P @ M1) + gQ(k, j))

    log = np.empty((grid.N + 1,) + np.shape(G)[:-2])

    def post(k, P):
        e, r = _node_coeff(E, k), _node_coeff(R, k)
        Rhat = eye + P @ e @ np.linalg.solve(r, _tr(e))
        val = np.linalg.svd(Rhat, compute_uv=False).min(axis=-1)
        log[k] = val
        if np.min(val) < eps:
            raise RegularityError(
                f"{name}: Rhat = I + P E R^-1 E' singular (min sv {np.min(val):.3g}); "
                "the invertibility assumption of the follower equilibrium is violated", k)
        return P

    G = np.asarray(G, dtype=float)
    post(grid.N, G)
    P = integrate(rhs, G, grid, "backward", post_step=post, name=name)
    return RiccatiSolution(P, log, "original")


def riccati_asymmetric(Acc, Bh, Hh, Ih, c: float, terminal, cap: float = BLOWUP_CAP) -> MatrixPath:
    """``P' + P Acc - Hh P + P Bh P - c Ih = 0`` backward from ``terminal``.

    ``Acc`` is the aggregated drift ``Ahat + c Chat``.  No symmetry is imposed.
    """
    gA, gB, gH, gI = map(_stage_getter, (Acc, Bh, Hh, Ih))

    def rhs(k, j, P):
        return -(P @ gA(k, j) - gH(k, j) @ P + P @ gB(k, j) @ P - c * gI(k, j))

    try:
        return integrate(rhs, terminal, Acc.grid, "backward", cap=cap,
                         name="asymmetric aggregate Riccati")
    except IntegrationError as exc:
        raise IntegrationError(f"asymmetric Riccati escape: {exc}") from exc


def riccati_augmented(At, Bt, Ct, Dt, Et, Qt, Ft, eps: float = EPS_R,
                      sym_tol: float = 1e-9) -> RiccatiSolution:
    """Augmented Riccati backward from ``P_T = Ft``:

    ``P' + P At + At' P + P Bt P + (P Ct + Dt')(I - P Et)^{-1} P (Dt + Ct' P) - Qt = 0``.
    """
    grid = At.grid
    gA, gB, gC, gD, gE, gQ = map(_stage_getter, (At, Bt, Ct, Dt, Et, Qt))
    d = np.shape(Ft)[-1]
    eye = np.eye(d)

    def rhs(k, j, P):
        a, c, dd = gA(k, j), gC(k, j), gD(k, j)
        inner = np.linalg.solve(eye - P @ gE(k, j), P @ (dd + _tr(c) @ P))
        return -(P @ a + _tr(a) @ P + P @ gB(k, j) @ P + (P @ c + _tr(dd)) @ inner - gQ(k, j))

    log = np.empty(grid.N + 1)
    asym = np.zeros(grid.N + 1)

    def post(k, P):
        val = np.linalg.svd(eye - P @ _node_coeff(Et, k), compute_uv=False).min()
        log[k] = val
        if val < eps:
            raise RegularityError(
                f"augmented invertibility violated: I - P E singular (min sv {val:.3g})", k)
        asym[k] = np.max(np.abs(P - P.T)) / (1.0 + np.max(np.abs(P)))
        return P

    Ft = np.asarray(Ft, dtype=float)
    post(grid.N, Ft)
    P = integrate(rhs, Ft, grid, "backward", post_step=post, name="augmented Riccati")
    sol = RiccatiSolution(P, log, "augmented", {"max_relative_asymmetry": float(asym.max())})
    if asym.max() > sym_tol:
        sol.diagnostics["symmetry_warning"] = True
    return sol


def empirical_order(solve, grid: TimeGrid, levels: int = 3) -> float:
    """Observed convergence order from solves on N, 2N, 4N (compared at coarse nodes)."""
    sols = []
    for i in range(levels):
        g = TimeGrid(grid.T, grid.N * 2 ** i)
        sols.append(solve(g).nodes[:: 2 ** i])
    e1 = np.max(np.abs(sols[0] - sols[1]))
    e2 = np.max(np.abs(sols[1] - sols[2]))
    if e2 == 0.0:
        return float("inf")
    return float(np.log2(e1 / e2))


# ---------------------------------------------------------------------------
# follower Riccati on a spec
# ---------------------------------------------------------------------------

def _follower_args(f):
    return (f.A, f.B, f.D, f.E, f.Qb(1, 1), f.R, f.Gb(1, 1))


def solve_follower_riccati_woodbury(spec, eps: float | None = None) -> RiccatiSolution:
    """Woodbury-form follower Riccati for a :class:`GameSpec` (or ``FollowerSpec``)."""
    f = getattr(spec, "follower", spec)
    eps = getattr(spec, "eps_R", EPS_R) if eps is None else eps
    return riccati_woodbury(*_follower_args(f), eps=eps)


def solve_follower_riccati_original(spec, eps: float | None = None) -> RiccatiSolution:
    """Original-form follower Riccati (``Rhat = I + P E R^{-1} E'``)."""
    f = getattr(spec, "follower", spec)
    eps = getattr(spec, "eps_R", EPS_R) if eps is None else eps
    return riccati_original(*_follower_args(f), eps=eps)


def stack_followers(specs):
    """Stack follower coefficient sets sharing one grid and dimensions along a batch axis.

    Returns the argument tuple accepted by :func:`riccati_woodbury` and
    :func:`riccati_original`; used to solve many small problems in one sweep.
    """
    fs = [getattr(s, "follower", s) for s in specs]
    grid = fs[0].A.grid
    out = []
    for i in range(6):
        paths = [_follower_args(f)[i] for f in fs]
        out.append(MatrixPath(grid, np.stack([p.nodes for p in paths], axis=1),
                              np.stack([p.stages for p in paths], axis=2)))
    out.append(np.stack([_follower_args(f)[6] for f in fs]))
    return tuple(out)


def unstack(P: MatrixPath, i: int) -> MatrixPath:
    """Extract batch member ``i`` of a batched path."""
    return MatrixPath(P.grid, P.nodes[:, i], P.stages[:, :, i])
