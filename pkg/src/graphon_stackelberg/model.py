"""Game data containers and assumption validators."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import graphon as gr
from .ode import EPS_R
from .paths import MatrixPath, TimeGrid, resample

PSD_TOL = 1e-10


class SpecError(ValueError):
    """Inconsistent dimensions or malformed coefficient data."""


@dataclass
class FollowerSpec:
    """Coefficients of the representative follower.

    ``Q`` and ``G`` weigh the stacked vector ``(X, GX, X^l)`` and are stored
    as full ``(2 n1 + n2)`` square matrices.
    """

    A: MatrixPath
    B: MatrixPath
    C: MatrixPath
    D: MatrixPath
    E: MatrixPath
    F: MatrixPath
    b: MatrixPath
    sigma: MatrixPath
    Q: MatrixPath
    R: MatrixPath
    G: np.ndarray

    @property
    def n1(self) -> int:
        return self.A.shape[-1]

    @property
    def m1(self) -> int:
        return self.B.shape[-1]

    def _sl(self, i):
        n1 = self.n1
        return [slice(0, n1), slice(n1, 2 * n1), slice(2 * n1, None)][i]

    def Qb(self, i: int, j: int) -> MatrixPath:
        """Block ``Q^{ij}`` (1-based as in the block layout)."""
        si, sj = self._sl(i - 1), self._sl(j - 1)
        return self.Q.map(lambda a: a[..., si, sj])

    def Gb(self, i: int, j: int) -> np.ndarray:
        return self.G[self._sl(i - 1), self._sl(j - 1)]


@dataclass
class LeaderSpec:
    """Leader coefficients; ``Q``, ``G`` weigh ``(X^l, M^f)``."""

    A: MatrixPath
    B: MatrixPath
    C: MatrixPath
    D: MatrixPath
    E: MatrixPath
    F: MatrixPath
    b: MatrixPath
    sigma: MatrixPath
    Q: MatrixPath
    R: MatrixPath
    G: np.ndarray

    @property
    def n2(self) -> int:
        return self.A.shape[-1]

    @property
    def m2(self) -> int:
        return self.B.shape[-1]

    def _sl(self, i):
        return [slice(0, self.n2), slice(self.n2, None)][i]

    def Qb(self, i: int, j: int) -> MatrixPath:
        si, sj = self._sl(i - 1), self._sl(j - 1)
        return self.Q.map(lambda a: a[..., si, sj])

    def Gb(self, i: int, j: int) -> np.ndarray:
        return self.G[self._sl(i - 1), self._sl(j - 1)]


@dataclass
class GameSpec:
    """Full game: coefficients, graphon, time grid and initial laws.

    Follower initial data is Gaussian per index with ``x0f_mean`` of shape
    ``(M, n1, 1)`` and ``x0f_cov`` of shape ``(M, n1, n1)``.
    """

    follower: FollowerSpec
    leader: LeaderSpec
    graphon: gr.GraphonGrid
    grid: TimeGrid
    x0f_mean: np.ndarray
    x0f_cov: np.ndarray
    x0l_mean: np.ndarray
    x0l_cov: np.ndarray
    eps_R: float = EPS_R
    name: str = "game"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        check_dimensions(self)

    @property
    def M(self) -> int:
        return self.graphon.M

    @property
    def dims(self) -> dict:
        f, l = self.follower, self.leader
        return {"n1": f.n1, "n2": l.n2, "m1": f.m1, "m2": l.m2}

    def with_graphon(self, G: gr.GraphonGrid) -> "GameSpec":
        M = G.M
        mean = np.broadcast_to(self.x0f_mean.mean(axis=0), (M,) + self.x0f_mean.shape[1:])
        cov = np.broadcast_to(self.x0f_cov.mean(axis=0), (M,) + self.x0f_cov.shape[1:])
        if self.M == M:
            mean, cov = self.x0f_mean, self.x0f_cov
        return replace(self, graphon=G, x0f_mean=np.array(mean), x0f_cov=np.array(cov))

    def with_grid(self, grid: TimeGrid) -> "GameSpec":
        """Re-sample all coefficient paths on a new grid (piecewise-constant ones only)."""
        def re(p: MatrixPath) -> MatrixPath:
            return resample(p, grid)

        def respec(s):
            kw = {k: (re(v) if isinstance(v, MatrixPath) else v) for k, v in vars(s).items()}
            return type(s)(**kw)

        return replace(self, follower=respec(self.follower), leader=respec(self.leader), grid=grid)


def _expect(path, shape, name, grid):
    if isinstance(path, MatrixPath):
        if path.grid != grid:
            raise SpecError(f"{name}: path lives on a different time grid")
        got = path.shape
    else:
        got = np.shape(path)
    if tuple(got) != tuple(shape):
        raise SpecError(f"{name}: expected shape {tuple(shape)}, got {tuple(got)}")


def check_dimensions(spec: GameSpec):
    f, l, grid = spec.follower, spec.leader, spec.grid
    n1, m1, n2, m2 = f.n1, f.m1, l.n2, l.m2
    shapes = {
        "Af": (f.A, (n1, n1)), "Bf": (f.B, (n1, m1)), "Cf": (f.C, (n1, n1)),
        "Df": (f.D, (n1, n1)), "Ef": (f.E, (n1, m1)), "Ff": (f.F, (n1, n1)),
        "bf": (f.b, (n1, 1)), "sigf": (f.sigma, (n1, 1)),
        "Qf": (f.Q, (2 * n1 + n2,) * 2), "Rf": (f.R, (m1, m1)), "Gf": (f.G, (2 * n1 + n2,) * 2),
        "Al": (l.A, (n2, n2)), "Bl": (l.B, (n2, m2)), "Cl": (l.C, (n2, n1)),
        "Dl": (l.D, (n2, n2)), "El": (l.E, (n2, m2)), "Fl": (l.F, (n2, n1)),
        "bl": (l.b, (n2, 1)), "sigl": (l.sigma, (n2, 1)),
        "Ql": (l.Q, (n1 + n2,) * 2), "Rl": (l.R, (m2, m2)), "Gl": (l.G, (n1 + n2,) * 2),
    }
    for name, (p, shp) in shapes.items():
        _expect(p, shp, name, grid)
    M = spec.graphon.M
    if spec.x0f_mean.shape != (M, n1, 1):
        raise SpecError(f"follower initial mean must have shape {(M, n1, 1)}, "
                        f"got {spec.x0f_mean.shape}")
    if spec.x0f_cov.shape != (M, n1, n1):
        raise SpecError(f"follower initial covariance must have shape {(M, n1, n1)}")
    if spec.x0l_mean.shape != (n2, 1) or spec.x0l_cov.shape != (n2, n2):
        raise SpecError("leader initial mean/covariance have wrong shape")


# -- reports ------------------------------------------------------------------

def _report(check, ok, margin=None, witnesses=None, **extra):
    rep = {"check": check, "pass": bool(ok), "margin": margin,
           "witnesses": witnesses or []}
    rep.update(extra)
    return rep


def _min_eig(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, -1, -2))).min(axis=-1)


def _weights(path_or_array):
    if isinstance(path_or_array, MatrixPath):
        return path_or_array.nodes
    return np.asarray(path_or_array, dtype=float)


def validate_A1(spec: GameSpec) -> dict:
    """Finiteness, PSD cost weights and a uniformly positive definite ``Rf``."""
    f, l = spec.follower, spec.leader
    viol = []
    for name, s in (("follower", f), ("leader", l)):
        for key, val in vars(s).items():
            arr = _weights(val)
            if not np.all(np.isfinite(arr)):
                viol.append({"name": f"{name}.{key}", "reason": "non-finite entries"})
    margins = {}
    for name, w, floor in (("Qf", f.Q, -PSD_TOL), ("Gf", f.G, -PSD_TOL),
                           ("Ql", l.Q, -PSD_TOL), ("Gl", l.G, -PSD_TOL),
                           ("Rl", l.R, -PSD_TOL), ("Rf", f.R, spec.eps_R)):
        arr = _weights(w)
        if not np.all(np.isfinite(arr)):
            continue
        asym = float(np.max(np.abs(arr - np.swapaxes(arr, -1, -2))))
        ev = np.atleast_1d(_min_eig(arr))
        margins[name] = float(ev.min())
        if asym > 1e-12 * (1.0 + np.max(np.abs(arr))):
            viol.append({"name": name, "reason": f"not symmetric (|W - W'| = {asym:.3g})"})
        if ev.min() < floor:
            k = int(np.argmin(ev))
            kind = "positive definite" if name == "Rf" else "positive semidefinite"
            viol.append({"name": name, "reason": f"not {kind}", "min_eig": float(ev.min()),
                         "node": k if arr.ndim == 3 else None})
    eig_margin = min(margins.values()) if margins else None
    return _report("A1", not viol, eig_margin, viol, min_eigenvalues=margins)


def spectral_norm(a) -> np.ndarray:
    return np.linalg.norm(np.asarray(a, dtype=float), ord=2, axis=(-2, -1))


def graphon_form_min_eig(block, G: gr.GraphonGrid) -> float:
    """Minimum over unit ``x`` of ``int x_u' block (G x)_u du`` (weighted norm)."""
    block = np.asarray(block, dtype=float)
    s = np.sqrt(G.grid.weights)
    # with y = sqrt(w) x the form has the symmetric kernel sqrt(w_u) G(u, v) sqrt(w_v)
    K = s[:, None] * G.values * s[None, :]
    op = np.kron(K, block)
    return float(np.linalg.eigvalsh(0.5 * (op + op.T)).min())


def validate_A3(spec: GameSpec) -> dict:
    """Coercivity constant, coupling bound and graphon quadratic-form condition.

    ``K`` is the largest constant with ``Qf11 >= K`` and
    ``[Bf; Ef] Rf^{-1} [Bf; Ef]' >= K`` at every node.  The coupling value is
    ``(1 + 3 |G|_inf) sup_t (|Qf12| + |Cf| + |Ff|)`` in the spectral norm and
    must be below ``2 K``.  ``margin = K - value / 2`` is the resulting lower
    bound on the monotonicity constant of the follower FBSDE.
    """
    f = spec.follower
    Q11 = f.Qb(1, 1).nodes
    BE = np.concatenate([f.B.nodes, f.E.nodes], axis=-2)
    RiBEt = np.linalg.solve(f.R.nodes, np.swapaxes(BE, -1, -2))
    ctrl = BE @ RiBEt
    kq = float(_min_eig(Q11).min())
    kc = float(_min_eig(ctrl).min())
    K = min(kq, kc)
    coup = spectral_norm(f.Qb(1, 2).nodes) + spectral_norm(f.C.nodes) + spectral_norm(f.F.nodes)
    value = (1.0 + 3.0 * gr.sup_norm(spec.graphon)) * float(coup.max())
    form = graphon_form_min_eig(f.Gb(1, 2), spec.graphon)
    wit = []
    if K <= 0:
        which = "Qf11" if kq <= kc else "[Bf;Ef] Rf^-1 [Bf;Ef]'"
        wit.append({"name": which, "reason": "not uniformly positive definite", "min_eig": min(kq, kc)})
    if not value < 2 * K:
        wit.append({"name": "coupling", "reason": "coupling bound not below 2K",
                    "value": value, "two_K": 2 * K})
    if form < -PSD_TOL:
        wit.append({"name": "Gf12", "reason": "graphon quadratic form not PSD", "min_eig": form})
    ok = not wit
    return _report("A3", ok, K - value / 2.0, wit, K=K, K2=value / 2.0,
                   coupling_value=value, K_state=kq, K_control=kc, terminal_form_min_eig=form)


def validate_A4(spec: GameSpec, tol: float = 1e-10) -> dict:
    holds, c, dev = gr.constant_row_sum(spec.graphon, tol)
    wit = [] if holds else [{"name": "row_sum", "reason": "row sums not constant",
                             "max_deviation": dev,
                             "index": int(np.argmax(np.abs(gr.row_sum_profile(spec.graphon) - c)))}]
    return _report("A4", holds, tol - dev, wit, c=c if holds else None, max_deviation=dev,
                   mean_row_sum=c)


def validate_A2(spec: GameSpec) -> dict:
    """Continuity is vacuous on a grid; record total variation as a diagnostic."""
    f, l = spec.follower, spec.leader
    tv = {k: p.total_variation() for k, p in (("Ef", f.E), ("Rf", f.R), ("El", l.E), ("Rl", l.R))}
    return _report("A2", True, None, [], total_variation=tv)


def build_follower_gfbsde(spec: GameSpec, leader_mean: MatrixPath):
    """Map the follower Hamiltonian system to the generic aggregated FBSDE.

    Forward ``X``, backward ``Y = p`` and ``Z = q``.  Only the driver offset
    ``g = -Qf13 E[X^l]`` and terminal offset ``h = Gf13 E[X^l_T]`` depend on
    the leader mean path.
    """
    from .gfbsde import GfbsdeProblem

    f = spec.follower
    _check_invertible(f.R, "Rf", spec.eps_R)
    RiB = f.R.map(lambda r, b: np.linalg.solve(r, np.swapaxes(b, -1, -2)), f.B)
    RiE = f.R.map(lambda r, e: np.linalg.solve(r, np.swapaxes(e, -1, -2)), f.E)
    A = {
        (1, 1): -f.Qb(1, 1), (1, 2): -f.A.T(), (1, 3): -f.D.T(),
        (2, 1): f.A, (2, 2): -(f.B @ RiB), (2, 3): -(f.B @ RiE),
        (3, 1): f.D, (3, 2): -(f.E @ RiB), (3, 3): -(f.E @ RiE),
    }
    B = {1: -f.Qb(1, 2), 2: f.C, 3: f.F}
    g = -(f.Qb(1, 3) @ leader_mean)
    h = f.Gb(1, 3) @ leader_mean.terminal()
    return GfbsdeProblem(
        A=A, B=B, G1=f.Gb(1, 1), G2=f.Gb(1, 2), b=f.b, sigma=f.sigma, g=g, h=h,
        graphon=spec.graphon, x0_mean=spec.x0f_mean, x0_cov=spec.x0f_cov)


def _check_invertible(R: MatrixPath, name: str, eps: float):
    ev = _min_eig(R.nodes)
    if ev.min() < eps:
        raise SpecError(f"{name} is singular or indefinite at node {int(np.argmin(ev))} "
                        f"(min eigenvalue {ev.min():.3g})")
