"""Monte Carlo simulation of the equilibrium and Monte Carlo verification tests.

Every random draw comes from a counter-based Philox stream keyed by
``(seed, kind, index, path)``.  A path therefore sees the same noise no matter
how many indices or paths are simulated alongside it, or how many threads
generate the noise.  All reductions run over fixed axes in a fixed order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .follower import follower_response, stationarity_residual
from .leader import (StackelbergEquilibrium, assemble_stackelberg_equilibrium, fluctuation_stationarity,
                     leader_mean_cost, mean_response, mean_stationarity)
from .paths import MatrixPath

_T = lambda a: np.swapaxes(a, -1, -2)

# stream kinds
FOLLOWER_NOISE, FOLLOWER_INIT, LEADER_NOISE, LEADER_INIT, GFBSDE_NOISE, GFBSDE_INIT = range(6)
_MAX_ID = 1 << 28


class SimulationError(RuntimeError):
    """A simulated state became non-finite."""

    def __init__(self, message, index=None, path=None, step=None):
        super().__init__(message)
        self.index, self.path, self.step = index, path, step


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``GS_THREADS``, else the machine's CPU count."""
    if threads is None:
        env = os.environ.get("GS_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def stream(seed: int, kind: int, index: int, path: int) -> np.random.Generator:
    if not (0 <= index < _MAX_ID and 0 <= path < _MAX_ID):
        raise ValueError(f"stream id out of range: index={index}, path={path}")
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, (kind << 56) | (index << 28) | path]
    return np.random.Generator(np.random.Philox(key=key))


def _normals(seed, kind, indices, paths, size, threads=None) -> np.ndarray:
    """Standard normals of shape ``(len(indices), paths, size)``, one stream per (index, path)."""
    indices = list(indices)
    out = np.empty((len(indices), paths, size))

    def fill(i):
        u = indices[i]
        for p in range(paths):
            out[i, p] = stream(seed, kind, u, p).standard_normal(size)

    n = resolve_threads(threads)
    if n == 1 or len(indices) == 1:
        for i in range(len(indices)):
            fill(i)
    else:
        with ThreadPoolExecutor(max_workers=n) as ex:
            list(ex.map(fill, range(len(indices))))
    return out


def brownian_increments(seed, kind, count=None, paths=1, N=1, h=1.0, indices=None, threads=None):
    """Scalar Brownian increments of shape ``(N, len(indices), paths)``."""
    idx = range(count) if indices is None else indices
    z = _normals(seed, kind, idx, paths, N, threads)
    return np.sqrt(h) * np.moveaxis(z, -1, 0)


def _sqrt_psd(cov):
    w, V = np.linalg.eigh(cov)
    return V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


def initial_draws(seed, kind, mean, cov, paths, indices=None, threads=None):
    """Gaussian draws of shape ``(M, paths, n, 1)`` from per-index ``mean`` and ``cov``."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    idx = range(mean.shape[0]) if indices is None else indices
    n = mean.shape[-2]
    z = _normals(seed, kind, idx, paths, n, threads)[..., None]
    return mean[:, None] + _sqrt_psd(cov)[:, None] @ z


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass
class SimConfig:
    """``empirical_aggregate`` replaces ``G m`` by the simulated ``G X`` path by path."""

    paths: int = 1000
    seed: int = 0
    empirical_aggregate: bool = False
    threads: int | None = None
    indices: tuple | None = None
    leader: bool = True


@dataclass
class Noise:
    indices: tuple
    x0: np.ndarray   # (U, P, n1, 1)
    dW: np.ndarray   # (N, U, P)
    xl0: np.ndarray | None = None  # (P, n2, 1)
    dWl: np.ndarray | None = None  # (N, P)


def draw_noise(spec, cfg: SimConfig) -> Noise:
    idx = tuple(range(spec.M)) if cfg.indices is None else tuple(int(u) for u in cfg.indices)
    g, P = spec.grid, cfg.paths
    x0 = initial_draws(cfg.seed, FOLLOWER_INIT, spec.x0f_mean[list(idx)], spec.x0f_cov[list(idx)], P,
                       indices=idx, threads=cfg.threads)
    dW = brownian_increments(cfg.seed, FOLLOWER_NOISE, paths=P, N=g.N, h=g.h, indices=idx, threads=cfg.threads)
    xl0 = dWl = None
    if cfg.leader:
        xl0 = initial_draws(cfg.seed, LEADER_INIT, spec.x0l_mean[None], spec.x0l_cov[None], P,
                            indices=(0,), threads=cfg.threads)[0]
        dWl = brownian_increments(cfg.seed, LEADER_NOISE, paths=P, N=g.N, h=g.h, indices=(0,),
                                  threads=cfg.threads)[:, 0]
    return Noise(idx, x0, dW, xl0, dWl)


@dataclass
class Ensemble:
    """Simulated paths.  Follower arrays are ``(N + 1, U, P, ., 1)``; leader ``(N + 1, P, ., 1)``.

    ``agg`` and ``pop_mean`` carry a path axis of length ``P`` when the
    aggregate is empirical and length 1 otherwise.
    """

    t: np.ndarray
    indices: tuple
    X: np.ndarray
    alpha: np.ndarray
    phi: np.ndarray
    agg: np.ndarray
    Xl: np.ndarray | None
    alpha_l: np.ndarray | None
    Xl_mean: np.ndarray | None
    pop_mean: np.ndarray | None
    empirical: bool = False
    info: dict = field(default_factory=dict)

    @property
    def paths(self) -> int:
        return self.X.shape[2]


def _first_bad(a, k):
    bad = np.argwhere(~np.isfinite(a))[0]
    return tuple(int(v) for v in bad[:2]) + (k,)


def _follower_step(f, k, h, X, alpha, agg, dW):
    drift = f.A.nodes[k] @ X + f.B.nodes[k] @ alpha + f.C.nodes[k] @ agg + f.b.nodes[k]
    diff = f.D.nodes[k] @ X + f.E.nodes[k] @ alpha + f.F.nodes[k] @ agg + f.sigma.nodes[k]
    return X + drift * h + diff * dW[..., None, None]


def simulate_follower(eq: StackelbergEquilibrium, u: int, x0, dW, dK=None, delta=None):
    """Paths of follower ``u`` with the others and the aggregate frozen at equilibrium.

    The control is ``alpha* + dK X + delta(t)``; ``x0`` is ``(P, n1, 1)`` and
    ``dW`` is ``(N, P)``.  Returns ``(X, alpha)`` on all nodes.
    """
    spec, f, pol = eq.spec, eq.spec.follower, eq.follower_policy
    g = spec.grid
    phi = eq.followers.solution.phi.nodes[:, u]
    agg = eq.followers.solution.agg.nodes[:, u]
    X = np.empty((g.N + 1,) + x0.shape)
    al = np.empty((g.N + 1,) + x0.shape[:-2] + (f.m1, 1))
    X[0] = x0
    for k in range(g.N + 1):
        a = pol.control(k, X[k], phi[k], agg[k])
        if dK is not None:
            a = a + dK @ X[k]
        if delta is not None:
            a = a + delta[k]
        al[k] = a
        if k < g.N:
            X[k + 1] = _follower_step(f, k, g.h, X[k], a, agg[k], dW[k])
    return X, al


def simulate_leader(eq: StackelbergEquilibrium, xl0, dWl, abar=None, Xl_mean=None, pop_mean=None, dK=None):
    """Leader paths under ``abar + (Kfl + dK) (X^l - Xl_mean)`` against population mean ``pop_mean``.

    Defaults are the equilibrium quantities.  ``pop_mean`` may carry a path
    axis (``(N + 1, P, n1, 1)``) or not (``(N + 1, n1, 1)``).
    """
    spec, l = eq.spec, eq.spec.leader
    g = spec.grid
    pol = eq.leader_policy
    abar = pol.abar.nodes if abar is None else abar
    Xm = eq.leader_mean.nodes if Xl_mean is None else Xl_mean
    Mp = eq.population_mean.nodes if pop_mean is None else pop_mean
    X = np.empty((g.N + 1,) + xl0.shape)
    al = np.empty((g.N + 1,) + xl0.shape[:-2] + (l.m2, 1))
    X[0] = xl0
    for k in range(g.N + 1):
        K = pol.Kfl.nodes[k] if dK is None else pol.Kfl.nodes[k] + dK
        a = abar[k] + K @ (X[k] - Xm[k])
        al[k] = a
        if k < g.N:
            drift = l.A.nodes[k] @ X[k] + l.B.nodes[k] @ a + l.C.nodes[k] @ Mp[k] + l.b.nodes[k]
            diff = l.D.nodes[k] @ X[k] + l.E.nodes[k] @ a + l.F.nodes[k] @ Mp[k] + l.sigma.nodes[k]
            X[k + 1] = X[k] + drift * g.h + diff * dWl[k][..., None, None]
    return X, al


def simulate(eq: StackelbergEquilibrium, cfg: SimConfig | None = None, noise: Noise | None = None) -> Ensemble:
    """Euler-Maruyama simulation of followers (and the leader) under the equilibrium policies."""
    cfg = cfg or SimConfig()
    spec, f = eq.spec, eq.spec.follower
    g = spec.grid
    if cfg.empirical_aggregate and cfg.indices is not None and len(cfg.indices) != spec.M:
        raise ValueError("the empirical aggregate needs every index simulated")
    noise = noise or draw_noise(spec, cfg)
    idx = list(noise.indices)
    U, P = len(idx), noise.x0.shape[1]
    sol, pol = eq.followers.solution, eq.follower_policy
    phi = sol.phi.nodes[:, idx][:, :, None]
    w = spec.graphon.grid.weights
    X = np.empty((g.N + 1, U, P, f.n1, 1))
    al = np.empty((g.N + 1, U, P, f.m1, 1))
    if cfg.empirical_aggregate:
        agg = np.empty((g.N + 1, U, P, f.n1, 1))
        pop = np.empty((g.N + 1, P, f.n1, 1))
    else:
        agg = sol.agg.nodes[:, idx][:, :, None]
        pop = eq.population_mean.nodes
    X[0] = noise.x0
    if not np.all(np.isfinite(X[0])):
        i, p, _ = _first_bad(X[0], 0)
        raise SimulationError(f"non-finite follower state at index {idx[i]}, path {p}, step 0", idx[i], p, 0)
    for k in range(g.N + 1):
        if cfg.empirical_aggregate:
            flat = X[k].reshape(U, -1)
            agg[k] = (spec.graphon.W @ flat).reshape(X[k].shape)
            pop[k] = np.tensordot(w, X[k], axes=(0, 0))
        a = pol.control(k, X[k], phi[k], agg[k])
        al[k] = a
        if k < g.N:
            X[k + 1] = _follower_step(f, k, g.h, X[k], a, agg[k], noise.dW[k])
            if not np.all(np.isfinite(X[k + 1])):
                i, p, _ = _first_bad(X[k + 1], k + 1)
                raise SimulationError(f"non-finite follower state at index {idx[i]}, path {p}, step {k + 1}",
                                      idx[i], p, k + 1)
    Xl = all_ = None
    if cfg.leader and noise.xl0 is not None:
        Xl, all_ = simulate_leader(eq, noise.xl0, noise.dWl, pop_mean=pop if cfg.empirical_aggregate else None)
        if not np.all(np.isfinite(Xl)):
            k, p = (int(v) for v in np.argwhere(~np.isfinite(Xl))[0][:2])
            raise SimulationError(f"non-finite leader state at path {p}, step {k}", None, p, k)
    pop_out = pop if cfg.empirical_aggregate else pop[:, None]
    return Ensemble(g.times, tuple(idx), X, al, phi, agg, Xl, all_, eq.leader_mean.nodes, pop_out,
                    cfg.empirical_aggregate, {"seed": cfg.seed, "paths": P})


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def mean_se(a, axis):
    """Sample mean and standard error along ``axis``."""
    n = a.shape[axis]
    m = np.mean(a, axis=axis)
    se = np.std(a, axis=axis, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(m)
    return m, se


def ensemble_summary(ens: Ensemble):
    """``(mean, se)`` of follower states, shape ``(N + 1, U, n1)`` each."""
    m, se = mean_se(ens.X[..., 0], axis=2)
    return m, se


def binary_dump(ens: Ensemble, path):
    """Write follower states as little-endian float64 in ``[u][p][k][component]`` order."""
    arr = np.transpose(ens.X[..., 0], (1, 2, 0, 3))
    np.ascontiguousarray(arr, dtype="<f8").tofile(path)
    return arr.shape


# ---------------------------------------------------------------------------
# costs
# ---------------------------------------------------------------------------

def _qform(Q, v):
    return (_T(v) @ Q @ v)[..., 0, 0]


def _trapz(vals, h):
    return h * (0.5 * vals[0] + np.sum(vals[1:-1], axis=0) + 0.5 * vals[-1])


def follower_path_costs(eq, X, alpha, agg, lead, lead_cov=None):
    """Per-path follower cost.

    ``lead`` is the third block of the weighted vector: the simulated leader
    state (original form) or its mean (rewritten form, in which case the
    covariance ``lead_cov`` adds ``tr(Q33 cov)`` and ``tr(G33 cov_T)``).
    Arrays are node-major and broadcast against each other.
    """
    f, g = eq.spec.follower, eq.spec.grid
    N = g.N
    run = np.empty((N + 1,) + np.broadcast_shapes(X.shape[1:-2], agg.shape[1:-2], lead.shape[1:-2]))
    for k in range(N + 1):
        V = np.concatenate(np.broadcast_arrays(X[k], agg[k], lead[k]), axis=-2)
        val = _qform(f.Q.nodes[k], V) + _qform(f.R.nodes[k], alpha[k])
        if lead_cov is not None:
            val = val + np.trace(f.Qb(3, 3).nodes[k] @ lead_cov[k])
        run[k] = val
    VT = np.concatenate(np.broadcast_arrays(X[N], agg[N], lead[N]), axis=-2)
    term = _qform(f.G, VT)
    if lead_cov is not None:
        term = term + np.trace(f.Gb(3, 3) @ lead_cov[N])
    return 0.5 * (_trapz(run, g.h) + term)


def leader_path_costs(eq, Xl, alpha_l, pop_mean):
    l, g = eq.spec.leader, eq.spec.grid
    N = g.N
    run = np.empty((N + 1,) + Xl.shape[1:-2])
    for k in range(N + 1):
        U = np.concatenate(np.broadcast_arrays(Xl[k], pop_mean[k]), axis=-2)
        run[k] = _qform(l.Q.nodes[k], U) + _qform(l.R.nodes[k], alpha_l[k])
    UT = np.concatenate(np.broadcast_arrays(Xl[N], pop_mean[N]), axis=-2)
    return 0.5 * (_trapz(run, g.h) + _qform(l.G, UT))


def evaluate_costs(eq: StackelbergEquilibrium, ens: Ensemble) -> dict:
    """Follower costs per simulated index in both forms, and the leader cost, as mean and SE.

    The original form pairs follower path ``p`` with leader path ``p``; the
    rewritten form uses ``E[X^l]`` and the exact leader covariance.
    """
    out = {"indices": list(ens.indices)}
    mean_l = ens.Xl_mean[:, None, None]
    cov = eq.leader_covariance().nodes
    J_rew = follower_path_costs(eq, ens.X, ens.alpha, ens.agg, mean_l, cov)
    out["follower_rewritten"] = mean_se(J_rew, axis=1)
    if ens.Xl is not None:
        J_org = follower_path_costs(eq, ens.X, ens.alpha, ens.agg, ens.Xl[:, None])
        out["follower_original"] = mean_se(J_org, axis=1)
        pop = ens.pop_mean if ens.empirical else ens.pop_mean[:, 0]
        out["leader"] = mean_se(leader_path_costs(eq, ens.Xl, ens.alpha_l, pop), axis=0)
    return out


def cost_form_check(eq: StackelbergEquilibrium, ens: Ensemble, n_se: float = 3.0) -> dict:
    """Original versus rewritten follower cost: agreement within ``n_se`` combined SE per index."""
    c = evaluate_costs(eq, ens)
    (mo, so), (mr, sr) = c["follower_original"], c["follower_rewritten"]
    comb = np.sqrt(so ** 2 + sr ** 2)
    gap = np.abs(mo - mr)
    ok = gap <= n_se * comb
    return {"check": "cost_forms", "pass": bool(np.all(ok)), "original": mo.tolist(), "rewritten": mr.tolist(),
            "combined_se": comb.tolist(), "gap": gap.tolist(),
            "worst_ratio": float(np.max(gap / np.where(comb > 0, comb, np.inf)))}


# ---------------------------------------------------------------------------
# stationarity along paths
# ---------------------------------------------------------------------------

def stationarity_along_paths(eq: StackelbergEquilibrium, ens: Ensemble) -> dict:
    """Follower and leader first-order residuals evaluated at every simulated state."""
    spec = eq.spec
    worst_f = scale_f = worst_l = scale_l = 0.0
    for k in range(spec.grid.N + 1):
        res, sc = stationarity_residual(spec, eq.follower_riccati, eq.follower_policy,
                                        ens.X[k], ens.phi[k], ens.agg[k], k)
        worst_f = max(worst_f, float(np.max(np.abs(res))))
        scale_f = max(scale_f, float(np.max(sc)))
        if ens.Xl is not None:
            r, s = fluctuation_stationarity(spec, eq.Pi, eq.leader_policy.Kfl, k, ens.Xl[k] - ens.Xl_mean[k])
            worst_l = max(worst_l, float(np.max(np.abs(r))))
            scale_l = max(scale_l, s)
    ms = mean_stationarity(eq.tilde, eq.final, eq.leader_policy.abar)
    return {"follower": worst_f, "follower_scale": scale_f, "leader_fluctuation": worst_l,
            "leader_scale": scale_l, "leader_mean": ms, "max": max(worst_f, worst_l, ms),
            "scale": max(scale_f, scale_l, 1.0)}


def is_noisy(spec) -> bool:
    """True when any diffusion coefficient or initial covariance is nonzero."""
    f, l = spec.follower, spec.leader
    parts = [f.D, f.E, f.F, f.sigma, l.D, l.E, l.F, l.sigma]
    arrays = [p.nodes for p in parts] + [spec.x0f_cov, spec.x0l_cov]
    return any(np.any(a != 0) for a in arrays)


def stationarity_check(eq: StackelbergEquilibrium, ens: Ensemble) -> dict:
    """Residual bound ``1e-6`` without noise, ``5 sqrt(h) * scale`` with noise."""
    rep = stationarity_along_paths(eq, ens)
    noisy = is_noisy(eq.spec)
    bound = 5.0 * np.sqrt(eq.spec.grid.h) * rep["scale"] if noisy else 1e-6
    rep.update({"check": "stationarity", "noisy": noisy, "bound": float(bound), "pass": rep["max"] <= bound})
    return rep


# ---------------------------------------------------------------------------
# law of large numbers
# ---------------------------------------------------------------------------

def exact_lln_check(spec, Ms=(8, 32, 128, 512), paths: int = 200, seed: int = 0, threads=None) -> dict:
    """Dispersion of the empirical aggregate around ``G m`` as the index grid is refined.

    For each ``M`` the game is re-sampled on ``M`` indices, the deterministic
    equilibrium recomputed and the followers simulated with the empirical
    aggregate.  Passes when the log-log slope is at most -0.4.
    """
    disp = []
    for M in Ms:
        sM = spec.with_graphon(spec.graphon.with_grid_size(M))
        eq = assemble_stackelberg_equilibrium(sM)
        ens = simulate(eq, SimConfig(paths=paths, seed=seed, empirical_aggregate=True,
                                     threads=threads, leader=False))
        det = eq.followers.solution.agg.nodes[:, :, None]
        w = sM.graphon.grid.weights
        sq = np.sum((ens.agg - det) ** 2, axis=(-2, -1))          # (N + 1, M, P)
        disp.append(float(np.sqrt(np.mean(np.tensordot(sq, w, axes=(1, 0))))))
    slope = float(np.polyfit(np.log(Ms), np.log(disp), 1)[0])
    return {"check": "lln", "pass": slope <= -0.4, "slope": slope, "M": list(Ms), "dispersion": disp}


# ---------------------------------------------------------------------------
# deviation tests
# ---------------------------------------------------------------------------

def _quadratic_fit(lams, dJ):
    """Least squares ``dJ = b lam + a lam^2``; returns ``(a, b)``."""
    lams = np.asarray(lams, dtype=float)
    A = np.stack([lams, lams ** 2], axis=1)
    (b, a), *_ = np.linalg.lstsq(A, np.asarray(dJ, dtype=float), rcond=None)
    return float(a), float(b)


def nash_deviation_test(eq: StackelbergEquilibrium, paths: int = 10_000, seed: int = 0, draws: int = 50,
                        scales=(0.05, 0.1, 0.2), draw_seed: int = 1, n_se: float = 3.0, threads=None) -> dict:
    """Unilateral deviations of single followers with the aggregate frozen.

    Each draw picks an index ``u`` and a direction made of a feedback gain
    perturbation ``dK`` and an open-loop offset ``d0 + d1 cos(pi t / T)``.
    The cost change at each scale is estimated with common random numbers.
    A draw passes when no scale lowers the cost by more than ``n_se`` SE and
    the fitted coefficient of ``lam^2`` is positive.
    """
    spec = eq.spec
    f, g = spec.follower, spec.grid
    rng = np.random.default_rng(draw_seed)
    cov = eq.leader_covariance().nodes
    lead = eq.leader_mean.nodes[:, None]
    cache = {}
    records = []
    for d in range(draws):
        u = int(rng.integers(spec.M))
        dK = rng.standard_normal((f.m1, f.n1))
        d0, d1 = rng.standard_normal((2, f.m1, 1))
        delta = d0 + d1 * np.cos(np.pi * g.times / g.T)[:, None, None]
        if u not in cache:
            nz = draw_noise(spec, SimConfig(paths=paths, seed=seed, indices=(u,), threads=threads, leader=False))
            X0, al0 = simulate_follower(eq, u, nz.x0[0], nz.dW[:, 0])
            agg = eq.followers.solution.agg.nodes[:, u][:, None]
            cache[u] = (nz, follower_path_costs(eq, X0, al0, agg, lead, cov), agg)
        nz, J0, agg = cache[u]
        means, ses = [], []
        for lam in scales:
            X, al = simulate_follower(eq, u, nz.x0[0], nz.dW[:, 0], lam * dK, lam * delta)
            dJ = follower_path_costs(eq, X, al, agg, lead, cov) - J0
            m, s = mean_se(dJ, axis=0)
            means.append(float(m))
            ses.append(float(s))
        a, b = _quadratic_fit(scales, means)
        ok = all(m >= -n_se * s for m, s in zip(means, ses)) and a > 0
        records.append({"index": u, "delta_cost": means, "se": ses, "quad": a, "linear": b, "pass": bool(ok)})
    return {"check": "nash_deviation", "pass": all(r["pass"] for r in records), "scales": list(scales),
            "draws": records, "min_quad": min(r["quad"] for r in records)}


def _perturbed_mean_state(eq, abar_path):
    """Mean responses with the followers re-solved; returns ``(pop_mean, Xl_mean, gap)``."""
    Mh, Xb = mean_response(eq, abar_path)
    fol = follower_response(eq.spec, Xb, riccati=eq.follower_riccati)
    w = eq.spec.graphon.grid.weights
    pop = np.einsum("u,kuij->kij", w, fol.solution.m.nodes)
    return pop, Xb.nodes, float(np.max(np.abs(pop - Mh.nodes)))


def leader_deviation_test(eq: StackelbergEquilibrium, paths: int = 10_000, seed: int = 0, draws: int = 20,
                          scales=(0.05, 0.1, 0.2), draw_seed: int = 2, n_se: float = 3.0, threads=None,
                          vertex_scale: float = 0.1) -> dict:
    """Leader deviations ``beta = b0 + b1 sin(pi t / T) + kappa (X^l - E[X^l])``.

    For each scale the followers are re-solved against the perturbed leader
    mean, the leader is simulated with common random numbers and the cost
    change estimated.  The exact mean cost along ``abar + lam * beta_bar``
    gives a parabola whose vertex must sit at ``lam = 0``.
    """
    spec = eq.spec
    l, g = spec.leader, spec.grid
    rng = np.random.default_rng(draw_seed)
    nz = draw_noise(spec, SimConfig(paths=paths, seed=seed, indices=(0,), threads=threads))
    pop0 = eq.population_mean.nodes
    Xl0, al0 = simulate_leader(eq, nz.xl0, nz.dWl)
    J0 = leader_path_costs(eq, Xl0, al0, pop0)
    Jm0 = leader_mean_cost(eq, eq.leader_policy.abar)
    abar = eq.leader_policy.abar
    records = []
    for d in range(draws):
        kappa = rng.standard_normal((l.m2, l.n2))
        b0, b1 = rng.standard_normal((2, l.m2, 1))
        beta = MatrixPath(g, b0 + b1 * np.sin(np.pi * g.times / g.T)[:, None, None])
        means, ses, gaps = [], [], []
        for lam in scales:
            ab = abar + lam * beta
            pop, Xm, gap = _perturbed_mean_state(eq, ab)
            gaps.append(gap)
            X, al = simulate_leader(eq, nz.xl0, nz.dWl, abar=ab.nodes, Xl_mean=Xm, pop_mean=pop, dK=lam * kappa)
            m, s = mean_se(leader_path_costs(eq, X, al, pop) - J0, axis=0)
            means.append(float(m))
            ses.append(float(s))
        a, b = _quadratic_fit(scales, means)
        s = vertex_scale
        Jp = leader_mean_cost(eq, abar + s * beta)
        Jn = leader_mean_cost(eq, abar - s * beta)
        curv = (Jp + Jn - 2 * Jm0) / (2 * s * s)
        slope = (Jp - Jn) / (2 * s)
        vertex = -slope / (2 * curv) if curv > 0 else float("inf")
        ok = all(m >= -n_se * se for m, se in zip(means, ses)) and a > 0 and curv > 0 and abs(vertex) <= 1e-6
        records.append({"delta_cost": means, "se": ses, "quad": a, "linear": b, "mean_curvature": curv,
                        "vertex": vertex, "resolve_gap": max(gaps), "pass": bool(ok)})
    return {"check": "leader_deviation", "pass": all(r["pass"] for r in records), "scales": list(scales),
            "draws": records, "max_vertex": max(abs(r["vertex"]) for r in records)}
