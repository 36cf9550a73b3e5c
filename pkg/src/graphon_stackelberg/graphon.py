"""Graphons on a finite index grid and the aggregation operator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GraphonError(ValueError):
    """Invalid graphon data or mismatched grids."""


@dataclass(frozen=True)
class IndexGrid:
    """Quadrature grid on the unit interval: ``M`` cells with weights."""

    M: int
    weights: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise GraphonError(f"index count must be a positive integer, got {self.M}")
        w = self.weights
        if w is None:
            w = np.full(self.M, 1.0 / self.M)
        w = np.asarray(w, dtype=float)
        if w.shape != (self.M,):
            raise GraphonError(f"expected {self.M} weights, got shape {w.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise GraphonError("weights must be nonnegative and sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) / self.M

    def __eq__(self, other):
        return (isinstance(other, IndexGrid) and self.M == other.M
                and np.array_equal(self.weights, other.weights))

    def __hash__(self):
        return hash((self.M, self.weights.tobytes()))


class GraphonGrid:
    """Symmetric kernel with values in [0, 1] sampled on an :class:`IndexGrid`.

    ``W`` is the weighted operator matrix ``values * weights[None, :]``, so
    aggregation is the matrix product ``W @ X``.
    """

    __slots__ = ("grid", "values", "W", "kind", "params")

    def __init__(self, grid: IndexGrid, values, kind: str = "sampled", params=None):
        values = np.array(values, dtype=float)
        if values.shape != (grid.M, grid.M):
            raise GraphonError(f"graphon must be {grid.M}x{grid.M}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise GraphonError("graphon has non-finite entries")
        if not np.array_equal(values, values.T):
            raise GraphonError("graphon values must be exactly symmetric")
        if values.min() < 0.0 or values.max() > 1.0:
            raise GraphonError("graphon values must lie in [0, 1]")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        W = values * grid.weights[None, :]
        W.setflags(write=False)
        self.W = W
        self.kind = kind
        self.params = params or {}

    @property
    def M(self) -> int:
        return self.grid.M

    def with_grid_size(self, M: int) -> "GraphonGrid":
        """Re-discretize at ``M`` cells; only possible for analytic kinds."""
        if self.kind == "constant":
            return constant_graphon(M, self.params["value"])
        if self.kind == "step":
            return step_graphon(M, self.params["boundaries"], self.params["blocks"])
        raise GraphonError(f"a '{self.kind}' graphon cannot be re-discretized")

    def __repr__(self) -> str:
        return f"GraphonGrid(kind={self.kind!r}, M={self.M})"


# -- constructors -----------------------------------------------------------

def constant_graphon(M: int, value: float) -> GraphonGrid:
    grid = IndexGrid(M)
    return GraphonGrid(grid, np.full((M, M), float(value)), "constant",
                       {"value": float(value)})


def step_graphon(M: int, boundaries, blocks) -> GraphonGrid:
    """Block-constant graphon; cell ``u`` belongs to the block containing its midpoint."""
    b = np.asarray(boundaries, dtype=float)
    B = np.asarray(blocks, dtype=float)
    k = len(b) - 1
    if k < 1 or b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
        raise GraphonError("step boundaries must increase strictly from 0 to 1")
    if B.shape != (k, k):
        raise GraphonError(f"block matrix must be {k}x{k}")
    if not np.array_equal(B, B.T):
        raise GraphonError("block matrix must be symmetric")
    grid = IndexGrid(M)
    labels = block_labels(grid, b)
    values = B[labels[:, None], labels[None, :]]
    return GraphonGrid(grid, values, "step",
                       {"boundaries": b.tolist(), "blocks": B.tolist()})


def block_labels(grid: IndexGrid, boundaries) -> np.ndarray:
    b = np.asarray(boundaries, dtype=float)
    return np.clip(np.searchsorted(b, grid.midpoints, side="right") - 1, 0, len(b) - 2)


def sampled_graphon(values, tol: float = 1e-12) -> GraphonGrid:
    """Graphon from an explicit matrix, symmetric within ``tol`` then averaged."""
    V = np.asarray(values, dtype=float)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise GraphonError("sampled graphon must be a square matrix")
    asym = float(np.max(np.abs(V - V.T))) if V.size else 0.0
    if asym > tol:
        i, j = np.unravel_index(np.argmax(np.abs(V - V.T)), V.shape)
        raise GraphonError(f"sampled graphon not symmetric at ({i}, {j}): |diff|={asym:.3g}")
    return GraphonGrid(IndexGrid(V.shape[0]), 0.5 * (V + V.T), "sampled")


def interpolate(G1: GraphonGrid, G2: GraphonGrid, s: float) -> GraphonGrid:
    """Convex combination ``(1 - s) G1 + s G2``."""
    _same_grid(G1, G2)
    return GraphonGrid(G1.grid, (1.0 - s) * G1.values + s * G2.values, "sampled")


# -- operations --------------------------------------------------------------

def aggregate(G: GraphonGrid, X) -> np.ndarray:
    """``(GX)^u = sum_v w_v G[u, v] X^v`` along the leading index axis.

    ``X`` has the index on axis 0 and arbitrary trailing shape.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 0 or X.shape[0] != G.M:
        got = X.shape[0] if X.ndim else 0
        bad = min(got, G.M)
        raise GraphonError(
            f"state profile has {got} indices, graphon has {G.M}; "
            f"first unmatched index is {bad}")
    flat = X.reshape(G.M, -1)
    return (G.W @ flat).reshape(X.shape)


def aggregate_axis(G: GraphonGrid, X, axis: int) -> np.ndarray:
    """Aggregate along an arbitrary index axis (e.g. time-major arrays)."""
    X = np.moveaxis(np.asarray(X, dtype=float), axis, 0)
    return np.moveaxis(aggregate(G, X), 0, axis)


def sup_norm(G: GraphonGrid) -> float:
    return float(G.values.max())


def distance(G1: GraphonGrid, G2: GraphonGrid) -> float:
    _same_grid(G1, G2)
    return float(np.max(np.abs(G1.values - G2.values)))


def row_sum_profile(G: GraphonGrid) -> np.ndarray:
    return G.W.sum(axis=1)


def constant_row_sum(G: GraphonGrid, tol: float = 1e-10):
    """Return ``(holds, c, max_deviation)`` for the constant row-sum condition."""
    r = row_sum_profile(G)
    c = float(r.mean())
    dev = float(np.max(np.abs(r - c)))
    return dev <= tol, c, dev


def l2_norm(grid: IndexGrid, X) -> float:
    """Weighted L2 norm over the index grid of a per-index vector profile."""
    X = np.asarray(X, dtype=float).reshape(grid.M, -1)
    return float(np.sqrt(np.sum(grid.weights * np.sum(X * X, axis=1))))


def operator_eigenvalues(G: GraphonGrid) -> np.ndarray:
    """Eigenvalues of the aggregation operator via the symmetric conjugate."""
    s = np.sqrt(G.grid.weights)
    S = s[:, None] * G.values * s[None, :]
    return np.linalg.eigvalsh(S)


def operator_norm_bound_check(G: GraphonGrid, samples: int, rng_seed=0, dim: int = 1):
    """Sample random profiles and test ``|GX|_2 <= |G|_inf |X|_2``."""
    if samples < 1:
        raise GraphonError("samples must be at least 1")
    rng = np.random.default_rng(rng_seed)
    bound = sup_norm(G)
    worst, witness, ok = 0.0, None, True
    for _ in range(samples):
        X = rng.standard_normal((G.M, dim))
        nx = l2_norm(G.grid, X)
        if nx == 0.0:
            continue
        ngx = l2_norm(G.grid, aggregate(G, X))
        worst = max(worst, ngx / nx)
        if ngx > bound * nx + 1e-12:
            ok, witness = False, X
    return {"check": "operator_norm_bound", "pass": ok, "max_ratio": worst,
            "bound": bound, "witness": None if witness is None else witness.tolist()}


def _same_grid(G1: GraphonGrid, G2: GraphonGrid):
    if G1.grid != G2.grid:
        raise GraphonError(f"graphons live on different grids (M={G1.M} vs M={G2.M})")
