"""Time grids and matrix-valued paths.

A :class:`MatrixPath` stores a matrix (or a stack of matrices) at every grid
node and, for each cell ``[t_k, t_{k+1}]``, the three values an RK4 step needs
(left end, midpoint, right end).  User supplied coefficients are constant on a
cell (left-constant interpolation); paths produced by an integrator carry
cubic Hermite midpoints so that downstream RK4 solves keep fourth order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k T / N`` on ``[0, T]``."""

    T: float
    N: int

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"step count N must be a positive integer, got {self.N}")

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.T, self.N * factor)


# stage fractions inside a cell used by the RK4 integrator
STAGE_FRACTIONS = (0.0, 0.5, 1.0)


class MatrixPath:
    """Matrix-valued function of time sampled on a :class:`TimeGrid`.

    ``nodes`` has shape ``(N + 1, *shape)`` and ``stages`` has shape
    ``(N, 3, *shape)``; ``stages[k, j]`` is the value used at fraction
    ``STAGE_FRACTIONS[j]`` of cell ``k``.
    """

    __slots__ = ("grid", "nodes", "stages")
    # let ndarray @ path dispatch to __rmatmul__
    __array_ufunc__ = None

    def __init__(self, grid: TimeGrid, nodes, stages=None):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.shape[0] != grid.N + 1:
            raise ValueError(
                f"path has {nodes.shape[0]} nodes, grid expects {grid.N + 1}")
        if stages is None:
            # left-constant: every stage of cell k sees the value at node k
            stages = np.repeat(nodes[:-1, None], 3, axis=1)
        else:
            stages = np.asarray(stages, dtype=float)
            if stages.shape != (grid.N, 3) + nodes.shape[1:]:
                raise ValueError("stage array does not match node array")
        self.grid = grid
        self.nodes = nodes
        self.stages = stages

    # -- constructors -------------------------------------------------
    @classmethod
    def constant(cls, grid: TimeGrid, value) -> "MatrixPath":
        value = np.asarray(value, dtype=float)
        nodes = np.broadcast_to(value, (grid.N + 1,) + value.shape).copy()
        return cls(grid, nodes)

    @classmethod
    def zeros(cls, grid: TimeGrid, shape) -> "MatrixPath":
        return cls.constant(grid, np.zeros(shape))

    @classmethod
    def from_solution(cls, grid: TimeGrid, nodes, d_left, d_right) -> "MatrixPath":
        """Path from integrator output with Hermite midpoints.

        ``d_left[k]`` and ``d_right[k]`` are the derivatives at the two ends of
        cell ``k`` evaluated with that cell's coefficients.
        """
        nodes = np.asarray(nodes, dtype=float)
        h = grid.h
        y0, y1 = nodes[:-1], nodes[1:]
        mid = 0.5 * (y0 + y1) + (h / 8.0) * (d_left - d_right)
        stages = np.stack([y0, mid, y1], axis=1)
        return cls(grid, nodes, stages)

    # -- basic properties ----------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.nodes.shape[1:]

    def __len__(self) -> int:
        return self.nodes.shape[0]

    def at(self, k: int) -> np.ndarray:
        return self.nodes[k]

    def terminal(self) -> np.ndarray:
        return self.nodes[-1]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.nodes)) and np.all(np.isfinite(self.stages)))

    # -- algebra ---------------------------------------------------------
    def map(self, fn: Callable, *others: "MatrixPath") -> "MatrixPath":
        """Apply ``fn`` pointwise to nodes and stages of this and other paths."""
        for o in others:
            if o.grid != self.grid:
                raise ValueError("paths live on different grids")
        nodes = fn(self.nodes, *[o.nodes for o in others])
        stages = fn(self.stages, *[o.stages for o in others])
        return MatrixPath(self.grid, nodes, stages)

    def T(self) -> "MatrixPath":
        return self.map(lambda a: np.swapaxes(a, -1, -2))

    def __add__(self, other):
        if isinstance(other, MatrixPath):
            return self.map(np.add, other)
        return self.map(lambda a: a + other)

    def __sub__(self, other):
        if isinstance(other, MatrixPath):
            return self.map(np.subtract, other)
        return self.map(lambda a: a - other)

    def __neg__(self):
        return self.map(np.negative)

    def __mul__(self, scalar):
        return self.map(lambda a: a * scalar)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, MatrixPath):
            return self.map(np.matmul, other)
        other = np.asarray(other, dtype=float)
        return self.map(lambda a: a @ other)

    def __rmatmul__(self, other):
        other = np.asarray(other, dtype=float)
        return self.map(lambda a: other @ a)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.nodes))) if self.nodes.size else 0.0

    def total_variation(self) -> float:
        """Sum over nodes of the max-entry change; a regularity diagnostic."""
        if len(self) < 2:
            return 0.0
        d = np.abs(np.diff(self.nodes, axis=0))
        return float(d.reshape(d.shape[0], -1).max(axis=1).sum())

    def __repr__(self) -> str:
        return f"MatrixPath(shape={self.shape}, N={self.grid.N}, T={self.grid.T})"


def stack_blocks(blocks) -> MatrixPath:
    """Assemble a block matrix path from a nested list of paths or arrays.

    ``None`` entries are zero blocks; their size is inferred from the row and
    column neighbours.
    """
    grid = None
    for row in blocks:
        for b in row:
            if isinstance(b, MatrixPath):
                grid = b.grid
                break
        if grid is not None:
            break
    if grid is None:
        raise ValueError("at least one block must be a MatrixPath")
    nr, nc = len(blocks), len(blocks[0])
    row_sizes = [None] * nr
    col_sizes = [None] * nc
    for i, row in enumerate(blocks):
        for j, b in enumerate(row):
            if b is None:
                continue
            shp = b.shape if isinstance(b, MatrixPath) else np.shape(b)
            row_sizes[i], col_sizes[j] = shp[-2], shp[-1]
    if None in row_sizes or None in col_sizes:
        raise ValueError("cannot infer zero-block sizes")

    def pick(b, i, j, which):
        if b is None:
            lead = (grid.N + 1,) if which == "nodes" else (grid.N, 3)
            return np.zeros(lead + (row_sizes[i], col_sizes[j]))
        if isinstance(b, MatrixPath):
            return getattr(b, which)
        lead = (grid.N + 1,) if which == "nodes" else (grid.N, 3)
        return np.broadcast_to(np.asarray(b, dtype=float), lead + np.shape(b))

    out = {}
    for which in ("nodes", "stages"):
        out[which] = np.concatenate(
            [np.concatenate([pick(b, i, j, which) for j, b in enumerate(row)], axis=-1)
             for i, row in enumerate(blocks)], axis=-2)
    return MatrixPath(grid, out["nodes"], out["stages"])


def resample(path: MatrixPath, grid: TimeGrid) -> MatrixPath:
    """Left-constant re-sampling of a coefficient path onto another grid."""
    t_old = path.grid.times
    idx = np.searchsorted(t_old, grid.times + 1e-12 * grid.T, side="right") - 1
    idx = np.clip(idx, 0, path.grid.N)
    return MatrixPath(grid, path.nodes[idx])


def pointwise(fn: Callable, *paths: MatrixPath) -> MatrixPath:
    """Apply ``fn`` to aligned node arrays and stage arrays of several paths."""
    grid = paths[0].grid
    return MatrixPath(grid, fn(*[p.nodes for p in paths]), fn(*[p.stages for p in paths]))
