"""JSON ingestion of game and aggregated-FBSDE problems.

Schema (all keys optional unless noted)::

    {
      "dims": {"n1": 1, "n2": 1, "m1": 2, "m2": 1},          # required
      "time": {"T": 1.0, "N": 200},                          # required
      "graphon": {"kind": "constant", "M": 8, "value": 0.5}
              | {"kind": "step", "M": 8, "boundaries": [0, 0.5, 1], "blocks": [[..], [..]]}
              | {"kind": "sampled", "values": [[..], ..]},
      "follower": {"A": ..., "B": ..., ..., "Q": ..., "R": ..., "G": ...},
      "leader":   {"A": ..., ..., "Q": ..., "R": ..., "G": ...},
      "initial": {"follower": {"mean": [..] | [[..] per index], "cov": [[..]]},
                  "leader": {"mean": [..], "cov": [[..]]}},
      "options": {"seed": 0, "paths": 1000, "eps_R": 1e-8, ...}
    }

A coefficient is a bare matrix (or number for 1x1), ``{"constant": matrix}``
or ``{"nodes": [matrix at t_0, ..., matrix at t_N]}``.  Missing
coefficients are zero, except ``R`` which defaults to the identity.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from . import graphon as gr
from .model import FollowerSpec, GameSpec, LeaderSpec, SpecError
from .paths import MatrixPath, TimeGrid


class ConfigError(ValueError):
    """Malformed configuration; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message}" + (f" ({', '.join(where)})" if where else ""))
        self.field = field
        self.line = line


def load_json(path):
    """Return ``(document, raw_bytes)``; JSON syntax errors carry the line number."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    except UnicodeDecodeError as exc:
        raise ConfigError("config is not UTF-8 text") from exc
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object")
    return doc, raw


def sha256_bytes(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def _matrix(val, shape, name):
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError("not a numeric matrix", name) from exc
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # vectors are columns
        arr = arr.reshape(-1, 1) if shape[-1] == 1 else arr.reshape(1, -1)
    if arr.shape != tuple(shape):
        raise ConfigError(f"expected shape {tuple(shape)}, got {arr.shape}", name)
    if not np.all(np.isfinite(arr)):
        raise ConfigError("non-finite entries", name)
    return arr


def coefficient_path(val, shape, grid: TimeGrid, name: str, default=None) -> MatrixPath:
    if val is None:
        base = np.zeros(shape) if default is None else default
        return MatrixPath.constant(grid, base)
    if isinstance(val, dict):
        if "constant" in val:
            return MatrixPath.constant(grid, _matrix(val["constant"], shape, name))
        if "nodes" in val:
            nodes = val["nodes"]
            if not isinstance(nodes, list) or len(nodes) != grid.N + 1:
                raise ConfigError(f"'nodes' must list {grid.N + 1} matrices", name)
            return MatrixPath(grid, np.stack([_matrix(v, shape, f"{name}[{k}]")
                                              for k, v in enumerate(nodes)]))
        raise ConfigError("coefficient object needs 'constant' or 'nodes'", name)
    return MatrixPath.constant(grid, _matrix(val, shape, name))


def _int(d, key, where):
    v = d.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ConfigError("must be a positive integer", f"{where}.{key}")
    return v


def build_grid(doc) -> TimeGrid:
    t = doc.get("time")
    if not isinstance(t, dict):
        raise ConfigError("missing 'time' object", "time")
    T = t.get("T")
    if not isinstance(T, (int, float)) or not T > 0:
        raise ConfigError("must be a positive number", "time.T")
    return TimeGrid(float(T), _int(t, "N", "time"))


def build_graphon(g) -> gr.GraphonGrid:
    if not isinstance(g, dict):
        raise ConfigError("missing 'graphon' object", "graphon")
    kind = g.get("kind")
    try:
        if kind == "constant":
            return gr.constant_graphon(_int(g, "M", "graphon"), float(g.get("value", 0.0)))
        if kind == "step":
            return gr.step_graphon(_int(g, "M", "graphon"), g.get("boundaries"), g.get("blocks"))
        if kind == "sampled":
            return gr.sampled_graphon(g.get("values"))
    except gr.GraphonError as exc:
        raise ConfigError(str(exc), "graphon") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad graphon data: {exc}", "graphon") from exc
    raise ConfigError("kind must be 'constant', 'step' or 'sampled'", "graphon.kind")


def _dims(doc):
    d = doc.get("dims")
    if not isinstance(d, dict):
        raise ConfigError("missing 'dims' object", "dims")
    return {k: _int(d, k, "dims") for k in ("n1", "n2", "m1", "m2")}


def build_game(doc: dict) -> GameSpec:
    """Build a :class:`GameSpec` from a parsed config document."""
    dm = _dims(doc)
    n1, n2, m1, m2 = dm["n1"], dm["n2"], dm["m1"], dm["m2"]
    grid = build_grid(doc)
    G = build_graphon(doc.get("graphon"))
    fd = doc.get("follower", {}) or {}
    ld = doc.get("leader", {}) or {}
    if not isinstance(fd, dict) or not isinstance(ld, dict):
        raise ConfigError("'follower' and 'leader' must be objects")

    def cp(d, key, shape, who, default=None):
        return coefficient_path(d.get(key), shape, grid, f"{who}.{key}", default)

    nf = 2 * n1 + n2
    f = FollowerSpec(
        A=cp(fd, "A", (n1, n1), "follower"), B=cp(fd, "B", (n1, m1), "follower"),
        C=cp(fd, "C", (n1, n1), "follower"), D=cp(fd, "D", (n1, n1), "follower"),
        E=cp(fd, "E", (n1, m1), "follower"), F=cp(fd, "F", (n1, n1), "follower"),
        b=cp(fd, "b", (n1, 1), "follower"), sigma=cp(fd, "sigma", (n1, 1), "follower"),
        Q=cp(fd, "Q", (nf, nf), "follower"), R=cp(fd, "R", (m1, m1), "follower", np.eye(m1)),
        G=_matrix(fd.get("G", np.zeros((nf, nf))), (nf, nf), "follower.G"))
    nl = n1 + n2
    l = LeaderSpec(
        A=cp(ld, "A", (n2, n2), "leader"), B=cp(ld, "B", (n2, m2), "leader"),
        C=cp(ld, "C", (n2, n1), "leader"), D=cp(ld, "D", (n2, n2), "leader"),
        E=cp(ld, "E", (n2, m2), "leader"), F=cp(ld, "F", (n2, n1), "leader"),
        b=cp(ld, "b", (n2, 1), "leader"), sigma=cp(ld, "sigma", (n2, 1), "leader"),
        Q=cp(ld, "Q", (nl, nl), "leader"), R=cp(ld, "R", (m2, m2), "leader", np.eye(m2)),
        G=_matrix(ld.get("G", np.zeros((nl, nl))), (nl, nl), "leader.G"))
    ini = doc.get("initial", {}) or {}
    fi, li = ini.get("follower", {}) or {}, ini.get("leader", {}) or {}
    M = G.M
    fm = np.array(fi.get("mean", np.zeros(n1)), dtype=float)
    if fm.shape in ((n1,), (n1, 1)):
        fmean = np.broadcast_to(fm.reshape(n1, 1), (M, n1, 1)).copy()
    elif fm.shape in ((M, n1), (M, n1, 1)) or (n1 == 1 and fm.shape == (M,)):
        fmean = fm.reshape(M, n1, 1)
    else:
        raise ConfigError(f"expected {n1} or {M}x{n1} values", "initial.follower.mean")
    fc = np.array(fi.get("cov", np.zeros((n1, n1))), dtype=float)
    if fc.ndim == 0:
        fc = fc.reshape(1, 1)
    if fc.shape == (n1, n1):
        fcov = np.broadcast_to(fc, (M, n1, n1)).copy()
    elif fc.shape == (M, n1, n1):
        fcov = fc
    else:
        raise ConfigError(f"expected {n1}x{n1} covariance", "initial.follower.cov")
    lmean = _matrix(li.get("mean", np.zeros(n2)), (n2, 1), "initial.leader.mean")
    lcov = _matrix(li.get("cov", np.zeros((n2, n2))), (n2, n2), "initial.leader.cov")
    for nm, cv in (("initial.follower.cov", fcov), ("initial.leader.cov", lcov)):
        if np.linalg.eigvalsh(0.5 * (cv + np.swapaxes(cv, -1, -2))).min() < -1e-12:
            raise ConfigError("covariance must be positive semidefinite", nm)
    opts = doc.get("options", {}) or {}
    try:
        return GameSpec(f, l, G, grid, fmean, fcov, lmean, lcov,
                        eps_R=float(opts.get("eps_R", 1e-8)),
                        name=str(doc.get("name", "game")), options=dict(opts))
    except SpecError as exc:
        raise ConfigError(str(exc)) from exc


def build_gfbsde(doc: dict):
    """Build a :class:`GfbsdeProblem` from a ``"gfbsde"`` config section.

    Blocks ``A11`` .. ``A33`` and ``B1`` .. ``B3`` follow the coefficient
    conventions above with ``n = dims.n``; ``G1``, ``G2`` are matrices and
    ``b``, ``sigma``, ``g``, ``h``, ``x0`` vectors (or ``M x n`` per index;
    for the forcing paths write ``{"per_index": [...]}``, constant in time).
    """
    from .gfbsde import GfbsdeProblem

    sec = doc.get("gfbsde")
    if not isinstance(sec, dict):
        raise ConfigError("missing 'gfbsde' object", "gfbsde")
    d = doc.get("dims", {})
    if not isinstance(d, dict):
        raise ConfigError("missing 'dims' object", "dims")
    n = _int(d, "n", "dims")
    grid = build_grid(doc)
    G = build_graphon(doc.get("graphon"))
    M = G.M
    A = {(i, j): coefficient_path(sec.get(f"A{i}{j}"), (n, n), grid, f"gfbsde.A{i}{j}")
         for i in (1, 2, 3) for j in (1, 2, 3)}
    B = {i: coefficient_path(sec.get(f"B{i}"), (n, n), grid, f"gfbsde.B{i}") for i in (1, 2, 3)}

    def forcing(key):
        v = sec.get(key)
        if isinstance(v, dict) and "per_index" in v:
            arr = np.array(v["per_index"], dtype=float)
            if arr.shape not in ((M,), (M, n), (M, n, 1)):
                raise ConfigError(f"expected {M} x {n} values", f"gfbsde.{key}")
            return MatrixPath.constant(grid, arr.reshape(M, n, 1))
        return coefficient_path(v, (n, 1), grid, f"gfbsde.{key}")

    vec = {k: forcing(k) for k in ("b", "sigma", "g")}

    def per_index(key, ncols):
        v = np.array(sec.get(key, np.zeros(n)), dtype=float)
        if v.ndim == 0 and n == 1:
            v = v.reshape(1)
        if v.shape in ((n,), (n, 1)) and ncols == 1:
            return np.broadcast_to(v.reshape(n, 1), (M, n, 1)).copy()
        if (v.shape in ((M, n), (M, n, 1)) or (n == 1 and v.shape == (M,))) and ncols == 1:
            return v.reshape(M, n, 1)
        if ncols == n and v.shape == (n, n):
            return np.broadcast_to(v, (M, n, n)).copy()
        raise ConfigError("wrong shape", f"gfbsde.{key}")

    x0c = sec.get("x0_cov", np.zeros((n, n)))
    return GfbsdeProblem(
        A=A, B=B,
        G1=_matrix(sec.get("G1", np.zeros((n, n))), (n, n), "gfbsde.G1"),
        G2=_matrix(sec.get("G2", np.zeros((n, n))), (n, n), "gfbsde.G2"),
        b=vec["b"], sigma=vec["sigma"], g=vec["g"], h=per_index("h", 1),
        graphon=G, x0_mean=per_index("x0", 1),
        x0_cov=np.broadcast_to(_matrix(x0c, (n, n), "gfbsde.x0_cov"), (M, n, n)).copy())
