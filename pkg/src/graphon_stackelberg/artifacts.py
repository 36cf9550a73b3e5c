"""CSV, JSON and manifest output for command-line runs."""

from __future__ import annotations

import json
import os
import subprocess
import time

import numpy as np

from .paths import MatrixPath


def fmt(x) -> str:
    """17 significant digits, enough to round-trip a float64."""
    return format(float(x) + 0.0, ".17g")  # + 0.0 folds -0 into 0


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")


def _entry_names(prefix, shape):
    if len(shape) == 0:
        return [prefix]
    if len(shape) == 1:
        return [f"{prefix}_{i}" for i in range(shape[0])]
    return [f"{prefix}_{i}{j}" for i in range(shape[0]) for j in range(shape[1])]


def path_csv(path, times, named_paths):
    """``t`` followed by the row-major entries of each path (node arrays or :class:`MatrixPath`)."""
    arrays = [(n, p.nodes if isinstance(p, MatrixPath) else np.asarray(p)) for n, p in named_paths]
    header = ["t"] + [c for n, a in arrays for c in _entry_names(n, a.shape[1:])]
    rows = []
    for k, t in enumerate(times):
        row = [t]
        for _, a in arrays:
            row.extend(a[k].ravel())
        rows.append(row)
    write_csv(path, header, rows)


def indexed_path_csv(path, times, named_paths):
    """``t, index`` followed by the entries of per-index paths of shape ``(N + 1, M, ...)``."""
    arrays = [(n, p.nodes if isinstance(p, MatrixPath) else np.asarray(p)) for n, p in named_paths]
    M = arrays[0][1].shape[1]
    header = ["t", "index"] + [c for n, a in arrays for c in _entry_names(n, a.shape[2:])]
    rows = []
    for k, t in enumerate(times):
        for u in range(M):
            row = [t, str(u)]
            for _, a in arrays:
                row.extend(a[k, u].ravel())
            rows.append(row)
    write_csv(path, header, rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def git_describe() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


class Run:
    """Collects stage timings, diagnostics and outputs; writes one manifest."""

    def __init__(self, command, out_dir, config_path=None, config_sha256=None, seed=None):
        self.command = command
        self.out_dir = out_dir
        self.config_path = config_path
        self.config_sha256 = config_sha256
        self.seed = seed
        self.options = {}
        self.timings = {}
        self.diagnostics = {}
        self.outputs = []
        self.status = "ok"
        self.failed_stage = None
        self.error = None
        os.makedirs(out_dir, exist_ok=True)

    def stage(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        finally:
            self.timings[name] = time.perf_counter() - t0

    def path(self, name) -> str:
        self.outputs.append(name)
        return os.path.join(self.out_dir, name)

    def fail(self, stage, error):
        self.status = "failed"
        self.failed_stage = stage
        self.error = str(error)

    def write_manifest(self):
        man = {"command": self.command, "config_path": self.config_path,
               "config_sha256": self.config_sha256, "seed": self.seed, "git_describe": git_describe(),
               "options": self.options, "stage_timings": self.timings, "diagnostics": self.diagnostics,
               "outputs": sorted(set(self.outputs)), "status": self.status,
               "failed_stage": self.failed_stage, "error": self.error}
        write_json(os.path.join(self.out_dir, "manifest.json"), man)
