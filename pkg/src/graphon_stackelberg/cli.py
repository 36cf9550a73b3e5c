"""Command-line interface.

Subcommands: ``validate``, ``equilibrium``, ``gfbsde solve``, ``gfbsde stability``,
``simulate`` and ``verify``.  Each run writes ``manifest.json``, ``report.json``
and CSV files under ``--out``.  Exit codes: 0 success, 1 a check or stage
failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import artifacts as art
from . import config as cfgmod
from . import gfbsde as gf
from . import mc
from .follower import stationarity_residual
from .graphon import GraphonError
from .leader import StageError, assemble_stackelberg_equilibrium
from .model import SpecError, validate_A1, validate_A2, validate_A3, validate_A4

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p):
    p.add_argument("--config", required=True, metavar="PATH", help="JSON problem file")
    p.add_argument("--out", default="out", metavar="DIR", help="output directory")
    p.add_argument("--seed", type=int, default=None, metavar="U64")
    p.add_argument("--paths", type=int, default=None, metavar="P")
    p.add_argument("--threads", type=int, default=None, metavar="K",
                   help="worker cap (default: GS_THREADS or the CPU count)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="graphon-stackelberg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("validate", "check the standing assumptions"),
                       ("equilibrium", "compute the Stackelberg-Nash equilibrium"),
                       ("simulate", "Monte Carlo simulation of the equilibrium"),
                       ("verify", "Monte Carlo verification suite")):
        _common(sub.add_parser(name, help=text))
    g = sub.add_parser("gfbsde", help="aggregated FBSDE solver")
    gsub = g.add_subparsers(dest="action", required=True, parser_class=_Parser)
    _common(gsub.add_parser("solve", help="continuation solve"))
    _common(gsub.add_parser("stability", help="graphon stability sweep"))
    return ap


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _options(doc, args):
    opts = dict(doc.get("options") or {})
    if not isinstance(opts, dict):
        raise cfgmod.ConfigError("options must be an object", "options")
    if args.seed is not None:
        opts["seed"] = args.seed
    if args.paths is not None:
        opts["paths"] = args.paths
    opts.setdefault("seed", 0)
    opts.setdefault("paths", 1000)
    if not (isinstance(opts["seed"], int) and 0 <= opts["seed"] < 2 ** 64):
        raise cfgmod.ConfigError("seed must be an unsigned 64-bit integer", "options.seed")
    if not (isinstance(opts["paths"], int) and opts["paths"] >= 2):
        raise cfgmod.ConfigError("paths must be an integer >= 2", "options.paths")
    return opts


def _verdict(rep) -> str:
    return "PASS" if rep["pass"] else "FAIL"


def _describe(rep) -> str:
    parts = [f"{w.get('name')}: {w.get('reason')}" for w in rep.get("witnesses", [])]
    return f"{rep['check']}: {_verdict(rep)}" + (f" ({'; '.join(parts)})" if parts else "")


def _follower_mean_stationarity(eq) -> float:
    sol = eq.followers.solution
    worst = 0.0
    for k in range(eq.spec.grid.N + 1):
        res, _ = stationarity_residual(eq.spec, eq.follower_riccati, eq.follower_policy,
                                       sol.m.nodes[k], sol.phi.nodes[k], sol.agg.nodes[k], k)
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


def _equilibrium_outputs(run, eq):
    t = eq.spec.grid.times
    pol, lp = eq.follower_policy, eq.leader_policy
    art.path_csv(run.path("follower_riccati.csv"), t, [("P", eq.follower_riccati.P)])
    art.path_csv(run.path("leader_fluctuation_riccati.csv"), t, [("Pi", eq.Pi.P)])
    art.path_csv(run.path("leader_augmented_riccati.csv"), t, [("P", eq.Ptil.P)])
    art.path_csv(run.path("follower_gains.csv"), t,
                 [("Kx", pol.Kx), ("Kphi", pol.Kphi), ("Kagg", pol.Kagg), ("koff", pol.koff)])
    sol = eq.followers.solution
    art.indexed_path_csv(run.path("follower_offsets.csv"), t,
                         [("phi", sol.phi), ("m", sol.m), ("agg", sol.agg)])
    art.path_csv(run.path("leader_policy.csv"), t, [("abar", lp.abar), ("Kfl", lp.Kfl)])
    art.path_csv(run.path("means.csv"), t, [("leader_mean", eq.leader_mean),
                                             ("population_mean", eq.population_mean)])


def _equilibrium(run, spec):
    timings = {}
    try:
        eq = assemble_stackelberg_equilibrium(spec, check=bool(spec.options.get("check_assumptions", True)),
                                              timings=timings)
    finally:
        run.timings.update(timings)
    run.diagnostics.update(eq.diagnostics)
    fs = _follower_mean_stationarity(eq)
    run.diagnostics["follower_stationarity"] = fs
    run.diagnostics["max_stationarity_residual"] = max(fs, eq.diagnostics["mean_stationarity"])
    return eq


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_validate(run, doc, opts):
    if "gfbsde" in doc:
        p = run.stage("ingest", cfgmod.build_gfbsde, doc)
        reps = [run.stage("S1_S2", gf.check_S1_S2, p)]
    else:
        spec = run.stage("ingest", cfgmod.build_game, doc)
        reps = [run.stage(n, fn, spec) for n, fn in
                (("A1", validate_A1), ("A2", validate_A2), ("A3", validate_A3), ("A4", validate_A4))]
    for r in reps:
        print(_describe(r))
    ok = all(r["pass"] for r in reps)
    run.diagnostics["checks"] = {r["check"]: r["pass"] for r in reps}
    return {"checks": reps, "pass": ok}, (EXIT_OK if ok else EXIT_FAIL)


def cmd_equilibrium(run, doc, opts):
    spec = run.stage("ingest", cfgmod.build_game, doc)
    eq = _equilibrium(run, spec)
    run.stage("write", _equilibrium_outputs, run, eq)
    print(f"equilibrium: PASS (max stationarity residual {run.diagnostics['max_stationarity_residual']:.3g})")
    return {"pass": True, "diagnostics": eq.diagnostics}, EXIT_OK


def cmd_gfbsde_solve(run, doc, opts):
    p = run.stage("ingest", cfgmod.build_gfbsde, doc)
    rep = run.stage("S1_S2", gf.check_S1_S2, p)
    run.diagnostics["K1"] = rep["K1"]
    if not rep["pass"]:
        raise gf.MonotonicityError(f"outside theorem hypotheses: K1 = {rep['K1']:.6g} <= 0")
    sol = run.stage("continuation", gf.continuation_solve, p, K1=rep["K1"])
    run.diagnostics.update({k: v for k, v in sol.diagnostics.items() if k != "alpha_levels"})
    res = run.stage("residual", gf.residual, p, sol, paths=opts["paths"], seed=opts["seed"])
    run.diagnostics.update(res)
    run.diagnostics["max_residual"] = max(res.values())
    report = {"pass": True, "residual": res, "apriori": run.stage("apriori", gf.apriori_estimate_check, p, sol)}
    if "manufactured" in doc:
        x = np.asarray(doc["manufactured"]["x"], dtype=float).reshape(p.M, p.n, 1)
        y = np.asarray(doc["manufactured"]["y"], dtype=float).reshape(p.M, p.n, 1)
        err = max(float(np.max(np.abs(sol.m.nodes - x))), float(np.max(np.abs(sol.mean_Y.nodes - y))))
        run.diagnostics["manufactured_error"] = err
        report["manufactured_error"] = err
    t = p.grid.times
    art.indexed_path_csv(run.path("gfbsde_solution.csv"), t,
                         [("Pi", sol.Pi), ("eta", sol.eta), ("Lam", sol.Lam), ("zeta", sol.zeta),
                          ("mean_X", sol.m), ("mean_Y", sol.mean_Y)])
    print(f"gfbsde solve: PASS (max residual {run.diagnostics['max_residual']:.3g})")
    return report, EXIT_OK


def cmd_gfbsde_stability(run, doc, opts):
    p = run.stage("ingest", cfgmod.build_gfbsde, doc)
    st = opts.get("stability") or {}
    if "target_graphon" not in st:
        raise cfgmod.ConfigError("stability sweep needs a target graphon", "options.stability.target_graphon")
    G2 = cfgmod.build_graphon(st["target_graphon"])
    scales = st.get("scales", (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125))
    rep = run.stage("sweep", gf.stability_experiment, p, p.graphon, G2, scales=tuple(scales))
    if rep["slope"] is None and rep["skipped"]:
        raise gf.MonotonicityError("outside theorem hypotheses: no interpolant passed the monotonicity check")
    run.diagnostics.update({"slope": rep["slope"], "K_emp": rep["K_emp"], "data_energy": rep["data_energy"]})
    art.write_csv(run.path("stability.csv"), ["s", "dG", "energy_difference"],
                  [(q["s"], q["dG"], q["E_diff"]) for q in rep["points"]])
    print(f"gfbsde stability: {_verdict(rep)} (slope {rep['slope']})")
    return rep, (EXIT_OK if rep["pass"] else EXIT_FAIL)


def _sim_config(opts, threads, **kw):
    sim = opts.get("simulate") or {}
    return mc.SimConfig(paths=opts["paths"], seed=opts["seed"], threads=threads,
                        empirical_aggregate=bool(sim.get("empirical_aggregate", False)), **kw)


def cmd_simulate(run, doc, opts, threads):
    spec = run.stage("ingest", cfgmod.build_game, doc)
    eq = _equilibrium(run, spec)
    ens = run.stage("simulate", mc.simulate, eq, _sim_config(opts, threads))
    costs = run.stage("costs", mc.evaluate_costs, eq, ens)
    t = spec.grid.times
    m, se = mc.ensemble_summary(ens)
    art.indexed_path_csv(run.path("follower_ensemble.csv"), t, [("mean", m), ("se", se)])
    lm, lse = mc.mean_se(ens.Xl[..., 0], axis=1)
    art.path_csv(run.path("leader_ensemble.csv"), t, [("mean", lm), ("se", lse)])
    rows = [(str(u), "follower_original", costs["follower_original"][0][i], costs["follower_original"][1][i])
            for i, u in enumerate(ens.indices)]
    rows += [(str(u), "follower_rewritten", costs["follower_rewritten"][0][i], costs["follower_rewritten"][1][i])
             for i, u in enumerate(ens.indices)]
    rows.append(("leader", "leader", costs["leader"][0], costs["leader"][1]))
    art.write_csv(run.path("costs.csv"), ["index", "form", "mean", "se"], rows)
    if (opts.get("simulate") or {}).get("dump"):
        shape = mc.binary_dump(ens, run.path("follower_ensemble.bin"))
        run.diagnostics["binary_dump"] = {"dtype": "<f8", "order": "[u][p][k][component]", "shape": list(shape)}
    print(f"simulate: PASS ({ens.paths} paths, {len(ens.indices)} indices)")
    return {"pass": True, "costs": costs}, EXIT_OK


def cmd_verify(run, doc, opts, threads):
    spec = run.stage("ingest", cfgmod.build_game, doc)
    eq = _equilibrium(run, spec)
    v = opts.get("verify") or {}
    P, seed = opts["paths"], opts["seed"]
    reports = []
    ens = run.stage("simulate", mc.simulate, eq, _sim_config(opts, threads))
    reports.append(run.stage("stationarity", mc.stationarity_check, eq, ens))
    reports.append(run.stage("cost_forms", mc.cost_form_check, eq, ens))
    nash = run.stage("nash_deviation", mc.nash_deviation_test, eq, paths=P, seed=seed,
                     draws=int(v.get("nash_draws", 50)), threads=threads)
    reports.append(nash)
    art.write_csv(run.path("verify_nash.csv"), ["draw", "index", "scale", "delta_cost", "se"],
                  [(str(d), str(r["index"]), s, m, e) for d, r in enumerate(nash["draws"])
                   for s, m, e in zip(nash["scales"], r["delta_cost"], r["se"])])
    lead = run.stage("leader_deviation", mc.leader_deviation_test, eq, paths=P, seed=seed,
                     draws=int(v.get("leader_draws", 20)), threads=threads)
    reports.append(lead)
    art.write_csv(run.path("verify_leader.csv"), ["draw", "scale", "delta_cost", "se", "vertex"],
                  [(str(d), s, m, e, r["vertex"]) for d, r in enumerate(lead["draws"])
                   for s, m, e in zip(lead["scales"], r["delta_cost"], r["se"])])
    if v.get("lln"):
        ln = v["lln"] if isinstance(v["lln"], dict) else {}
        lln = run.stage("lln", mc.exact_lln_check, spec, Ms=tuple(ln.get("M", (8, 32, 128, 512))),
                        paths=int(ln.get("paths", 200)), seed=seed, threads=threads)
        reports.append(lln)
        art.write_csv(run.path("verify_lln.csv"), ["M", "dispersion"],
                      [(str(M), d) for M, d in zip(lln["M"], lln["dispersion"])])
    for r in reports:
        print(f"{r['check']}: {_verdict(r)}")
    ok = all(r["pass"] for r in reports)
    run.diagnostics["checks"] = {r["check"]: r["pass"] for r in reports}
    return {"pass": ok, "checks": reports}, (EXIT_OK if ok else EXIT_FAIL)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = args.command + (f" {args.action}" if args.command == "gfbsde" else "")
    run = art.Run(command, args.out, config_path=args.config)
    report, code = {"pass": False}, EXIT_FAIL
    try:
        doc, raw = cfgmod.load_json(args.config)
        run.config_sha256 = cfgmod.sha256_bytes(raw)
        opts = _options(doc, args)
        run.seed = opts["seed"]
        threads = mc.resolve_threads(args.threads)
        run.options = dict(opts, threads=threads)
        if args.command == "validate":
            report, code = cmd_validate(run, doc, opts)
        elif args.command == "equilibrium":
            report, code = cmd_equilibrium(run, doc, opts)
        elif args.command == "gfbsde":
            fn = cmd_gfbsde_solve if args.action == "solve" else cmd_gfbsde_stability
            report, code = fn(run, doc, opts)
        elif args.command == "simulate":
            report, code = cmd_simulate(run, doc, opts, threads)
        else:
            report, code = cmd_verify(run, doc, opts, threads)
        if code != EXIT_OK:
            run.status = "failed"
    except OSError as exc:
        run.fail("ingest", exc)
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except (cfgmod.ConfigError, SpecError, GraphonError) as exc:
        run.fail("ingest", exc)
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except StageError as exc:
        run.fail(exc.stage, exc)
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_FAIL
    except gf.MonotonicityError as exc:
        run.fail("S1_S2", exc)
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_FAIL
    except (mc.SimulationError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        stage = list(run.timings)[-1] if run.timings else "unknown"
        run.fail(stage, exc)
        print(f"stage '{stage}' failed: {exc}", file=sys.stderr)
        code = EXIT_FAIL
    report = dict(report, exit_code=code, status=run.status, failed_stage=run.failed_stage, error=run.error)
    art.write_json(run.path("report.json"), report)
    run.write_manifest()
    return code


if __name__ == "__main__":
    sys.exit(main())
