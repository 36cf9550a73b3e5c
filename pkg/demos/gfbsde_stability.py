# %% [markdown]
# Graphon-aggregated FBSDE: continuation solve and sensitivity to the graphon
#
# The energy of the difference between solutions under two graphons should
# scale like the square of their sup distance.

# %%
from graphon_stackelberg import config, fixtures, gfbsde

doc = fixtures.gfbsde_stability()
p = config.build_gfbsde(doc)
print("monotonicity:", {k: v for k, v in gfbsde.check_S1_S2(p).items() if k in ("pass", "K1")})

# %% solve and report the a-priori ratio
sol = gfbsde.continuation_solve(p)
print("alpha levels:", sol.diagnostics["alpha_levels"])
print("a-priori ratio:", gfbsde.apriori_estimate_check(p, sol)["ratio"])

# %% sweep towards the two-block graphon
G2 = config.build_graphon(doc["options"]["stability"]["target_graphon"])
rep = gfbsde.stability_experiment(p, p.graphon, G2, scales=(1.0, 0.5, 0.25, 0.125, 0.0625))
for q in rep["points"]:
    print(f"s={q['s']:<7} |dG|={q['dG']:.4f}  E_diff={q['E_diff']:.3e}")
print(f"fitted slope {rep['slope']:.4f}")

# %% Euler residuals of sampled paths shrink like sqrt(h)
for N in (50, 200):
    q = config.build_gfbsde(fixtures.gfbsde_scalar(N=N))
    r = gfbsde.residual(q, gfbsde.continuation_solve(q), paths=400)
    print(N, {k: round(v, 4) for k, v in r.items()})
