# %% [markdown]
# Leader-follower equilibrium on a two-community graphon
#
# Builds the coupled fixture, solves for the equilibrium and checks it by
# simulation.  Prints numbers only; no plotting.

# %%
import numpy as np

from graphon_stackelberg import config, fixtures, mc
from graphon_stackelberg.leader import assemble_stackelberg_equilibrium

spec = config.build_game(fixtures.noisy_coupled(N=200, M=8))
eq = assemble_stackelberg_equilibrium(spec)
print("stage diagnostics:")
for k, v in sorted(eq.diagnostics.items()):
    print(f"  {k}: {v}")

# %% follower Riccati and gains at a few times
t = spec.grid.times
for k in (0, 100, 200):
    print(f"t={t[k]:.2f}  P={eq.follower_riccati.P.nodes[k, 0, 0]: .6f}  "
          f"Kfl={eq.leader_policy.Kfl.nodes[k, 0, 0]: .6f}  abar={eq.leader_policy.abar.nodes[k, 0, 0]: .6f}")

# %% per-community mean states
m = eq.followers.solution.m.nodes[:, :, 0, 0]
print("follower means at T:", np.round(m[-1], 4))
print("leader mean at T:", eq.leader_mean.nodes[-1, 0, 0])

# %% Monte Carlo check of the cost identity and the stationarity conditions
ens = mc.simulate(eq, mc.SimConfig(paths=2000, seed=1))
cf = mc.cost_form_check(eq, ens)
st = mc.stationarity_check(eq, ens)
print(f"cost forms agree: {cf['pass']} (worst gap {cf['worst_ratio']:.2f} SE)")
print(f"stationarity: {st['max']:.2e} <= {st['bound']:.2e}")

# %% a few unilateral deviations
rep = mc.nash_deviation_test(eq, paths=2000, draws=5)
for d in rep["draws"]:
    print(f"index {d['index']}: dJ={np.round(d['delta_cost'], 5)}  quadratic coefficient {d['quad']:.4f}")
