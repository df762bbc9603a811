# %% [markdown]
# # Relaxation experiments on finite fcc balls
#
# Lattice balls pay a surface cost that shrinks as the radius grows.  We
# measure it, compare fcc with hcp interiors, and check that a noisy ball relaxes
# back to the same crystal.

# %%
from crystalopt import decomp, paths, potential, relax, topology as topo

pair = potential.build_canonical_pair(0.05)
triple = potential.build_canonical_triple(0.05)
e_star = potential.efcc(pair, triple)

for row in relax.experiment_upper_bound(pair, triple, [3, 4, 5, 6], e_star):
    print(f"R={row['R']:.0f} n={row['n']:4d} gap={row['gap']:.4f} gap*R={row['gap_times_R']:.3f}")

# %% [markdown]
# The product gap * R stays bounded, as expected when the excess comes from the surface.

# %%
res = relax.experiment_fcc_vs_hcp(pair, triple)
print("hcp - fcc interior energy:", res["difference"], " shell prediction:", res["shell_prediction"])

# %% [markdown]
# Perturb a radius-4 ball and relax it.  Every interior site returns to the
# cuboctahedral neighborhood.

# %%
out = relax.experiment_recovery(pair, triple, R=4.0, opts=relax.RelaxOptions(method=relax.LBFGS))
print({k: out[k] for k in ("interior", "interior_co", "perturbed_steps", "energy_gap_per_particle")})

# %% [markdown]
# Split the energy of a slightly strained ball into structural, elastic and defect parts.

# %%
from crystalopt import lattice
from crystalopt.configuration import Configuration

cfg = Configuration(lattice.generate(lattice.FCC, 3.0).cart * 1.01)
cls = topo.classify(cfg, topo.bond_graph(cfg, 0.05))
rep = decomp.decompose(cfg, pair, triple, cls, paths.pair_sets(cls))
print(f"structural {rep.e_struct:.4f}  elastic {rep.e_elast:.4f}  defect {rep.e_defect:.4f}")
print("closure error:", rep.closure_error)
