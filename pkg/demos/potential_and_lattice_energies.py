# %% [markdown]
# # Building a potential and checking crystal energies
#
# We build the canonical pair and three-body potentials at a small well width,
# check their localization conditions, and compare fcc with hcp.

# %%
import numpy as np

from crystalopt import energy as en, lattice, potential

alpha = 0.05
pair = potential.build_canonical_pair(alpha)
triple = potential.build_canonical_triple(alpha)

report = potential.validate(pair, triple)
print("all conditions hold:", report.ok)
for entry in report.entries:
    print(f"  {entry.id:<22} {entry.status:<9} margin {entry.margin:+.3e}")

# %% [markdown]
# The pair well sits at unit distance with depth -1, and an equilateral unit
# triangle costs -1 in the three-body term.

# %%
print("V(1) =", float(pair(1.0)), " Psi(1,1,1) =", float(triple(1.0, 1.0, 1.0)))
r = np.linspace(0.95, 1.6, 8)
print(np.column_stack([r, pair(r)]))

# %% [markdown]
# The fcc energy per particle is minimized at the unit lattice, and hcp costs more.
# The gap comes almost entirely from the third shell of neighbors.

# %%
e_fcc = potential.efcc(pair, triple)
print("fcc energy per particle:", e_fcc, " argmin:", potential.efcc_argmin(pair, triple))
e_hcp = en.stored_energy(lattice.HCP, np.eye(3), pair, triple)
print("hcp minus fcc:", e_hcp - e_fcc)

# %% [markdown]
# Strain the lattice slightly and look at the stress.  At the fcc minimizer the
# Piola stress vanishes up to the equilibrium tuning tolerance.  A small shear
# mostly loads the sheared components.

# %%
print(np.round(en.piola(lattice.FCC, np.eye(3), pair, triple), 12))
shear = np.eye(3)
shear[0, 1] = 0.01
print(np.round(en.piola(lattice.FCC, shear, pair, triple), 6))

# %% [markdown]
# Wider wells eventually make the canonical construction infeasible: a slightly
# compressed lattice can then undercut the unit spacing.

# %%
from crystalopt.errors import InfeasiblePotentialError

for a in (0.1, 0.12, 0.15):
    try:
        potential.build_canonical_pair(a)
        print(a, "feasible")
    except InfeasiblePotentialError as err:
        print(a, "infeasible:", err.condition)
