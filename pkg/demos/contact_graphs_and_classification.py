# %% [markdown]
# # Contact graphs and local classification
#
# Both 12-neighbor kissing arrangements (cuboctahedron and its twisted version)
# have the same edge, triangle and square counts, but no rotation maps one onto the other.

# %%
import numpy as np

from crystalopt import lattice, topology as topo
from crystalopt.configuration import Configuration

polys = lattice.kissing_polyhedra()
for name in ("co", "tco"):
    p = polys[name]
    print(name, "edges:", len(p.edges))

dev = topo.set_deviation(polys["co"].vertices, polys["tco"].vertices)
print(f"best rotation leaves a vertex {dev.upper:.6f} away (1/sqrt 7 = {1 / np.sqrt(7):.6f})")
print(f"no rotation does better than {dev.lower:.4f}")

# %% [markdown]
# Classify every particle of an fcc ball and an hcp ball.  Interior sites are
# CO in fcc and TCO in hcp; the surface shows up as defects.

# %%
for kind in lattice.KINDS:
    cfg = Configuration(lattice.generate(kind, 3.0).cart)
    cls = topo.classify(cfg, topo.bond_graph(cfg, 0.05))
    labels, counts = np.unique(cls.labels.astype(str), return_counts=True)
    print(kind, dict(zip(labels.tolist(), counts.tolist())))

# %% [markdown]
# Removing the center particle turns its twelve neighbors into defects.

# %%
pos = lattice.generate(lattice.FCC, 3.0).cart[1:]
cfg = Configuration(pos)
cls = topo.classify(cfg, topo.bond_graph(cfg, 0.05))
near_hole = np.linalg.norm(pos, axis=1) < 1.0 + 1e-9
print("labels next to the vacancy:", set(cls.labels[near_hole].astype(str).tolist()))
