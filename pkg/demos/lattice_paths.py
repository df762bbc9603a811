# %% [markdown]
# # Lattice paths between fcc sites
#
# A path from the origin to a lattice point k walks along three unit fcc vectors
# forming a basis.  Each path is weighted by how many ordered bases produce it.

# %%
import numpy as np

from crystalopt import paths

print("ordered bases of unit vectors:", paths.n_bases())
print("weight denominator:", paths.weight_denominator())

for k in [(2, 1, 1), (2, 0, 0), (2, 1, 0)]:
    res = paths.normalization_check(k)
    print(k, "generic" if res.generic else "degenerate", "total weight", res.total)

# %% [markdown]
# Generic endpoints carry total weight one.  Degenerate endpoints, where k lies in a
# plane spanned by two unit vectors, are overcounted.
#
# Reflecting a path through a unit vector keeps its weight and its circumcenter.

# %%
p = paths.enumerate_paths((2, 1, 1))[0]
v = p.steps[0]
q = paths.reflect(p, v)
print("sites:", p.sites)
print("reflected:", q.sites)
print("same center:", np.allclose(paths.path_center(p)[0], paths.path_center(q)[0]))
print("orbit size:", len(paths.orbit(p)))

# %% [markdown]
# Medium-length pairs (lengths sqrt 2 and sqrt 3) use short two- and three-step paths.

# %%
for lam in (np.sqrt(2), np.sqrt(3)):
    ps = paths.paths_of_length(lam)
    print(f"length {lam:.4f}: {len(ps)} paths, endpoints {len({s.sites[-1] for s in ps})}")
