"""Two-plus-three-body energy, forces, periodic sums and the stored-energy density.

E(Y) = 2 * sum over unordered pairs V(|y - y'|)
     + 6 * sum over unordered triangles Psi(three side lengths).

Internally every sum runs over ordered (center, neighbor) pairs so the same
code serves finite and periodic configurations; per-particle energies are
V summed over neighbors plus 2 * Psi summed over neighbor pairs.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import lebedev_rule
from scipy.optimize import brentq, minimize_scalar
from scipy.spatial import cKDTree

from . import lattice
from .configuration import Configuration
from .errors import SingularConfigurationError, TrustRegionError
from .potential import TRIPLE_CUTOFF, PotentialPair, PotentialTriple

OVERLAP = 1e-8


@dataclass
class EnergyBreakdown:
    total: float
    pair_sum: float        # sum over unordered pairs of V
    triple_sum: float      # sum over unordered triangles of Psi
    per_particle: np.ndarray
    tail_bound: float
    three_body: np.ndarray | None = None    # 2 * sum of Psi over neighbor pairs, per particle
    magnitude: float = 0.0                  # sum of |term| over every pair and triple term
    cutoff_offset: float = 0.0              # V(r_cut) times the number of ordered pair terms

    @property
    def shifted_total(self) -> float:
        """Total with V replaced by V - V(r_cut): continuous in the positions, same gradient."""
        return self.total - self.cutoff_offset

    def to_dict(self, ids=None):
        d = {"total": float(self.total), "pair_sum": float(self.pair_sum),
             "triple_sum": float(self.triple_sum), "tail_bound": float(self.tail_bound)}
        if ids is not None:
            d["per_particle"] = {str(int(i)): float(e) for i, e in zip(ids, self.per_particle)}
        else:
            d["per_particle"] = [float(e) for e in self.per_particle]
        return d

    def to_json(self, ids=None):
        return json.dumps(self.to_dict(ids), sort_keys=True)


# ---------------------------------------------------------------------------
# Neighbor lists


@dataclass
class NeighborList:
    center: np.ndarray    # (m,) index of the center particle
    other: np.ndarray     # (m,) index of the neighbor particle
    disp: np.ndarray      # (m, 3) neighbor position (with image shift) minus center position
    dist: np.ndarray


def _canonical(center, other, disp):
    n = int(max(center.max(), other.max())) + 1 if len(center) else 1
    key = center.astype(np.int64) * n + other
    order = np.argsort(key, kind="stable")
    if np.any(np.diff(key[order]) == 0):
        # Several periodic images of one partner: break ties by displacement.
        order = np.lexsort((disp[:, 2], disp[:, 1], disp[:, 0], other, center))
    center, other, disp = center[order], other[order], disp[order]
    return NeighborList(center, other, disp, np.linalg.norm(disp, axis=1))


def _scatter(n, idx, vec):
    """Row sums of vec grouped by idx, like np.add.at but vectorized per component."""
    return np.stack([np.bincount(idx, weights=vec[:, k], minlength=n) for k in range(3)], axis=1)


def _image_shifts(cell, reach):
    inv = np.linalg.inv(cell)
    # |n| along axis i is bounded by reach times the norm of the i-th column of inv(cell).
    bounds = np.ceil(reach * np.linalg.norm(inv, axis=0)).astype(int)
    axes = [np.arange(-b, b + 1) for b in bounds]
    shifts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    return shifts


def neighbor_list(config: Configuration, r_cut: float) -> NeighborList:
    """All ordered pairs (i, j) with 0 < |disp| <= r_cut, in canonical order."""
    pos = config.positions
    n = len(pos)
    if n == 0:
        z = np.zeros(0, dtype=np.int64)
        return NeighborList(z, z, np.zeros((0, 3)), np.zeros(0))
    if not config.periodic:
        tree = cKDTree(pos)
        close = tree.query_pairs(OVERLAP, output_type="ndarray")
        if len(close):
            i, j = close[0]
            raise SingularConfigurationError(f"particles {config.ids[i]} and {config.ids[j]} overlap")
        pairs = tree.query_pairs(r_cut, output_type="ndarray")
        if len(pairs) == 0:
            z = np.zeros(0, dtype=np.int64)
            return NeighborList(z, z, np.zeros((0, 3)), np.zeros(0))
        i = np.concatenate([pairs[:, 0], pairs[:, 1]])
        j = np.concatenate([pairs[:, 1], pairs[:, 0]])
        return _canonical(i, j, pos[j] - pos[i])
    cell = config.cell
    frac = pos @ np.linalg.inv(cell)
    wrapped = (frac - np.floor(frac)) @ cell
    extent = np.max(np.linalg.norm(wrapped - wrapped.mean(axis=0), axis=1)) * 2
    shifts = _image_shifts(cell, r_cut + extent + 1e-9)
    images = (wrapped[None, :, :] + (shifts @ cell)[:, None, :]).reshape(-1, 3)
    owner = np.tile(np.arange(n), len(shifts))
    tree = cKDTree(images)
    hits = tree.query_ball_point(wrapped, r_cut)
    ci, oj, dv = [], [], []
    for i, h in enumerate(hits):
        h = np.asarray(h, dtype=np.int64)
        d = images[h] - wrapped[i]
        dd = np.linalg.norm(d, axis=1)
        bad = dd < OVERLAP
        self_image = bad & (owner[h] == i)
        if np.any(bad & ~self_image):
            raise SingularConfigurationError(f"particle {config.ids[i]} overlaps an image")
        keep = ~self_image
        ci.append(np.full(keep.sum(), i))
        oj.append(owner[h][keep])
        dv.append(d[keep])
    return _canonical(np.concatenate(ci), np.concatenate(oj), np.concatenate(dv))


def _triangles(nl: NeighborList, n: int):
    """Neighbor pairs (p, q) of each center with all three distances below the cutoff."""
    short = nl.dist < TRIPLE_CUTOFF
    c, o, d = nl.center[short], nl.other[short], nl.disp[short]
    if len(c) == 0:
        return c, o, o, d, d
    deg = np.bincount(c, minlength=n)
    start = np.concatenate([[0], np.cumsum(deg)[:-1]])
    dmax = int(deg.max())
    slot = np.arange(len(c)) - start[c]
    table = -np.ones((n, dmax), dtype=np.int64)
    table[c, slot] = np.arange(len(c))
    p_idx, q_idx = np.triu_indices(dmax, 1)
    a = table[:, p_idx].ravel()
    b = table[:, q_idx].ravel()
    ok = (a >= 0) & (b >= 0)
    a, b = a[ok], b[ok]
    side = np.linalg.norm(d[b] - d[a], axis=1)
    keep = side < TRIPLE_CUTOFF
    a, b = a[keep], b[keep]
    return c[a], o[a], o[b], d[a], d[b]


def _pair_tail_bound(pair: PotentialPair, n_pairs_within: int, n: int, r_cut: float, periodic_density=None):
    tail = pair.pieces[-1]
    if tail.kind != "power":
        return 0.0
    vmax = sum(abs(a) * r_cut ** (-p) for a, p in tail.coef)
    if periodic_density is None:
        missing = n * (n - 1) // 2 - n_pairs_within
        return 2.0 * max(missing, 0) * vmax
    # per motif particle: density * integral over |x| > r_cut - 1 of |V|
    total = 0.0
    for a, p in tail.coef:
        total += abs(a) * periodic_density * 4.0 * math.pi * (r_cut - 1.0) ** (3.0 - p) / (p - 3.0)
    return n * total


def _finite_pairs(config, r_cut):
    """Unordered pairs (i < j) within r_cut plus the short ordered neighbor list for triples."""
    pos = config.positions
    tree = cKDTree(pos)
    close = tree.query_pairs(OVERLAP, output_type="ndarray")
    if len(close):
        i, j = close[0]
        raise SingularConfigurationError(f"particles {config.ids[i]} and {config.ids[j]} overlap")
    pairs = tree.query_pairs(r_cut, output_type="ndarray").reshape(-1, 2)
    disp = pos[pairs[:, 1]] - pos[pairs[:, 0]]
    dist = np.linalg.norm(disp, axis=1)
    short = dist < TRIPLE_CUTOFF
    ps, ds = pairs[short], disp[short]
    nl = _canonical(np.concatenate([ps[:, 0], ps[:, 1]]), np.concatenate([ps[:, 1], ps[:, 0]]),
                    np.concatenate([ds, -ds]))
    return pairs, disp, dist, nl


def _evaluate(config, pair, triple, r_cut, want_forces):
    n = len(config)
    r_cut = pair.cutoff if r_cut is None else float(r_cut)
    per = np.zeros(n)
    grad = np.zeros((n, 3)) if want_forces else None
    magnitude = 0.0
    if config.periodic or n == 0:
        nl = neighbor_list(config, r_cut)
        n_within = len(nl.center) // 2
        n_terms = len(nl.center)
        if len(nl.center):
            v = pair(nl.dist)
            magnitude += float(np.sum(np.abs(v)))
            per += np.bincount(nl.center, weights=v, minlength=n)
            if want_forces:
                dv = pair.d1(nl.dist)
                g = (dv / nl.dist)[:, None] * nl.disp
                grad += _scatter(n, nl.other, g) - _scatter(n, nl.center, g)
    else:
        # Finite configurations: each unordered pair once, credited to both ends.
        pairs, disp, dist, nl = _finite_pairs(config, r_cut)
        n_within = len(pairs)
        n_terms = 2 * n_within
        if n_within:
            v = pair(dist)
            magnitude += 2.0 * float(np.sum(np.abs(v)))
            per += np.bincount(pairs[:, 0], weights=v, minlength=n)
            per += np.bincount(pairs[:, 1], weights=v, minlength=n)
            if want_forces:
                g = (pair.d1(dist) / dist)[:, None] * disp
                grad += 2.0 * (_scatter(n, pairs[:, 1], g) - _scatter(n, pairs[:, 0], g))
    pair_sum = 0.5 * float(np.sum(per))
    c, a, b, da, db = _triangles(nl, n)
    triple_part = np.zeros(n)
    if len(c):
        ra = np.linalg.norm(da, axis=1)
        rb = np.linalg.norm(db, axis=1)
        dab = db - da
        rab = np.linalg.norm(dab, axis=1)
        psi = triple(ra, rb, rab)
        magnitude += 2.0 * float(np.sum(np.abs(psi)))
        triple_part = 2.0 * np.bincount(c, weights=psi, minlength=n)
        if want_forces:
            gr = 2.0 * triple.gradient(ra, rb, rab)
            ga = (gr[0] / ra)[:, None] * da
            gb = (gr[1] / rb)[:, None] * db
            gab = (gr[2] / rab)[:, None] * dab
            grad += _scatter(n, c, -ga - gb) + _scatter(n, a, ga - gab) + _scatter(n, b, gb + gab)
    per = per + triple_part
    triple_sum = float(np.sum(triple_part)) / 6.0
    total = float(np.sum(per))
    if config.periodic:
        density = n / abs(np.linalg.det(config.cell))
        tail = _pair_tail_bound(pair, 0, n, r_cut, density)
    else:
        tail = _pair_tail_bound(pair, n_within, n, r_cut)
    offset = n_terms * float(pair(np.array([r_cut]))[0])
    e = EnergyBreakdown(total, pair_sum, triple_sum, per, tail, triple_part, magnitude, offset)
    return e, (None if grad is None else -grad)


def energy(config: Configuration, pair: PotentialPair, triple: PotentialTriple,
           r_cut: float | None = None) -> EnergyBreakdown:
    """Total energy with per-particle shares; periodic cells count every image."""
    return _evaluate(config, pair, triple, r_cut, False)[0]


def energy_and_forces(config, pair, triple, r_cut=None):
    return _evaluate(config, pair, triple, r_cut, True)


def forces(config: Configuration, pair: PotentialPair, triple: PotentialTriple,
           r_cut: float | None = None) -> np.ndarray:
    return _evaluate(config, pair, triple, r_cut, True)[1]


# ---------------------------------------------------------------------------
# Periodic energy


@dataclass
class PeriodicEnergy:
    total: float            # sum over the motif of per-particle energies
    per_particle: float
    relative: float | None  # per_particle - e_star when e_star is supplied
    tail_bound: float


def periodic_energy(config: Configuration, pair, triple, e_star: float | None = None,
                    r_cut: float | None = None) -> PeriodicEnergy:
    if not config.periodic:
        raise ValueError("periodic_energy needs a configuration with a cell")
    e = energy(config, pair, triple, r_cut)
    per = e.total / len(config)
    return PeriodicEnergy(e.total, per, None if e_star is None else per - e_star, e.tail_bound / len(config))


def periodic_lattice(kind: str, reps=(1, 1, 1)) -> Configuration:
    """Periodic supercell of fcc (cubic cell, 4 sites) or hcp (2-site primitive cell)."""
    kind = lattice.check_kind(kind)
    if kind == lattice.FCC:
        a = math.sqrt(2.0)
        cell = np.eye(3) * a
        motif = np.array([[0, 0, 0], [0, .5, .5], [.5, 0, .5], [.5, .5, 0]]) * a
    else:
        b = lattice.basis(kind)
        cell = b.T.copy()
        motif = lattice.motif(kind)
    reps = np.asarray(reps, dtype=int)
    shifts = np.stack(np.meshgrid(*[np.arange(r) for r in reps], indexing="ij"), -1).reshape(-1, 3)
    pos = (motif[None, :, :] + (shifts @ cell)[:, None, :]).reshape(-1, 3)
    return Configuration(pos, cell=cell * reps[:, None])


# ---------------------------------------------------------------------------
# Stored energy density and Piola-Kirchhoff stress


@lru_cache(maxsize=None)
def _sphere_rule(degree=131):
    """Lebedev nodes and weights normalized to a mean over the unit sphere."""
    x, w = lebedev_rule(degree)
    return x.T.copy(), w / w.sum()


@lru_cache(maxsize=None)
def _stored_sets(kind, radius):
    pts = lattice.generate(kind, radius).cart[1:]
    near = pts[np.linalg.norm(pts, axis=1) < TRIPLE_CUTOFF / 0.7 + 1e-9]
    i, j = np.triu_indices(len(near), 1)
    return pts, near[i], near[j]


STORED_RADIUS = 8.0


def _trust(F):
    F = np.asarray(F, float)
    if F.shape != (3, 3):
        raise TrustRegionError("deformation gradient must be 3x3")
    s = np.linalg.svd(F, compute_uv=False)
    if np.linalg.det(F) <= 0 or np.max(np.abs(s - 1.0)) > 0.3:
        raise TrustRegionError("stored energy is only trusted for det F > 0 and singular values in [0.7, 1.3]")
    return F


def stored_energy(kind: str, F, pair: PotentialPair, triple: PotentialTriple) -> float:
    """W(F) = sum_k V(|Fk|) + 2 sum over pairs {k, k'} Psi(|Fk|, |Fk'|, |F(k-k')|)."""
    F = _trust(F)
    kind = lattice.check_kind(kind)
    pts, a, b = _stored_sets(kind, STORED_RADIUS)
    w = float(np.sum(pair(np.linalg.norm(pts @ F.T, axis=1))))
    fa, fb = a @ F.T, b @ F.T
    w += 2.0 * float(np.sum(triple(np.linalg.norm(fa, axis=1), np.linalg.norm(fb, axis=1),
                                   np.linalg.norm(fb - fa, axis=1))))
    tail = pair.pieces[-1]
    if tail.kind == "power":
        # lattice points beyond the enumeration radius, replaced by a direction-averaged integral
        dirs, weights = _sphere_rule()
        stretch = np.linalg.norm(dirs @ F.T, axis=1)
        for amp, p in tail.coef:
            w += amp * math.sqrt(2.0) * 4.0 * math.pi * float(weights @ stretch ** (-p)) \
                * STORED_RADIUS ** (3.0 - p) / (p - 3.0)
    return w


def piola(kind: str, F, pair: PotentialPair, triple: PotentialTriple) -> np.ndarray:
    """dW/dF in closed form, term by term from the stored energy sum."""
    F = _trust(F)
    kind = lattice.check_kind(kind)
    pts, a, b = _stored_sets(kind, STORED_RADIUS)
    fk = pts @ F.T
    r = np.linalg.norm(fk, axis=1)
    S = ((pair.d1(r) / r)[:, None] * fk).T @ pts
    fa, fb = a @ F.T, b @ F.T
    fab = fb - fa
    ra, rb, rab = (np.linalg.norm(v, axis=1) for v in (fa, fb, fab))
    ga, gb, gab = (2.0 * g for g in triple.gradient(ra, rb, rab))
    S += ((ga / ra)[:, None] * fa).T @ a + ((gb / rb)[:, None] * fb).T @ b \
        + ((gab / rab)[:, None] * fab).T @ (b - a)
    tail = pair.pieces[-1]
    if tail.kind == "power":
        dirs, weights = _sphere_rule()
        fd = dirs @ F.T
        stretch = np.linalg.norm(fd, axis=1)
        for amp, p in tail.coef:
            scale = amp * math.sqrt(2.0) * 4.0 * math.pi * STORED_RADIUS ** (3.0 - p) / (p - 3.0)
            S += scale * ((-p * weights * stretch ** (-p - 2.0))[:, None] * fd).T @ dirs
    return S


def piola_fd(kind: str, F, pair: PotentialPair, triple: PotentialTriple, h: float = 1e-6) -> np.ndarray:
    """dW/dF by central differences with one Richardson extrapolation."""
    F = _trust(F)
    S = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            e = np.zeros((3, 3))
            e[i, j] = 1.0

            def central(step):
                return (stored_energy(kind, F + step * e, pair, triple)
                        - stored_energy(kind, F - step * e, pair, triple)) / (2.0 * step)
            S[i, j] = (4.0 * central(h / 2.0) - central(h)) / 3.0
    return S


def radial_derivative(kind, r, pair, triple):
    """d/dr W(r Id) = trace S(r Id)."""
    return float(np.trace(piola(kind, r * np.eye(3), pair, triple)))


def radial_minimizer(kind, pair, triple, lo=0.95, hi=1.05):
    """Minimizer of r -> W(r Id): bounded search, then a root of the radial derivative."""
    res = minimize_scalar(lambda r: stored_energy(kind, r * np.eye(3), pair, triple),
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    r0 = float(res.x)
    for width in (1e-6, 1e-4, 1e-2):
        a, b = max(lo, r0 - width), min(hi, r0 + width)
        ga, gb = radial_derivative(kind, a, pair, triple), radial_derivative(kind, b, pair, triple)
        if ga < 0.0 < gb:
            return float(brentq(lambda r: radial_derivative(kind, r, pair, triple), a, b, xtol=1e-15))
    return r0


def brute_force_energy(positions, pair, triple):
    """O(n^3) reference sum without neighbor lists or cutoffs (small n only)."""
    pos = np.asarray(positions, float)
    n = len(pos)
    e2 = 0.0
    e3 = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            e2 += float(pair(np.linalg.norm(pos[i] - pos[j])))
            for k in range(j + 1, n):
                e3 += float(triple(np.linalg.norm(pos[i] - pos[j]), np.linalg.norm(pos[j] - pos[k]),
                                   np.linalg.norm(pos[i] - pos[k])))
    return 2.0 * e2 + 6.0 * e3
