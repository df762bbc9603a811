"""Admissible lattice paths, their weights, centers and reflections, and the pair sets.

Paths live on the fcc lattice and are stored as tuples of integer
coordinates in the fcc basis, so equality and hashing are exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import lattice
from .errors import PathError

MEDIUM = (math.sqrt(2.0), math.sqrt(8.0 / 3.0), math.sqrt(3.0))
LONG_CAP = 4.0       # longest label-path length used for pair sets
PATH_CAP = 8.0       # longest endpoint accepted by path enumeration
CLEARANCE_FACTOR = 10.0

_B = lattice.basis(lattice.FCC)
_BINV = np.linalg.inv(_B)


def to_cart(ints) -> np.ndarray:
    return np.asarray(ints, float) @ _B.T


def to_ints(cart) -> np.ndarray:
    x = np.asarray(cart, float) @ _BINV.T
    r = np.round(x)
    if np.max(np.abs(x - r), initial=0.0) > 1e-8:
        raise PathError("point is not an fcc lattice site")
    return r.astype(np.int64)


@lru_cache(maxsize=None)
def _unit_ints():
    return tuple(tuple(int(a) for a in row) for row in to_ints(lattice.unit_vectors()))


@lru_cache(maxsize=None)
def _basis_ints():
    """All ordered bases as integer column triples (n, 3, 3), and their inverses."""
    cart = lattice.enumerate_bases()
    ints = np.round(np.einsum("ij,njk->nik", _BINV, cart)).astype(np.int64)
    return ints, np.linalg.inv(ints.astype(float))


def n_bases() -> int:
    return len(_basis_ints()[0])


def weight_denominator() -> int:
    """Number of bases that reach a generic endpoint: one sign choice per column."""
    return n_bases() // 8


# ---------------------------------------------------------------------------
# Paths


@dataclass(frozen=True)
class Path:
    sites: tuple          # tuple of integer triples
    raw_weight: float     # number of containing bases / (#bases / 8)
    weight: float         # raw weight, renormalized per endpoint for medium lengths

    @property
    def k(self) -> np.ndarray:
        return to_cart(self.sites[-1]) - to_cart(self.sites[0])

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.k))

    @property
    def steps(self) -> tuple:
        s = np.diff(np.array(self.sites), axis=0)
        return tuple(tuple(int(a) for a in row) for row in s)

    def corners(self) -> np.ndarray:
        pts = np.array(self.sites)
        keep = [0]
        st = self.steps
        for j in range(1, len(st)):
            if st[j] != st[j - 1]:
                keep.append(j)
        keep.append(len(pts) - 1)
        return to_cart(pts[keep])

    def to_dict(self):
        z, rho = path_center(self)
        return {"sites": [list(s) for s in self.sites], "weight": self.weight,
                "raw_weight": self.raw_weight, "k": self.k.tolist(), "zeta": z.tolist(), "rho": rho}


def _walk(start, steps_per_column, columns):
    seq = [tuple(start)]
    cur = np.array(start)
    for c, col in zip(steps_per_column, columns):
        for _ in range(int(c)):
            cur = cur + col
            seq.append(tuple(int(a) for a in cur))
    return tuple(seq)


def _containing(k_ints):
    """Bases whose nonnegative integer span contains k, with their coefficients."""
    B, Binv = _basis_ints()
    c = Binv @ np.asarray(k_ints, float)
    r = np.round(c)
    ok = np.all(np.abs(c - r) < 1e-9, axis=1) & np.all(r > -0.5, axis=1)
    return B[ok], r[ok].astype(np.int64)


def basis_count(sites) -> int:
    """#{B : the path is the basis path of B to its endpoint}."""
    sites = tuple(tuple(s) for s in sites)
    k = np.array(sites[-1]) - np.array(sites[0])
    Bs, cs = _containing(k)
    return sum(1 for B, c in zip(Bs, cs) if _walk(sites[0], c, B.T) == sites)


def raw_weight(sites) -> float:
    return basis_count(sites) / weight_denominator()


def is_generic(k_ints) -> bool:
    """No basis reaching k does so with a vanishing coefficient."""
    _, cs = _containing(k_ints)
    return len(cs) > 0 and bool(np.all(cs > 0))


def _medium_paths(k_ints):
    k = np.asarray(k_ints)
    units = np.array(_unit_ints())
    out = []
    for v in units:
        if np.linalg.norm(to_cart(k - v)) > 1.0 + 1e-9 or np.linalg.norm(to_cart(k - v)) < 1.0 - 1e-9:
            continue
        out.append(((0, 0, 0), tuple(int(a) for a in v), tuple(int(a) for a in k)))
    return sorted(out)


def enumerate_paths(k_ints, renormalize: bool = True, cap: float = PATH_CAP) -> list:
    """All admissible paths from 0 to k, sorted by site sequence.

    Lengths sqrt(2) and sqrt(3) give the two-step unit paths; longer
    endpoints give the deduplicated basis paths.  `renormalize` rescales the
    medium-length weights to sum to one per endpoint; raw weights are kept.
    """
    k_ints = tuple(int(a) for a in k_ints)
    lam = float(np.linalg.norm(to_cart(k_ints)))
    if lam > cap + 1e-9:
        raise PathError(f"|k| = {lam:.6g} exceeds the enumeration cap {cap}")
    if lam < math.sqrt(2.0) - 1e-9:
        raise PathError(f"|k| = {lam:.6g} is not an admissible path length")
    if lam <= math.sqrt(3.0) + 1e-9:
        seqs = _medium_paths(k_ints)
        if not seqs:
            raise PathError(f"|k| = {lam:.6g} is not an admissible path length")
        raw = [raw_weight(s) for s in seqs]
        total = sum(raw)
        w = [x / total for x in raw] if renormalize else raw
        return [Path(s, r, x) for s, r, x in zip(seqs, raw, w)]
    Bs, cs = _containing(k_ints)
    counts = {}
    for B, c in zip(Bs, cs):
        seq = _walk((0, 0, 0), c, B.T)
        counts[seq] = counts.get(seq, 0) + 1
    d = weight_denominator()
    return [Path(s, n / d, n / d) for s, n in sorted(counts.items())]


def paths_of_length(lam: float, renormalize: bool = True) -> list:
    """Every admissible path starting at 0 with |k| = lam."""
    out = []
    for ints, cart in zip(*_sites_within(lam + 1e-9)):
        if abs(np.linalg.norm(cart) - lam) < 1e-9:
            out.extend(enumerate_paths(ints, renormalize))
    return out


@lru_cache(maxsize=None)
def _sites_cached(r):
    s = lattice.generate(lattice.FCC, r)
    return s.ints, s.cart


def _sites_within(r):
    return _sites_cached(round(r, 9))


@dataclass
class NormalizationResult:
    k: tuple
    total: float
    generic: bool


def normalization_check(k_ints, cap: float = PATH_CAP) -> NormalizationResult:
    """Sum of raw weights over paths 0 -> k, for |k| > sqrt(3)."""
    k_ints = tuple(int(a) for a in k_ints)
    if np.linalg.norm(to_cart(k_ints)) <= math.sqrt(3.0) + 1e-9:
        raise PathError("normalization is defined for |k| > sqrt(3)")
    paths = enumerate_paths(k_ints, cap=cap)
    return NormalizationResult(k_ints, math.fsum(p.raw_weight for p in paths), is_generic(k_ints))


# ---------------------------------------------------------------------------
# Centers and reflections


def path_center(path: Path):
    """(zeta, rho): circumcenter of the segment end points within their affine span."""
    c = path.corners()
    if len(path.sites) < 2:
        raise PathError("a path needs at least one step")
    E = c[1:] - c[0]
    t = np.linalg.solve(2.0 * E @ E.T, np.sum(E * E, axis=1))
    zeta = c[0] + t @ E
    rho = float(np.max(np.linalg.norm(to_cart(np.array(path.sites)) - zeta, axis=1)))
    return zeta, rho


def _check_unit(v_ints):
    v = tuple(int(a) for a in v_ints)
    if v not in _unit_ints():
        raise PathError(f"{v} is not a unit fcc vector")
    return v


def reflect_sites(sites, v_ints) -> tuple:
    """kappa_v on a site sequence: reflect through the v-segment midpoint and reverse."""
    v = _check_unit(v_ints)
    sites = tuple(tuple(s) for s in sites)
    steps = [tuple(int(a) for a in np.subtract(sites[j + 1], sites[j])) for j in range(len(sites) - 1)]
    hits = [j for j, s in enumerate(steps) if s == v]
    if not hits:
        return sites
    if any(b - a != 1 for a, b in zip(hits, hits[1:])):
        raise PathError("a path may contain at most one segment along v")
    vc = to_cart(v)
    eta = 0.5 * (to_cart(sites[hits[0]]) + to_cart(sites[hits[-1] + 1]))
    pts = to_cart(np.array(sites[::-1]))
    refl = eta + (pts - eta) - 2.0 * np.outer((pts - eta) @ vc, vc)
    return tuple(tuple(int(a) for a in row) for row in to_ints(refl))


def reflect(path: Path, v_ints) -> Path:
    sites = reflect_sites(path.sites, v_ints)
    if sites == path.sites:
        return path
    raw = raw_weight(sites)
    scale = path.weight / path.raw_weight if path.raw_weight else 1.0
    return Path(sites, raw, raw * scale)


def orbit(path: Path) -> list:
    """Closure of a path under all reflections kappa_v, sorted by site sequence."""
    seen = {path.sites: path}
    todo = [path]
    while todo:
        p = todo.pop()
        for v in _unit_ints():
            q = reflect(p, v)
            if q.sites not in seen:
                seen[q.sites] = q
                todo.append(q)
    return [seen[s] for s in sorted(seen)]


# ---------------------------------------------------------------------------
# Basis coefficients


def a_coefficient(k, v, B) -> float:
    """Coefficient of k along v in the basis B (columns); 0 when v is not a column."""
    B = np.asarray(B, float)
    v = np.asarray(v, float)
    cols = [i for i in range(3) if np.allclose(B[:, i], v, atol=1e-12)]
    if not cols:
        return 0.0
    return float(np.linalg.solve(B, np.asarray(k, float))[cols[0]])


def lattice_lengths(r_max: float) -> np.ndarray:
    return lattice.shells(lattice.FCC, r_max).radii


def lemma_lambda_check(lam: float, B, v):
    """(sum over |k| = lam of a_k(v, B) (k . v), m(lam) lam^2 / 3)."""
    ints, cart = _sites_within(lam + 1e-9)
    shell = cart[np.abs(np.linalg.norm(cart, axis=1) - lam) < 1e-9]
    if len(shell) == 0:
        raise PathError(f"{lam} is not an fcc lattice distance")
    B = np.asarray(B, float)
    v = np.asarray(v, float)
    cols = [i for i in range(3) if np.allclose(B[:, i], v, atol=1e-12)]
    if not cols:
        raise PathError("v must be a column of B")
    coef = np.linalg.solve(B, shell.T)[cols[0]]
    lhs = float(np.sum(coef * (shell @ v)))
    return lhs, len(shell) * lam * lam / 3.0


# ---------------------------------------------------------------------------
# Pair sets


@dataclass
class PairSets:
    """Ordered particle-index pairs per length class.

    `medium` holds the neighborhood-based sets for the medium lengths,
    `starred` the label-path sets, and `classes` the disjoint assignment used
    for energy bookkeeping (bonds first, then medium, then long lengths).
    """

    n: int
    bonds: np.ndarray
    medium: dict = field(default_factory=dict)      # length -> (m, 2) array
    starred: dict = field(default_factory=dict)     # length -> (m, 2) array
    path_weight: dict = field(default_factory=dict)  # (i, j) -> summed label-path weight
    classes: dict = field(default_factory=dict)     # length -> (m, 2) array, disjoint
    conflicts: int = 0

    def lengths(self):
        return sorted(self.classes)

    def regular_pairs(self) -> set:
        out = set()
        for arr in self.classes.values():
            out.update(map(tuple, arr.tolist()))
        return out

    def check_disjoint(self):
        seen = {}
        for lam, arr in self.starred.items():
            for p in map(tuple, arr.tolist()):
                if p in seen and seen[p] != lam:
                    raise AssertionError(f"pair {p} is starred at two lengths")
                seen[p] = lam
        seen = {}
        for lam, arr in self.classes.items():
            for p in map(tuple, arr.tolist()):
                if p in seen:
                    raise AssertionError(f"pair {p} assigned twice")
                seen[p] = lam

    def counts(self) -> dict:
        return {repr(float(k)): int(len(v)) for k, v in sorted(self.classes.items())}


def _pairs_array(pairs):
    return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


def medium_pairs(classification) -> dict:
    """Pairs inside one fully regular neighborhood, keyed by their template distance."""
    from .topology import template
    out = {lam: set() for lam in MEDIUM}
    graph = classification.graph
    for i in sorted(classification.second):
        reg = classification.registration[i]
        t = template(reg.template).vertices
        members = graph.neighbors(i)[reg.correspondence]
        d = np.linalg.norm(t[:, None, :] - t[None, :, :], axis=2)
        for lam in MEDIUM:
            a, b = np.nonzero(np.abs(d - lam) < 1e-9)
            out[lam].update(zip(members[a].tolist(), members[b].tolist()))
    return {lam: _pairs_array(p) for lam, p in out.items()}


def _starred_pairs(classification, lengths, clearance_factor):
    """Label-path pairs from reference configurations seeded at well-separated CO sites."""
    from .embed import grow_reference
    cls = classification
    y = cls.config.positions
    bad = cls.defect
    if len(bad):
        from scipy.spatial import cKDTree
        clearance = cKDTree(y[bad]).query(y)[0]
    else:
        clearance = np.full(len(y), np.inf)
    lam_min = min(lengths)
    starred = {lam: set() for lam in lengths}
    weight = {}
    seeds = [int(i) for i in cls.xco if clearance[i] >= clearance_factor * lam_min]
    if not seeds:
        return {lam: _pairs_array(()) for lam in lengths}, weight
    templates = {lam: paths_of_length(lam) for lam in lengths}
    r = max(lengths)
    for i in seeds:
        ref = grow_reference(cls, int(cls.config.ids[i]), r)
        if ref.partial:
            continue
        dom = lattice.OctahedralDomain(ref.scale)
        center = dom.center - _anchor_offset(ref.scale)
        h = ref.scale / math.sqrt(2.0)
        site_of = {tuple(row): k for k, row in enumerate(ref.domain.sites.ints.tolist())}
        origin = site_of[(0, 0, 0)]
        for lam, plist in templates.items():
            if clearance[i] < clearance_factor * lam:
                continue
            for p in plist:
                zeta, _ = path_center(p)
                if (h - np.sum(np.abs(zeta - center))) / math.sqrt(3.0) < 2.0 * lam - 1e-12:
                    continue
                end = site_of.get(tuple(p.sites[-1]))
                if end is None or ref.site_to_particle[end] < 0:
                    continue
                j = int(ref.site_to_particle[end])
                if clearance[j] < clearance_factor * lam:
                    continue
                a = int(ref.site_to_particle[origin])
                starred[lam].add((a, j))
                weight[(a, j)] = weight.get((a, j), 0.0) + p.weight
    return {lam: _pairs_array(p) for lam, p in starred.items()}, weight


def _anchor_offset(scale):
    dom = lattice.OctahedralDomain(scale)
    pts = lattice.generate(lattice.FCC, scale / math.sqrt(2.0) + 1e-9, center=dom.center).cart
    d = np.linalg.norm(pts - dom.center, axis=1)
    return pts[int(np.lexsort((np.arange(len(d)), np.round(d, 9)))[0])]


def pair_sets(classification, long_cap: float = LONG_CAP,
              clearance_factor: float = CLEARANCE_FACTOR) -> PairSets:
    """Bonds, medium neighborhood pairs and label-path pairs as disjoint classes."""
    graph = classification.graph
    n = len(classification.config)
    bonds = _pairs_array(map(tuple, graph.pairs.tolist()))
    med = medium_pairs(classification)
    lengths = [float(x) for x in lattice_lengths(long_cap + 1e-9) if x > 1.0 + 1e-9]
    starred, weight = _starred_pairs(classification, lengths, clearance_factor)
    out = PairSets(n, bonds, med, starred, weight)
    taken = set(map(tuple, bonds.tolist()))
    out.classes[1.0] = bonds
    conflicts = 0
    for lam in MEDIUM:
        cand = [p for p in map(tuple, med[lam].tolist())]
        keep = [p for p in cand if p not in taken]
        conflicts += len(cand) - len(keep)
        taken.update(keep)
        out.classes[lam] = _pairs_array(keep)
    for lam in lengths:
        if any(abs(lam - m) < 1e-9 for m in MEDIUM):
            continue
        cand = list(map(tuple, starred[lam].tolist()))
        keep = [p for p in cand if p not in taken]
        conflicts += len(cand) - len(keep)
        taken.update(keep)
        out.classes[lam] = _pairs_array(keep)
    out.conflicts = conflicts
    out.check_disjoint()
    return out


def write_paths_jsonl(paths, fh):
    for p in paths:
        fh.write(json.dumps(p.to_dict(), sort_keys=True) + "\n")
