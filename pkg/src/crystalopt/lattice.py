"""Exact fcc/hcp point sets, shells, kissing polyhedra, units and ordered bases.

Sites carry integer coordinates (coefficients in the generating basis, plus
a motif index for hcp) so that squared distances can be compared exactly.
Nearest-neighbor distance is 1 for both lattices.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from .errors import CapacityError, UnsupportedDomainError

FCC = "fcc"
HCP = "hcp"
KINDS = (FCC, HCP)

SQRT2 = np.sqrt(2.0)
DEFAULT_SITE_CAP = 2_000_000

_FCC_BASIS = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]).T / SQRT2
_HCP_AXIS = (2.0 * SQRT2 / 3.0) * np.array([1.0, 1.0, -1.0])
_HCP_BASIS = np.column_stack([_FCC_BASIS[:, 0], _FCC_BASIS[:, 1], _HCP_AXIS])
_HCP_SHIFT = _FCC_BASIS[:, 2]

# Exact Gram matrices over the integer coordinates; hcp uses (n1, n2, n3, motif).
_F = Fraction
_GRAM = {
    FCC: [[_F(1), _F(1, 2), _F(1, 2)],
          [_F(1, 2), _F(1), _F(1, 2)],
          [_F(1, 2), _F(1, 2), _F(1)]],
    HCP: [[_F(1), _F(1, 2), _F(0), _F(1, 2)],
          [_F(1, 2), _F(1), _F(0), _F(1, 2)],
          [_F(0), _F(0), _F(8, 3), _F(4, 3)],
          [_F(1, 2), _F(1, 2), _F(4, 3), _F(1)]],
}
# Shell keys are SCALE * |p|^2, an integer for every lattice vector.
SCALE = {FCC: 2, HCP: 3}


def _integer_quadratic_form(kind):
    gram = _GRAM[kind]
    s = SCALE[kind]
    d = len(gram)
    diag = [s * gram[i][i] for i in range(d)]
    cross = {(i, j): 2 * s * gram[i][j] for i in range(d) for j in range(i + 1, d)}
    values = diag + list(cross.values())
    if any(v.denominator != 1 for v in values):
        raise AssertionError(f"shell scaling {s} is not integral for {kind}")
    mat = np.zeros((d, d), dtype=np.int64)
    for i in range(d):
        mat[i, i] = int(diag[i])
    for (i, j), v in cross.items():
        mat[i, j] = int(v)
    return mat


_QFORM = {k: _integer_quadratic_form(k) for k in KINDS}


def check_kind(kind: str) -> str:
    k = str(kind).lower()
    if k not in KINDS:
        raise ValueError(f"unknown lattice kind {kind!r}")
    return k


def basis(kind: str) -> np.ndarray:
    """Generating basis as columns (fcc: b1,b2,b3; hcp: b1,b2,axis)."""
    return (_FCC_BASIS if check_kind(kind) == FCC else _HCP_BASIS).copy()


def motif(kind: str) -> np.ndarray:
    if check_kind(kind) == FCC:
        return np.zeros((1, 3))
    return np.vstack([np.zeros(3), _HCP_SHIFT])


def cartesian(kind: str, ints) -> np.ndarray:
    ints = np.atleast_2d(np.asarray(ints, dtype=np.int64))
    kind = check_kind(kind)
    pos = ints[:, :3] @ basis(kind).T
    if kind == HCP:
        pos = pos + ints[:, 3:4] * _HCP_SHIFT
    return pos


def shell_key(kind: str, ints) -> np.ndarray:
    """Exact integer SCALE*|p|^2 for integer coordinates (rows)."""
    ints = np.atleast_2d(np.asarray(ints, dtype=np.int64))
    q = _QFORM[check_kind(kind)]
    return np.einsum("ni,ij,nj->n", ints, q, ints)


@dataclass
class SiteSet:
    """Lattice sites in deterministic order with integer and cartesian coordinates."""

    kind: str
    ints: np.ndarray
    cart: np.ndarray

    def __len__(self):
        return len(self.cart)

    def index(self):
        return {tuple(int(v) for v in row): i for i, row in enumerate(self.ints)}


def _coefficient_ranges(kind, center, radius):
    binv = np.linalg.inv(basis(kind))
    row_norms = np.linalg.norm(binv, axis=1)
    c = binv @ np.asarray(center, dtype=float)
    reach = row_norms * (radius + 1.0) + 2.0
    lo = np.floor(c - reach).astype(int)
    hi = np.ceil(c + reach).astype(int)
    return lo, hi


def generate(kind: str, radius: float, center=(0.0, 0.0, 0.0),
             cap: int = DEFAULT_SITE_CAP) -> SiteSet:
    """All sites with |x - center| <= radius (closed ball).

    Order: squared distance from the center, then integer coordinates
    lexicographically.
    """
    kind = check_kind(kind)
    radius = float(radius)
    center = np.asarray(center, dtype=float)
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    density = SQRT2  # sites per unit volume for both close packings
    estimate = density * 4.0 / 3.0 * np.pi * (radius + 1.0) ** 3
    if estimate > cap:
        raise CapacityError(f"ball of radius {radius} holds ~{estimate:.0f} sites > cap {cap}")
    lo, hi = _coefficient_ranges(kind, center, radius)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    if kind == HCP:
        grid = np.vstack([np.column_stack([grid, np.zeros(len(grid), int)]),
                          np.column_stack([grid, np.ones(len(grid), int)])])
    pos = cartesian(kind, grid)
    d2 = np.sum((pos - center) ** 2, axis=1)
    keep = d2 <= radius * radius + 1e-9 * max(1.0, radius * radius)
    grid, pos, d2 = grid[keep], pos[keep], d2[keep]
    if len(grid) > cap:
        raise CapacityError(f"{len(grid)} sites exceed cap {cap}")
    if not np.any(center):
        primary = shell_key(kind, grid).astype(float)
    else:
        primary = np.round(d2 * SCALE[kind], 9)
    order = np.lexsort(tuple(grid[:, j] for j in reversed(range(grid.shape[1]))) + (primary,))
    return SiteSet(kind, grid[order].astype(np.int64), pos[order])


@dataclass
class ShellTable:
    """Coordination shells keyed by the exact integer SCALE*|p|^2."""

    kind: str
    counts: dict = field(default_factory=dict)

    @property
    def keys(self):
        return sorted(self.counts)

    def radius(self, key: int) -> float:
        return float(np.sqrt(key / SCALE[self.kind]))

    @property
    def radii(self) -> np.ndarray:
        return np.array([self.radius(k) for k in self.keys])

    @property
    def multiplicities(self) -> np.ndarray:
        return np.array([self.counts[k] for k in self.keys])

    def count(self, distance: float) -> int:
        key = int(round(distance * distance * SCALE[self.kind]))
        if abs(self.radius(key) - distance) > 1e-9:
            return 0
        return self.counts.get(key, 0)


def shells(kind: str, r_max: float) -> ShellTable:
    kind = check_kind(kind)
    sites = generate(kind, r_max)
    keys = shell_key(kind, sites.ints)
    keys = keys[keys > 0]
    uniq, cnt = np.unique(keys, return_counts=True)
    return ShellTable(kind, {int(k): int(c) for k, c in zip(uniq, cnt)})


def lattice_distances(kind: str, r_max: float) -> np.ndarray:
    """Distinct positive distances up to r_max, computed by enumeration."""
    return shells(kind, r_max).radii


# ---------------------------------------------------------------------------
# Kissing polyhedra


@dataclass
class Polyhedron:
    name: str
    vertices: np.ndarray
    edges: list
    triangles: list
    squares: list


def _unit_graph(vertices, tol=1e-9):
    n = len(vertices)
    edges = [(i, j) for i, j in itertools.combinations(range(n), 2)
             if abs(np.linalg.norm(vertices[i] - vertices[j]) - 1.0) <= tol]
    return edges


def contact_cycles(n, edges):
    """Triangles and chordless 4-cycles of a small graph, as sorted tuples."""
    adj = {i: set() for i in range(n)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    triangles = [c for c in itertools.combinations(range(n), 3)
                 if c[1] in adj[c[0]] and c[2] in adj[c[0]] and c[2] in adj[c[1]]]
    squares = []
    for c in itertools.combinations(range(n), 4):
        deg = [sum(1 for b in c if b in adj[a]) for a in c]
        if all(d == 2 for d in deg):
            squares.append(c)
    return triangles, squares


def _polyhedron(name, vertices):
    edges = _unit_graph(vertices)
    tri, sq = contact_cycles(len(vertices), edges)
    return Polyhedron(name, vertices, edges, tri, sq)


@lru_cache(maxsize=None)
def _kissing():
    co = generate(FCC, 1.0).cart[1:]
    tco = generate(HCP, 1.0).cart[1:]
    octa = np.array([[0, 0, 0], [1, 1, 0], [1, -1, 0],
                     [1, 0, 1], [1, 0, -1], [2, 0, 0]], dtype=float) / SQRT2
    return {"co": _polyhedron("co", co), "tco": _polyhedron("tco", tco),
            "o": _polyhedron("o", octa)}


def kissing_polyhedra() -> dict:
    """Cuboctahedron ('co'), twisted cuboctahedron ('tco') and unit octahedron ('o')."""
    k = _kissing()
    return {name: Polyhedron(p.name, p.vertices.copy(), list(p.edges),
                             list(p.triangles), list(p.squares)) for name, p in k.items()}


# ---------------------------------------------------------------------------
# Units and simplices

TET_VOLUME = SQRT2 / 12.0
OCT_VOLUME = SQRT2 / 3.0


@dataclass(frozen=True)
class OctahedralDomain:
    """The scaled octahedron scale * conv(Q_o) in fcc."""

    scale: int

    @property
    def center(self):
        return np.array([self.scale / SQRT2, 0.0, 0.0])

    @property
    def volume(self):
        return OCT_VOLUME * self.scale ** 3

    def contains(self, pts, tol=1e-9):
        pts = np.atleast_2d(pts)
        return np.sum(np.abs(pts - self.center), axis=1) <= self.scale / SQRT2 + tol


@dataclass
class Unit:
    kind: str          # "tet" or "oct"
    vertices: tuple    # site indices

    @property
    def volume(self):
        return TET_VOLUME if self.kind == "tet" else OCT_VOLUME


@dataclass
class UnitDecomposition:
    sites: SiteSet
    units: list
    simplices: np.ndarray        # (m, 4, 3) corner positions
    simplex_unit: np.ndarray     # owning unit index per simplex
    simplex_nodes: np.ndarray    # (m, 4) node ids; -1 - u marks the center of octahedron u

    @property
    def volume(self) -> float:
        return float(sum(u.volume for u in self.units))

    def octahedron_centers(self):
        return {i: self.sites.cart[list(u.vertices)].mean(axis=0)
                for i, u in enumerate(self.units) if u.kind == "oct"}


def _units_of(points):
    """Tetrahedra (4-cliques at distance 1) and octahedra in a point set."""
    tree = cKDTree(points)
    pairs = tree.query_pairs(np.sqrt(2.0) + 1e-6, output_type="ndarray")
    d = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
    unit_pairs = pairs[np.abs(d - 1.0) < 1e-6]
    diag_pairs = pairs[np.abs(d - SQRT2) < 1e-6]
    adj = [set() for _ in range(len(points))]
    for i, j in unit_pairs:
        adj[i].add(int(j))
        adj[j].add(int(i))
    tets = set()
    for i, j in unit_pairs:
        common = adj[i] & adj[j]
        for k, l in itertools.combinations(sorted(common), 2):
            if l in adj[k]:
                tets.add(tuple(sorted((int(i), int(j), k, l))))
    octs = set()
    for i, j in diag_pairs:
        common = adj[i] & adj[j]
        if len(common) == 4:
            octs.add(tuple(sorted((int(i), int(j)) + tuple(common))))
    return sorted(tets), sorted(octs)


def decompose_units(kind: str, domain) -> UnitDecomposition:
    """Tile a domain by lattice tetrahedra and octahedra.

    `domain` is an OctahedralDomain (fcc only) or a SiteSet; for a site set
    only units with all vertices present are returned.
    """
    kind = check_kind(kind)
    if isinstance(domain, OctahedralDomain):
        if kind != FCC:
            raise UnsupportedDomainError("scaled octahedral domains are fcc-only")
        if int(domain.scale) != domain.scale or domain.scale < 1:
            raise UnsupportedDomainError("octahedral domain needs a positive integer scale")
        ball = generate(FCC, domain.scale / SQRT2 + 1e-9, center=domain.center)
        keep = domain.contains(ball.cart)
        sites = SiteSet(FCC, ball.ints[keep], ball.cart[keep])
    elif isinstance(domain, SiteSet):
        sites = domain
    else:
        raise UnsupportedDomainError(f"cannot decompose domain of type {type(domain).__name__}")
    tets, octs = _units_of(sites.cart)
    units = [Unit("tet", t) for t in tets] + [Unit("oct", o) for o in octs]
    simplices, owner, nodes = [], [], []
    pos = sites.cart
    for ui, u in enumerate(units):
        verts = list(u.vertices)
        if u.kind == "tet":
            simplices.append(pos[verts])
            owner.append(ui)
            nodes.append(verts)
            continue
        center = pos[verts].mean(axis=0)
        for face in itertools.combinations(verts, 3):
            p = pos[list(face)]
            if np.all(np.abs(np.linalg.norm(p[[0, 0, 1]] - p[[1, 2, 2]], axis=1) - 1.0) < 1e-6):
                simplices.append(np.vstack([center, p]))
                owner.append(ui)
                nodes.append([-1 - ui] + list(face))
    return UnitDecomposition(sites, units,
                             np.array(simplices).reshape(-1, 4, 3),
                             np.array(owner, dtype=np.int64),
                             np.array(nodes, dtype=np.int64).reshape(-1, 4))


def simplex_volumes(simplices: np.ndarray) -> np.ndarray:
    edges = simplices[:, 1:, :] - simplices[:, :1, :]
    return np.abs(np.linalg.det(edges)) / 6.0


def locate_in_simplices(simplices: np.ndarray, points: np.ndarray, margin: float = 0.0):
    """Boolean matrix (points x simplices): point strictly inside by `margin`."""
    edges = simplices[:, 1:, :] - simplices[:, :1, :]
    inv = np.linalg.inv(np.transpose(edges, (0, 2, 1)))
    rel = points[:, None, :] - simplices[None, :, 0, :]
    lam = np.einsum("sij,psj->psi", inv, rel)
    lam0 = 1.0 - lam.sum(axis=2)
    return np.all(lam > margin, axis=2) & (lam0 > margin)


# ---------------------------------------------------------------------------
# Point group and bases


def reflection(v) -> np.ndarray:
    """Householder reflection Id - 2 v v^T for a unit vector v."""
    v = np.asarray(v, dtype=float)
    if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError("reflection needs a unit 3-vector")
    return np.eye(3) - 2.0 * np.outer(v, v)


@lru_cache(maxsize=None)
def _point_group(kind):
    # hcp site symmetries are cubic operations fixing the stacking axis, or those
    # composed with the mirror across the close-packed plane.
    pts = generate(kind, 3.0).cart
    tree = cKDTree(pts)
    mirror = reflection(_HCP_AXIS / np.linalg.norm(_HCP_AXIS))
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            g = np.zeros((3, 3))
            g[range(3), perm] = signs
            for h in (g, mirror @ g):
                d, _ = tree.query(pts @ h.T)
                if d.max() < 1e-9 and not any(np.allclose(h, o) for o in out):
                    out.append(h)
    out.sort(key=lambda m: (not np.allclose(m, np.eye(3)), tuple(np.round(m.ravel(), 9))))
    return np.array(out)


def point_group(kind: str) -> np.ndarray:
    """Orthogonal maps fixing the site at the origin and the lattice around it; identity first."""
    return _point_group(check_kind(kind)).copy()


@lru_cache(maxsize=None)
def _unit_vectors():
    s = generate(FCC, 1.0)
    return s.ints[1:].copy(), s.cart[1:].copy()


def unit_vectors() -> np.ndarray:
    """The 12 nearest-neighbor vectors of fcc in deterministic order."""
    return _unit_vectors()[1].copy()


@lru_cache(maxsize=None)
def _bases():
    ints, cart = _unit_vectors()
    out = []
    for i, j, k in itertools.permutations(range(len(ints)), 3):
        m = np.array([ints[i], ints[j], ints[k]])
        if round(np.linalg.det(m.astype(float))) != 0:
            out.append(np.column_stack([cart[i], cart[j], cart[k]]))
    return np.array(out)


def enumerate_bases() -> np.ndarray:
    """All ordered triples of unit fcc vectors with nonzero determinant.

    Returned as an array of shape (n, 3, 3) whose matrices hold the vectors
    as columns.
    """
    return _bases().copy()
