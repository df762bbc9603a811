"""Bond graph, local neighborhoods and the CO / TCO / DEFECT site partition.

A site is regular when it has 12 bonded neighbors spanning 24 bonds among
themselves.  Regular sites are registered against the cuboctahedron and the
twisted cuboctahedron: the contact graph fixes the candidate vertex
correspondences and an optimal rotation scores each one by its largest
vertex deviation.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import networkx as nx
import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from . import lattice
from .configuration import Configuration, write_xyz
from .energy import neighbor_list
from .errors import ClassificationError

log = logging.getLogger(__name__)

DEFECT, CO, TCO = "DEFECT", "CO", "TCO"
TEMPLATES = (CO, TCO)
EDGE_TOL = 1e-12      # absorbs rounding at the closed threshold | |d| - 1 | <= alpha


@dataclass
class BondGraph:
    """Edges of the bond graph as sorted ordered index pairs, plus per-particle stars."""

    config: Configuration
    alpha: float
    pairs: np.ndarray          # (m, 2) ordered index pairs, both directions present
    disp: np.ndarray           # (m, 3) displacement from pairs[:, 0] to pairs[:, 1]
    start: np.ndarray          # CSR offsets into pairs for each center index

    def star(self, i: int):
        """(neighbor indices, displacement vectors) of particle index i."""
        lo, hi = self.start[i], self.start[i + 1]
        return self.pairs[lo:hi, 1], self.disp[lo:hi]

    def degree(self) -> np.ndarray:
        return np.diff(self.start)

    def neighbors(self, i: int) -> np.ndarray:
        return self.star(i)[0]

    @property
    def edges(self) -> set:
        ids = self.config.ids
        return {(int(ids[a]), int(ids[b])) for a, b in self.pairs}

    @property
    def adjacency(self) -> dict:
        ids = self.config.ids
        out = {}
        for i in range(len(self.config)):
            out[int(ids[i])] = tuple(sorted({int(ids[j]) for j in self.neighbors(i)}))
        return out

    def n_bonds(self) -> int:
        """Number of unordered bonds (#S / 2 in ordered-pair counting)."""
        return len(self.pairs) // 2


def bond_graph(config: Configuration, alpha: float) -> BondGraph:
    """Pairs whose distance lies in the closed interval [1 - alpha, 1 + alpha]."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    nl = neighbor_list(config, 1.0 + alpha + 1e-9)
    keep = np.abs(nl.dist - 1.0) <= alpha + EDGE_TOL
    c, o, d = nl.center[keep], nl.other[keep], nl.disp[keep]
    start = np.concatenate([[0], np.cumsum(np.bincount(c, minlength=len(config)))])
    return BondGraph(config, float(alpha), np.column_stack([c, o]), d, start)


def _cloud_edges(cloud: np.ndarray, alpha: float):
    d = np.linalg.norm(cloud[:, None, :] - cloud[None, :, :], axis=2)
    i, j = np.nonzero(np.triu(np.abs(d - 1.0) <= alpha + EDGE_TOL, 1))
    return list(zip(i.tolist(), j.tolist()))


def neighborhood_edges(graph: BondGraph, x: int) -> set:
    """A(x): ordered bonds with both ends in N(x), as pairs of particle ids.

    `x` is a particle id.  Periodic images are resolved by the displacement
    vectors, so a bond between two images of the same particle is kept.
    """
    i = _index_of(graph.config, x)
    nbr, cloud = graph.star(i)
    ids = graph.config.ids
    out = set()
    for a, b in _cloud_edges(cloud, graph.alpha):
        out.add((int(ids[nbr[a]]), int(ids[nbr[b]])))
        out.add((int(ids[nbr[b]]), int(ids[nbr[a]])))
    return out


def triangles(graph: BondGraph) -> np.ndarray:
    """Unordered neighboring triples (i < j < k, all three pairs bonded) as index rows."""
    adj = [set(graph.neighbors(i).tolist()) for i in range(len(graph.config))]
    out = set()
    for i, j in graph.pairs:
        if i < j:
            for k in adj[i] & adj[j]:
                if k > j:
                    out.add((int(i), int(j), int(k)))
    return np.array(sorted(out), dtype=np.int64).reshape(-1, 3)


def _index_of(config, x):
    hit = np.nonzero(config.ids == x)[0]
    if len(hit) == 0:
        raise KeyError(f"unknown particle id {x}")
    return int(hit[0])


# ---------------------------------------------------------------------------
# Templates


@dataclass(frozen=True)
class Template:
    name: str
    vertices: np.ndarray
    graph: nx.Graph
    automorphisms: np.ndarray    # (g, 12) vertex permutations preserving the contact graph
    squares: tuple
    signature: tuple


@lru_cache(maxsize=None)
def template(name: str) -> Template:
    polys = lattice.kissing_polyhedra()
    poly = polys["co" if name == CO else "tco"]
    g = nx.Graph()
    g.add_nodes_from(range(len(poly.vertices)))
    g.add_edges_from(poly.edges)
    autos = sorted(tuple(m[i] for i in range(len(poly.vertices)))
                   for m in nx.algorithms.isomorphism.GraphMatcher(g, g).isomorphisms_iter())
    return Template(name, poly.vertices, g, np.array(autos, dtype=np.int64), tuple(poly.squares),
                    _signature(len(poly.vertices), poly.edges))


def _signature(n, edges):
    """Closed-walk counts per vertex; a necessary condition for isomorphism, cheap to compare."""
    a = np.zeros((n, n), dtype=np.int64)
    for i, j in edges:
        a[i, j] = a[j, i] = 1
    out, p = [], a
    for _ in range(5):
        p = p @ a
        out.append(tuple(np.sort(np.diag(p)).tolist()))
    return tuple(out)


def kabsch_rotations(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Proper rotations R minimizing sum |R src_i - dst_i|^2; batched over a leading axis."""
    h = np.einsum("...ni,...nj->...ij", src, dst)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(np.einsum("...ji,...kj->...ik", vt, u)))
    d = np.where(d == 0, 1.0, d)
    corr = np.ones(h.shape[:-2] + (3,))
    corr[..., 2] = d
    return np.einsum("...ji,...j,...kj->...ik", vt, corr, u)


@dataclass
class Registration:
    template: str
    rotation: np.ndarray       # maps template vertices onto the neighbor cloud
    deviation: float           # largest vertex deviation after rotation
    correspondence: np.ndarray # neighbor slot matched to each template vertex


def register(cloud: np.ndarray, cloud_edges, name: str) -> Registration | None:
    """Best rotation over all contact-graph isomorphisms, or None if the graphs differ."""
    t = template(name)
    if _signature(len(cloud), cloud_edges) != t.signature:
        return None
    g = nx.Graph()
    g.add_nodes_from(range(len(cloud)))
    g.add_edges_from(cloud_edges)
    matcher = nx.algorithms.isomorphism.GraphMatcher(t.graph, g)
    if not matcher.is_isomorphic():
        return None
    base = matcher.mapping
    phi = np.array([base[i] for i in range(len(cloud))], dtype=np.int64)
    perms = phi[t.automorphisms]
    targets = cloud[perms]
    src = np.broadcast_to(t.vertices, targets.shape)
    rots = kabsch_rotations(src, targets)
    fitted = np.einsum("aij,nj->ani", rots, t.vertices)
    dev = np.max(np.linalg.norm(fitted - targets, axis=2), axis=1)
    best = int(np.argmin(dev))
    return Registration(name, rots[best], float(dev[best]), perms[best])


@dataclass
class SetDeviation:
    lower: float            # certified: no rotation does better
    upper: float            # attained by `rotation`
    rotation: np.ndarray


def _max_min_distance(rots, a, b):
    moved = np.einsum("rij,nj->rni", rots, a)
    # |Ra|^2 + |b|^2 - 2 Ra.b; the clip guards rounding below zero.
    d2 = (np.sum(a * a, axis=1)[None, :, None] + np.sum(b * b, axis=1)[None, None, :]
          - 2.0 * moved @ b.T)
    return np.sqrt(np.clip(d2.min(axis=2), 0.0, None)).max(axis=1)


def set_deviation(a: np.ndarray, b: np.ndarray, grid_step: float = 0.12, refine: int = 16) -> SetDeviation:
    """Bounds on min over proper rotations R of max_i min_j |R a_i - b_j|.

    The objective is evaluated on a cubic grid of rotation vectors covering
    the ball of radius pi.  Moving the rotation vector by t turns R by at
    most t in operator norm, so the objective changes by at most t max|a_i|;
    the grid minimum minus half a grid diagonal times max|a_i| is a lower
    bound.  The best grid points are polished by Nelder-Mead for the upper
    bound.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    axis = np.arange(-math.pi, math.pi + grid_step, grid_step)
    vecs = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1).reshape(-1, 3)
    vecs = vecs[np.linalg.norm(vecs, axis=1) <= math.pi + grid_step * math.sqrt(3.0)]
    vals = np.concatenate([_max_min_distance(Rotation.from_rotvec(chunk).as_matrix(), a, b)
                           for chunk in np.array_split(vecs, max(1, len(vecs) // 20_000))])
    reach = float(np.max(np.linalg.norm(a, axis=1)))
    lower = max(0.0, float(vals.min()) - 0.5 * grid_step * math.sqrt(3.0) * reach)

    def objective(v):
        return float(_max_min_distance(Rotation.from_rotvec(v).as_matrix()[None], a, b)[0])

    best_v, best = vecs[int(np.argmin(vals))], float(vals.min())
    for k in np.argsort(vals)[:refine]:
        res = minimize(objective, vecs[k], method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
        if res.fun < best:
            best_v, best = res.x, float(res.fun)
    return SetDeviation(lower, best, Rotation.from_rotvec(best_v).as_matrix())


# ---------------------------------------------------------------------------
# Classification


@dataclass
class SiteClassification:
    """Per-index labels; sets hold particle indices into the configuration."""

    config: Configuration
    alpha: float
    eps_max: float
    labels: np.ndarray                       # object array of DEFECT / CO / TCO
    degree: np.ndarray
    half_edges: np.ndarray                   # #A(x) / 2
    registration: dict = field(default_factory=dict)    # index -> Registration
    second: dict = field(default_factory=dict)          # index -> sorted index array
    graph: BondGraph | None = None

    @property
    def x12(self) -> np.ndarray:
        return np.nonzero(self.degree == 12)[0]

    @property
    def xreg(self) -> np.ndarray:
        return np.nonzero((self.degree == 12) & (self.half_edges == 24))[0]

    @property
    def xco(self) -> np.ndarray:
        return np.nonzero(self.labels == CO)[0]

    @property
    def xtco(self) -> np.ndarray:
        return np.nonzero(self.labels == TCO)[0]

    @property
    def defect(self) -> np.ndarray:
        """The defect set: every particle that is not CO."""
        return np.nonzero(self.labels != CO)[0]

    @property
    def xreg2(self) -> np.ndarray:
        return np.array(sorted(self.second), dtype=np.int64)

    @property
    def classes(self) -> dict:
        return {int(i): str(c) for i, c in zip(self.config.ids, self.labels)}

    def check_partition(self):
        ids = set(range(len(self.labels)))
        co, tco = set(self.xco.tolist()), set(self.xtco.tolist())
        reg, x12 = set(self.xreg.tolist()), set(self.x12.tolist())
        assert not co & tco
        assert co | tco <= reg <= x12
        assert set(self.defect.tolist()) == ids - co
        assert set(self.second) <= co | tco

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "class", "degree", "half_edges", "rmsd"])
        for i in range(len(self.labels)):
            reg = self.registration.get(i)
            w.writerow([int(self.config.ids[i]), self.labels[i], int(self.degree[i]),
                        int(self.half_edges[i]), "" if reg is None else repr(reg.deviation)])
        return buf.getvalue()

    def write_xyz(self, path):
        color = {DEFECT: "red", CO: "green", TCO: "blue"}
        write_xyz(path, self.config, extra={
            "site_class": np.array(self.labels, dtype=str),
            "color": np.array([color[c] for c in self.labels], dtype=str)})


def classify(config: Configuration, graph: BondGraph, eps_max: float | None = None,
             strict: bool = False) -> SiteClassification:
    """Partition particles into CO, TCO and DEFECT.

    `eps_max` defaults to 10 * alpha.  A regular site whose best deviation
    exceeds it for both templates becomes DEFECT, or raises
    ClassificationError when `strict`.
    """
    alpha = graph.alpha
    eps = 10.0 * alpha if eps_max is None else float(eps_max)
    n = len(config)
    degree = graph.degree()
    half = np.zeros(n, dtype=np.int64)
    labels = np.full(n, DEFECT, dtype=object)
    regs = {}
    for i in np.nonzero(degree == 12)[0]:
        _, cloud = graph.star(i)
        edges = _cloud_edges(cloud, alpha)
        half[i] = len(edges)
        if len(edges) != 24:
            continue
        found = [r for r in (register(cloud, edges, name) for name in TEMPLATES) if r is not None]
        ok = [r for r in found if r.deviation <= eps]
        if not ok:
            if strict:
                raise ClassificationError(
                    f"particle {config.ids[i]} is regular but fits no template within {eps}")
            continue
        ok.sort(key=lambda r: r.deviation)
        if len(ok) == 2 and ok[0].deviation == ok[1].deviation:
            log.warning("CO/TCO tie at particle %s; labelled DEFECT", config.ids[i])
            continue
        labels[i] = ok[0].template
        regs[int(i)] = ok[0]
    out = SiteClassification(config, alpha, eps, labels, degree, half, regs, graph=graph)
    regular = set(regs)
    for i in sorted(regs):
        nbr = graph.neighbors(i)
        if all(int(j) in regular for j in nbr):
            out.second[i] = _second_neighbors(graph, i, regs[i])
    out.check_partition()
    return out


def _second_neighbors(graph, i, reg: Registration) -> np.ndarray:
    nbr = graph.neighbors(i)
    sets = [set(graph.neighbors(j).tolist()) for j in nbr]
    found = set()
    for sq in template(reg.template).squares:
        slots = reg.correspondence[list(sq)]
        common = set.intersection(*(sets[s] for s in slots))
        found |= common
    found.discard(int(i))
    return np.array(sorted(found), dtype=np.int64)


def second_neighbors(classification: SiteClassification, x: int) -> np.ndarray:
    """N^2(x) as particle ids; x must have a fully regular neighborhood."""
    i = _index_of(classification.config, x)
    if i not in classification.second:
        raise ClassificationError(f"particle {x} does not have a regular neighborhood")
    return classification.config.ids[classification.second[i]]


def count_relations(graph: BondGraph, classification: SiteClassification) -> dict:
    """Bond-count bookkeeping: m(1) n - #S against the bracket [n - #X12, 12 (n - #X12)]."""
    n = len(graph.config)
    n12 = len(classification.x12)
    s = len(graph.pairs)
    lhs = 12 * n - s
    return {"n": n, "x12": n12, "ordered_bonds": s, "lhs": lhs,
            "lower": n - n12, "upper": 12 * (n - n12),
            "holds": bool(n - n12 <= lhs <= 12 * (n - n12))}
