"""Reference configurations: lattice flood-fill, piecewise-affine interpolation, rigidity."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import lattice
from .errors import EmbeddingError, UnsupportedDomainError
from .topology import CO, TCO, SiteClassification, kabsch_rotations

FROBENIUS, OPERATOR = "frobenius", "operator"


# ---------------------------------------------------------------------------
# Matrix distances to SO(3)


def _signed_singular_values(F):
    s = np.linalg.svd(np.asarray(F, float), compute_uv=False)
    if np.linalg.det(F) < 0:
        s = s.copy()
        s[-1] = -s[-1]
    return s


def dist_so3(F, norm: str = FROBENIUS) -> float:
    """Distance from F to SO(3).

    The smallest singular value is negated when det F < 0, which gives the
    exact Frobenius distance.  The operator variant applies the same signed
    values, so for det F < 0 it is an upper bound rather than the exact
    operator-norm distance.
    """
    s = _signed_singular_values(F)
    if norm == FROBENIUS:
        return float(np.sqrt(np.sum((s - 1.0) ** 2)))
    if norm == OPERATOR:
        return float(np.max(np.abs(s - 1.0)))
    raise ValueError(f"unknown norm {norm!r}")


def polar_rotation(F) -> np.ndarray:
    """Nearest rotation to F in the Frobenius norm."""
    u, _, vt = np.linalg.svd(np.asarray(F, float))
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _aligning_rotation(a, b):
    """Smallest rotation taking unit vector a to unit vector b."""
    c = float(np.dot(a, b))
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        perp = np.cross(a, np.eye(3)[np.argmin(np.abs(a))])
        perp /= np.linalg.norm(perp)
        return 2.0 * np.outer(perp, perp) - np.eye(3)
    k = axis / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


BOUND_CONSTANT = 66.0


def constrained_rotation(F, v):
    """A rotation G with G v/|v| = F v/|F v|, built from the polar factor of F.

    Returns (G, bound_ok) where bound_ok tests |F - G|^2 <= 66 dist^2(F, SO(3)).
    """
    F = np.asarray(F, float)
    v = np.asarray(v, float)
    fv = F @ v
    if np.linalg.norm(v) == 0.0 or np.linalg.norm(fv) == 0.0:
        raise ValueError("constrained_rotation needs F v != 0")
    S = polar_rotation(F)
    T = _aligning_rotation(S @ v / np.linalg.norm(v), fv / np.linalg.norm(fv))
    G = T @ S
    lhs = float(np.sum((F - G) ** 2))
    return G, lhs <= BOUND_CONSTANT * dist_so3(F) ** 2 + 1e-14


# ---------------------------------------------------------------------------
# Unit energies


def _unit_vertices(kind):
    if kind == "tet":
        return np.array([[0, 0, 0], [0, 1, 1], [1, 0, 1], [1, 1, 0]], float) / math.sqrt(2.0)
    if kind == "oct":
        return lattice.kissing_polyhedra()["o"].vertices
    raise ValueError("unit kind is 'tet' or 'oct'")


def _unit_edges(pts):
    return [(a, b) for a, b in itertools.combinations(range(len(pts)), 2)
            if abs(np.linalg.norm(pts[a] - pts[b]) - 1.0) < 1e-9]


def w_tau(vertices, values) -> float:
    """Sum over unit-length vertex pairs of (|u(eta) - u(eta')| - 1)^2."""
    vertices = np.asarray(vertices, float)
    values = np.asarray(values, float)
    if values.shape != vertices.shape:
        raise ValueError("one value per unit vertex is required")
    return float(sum((np.linalg.norm(values[a] - values[b]) - 1.0) ** 2
                     for a, b in _unit_edges(vertices)))


def w_tau_hessian(kind: str) -> np.ndarray:
    """Hessian of W_tau at the identity, blocks 2 n n^T per unit edge."""
    pts = _unit_vertices(kind)
    n = len(pts)
    H = np.zeros((3 * n, 3 * n))
    for a, b in _unit_edges(pts):
        e = pts[b] - pts[a]
        blk = 2.0 * np.outer(e, e)
        for p, q, sgn in ((a, a, 1), (b, b, 1), (a, b, -1), (b, a, -1)):
            H[3 * p:3 * p + 3, 3 * q:3 * q + 3] += sgn * blk
    return H


def w_tau_hessian_spectrum(kind: str) -> dict:
    """{eigenvalue: multiplicity}, eigenvalues rounded to 1e-8."""
    ev = np.linalg.eigvalsh(w_tau_hessian(kind))
    out = {}
    for x in np.round(ev, 8) + 0.0:
        out[float(x)] = out.get(float(x), 0) + 1
    return out


def rigid_motion_kernel(kind: str) -> np.ndarray:
    """Orthonormal basis of the translations and infinitesimal rotations of a unit."""
    pts = _unit_vertices(kind)
    cols = []
    for i in range(3):
        t = np.zeros_like(pts)
        t[:, i] = 1.0
        cols.append(t.ravel())
        w = np.zeros(3)
        w[i] = 1.0
        cols.append(np.cross(w, pts).ravel())
    q, _ = np.linalg.qr(np.array(cols).T)
    return q


# ---------------------------------------------------------------------------
# Interpolation


def interpolation_gradients(decomp: lattice.UnitDecomposition, values: np.ndarray):
    """Deformation gradient per simplex of the piecewise-affine interpolant.

    `values` holds u at every domain site (NaN rows mark unknown sites).
    Octahedron centers take the mean of the six vertex values.  Simplices
    touching an unknown value get NaN gradients.
    """
    values = np.asarray(values, float)
    node_vals = np.empty(decomp.simplex_nodes.shape + (3,))
    for s, nodes in enumerate(decomp.simplex_nodes):
        for c, node in enumerate(nodes):
            if node >= 0:
                node_vals[s, c] = values[node]
            else:
                verts = list(decomp.units[-1 - node].vertices)
                node_vals[s, c] = values[verts].mean(axis=0)
    ref_edges = decomp.simplices[:, 1:, :] - decomp.simplices[:, :1, :]
    if np.any(np.abs(np.linalg.det(ref_edges)) < 1e-12):
        raise EmbeddingError("degenerate simplex in the unit decomposition")
    cur_edges = node_vals[:, 1:, :] - node_vals[:, :1, :]
    # F E^T = U^T with E, U holding edge vectors as rows.
    return np.einsum("sji,sjk->sik", cur_edges, np.linalg.inv(np.transpose(ref_edges, (0, 2, 1))))


# ---------------------------------------------------------------------------
# Flood-fill growth


@dataclass
class ReferenceConfiguration:
    kind: str
    scale: int | None
    seed: int                      # particle id at the anchor site
    domain: lattice.UnitDecomposition   # sites relative to the anchor site
    site_to_particle: np.ndarray   # particle index per domain site, -1 where not grown
    values: np.ndarray             # u at each domain site, NaN where not grown
    gradients: np.ndarray          # per simplex, NaN where a corner is missing
    partial: bool
    boundary: list = field(default_factory=list)   # human-readable growth-limit notes
    ids: np.ndarray | None = None

    @property
    def grown(self) -> np.ndarray:
        return self.site_to_particle >= 0

    @property
    def complete_simplices(self) -> np.ndarray:
        return ~np.any(np.isnan(self.gradients), axis=(1, 2))

    @property
    def phi(self) -> dict:
        out = {}
        for k in np.nonzero(self.grown)[0]:
            out[tuple(int(v) for v in self.domain.sites.ints[k])] = int(self.ids[self.site_to_particle[k]])
        return out

    def octahedron_center_values(self) -> dict:
        out = {}
        for u, unit in enumerate(self.domain.units):
            if unit.kind == "oct":
                verts = list(unit.vertices)
                ref = self.domain.sites.cart[verts].mean(axis=0)
                out[tuple(np.round(ref, 12))] = self.values[verts].mean(axis=0)
        return out

    def max_orientation_distance(self) -> float:
        ok = self.complete_simplices
        if not np.any(ok):
            return float("nan")
        return max(dist_so3(F, OPERATOR) for F in self.gradients[ok])

    def to_json(self) -> str:
        ok = self.complete_simplices
        doc = {
            "kind": self.kind, "scale": self.scale, "seed": self.seed, "partial": self.partial,
            "boundary": self.boundary,
            "sites": self.domain.sites.ints.tolist(),
            "phi": [[list(k), v] for k, v in sorted(self.phi.items())],
            "gradients": [g.tolist() for g in self.gradients[ok]],
        }
        return json.dumps(doc, sort_keys=True)


ACCEPT_FACTOR = 3.0


def _domain_for(kind, r):
    if kind == CO:
        s = int(math.ceil(2.5 * r + 3.0 - 1e-12))
        dom = lattice.OctahedralDomain(s)
        dec = lattice.decompose_units(lattice.FCC, dom)
        d = np.linalg.norm(dec.sites.cart - dom.center, axis=1)
        anchor = int(np.lexsort((np.arange(len(d)), np.round(d, 9)))[0])
        return s, dec, anchor
    star = lattice.generate(lattice.HCP, 1.0)
    return None, lattice.decompose_units(lattice.HCP, star), 0


def _shift(dec, anchor):
    base_c = dec.sites.cart[anchor].copy()
    base_i = dec.sites.ints[anchor].copy()
    # hcp stars are anchored at the origin, so subtracting integer coordinates is exact for both kinds.
    sites = lattice.SiteSet(dec.sites.kind, dec.sites.ints - base_i, dec.sites.cart - base_c)
    return lattice.UnitDecomposition(sites, dec.units, dec.simplices - base_c,
                                     dec.simplex_unit, dec.simplex_nodes)


def _defect_distance(cls: SiteClassification, i):
    bad = cls.defect
    if len(bad) == 0:
        return math.inf
    return float(np.min(np.linalg.norm(cls.config.positions[bad] - cls.config.positions[i], axis=1)))


def grow_reference(classification: SiteClassification, seed: int, r: float,
                   accept: float | None = None) -> ReferenceConfiguration:
    """Grow Phi from the registered star of `seed` by breadth-first lattice extension.

    A CO seed grows over the octahedral domain of scale ceil(5r/2 + 3); a TCO
    seed yields its local hcp star only.  Sites without a particle within
    `accept` (default 3 alpha) of the predicted position stay ungrown and are
    listed in the boundary report.
    """
    cls = classification
    config = cls.config
    if config.periodic:
        raise UnsupportedDomainError("reference growth is implemented for finite configurations")
    hit = np.nonzero(config.ids == seed)[0]
    if len(hit) == 0:
        raise KeyError(f"unknown particle id {seed}")
    i0 = int(hit[0])
    label = cls.labels[i0]
    if label not in (CO, TCO):
        raise EmbeddingError(f"seed {seed} is {label}, not a regular site")
    graph = cls.graph
    tol = ACCEPT_FACTOR * cls.alpha if accept is None else float(accept)
    boundary = []
    clearance = _defect_distance(cls, i0)
    if clearance < 2.0 * r + 3.0:
        boundary.append(f"defect set within {clearance:.6g} of the seed (< 2r + 3 = {2 * r + 3:.6g})")

    scale, dec, anchor = _domain_for(label, r)
    dec = _shift(dec, anchor)
    pts = dec.sites.cart
    n_sites = len(pts)
    lat_pairs = cKDTree(pts).query_pairs(1.0 + 1e-6, output_type="ndarray")
    lat_adj = [[] for _ in range(n_sites)]
    for a, b in lat_pairs:
        lat_adj[a].append(int(b))
        lat_adj[b].append(int(a))

    phi = -np.ones(n_sites, dtype=np.int64)
    phi[0 if label == TCO else _site_index(pts, np.zeros(3))] = i0
    reg = cls.registration[i0]
    nbr = graph.neighbors(i0)
    tmpl = lattice.generate(lattice.FCC if label == CO else lattice.HCP, 1.0).cart[1:]
    for k, v in enumerate(tmpl):
        phi[_site_index(pts, v)] = nbr[reg.correspondence[k]]

    y = config.positions
    tree = cKDTree(y)
    failed = set()
    while True:
        mapped = phi >= 0
        frontier = [s for s in range(n_sites)
                    if not mapped[s] and s not in failed and any(mapped[t] for t in lat_adj[s])]
        if not frontier:
            break
        chosen = {}
        for s in frontier:
            nominees = set()
            for m in lat_adj[s]:
                if not mapped[m]:
                    continue
                star = [t for t in lat_adj[m] if mapped[t]]
                if len(star) < 2:
                    continue
                src = pts[star] - pts[m]
                if np.linalg.matrix_rank(src, tol=1e-6) < 2:
                    continue
                R = kabsch_rotations(src, y[phi[star]] - y[phi[m]])
                pred = y[phi[m]] + R @ (pts[s] - pts[m])
                d, j = tree.query(pred)
                if d <= tol:
                    nominees.add(int(j))
            if len(nominees) > 1:
                raise EmbeddingError(f"site {dec.sites.ints[s].tolist()}: predecessors nominate "
                                     f"different particles {sorted(config.ids[list(nominees)].tolist())}")
            if not nominees:
                failed.add(s)
                continue
            chosen[s] = nominees.pop()
        taken = {}
        for s in sorted(chosen):
            j = chosen[s]
            if j in taken or j in set(phi[phi >= 0].tolist()):
                raise EmbeddingError(f"site {dec.sites.ints[s].tolist()}: particle {config.ids[j]} "
                                     "is already assigned to another site")
            taken[j] = s
            phi[s] = j
    if failed:
        boundary.append(f"{len(failed)} domain sites without a particle within {tol:.6g} of prediction")
    _check_bonds(graph, pts, phi, lat_pairs)

    values = np.full((n_sites, 3), np.nan)
    values[phi >= 0] = y[phi[phi >= 0]]
    grads = interpolation_gradients(dec, values)
    return ReferenceConfiguration(
        lattice.FCC if label == CO else lattice.HCP, scale, int(seed), dec, phi, values, grads,
        partial=bool(boundary), boundary=boundary, ids=config.ids.copy())


def _site_index(pts, v):
    d = np.linalg.norm(pts - v, axis=1)
    k = int(np.argmin(d))
    if d[k] > 1e-9:
        raise EmbeddingError("registration star leaves the lattice domain")
    return k


def _check_bonds(graph, pts, phi, lat_pairs):
    """Mapped sites are at lattice distance 1 exactly when their particles are bonded."""
    mapped = np.nonzero(phi >= 0)[0]
    owner = {int(phi[s]): int(s) for s in mapped}
    unit = {(int(a), int(b)) for a, b in lat_pairs if phi[a] >= 0 and phi[b] >= 0}
    bonded = set()
    for s in mapped:
        for j in graph.neighbors(int(phi[s])):
            t = owner.get(int(j))
            if t is not None:
                bonded.add((min(s, t), max(s, t)))
    extra = bonded - unit
    missing = unit - bonded
    if extra or missing:
        s, t = sorted(extra or missing)[0]
        raise EmbeddingError(f"bond structure differs from the lattice between domain sites "
                             f"{pts[s].round(6).tolist()} and {pts[t].round(6).tolist()}")


def deformation_gradients(ref: ReferenceConfiguration) -> np.ndarray:
    return ref.gradients


# ---------------------------------------------------------------------------
# Rigidity


@dataclass
class RigidityReport:
    best_rotation: np.ndarray
    l2_deviation_sq: float
    bond_distortion_sq: float
    ratio: float
    sup_distortion: float

    def to_dict(self):
        return {"best_rotation": self.best_rotation.tolist(), "l2_deviation_sq": self.l2_deviation_sq,
                "bond_distortion_sq": self.bond_distortion_sq, "ratio": self.ratio,
                "sup_distortion": self.sup_distortion}


def rigidity_report(ref: ReferenceConfiguration, graph, max_pairs: int = 100_000,
                    seed: int = 0) -> RigidityReport:
    """Global rigidity diagnostics of a grown reference configuration.

    Bond distortion sums over ordered bonds with both ends in Phi(Omega).
    """
    ok = ref.complete_simplices
    if not np.any(ok):
        raise EmbeddingError("reference configuration has no complete simplex")
    F = ref.gradients[ok]
    w = lattice.simplex_volumes(ref.domain.simplices[ok])
    R = polar_rotation(np.einsum("s,sij->ij", w, F))
    l2 = float(np.sum(w * np.sum((F - R) ** 2, axis=(1, 2))))

    inside = set(ref.site_to_particle[ref.grown].tolist())
    y = graph.config.positions
    bond = 0.0
    for a, b in graph.pairs:
        if int(a) in inside and int(b) in inside:
            bond += (np.linalg.norm(y[b] - y[a]) - 1.0) ** 2

    idx = np.nonzero(ref.grown)[0]
    if (ref.scale or 0) <= 6 or len(idx) * (len(idx) - 1) // 2 <= max_pairs:
        a, b = np.triu_indices(len(idx), 1)
    else:
        rng = np.random.default_rng(seed)
        a = rng.integers(0, len(idx), max_pairs)
        b = rng.integers(0, len(idx), max_pairs)
        keep = a != b
        a, b = a[keep], b[keep]
    eta = ref.domain.sites.cart[idx]
    u = ref.values[idx]
    ratio_d = np.linalg.norm(u[b] - u[a], axis=1) / np.linalg.norm(eta[b] - eta[a], axis=1)
    sup = float(np.max(np.abs(ratio_d - 1.0))) if len(a) else 0.0
    return RigidityReport(R, l2, float(bond), l2 / max(bond, 1e-300), sup)
