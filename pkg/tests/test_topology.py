import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from crystalopt import lattice, topology as topo
from crystalopt.configuration import Configuration
from crystalopt.errors import ClassificationError

ALPHA = 0.05


def ball(kind, r, scale=1.0):
    return Configuration(lattice.generate(kind, r).cart * scale)


def brute_bonds(pos, alpha):
    """Oracle: ordered bonds from the full distance matrix."""
    d = np.linalg.norm(pos[:, None] - pos[None], axis=2)
    np.fill_diagonal(d, np.inf)
    i, j = np.nonzero(np.abs(d - 1.0) <= alpha)
    return set(zip(i.tolist(), j.tolist()))


def interior(config, depth):
    r = np.linalg.norm(config.positions, axis=1)
    return r <= r.max() - depth


def test_bond_graph_matches_distance_matrix_oracle():
    rng = np.random.default_rng(0)
    base = lattice.generate(lattice.FCC, 2.5).cart
    pos = base + 0.02 * rng.standard_normal(base.shape)
    g = topo.bond_graph(Configuration(pos), ALPHA)
    assert g.edges == brute_bonds(pos, ALPHA)
    assert {(b, a) for a, b in g.edges} == g.edges


def test_bond_threshold_is_closed():
    g = topo.bond_graph(Configuration([[0, 0, 0], [1 + ALPHA, 0, 0], [0, 1 - ALPHA, 0]]), ALPHA)
    assert g.n_bonds() == 2


def test_bond_graph_rejects_bad_alpha():
    with pytest.raises(ValueError):
        topo.bond_graph(Configuration([[0, 0, 0]]), 1.5)


@pytest.mark.parametrize("kind,label", [(lattice.FCC, topo.CO), (lattice.HCP, topo.TCO)])
def test_perfect_lattice_interiors_are_classified(kind, label):
    cfg = ball(kind, 4.0)
    cls = topo.classify(cfg, topo.bond_graph(cfg, ALPHA))
    inner = interior(cfg, 1.5)
    assert set(cls.labels[inner]) == {label}
    # Surface sites miss neighbors, so they are defects.
    assert np.all(cls.labels[np.linalg.norm(cfg.positions, axis=1) > 3.5] == topo.DEFECT)
    assert max(r.deviation for r in cls.registration.values()) < 1e-9


def test_vacancy_neighbors_become_defects():
    cfg = ball(lattice.FCC, 4.0)
    cut = cfg.without(0)
    cls = topo.classify(cut, topo.bond_graph(cut, ALPHA))
    first_shell = np.abs(np.linalg.norm(cut.positions, axis=1) - 1.0) < 1e-9
    assert np.all(cls.labels[first_shell] == topo.DEFECT)
    assert np.all(cls.degree[first_shell] == 11)
    second = np.abs(np.linalg.norm(cut.positions, axis=1) - np.sqrt(2)) < 1e-9
    assert np.all(cls.labels[second] == topo.CO)


@given(seed=st.integers(0, 10_000))
def test_classification_is_invariant_under_rigid_motions_and_relabeling(seed):
    rng = np.random.default_rng(seed)
    base = lattice.generate(lattice.HCP if seed % 2 else lattice.FCC, 3.0).cart
    pos = base + 0.01 * rng.standard_normal(base.shape)
    ids = rng.permutation(len(pos)) + 100
    cfg = Configuration(pos, ids)
    rot = Rotation.random(random_state=seed).as_matrix()
    perm = rng.permutation(len(pos))
    moved = Configuration(pos[perm] @ rot.T + rng.normal(size=3), ids[perm])
    a = topo.classify(cfg, topo.bond_graph(cfg, ALPHA)).classes
    b = topo.classify(moved, topo.bond_graph(moved, ALPHA)).classes
    assert a == b


@pytest.mark.parametrize("name,order", [(topo.CO, 48), (topo.TCO, 12)])
def test_template_automorphism_groups(name, order):
    t = topo.template(name)
    assert len(t.automorphisms) == order
    edges = {frozenset(e) for e in t.graph.edges}
    for perm in t.automorphisms:
        assert {frozenset((perm[a], perm[b])) for a, b in t.graph.edges} == edges


def test_kabsch_recovers_a_known_rotation():
    rng = np.random.default_rng(3)
    src = rng.standard_normal((12, 3))
    rot = Rotation.random(random_state=4).as_matrix()
    np.testing.assert_allclose(topo.kabsch_rotations(src, src @ rot.T), rot, atol=1e-12)


def test_register_picks_the_matching_template():
    co = topo.template(topo.CO).vertices
    rot = Rotation.random(random_state=9).as_matrix()
    cloud = co @ rot.T
    edges = topo._cloud_edges(cloud, ALPHA)
    reg = topo.register(cloud, edges, topo.CO)
    assert reg.deviation < 1e-12
    assert topo.register(cloud, edges, topo.TCO) is None


def test_set_deviation_of_a_rotated_copy_is_zero():
    co = topo.template(topo.CO).vertices
    rot = Rotation.random(random_state=1).as_matrix()
    dev = topo.set_deviation(co, co @ rot.T)
    assert dev.lower == 0.0
    assert dev.upper < 1e-9


def test_set_deviation_between_templates():
    co = topo.template(topo.CO).vertices
    tco = topo.template(topo.TCO).vertices
    dev = topo.set_deviation(co, tco)
    # Frozen: the polished optimum agrees with 1/sqrt(7) to rounding.
    assert dev.upper == pytest.approx(1 / np.sqrt(7), abs=1e-9)
    assert dev.lower > 0.25
    moved = co @ dev.rotation.T
    attained = np.linalg.norm(moved[:, None] - tco[None], axis=2).min(axis=1).max()
    assert attained == pytest.approx(dev.upper, abs=1e-12)
    # Independent route: no sampled rotation may beat the certified lower bound.
    rots = Rotation.random(20_000, random_state=0).as_matrix()
    sampled = np.linalg.norm(np.einsum("rij,nj->rni", rots, co)[:, :, None] - tco[None, None],
                             axis=3).min(axis=2).max(axis=1)
    assert sampled.min() >= dev.lower
    assert sampled.min() >= dev.upper - 1e-9


def test_strict_mode_raises_on_a_regular_misfit():
    co = topo.template(topo.CO).vertices
    cfg = Configuration(np.vstack([[0, 0, 0], co * 1.02]))
    with pytest.raises(ClassificationError):
        topo.classify(cfg, topo.bond_graph(cfg, ALPHA), eps_max=1e-3, strict=True)
    relaxed = topo.classify(cfg, topo.bond_graph(cfg, ALPHA), eps_max=1e-3)
    assert relaxed.labels[0] == topo.DEFECT


def test_second_neighbors_of_a_deep_fcc_site():
    cfg = ball(lattice.FCC, 4.0)
    cls = topo.classify(cfg, topo.bond_graph(cfg, ALPHA))
    n2 = topo.second_neighbors(cls, 0)
    r = np.linalg.norm(cfg.positions[np.searchsorted(cfg.ids, n2)], axis=1)
    assert len(n2) == 6
    np.testing.assert_allclose(r, np.sqrt(2))


def test_second_neighbors_need_a_regular_neighborhood():
    cfg = ball(lattice.FCC, 2.0)
    cls = topo.classify(cfg, topo.bond_graph(cfg, ALPHA))
    with pytest.raises(ClassificationError):
        topo.second_neighbors(cls, int(cfg.ids[-1]))


@pytest.mark.parametrize("kind", lattice.KINDS)
def test_count_relations_hold_on_balls(kind):
    cfg = ball(kind, 3.5)
    g = topo.bond_graph(cfg, ALPHA)
    rel = topo.count_relations(g, topo.classify(cfg, g))
    assert rel["holds"]
    assert rel["ordered_bonds"] == len(brute_bonds(cfg.positions, ALPHA))


def test_neighborhood_edges_of_an_interior_site():
    cfg = ball(lattice.FCC, 3.0)
    g = topo.bond_graph(cfg, ALPHA)
    assert len(topo.neighborhood_edges(g, 0)) == 48


def test_triangles_count_on_the_kissing_cluster():
    co = topo.template(topo.CO).vertices
    cfg = Configuration(np.vstack([[0, 0, 0], co]))
    # 24 triangles through the center plus the 8 faces of the cuboctahedron.
    assert len(topo.triangles(topo.bond_graph(cfg, ALPHA))) == 32
