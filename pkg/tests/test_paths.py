import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crystalopt import lattice, paths, topology as topo
from crystalopt.configuration import Configuration
from crystalopt.errors import PathError

UNITS = [tuple(int(a) for a in u) for u in paths.to_ints(lattice.unit_vectors())]


def cartesian_bases():
    """Oracle: ordered triples of unit fcc vectors with nonzero determinant, built directly."""
    u = lattice.unit_vectors()
    return [np.column_stack([u[a], u[b], u[c]]) for a, b, c in itertools.permutations(range(12), 3)
            if abs(np.linalg.det(np.column_stack([u[a], u[b], u[c]]))) > 1e-9]


def oracle_paths(k_cart):
    """Path site sequences (Cartesian, rounded) with multiplicities, by walking every basis."""
    out = {}
    for B in cartesian_bases():
        c = np.linalg.solve(B, k_cart)
        r = np.round(c)
        if np.max(np.abs(c - r)) > 1e-9 or np.any(r < 0):
            continue
        seq, cur = [np.zeros(3)], np.zeros(3)
        for col, n in zip(B.T, r.astype(int)):
            for _ in range(n):
                cur = cur + col
                seq.append(cur)
        key = tuple(tuple(np.round(p, 9)) for p in seq)
        out[key] = out.get(key, 0) + 1
    return out


ENDPOINTS = [(1, 1, 1), (2, 0, 0), (2, 1, 0), (2, 1, 1), (3, 0, 0)]


def test_basis_counts():
    assert len(cartesian_bases()) == paths.n_bases() == 768
    assert paths.weight_denominator() == 96


@pytest.mark.parametrize("k", ENDPOINTS)
def test_enumeration_matches_basis_walk_oracle(k):
    got = {tuple(tuple(np.round(paths.to_cart(s), 9)) for s in p.sites): p.raw_weight * 96
           for p in paths.enumerate_paths(k)}
    assert got == pytest.approx(oracle_paths(paths.to_cart(k)))


def test_generic_endpoints_have_unit_total_weight():
    s = lattice.generate(lattice.FCC, 3.0 + 1e-9)
    n_generic = 0
    for ints, cart in zip(s.ints, s.cart):
        if np.linalg.norm(cart) <= math.sqrt(3) + 1e-9:
            continue
        res = paths.normalization_check(ints)
        if res.generic:
            n_generic += 1
            assert res.total == pytest.approx(1.0, abs=1e-12)
    assert n_generic > 0


def test_degenerate_endpoint_raw_sums():
    # Frozen after matching the basis-walk oracle: degenerate endpoints overcount.
    assert paths.normalization_check((2, 0, 0)).total == pytest.approx(2.875, abs=1e-12)
    assert paths.normalization_check((2, 1, 0)).total == pytest.approx(1.5625, abs=1e-12)
    assert sum(oracle_paths(paths.to_cart((2, 0, 0))).values()) / 96 == pytest.approx(2.875)


def test_normalization_requires_a_long_endpoint():
    with pytest.raises(PathError):
        paths.normalization_check((1, 1, 0))


@pytest.mark.parametrize("lam,n_paths,raw", [(math.sqrt(2), 24, 0.25), (math.sqrt(3), 48, 0.1875)])
def test_medium_length_paths(lam, n_paths, raw):
    ps = paths.paths_of_length(lam, renormalize=False)
    assert len(ps) == n_paths
    assert {p.raw_weight for p in ps} == {raw}
    totals = {}
    for p in paths.paths_of_length(lam):
        totals[p.sites[-1]] = totals.get(p.sites[-1], 0.0) + p.weight
    assert totals and all(t == pytest.approx(1.0) for t in totals.values())


def test_unit_and_oversized_lengths_are_rejected():
    with pytest.raises(PathError):
        paths.enumerate_paths((1, 0, 0))
    with pytest.raises(PathError):
        paths.enumerate_paths((9, 0, 0))


def _some_paths():
    out = []
    for lam in paths.lattice_lengths(2.5):
        if lam > 1.1:
            out.extend(paths.paths_of_length(lam))
    return out


SAMPLE = _some_paths()


@given(i=st.integers(0, len(SAMPLE) - 1), v=st.sampled_from(UNITS))
def test_reflection_properties(i, v):
    p = SAMPLE[i]
    q = paths.reflect(p, v)
    assert paths.reflect(q, v).sites == p.sites
    assert q.raw_weight == pytest.approx(p.raw_weight, abs=1e-15)
    np.testing.assert_allclose(paths.path_center(q)[0], paths.path_center(p)[0], atol=1e-10)
    assert q.length == pytest.approx(p.length)
    if v in p.steps:
        # The reflected endpoint is the mirror image of k in the line along v.
        assert np.linalg.norm(np.cross(p.k + q.k, paths.to_cart(v))) < 1e-10


def test_reflection_rejects_non_unit_vectors():
    with pytest.raises(PathError):
        paths.reflect(SAMPLE[0], (1, 1, 1))


def test_orbits_are_closed_under_reflection():
    orb = paths.orbit(SAMPLE[-1])
    sites = {p.sites for p in orb}
    for p in orb:
        for v in UNITS:
            assert paths.reflect(p, v).sites in sites


@given(i=st.integers(0, len(SAMPLE) - 1))
def test_path_radius_is_below_twice_the_length(i):
    p = SAMPLE[i]
    zeta, rho = paths.path_center(p)
    assert rho < 2 * p.length
    # Every corner is equidistant from the center.
    d = np.linalg.norm(p.corners() - zeta, axis=1)
    assert np.ptp(d) < 1e-9


@given(b=st.integers(0, 767), col=st.integers(0, 2),
       lam=st.sampled_from([float(x) for x in paths.lattice_lengths(3.0 + 1e-9)]))
def test_basis_coefficient_identity(b, col, lam):
    B = lattice.enumerate_bases()[b]
    lhs, rhs = paths.lemma_lambda_check(lam, B, B[:, col])
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_a_coefficient_is_zero_off_the_basis():
    B = lattice.enumerate_bases()[0]
    off = next(u for u in lattice.unit_vectors() if not any(np.allclose(u, c) for c in B.T))
    assert paths.a_coefficient(np.ones(3), off, B) == 0.0


def test_pair_sets_on_a_perfect_ball():
    cfg = Configuration(lattice.generate(lattice.FCC, 4.0).cart)
    cls = topo.classify(cfg, topo.bond_graph(cfg, 0.05))
    ps = paths.pair_sets(cls)
    ps.check_disjoint()
    assert ps.conflicts == 0
    y = cfg.positions
    for lam, arr in ps.classes.items():
        if len(arr):
            np.testing.assert_allclose(np.linalg.norm(y[arr[:, 1]] - y[arr[:, 0]], axis=1), lam, atol=1e-9)
    assert len(ps.classes[math.sqrt(2)]) > 0
    assert len(ps.classes[math.sqrt(3)]) > 0
    # No CO site in a radius-4 ball is 10 lattice lengths from the surface.
    assert all(len(v) == 0 for v in ps.starred.values())
