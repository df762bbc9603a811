import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crystalopt import potential
from crystalopt.errors import InfeasiblePotentialError, TuningError

ALPHA = 0.05


def brute_fcc_points(r_max):
    """Oracle: fcc from the cubic description, independent of the lattice module."""
    n = int(math.ceil(r_max * math.sqrt(2))) + 1
    pts = [(x, y, z) for x, y, z in itertools.product(range(-n, n + 1), repeat=3)
           if (x + y + z) % 2 == 0 and (x, y, z) != (0, 0, 0)]
    p = np.array(pts, float) / math.sqrt(2)
    return p[np.linalg.norm(p, axis=1) <= r_max + 1e-12]


def test_well_minimum_sits_at_unit_distance(pot):
    pair, _ = pot
    assert float(pair(1.0)) == pytest.approx(-1.0, abs=1e-15)
    assert float(pair.d1(1.0)) == pytest.approx(0.0, abs=1e-12)
    assert float(pair.d2(1.0)) > 1.0


def test_validation_statuses(pot):
    report = potential.validate(*pot)
    status = {e.id: e.status for e in report.entries}
    assert set(status) == set(potential.CONDITION_IDS)
    assert status.pop("assump:vfourprimetwo") == "repaired"
    assert set(status.values()) == {"pass"}
    assert report.ok
    assert report.continuity["value_jump"] < 1e-10
    assert report.continuity["slope_jump"] < 1e-9


def test_validation_rejects_a_coarse_grid(pot):
    with pytest.raises(ValueError):
        potential.validate(*pot, grid_step=ALPHA)


@pytest.mark.parametrize("alpha", [0.0, -0.1, 0.25])
def test_alpha_outside_range_is_rejected(alpha):
    with pytest.raises(ValueError):
        potential.build_canonical_pair(alpha)
    with pytest.raises(ValueError):
        potential.build_canonical_triple(alpha)


def test_penalty_below_two_over_alpha_is_rejected():
    with pytest.raises(ValueError):
        potential.build_canonical_triple(ALPHA, penalty_amplitude=1.0)


@pytest.mark.parametrize("alpha", [0.02, 0.1, 0.12])
def test_canonical_construction_validates_across_alpha(alpha):
    pair = potential.build_canonical_pair(alpha)
    report = potential.validate(pair, potential.build_canonical_triple(alpha))
    assert report.ok
    assert abs(potential.equilibrium_residual(pair)) <= 1e-8


@pytest.mark.parametrize("alpha", [0.15, 0.2])
def test_wide_wells_are_reported_infeasible(alpha):
    with pytest.raises(InfeasiblePotentialError) as info:
        potential.build_canonical_pair(alpha)
    assert info.value.condition == "vnorm"


def test_tuning_zeroes_the_equilibrium_residual():
    raw = potential.build_canonical_pair(ALPHA, potential.CanonicalOptions(tune=False))
    assert abs(potential.equilibrium_residual(raw)) > 1e-6
    tuned = potential.tune_equilibrium(raw)
    assert abs(potential.equilibrium_residual(tuned)) <= 1e-8
    assert tuned.tail_amplitude == pytest.approx(3.977e-4, rel=1e-3)


def test_tuning_without_a_sign_change_raises():
    raw = potential.build_canonical_pair(ALPHA, potential.CanonicalOptions(tune=False))
    with pytest.raises(TuningError):
        potential.tune_equilibrium(raw, bounds=(1.0, 2.0))


def test_tail_refit_keeps_c2_contact(pot):
    pair, _ = pot
    moved = pair.with_tail_amplitude(2e-3)
    x = potential.R_TAIL
    for order in range(3):
        left = moved.pieces[-2].eval(np.array([x]), order)[0]
        right = moved.pieces[-1].eval(np.array([x]), order)[0]
        assert left == pytest.approx(right, abs=1e-10)


def test_document_roundtrip(pot):
    pair, triple = pot
    text = potential.dumps(pair, triple)
    pair2, triple2 = potential.loads(text)
    r = np.linspace(0.5, 8.0, 997)
    np.testing.assert_array_equal(pair(r), pair2(r))
    assert triple2 == triple
    assert potential.dumps(pair2, triple2) == text


def test_zero_triple_roundtrip(pot):
    pair, _ = pot
    _, triple = potential.loads(potential.dumps(pair, potential.ZeroTriple(ALPHA)))
    assert isinstance(triple, potential.ZeroTriple)
    assert float(triple(1.0, 1.0, 1.0)) == 0.0


def test_unknown_format_version_is_rejected(pot):
    doc = pot[0].to_dict()
    doc["version"] = 99
    with pytest.raises(ValueError):
        potential.PotentialPair.from_dict(doc)


@given(st.floats(0.9, 6.5))
def test_pair_derivatives_match_central_differences(r):
    pair = _shared_pair()
    h = 1e-7
    # Stay away from breakpoints, where one-sided second derivatives may differ.
    if any(abs(r - b) < 2 * h for b in pair.breakpoints):
        return
    fd1 = (pair(r + h) - pair(r - h)) / (2 * h)
    fd2 = (pair.d1(r + h) - pair.d1(r - h)) / (2 * h)
    assert float(pair.d1(r)) == pytest.approx(float(fd1), rel=1e-6, abs=1e-6)
    assert float(pair.d2(r)) == pytest.approx(float(fd2), rel=1e-5, abs=1e-5)


@given(st.tuples(*[st.floats(0.9, 1.45)] * 3))
def test_triple_gradient_matches_central_differences(r):
    triple = potential.build_canonical_triple(ALPHA)
    r = np.array(r)
    # The penalty switches use min/max, which are not differentiable at ties.
    if np.min(np.abs(r[:, None] - r[None, :]) + np.eye(3)) < 1e-4:
        return
    g = triple.gradient(*r)
    h = 1e-7
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (triple(*(r + e)) - triple(*(r - e))) / (2 * h)
        assert g[i] == pytest.approx(float(fd), rel=1e-5, abs=1e-4)


@given(st.permutations([0.97, 1.01, 1.3]))
def test_triple_is_symmetric(perm):
    triple = potential.build_canonical_triple(ALPHA)
    assert float(triple(*perm)) == pytest.approx(float(triple(0.97, 1.01, 1.3)), abs=1e-15)


def test_triple_at_unit_triangle_and_support(pot):
    _, triple = pot
    assert float(triple(1.0, 1.0, 1.0)) == pytest.approx(-1.0, abs=1e-15)
    assert float(triple(1.0, 1.0, potential.TRIPLE_CUTOFF)) == 0.0
    assert float(triple(0.9, 1.0, 1.2)) >= 1.0 / ALPHA


def test_fcc_energy_matches_brute_force_lattice_sum(pot):
    pair, triple = pot
    r_max = 12.0
    pts = brute_fcc_points(r_max)
    d = np.linalg.norm(pts, axis=1)
    # Continuum estimate of the c r^-8 tail beyond r_max, at fcc density sqrt 2.
    beyond = math.sqrt(2) * 4 * math.pi * pair.tail_amplitude * r_max ** -5 / 5
    pair_part = float(np.sum(pair(d))) + beyond
    near = pts[d < potential.TRIPLE_CUTOFF]
    three = 0.0
    for i, j in itertools.combinations(range(len(near)), 2):
        three += float(triple(np.linalg.norm(near[i]), np.linalg.norm(near[j]),
                              np.linalg.norm(near[i] - near[j])))
    assert 2 * three == pytest.approx(-48.0, abs=1e-12)
    assert potential.efcc(pair, triple) == pytest.approx(pair_part + 2 * three, abs=1e-9)


def test_fcc_energy_frozen_values(pot):
    # Frozen after agreeing with the brute-force oracle above.
    pair, triple = pot
    assert potential.efcc(pair, triple) == pytest.approx(-58.81174947241734, abs=1e-10)
    assert potential.efcc_argmin(pair, triple) == pytest.approx(1.0, abs=1e-8)


def test_lennard_jones_minimum():
    lj = potential.lennard_jones_pair()
    assert float(lj(1.0)) == pytest.approx(-1.0)
    assert float(lj.d1(1.0)) == pytest.approx(0.0, abs=1e-12)


_PAIR = {}


def _shared_pair():
    if "p" not in _PAIR:
        _PAIR["p"] = potential.build_canonical_pair(ALPHA)
    return _PAIR["p"]
