import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform
from scipy.spatial.transform import Rotation

from crystalopt import energy as en, lattice, potential, relax
from crystalopt.configuration import Configuration


def ball_energy_oracle(pos, pair, triple):
    """Full distance matrix; triangles from the 7/5 adjacency; no neighbor lists or cutoffs."""
    d = squareform(pdist(pos))
    e = 2.0 * float(np.sum(pair(pdist(pos))))
    near = d < potential.TRIPLE_CUTOFF
    np.fill_diagonal(near, False)
    for i in range(len(pos)):
        js = np.nonzero(near[i])[0]
        js = js[js > i]
        for a, j in enumerate(js):
            ks = js[a + 1:][near[j, js[a + 1:]]]
            if len(ks):
                e += 6.0 * float(np.sum(triple(d[i, j], d[i, ks], d[j, ks])))
    return e


@pytest.mark.parametrize("method", relax.METHODS)
def test_dimer_relaxes_to_unit_distance(method, pot):
    res = relax.relax(Configuration([[0, 0, 0], [1.3, 0, 0]]), *pot, relax.RelaxOptions(method=method))
    assert res.converged
    assert res.min_distance == pytest.approx(1.0, abs=1e-8)
    assert res.energy_trace[-1] == pytest.approx(-2.0, abs=1e-12)


@pytest.mark.parametrize("method", relax.METHODS)
def test_objective_never_increases(method, pot):
    cfg = relax.random_cluster(20, seed=3)
    res = relax.relax(cfg, *pot, relax.RelaxOptions(method=method, max_steps=400))
    trace = np.array(res.objective_trace)
    floor = relax.noise_floor(en.energy(cfg, *pot))
    assert np.all(np.diff(trace) <= floor)
    assert trace[-1] < trace[0]


@pytest.mark.parametrize("method", [relax.FIRE, relax.LBFGS])
def test_relaxation_commutes_with_rotations(method, pot):
    cfg = relax.perturbed(relax.ball(lattice.FCC, 2.0), 0.02, seed=4)
    R = Rotation.random(random_state=8).as_matrix()
    t = np.array([0.3, -1.0, 2.0])
    opts = relax.RelaxOptions(method=method)
    a = relax.relax(cfg, *pot, opts)
    b = relax.relax(cfg.transformed(R, t), *pot, opts)
    assert a.converged and b.converged
    np.testing.assert_allclose(b.final.positions, a.final.positions @ R.T + t, atol=1e-8)


def test_fd_gradient_check_is_tight(pot):
    rep = relax.fd_gradient_check(relax.random_cluster(20, seed=1), *pot)
    assert rep["rel_error"] <= 1e-6


def test_fd_gradient_check_refuses_large_clusters(pot):
    with pytest.raises(ValueError):
        relax.fd_gradient_check(relax.random_cluster(101, seed=0), *pot)


def test_random_cluster_respects_min_distance():
    cfg = relax.random_cluster(40, seed=2)
    assert len(cfg) == 40
    assert relax.min_distance(cfg) >= 0.95


def test_periodic_fcc_is_not_undercut_by_perturbation(pot):
    pair, triple = pot
    cell = en.periodic_lattice(lattice.FCC, (2, 2, 2))
    res = relax.relax(relax.perturbed(cell, 0.03, seed=0), pair, triple,
                      relax.RelaxOptions(method=relax.LBFGS))
    assert res.converged
    e_star = potential.efcc(pair, triple)
    per = res.energy_trace[-1] / len(cell)
    assert per >= e_star - 1e-6
    assert per == pytest.approx(en.periodic_energy(cell, pair, triple).per_particle, abs=1e-8)


@pytest.mark.parametrize("R,gap", [(3.0, 19.04958850040955), (4.0, 14.332041856919417),
                                   (5.0, 12.158442303421467), (6.0, 10.266832231970156)])
def test_upper_bound_rows(R, gap, pot):
    pair, triple = pot
    e_star = potential.efcc(pair, triple)
    (row,) = relax.experiment_upper_bound(pair, triple, [R], e_star)
    # Frozen values, after the R = 3 row agreed with the distance-matrix oracle below.
    assert row["gap"] == pytest.approx(gap, abs=1e-9)
    assert row["n"] == len(lattice.generate(lattice.FCC, R))


def test_upper_bound_row_matches_oracle(pot):
    pair, triple = pot
    cfg = relax.ball(lattice.FCC, 3.0)
    (row,) = relax.experiment_upper_bound(pair, triple, [3.0], potential.efcc(pair, triple))
    oracle = ball_energy_oracle(cfg.positions, pair, triple) / len(cfg)
    # The oracle keeps pairs beyond the cutoff, which weigh below 1e-9 here.
    assert row["energy_per_particle"] == pytest.approx(oracle, abs=1e-9)


def test_fcc_beats_hcp_by_the_bulk_difference(pot):
    pair, triple = pot
    res = relax.experiment_fcc_vs_hcp(pair, triple)
    bulk = en.stored_energy(lattice.HCP, np.eye(3), pair, triple) - en.stored_energy(
        lattice.FCC, np.eye(3), pair, triple)
    assert res["difference"] > 0
    assert res["difference"] == pytest.approx(bulk, abs=1e-6)
    assert res["difference"] == pytest.approx(0.6137848208543133, abs=1e-10)
    assert res["shell_prediction"] == pytest.approx(res["difference"], abs=1e-4)


def test_hull_depth_of_a_cube():
    pts = np.array(np.meshgrid(*[np.arange(5.0)] * 3)).reshape(3, -1).T
    depth = relax.hull_depth(pts)
    expected = np.min(np.minimum(pts, 4.0 - pts), axis=1)
    np.testing.assert_allclose(depth, expected, atol=1e-12)


@pytest.mark.slow
def test_recovery_of_a_perturbed_ball(pot):
    res = relax.experiment_recovery(*pot, R=4.0, opts=relax.RelaxOptions(method=relax.LBFGS))
    assert res["clean_converged"] and res["perturbed_converged"]
    assert res["interior_co"] == res["interior"] > 0
    assert res["energy_gap_per_particle"] < 1e-8
