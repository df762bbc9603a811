"""Local minimization and the lattice-ball experiments."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

from . import energy as en
from . import lattice
from . import topology as topo
from .configuration import Configuration

FIRE, GRADIENT_BACKTRACK, LBFGS = "FIRE", "GRADIENT_BACKTRACK", "LBFGS"
METHODS = (FIRE, GRADIENT_BACKTRACK, LBFGS)


@dataclass
class RelaxOptions:
    method: str = FIRE
    force_tol: float = 1e-8      # on the largest per-particle force norm
    max_steps: int = 100_000
    step_init: float = 1e-2
    seed: int = 0
    dt_max_factor: float = 10.0
    f_inc: float = 1.1
    f_dec: float = 0.5
    alpha_start: float = 0.1
    f_alpha: float = 0.99
    n_min: int = 5
    max_move: float = 0.05       # per-particle displacement cap per step
    min_step: float = 1e-14
    memory: int = 20             # LBFGS correction pairs

    def __post_init__(self):
        if self.force_tol <= 0 or self.step_init <= 0 or self.max_steps < 0:
            raise ValueError("tolerances and step sizes must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class RelaxResult:
    final: Configuration
    energy_trace: list
    converged: bool
    steps: int
    max_force: float
    min_distance: float
    message: str = ""
    objective_trace: list = field(default_factory=list)   # cutoff-shifted energies the steps descend


def min_distance(config: Configuration) -> float:
    if config.periodic:
        nl = en.neighbor_list(config, 1.5)
        return float(nl.dist.min()) if len(nl.dist) else math.inf
    if len(config) < 2:
        return math.inf
    d, _ = cKDTree(config.positions).query(config.positions, k=2)
    return float(d[:, 1].min())


def noise_floor(e) -> float:
    """Rounding level of a total energy: energy comparisons below it carry no sign information."""
    return 64.0 * np.finfo(float).eps * max(e.magnitude, float(np.sum(np.abs(e.per_particle))))


def _force_norm(f):
    return float(np.max(np.linalg.norm(f, axis=1))) if len(f) else 0.0


def relax(config: Configuration, pair, triple, opts: RelaxOptions | None = None) -> RelaxResult:
    """Descend to a stationary point; no accepted step raises the energy.

    Steps are compared on the cutoff-shifted energy, whose gradient is
    exactly the computed force; the truncated energy itself jumps by V(r_cut)
    whenever a pair crosses the cutoff.  Comparisons allow the rounding level
    of the energy sum (see noise_floor), so objective_trace is non-increasing
    up to that level.

    Stops when the largest per-particle force norm is at most force_tol,
    which keeps the stopping rule invariant under rotations.
    """
    opts = opts or RelaxOptions()
    x = config.positions.copy()

    totals = {}

    def evaluate(pos):
        e, f = en.energy_and_forces(config.copy(pos), pair, triple)
        totals[e.shifted_total] = e.total
        return e.shifted_total, f, noise_floor(e)

    e_cur, f, _ = evaluate(x)
    trace = [e_cur]
    fmax = _force_norm(f)
    if opts.method == FIRE:
        x, trace, steps, fmax, msg = _fire(x, e_cur, f, evaluate, opts, trace)
    elif opts.method == LBFGS:
        x, trace, steps, fmax, msg = _lbfgs(x, e_cur, f, evaluate, opts, trace)
    else:
        x, trace, steps, fmax, msg = _backtrack(x, e_cur, f, evaluate, opts, trace)
    final = config.copy(x)
    return RelaxResult(final, [totals[t] for t in trace], fmax <= opts.force_tol, steps, fmax,
                       min_distance(final), msg, trace)


def _limit(step, max_move):
    n = np.linalg.norm(step, axis=1)
    big = n.max() if len(n) else 0.0
    return step * (max_move / big) if big > max_move else step


def _fire(x, e_cur, f, evaluate, o: RelaxOptions, trace):
    v = np.zeros_like(x)
    dt, a, since_neg = o.step_init, o.alpha_start, 0
    dt_max = o.dt_max_factor * o.step_init
    fmax = _force_norm(f)
    steps = 0
    while steps < o.max_steps and fmax > o.force_tol:
        steps += 1
        power = float(np.sum(f * v))
        if power > 0:
            fn = np.linalg.norm(f)
            vn = np.linalg.norm(v)
            v = (1 - a) * v + a * vn * f / max(fn, 1e-300)
            since_neg += 1
            if since_neg > o.n_min:
                dt = min(dt * o.f_inc, dt_max)
                a *= o.f_alpha
        else:
            v[:] = 0.0
            dt *= o.f_dec
            a = o.alpha_start
            since_neg = 0
        v = v + dt * f
        trial = x + _limit(dt * v, o.max_move)
        e_new, f_new, floor = evaluate(trial)
        if e_new <= e_cur + floor:
            x, e_cur, f = trial, e_new, f_new
            fmax = _force_norm(f)
            trace.append(e_cur)
        else:
            # Rejected uphill step: restart inertia with a smaller time step.
            v[:] = 0.0
            dt *= o.f_dec
            a = o.alpha_start
            since_neg = 0
            if dt < o.min_step:
                return x, trace, steps, fmax, "time step collapsed"
    msg = "converged" if fmax <= o.force_tol else "max_steps reached"
    return x, trace, steps, fmax, msg


def _backtrack(x, e_cur, f, evaluate, o: RelaxOptions, trace):
    s = o.step_init
    fmax = _force_norm(f)
    steps = 0
    while steps < o.max_steps and fmax > o.force_tol:
        steps += 1
        g2 = float(np.sum(f * f))
        while True:
            step = _limit(s * f, o.max_move)
            trial = x + step
            e_new, f_new, floor = evaluate(trial)
            if e_new <= e_cur - 1e-4 * float(np.sum(f * step)) + floor:
                break
            s *= 0.5
            if s < o.min_step:
                return x, trace, steps, fmax, "step size collapsed"
        x, e_cur, f = trial, e_new, f_new
        fmax = _force_norm(f)
        trace.append(e_cur)
        s = min(s * 1.5, 1e3 * o.step_init) if g2 > 0 else s
    msg = "converged" if fmax <= o.force_tol else "max_steps reached"
    return x, trace, steps, fmax, msg


def _lbfgs(x, e_cur, f, evaluate, o: RelaxOptions, trace):
    """Limited-memory BFGS directions with an Armijo backtracking line search."""
    s_hist, y_hist = [], []
    fmax = _force_norm(f)
    steps = 0
    while steps < o.max_steps and fmax > o.force_tol:
        steps += 1
        g = -f.ravel()
        q = g.copy()
        coef = []
        for s_k, y_k in zip(reversed(s_hist), reversed(y_hist)):
            rho = 1.0 / float(y_k @ s_k)
            a = rho * float(s_k @ q)
            q -= a * y_k
            coef.append((rho, a))
        if s_hist:
            q *= float(s_hist[-1] @ y_hist[-1]) / float(y_hist[-1] @ y_hist[-1])
        else:
            q *= o.step_init
        for (s_k, y_k), (rho, a) in zip(zip(s_hist, y_hist), reversed(coef)):
            q += (a - rho * float(y_k @ q)) * s_k
        d = -q
        if float(d @ g) >= 0.0:
            # Curvature memory turned the direction uphill: fall back to steepest descent.
            s_hist.clear()
            y_hist.clear()
            d = -o.step_init * g
        step = _limit(d.reshape(x.shape), o.max_move)
        t = 1.0
        while True:
            trial = x + t * step
            e_new, f_new, floor = evaluate(trial)
            if e_new <= e_cur + 1e-4 * t * float(g @ step.ravel()) + floor:
                break
            t *= 0.5
            if t * float(np.max(np.abs(step))) < o.min_step:
                return x, trace, steps, fmax, "step size collapsed"
        s_new = (trial - x).ravel()
        y_new = (f - f_new).ravel()
        if float(s_new @ y_new) > 1e-12 * float(np.linalg.norm(s_new) * np.linalg.norm(y_new)):
            s_hist.append(s_new)
            y_hist.append(y_new)
            if len(s_hist) > o.memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, e_cur, f = trial, e_new, f_new
        fmax = _force_norm(f)
        trace.append(e_cur)
    msg = "converged" if fmax <= o.force_tol else "max_steps reached"
    return x, trace, steps, fmax, msg


# ---------------------------------------------------------------------------
# Derivative check


def fd_gradient_check(config: Configuration, pair, triple, h: float = 1e-6) -> dict:
    """Analytic forces against Richardson-extrapolated central differences of the energy.

    The relative error is max |F_analytic - F_fd| / max(max |F_fd|, 1e-12),
    taken over all components.
    """
    if len(config) > 100:
        raise ValueError("the finite-difference check is limited to 100 particles")
    _, f = en.energy_and_forces(config, pair, triple)
    x0 = config.positions
    fd = np.zeros_like(x0)

    def central(i, k, step):
        xp = x0.copy()
        xm = x0.copy()
        xp[i, k] += step
        xm[i, k] -= step
        return (en.energy(config.copy(xp), pair, triple).total
                - en.energy(config.copy(xm), pair, triple).total) / (2.0 * step)

    for i in range(len(x0)):
        for k in range(3):
            fd[i, k] = -(4.0 * central(i, k, h / 2.0) - central(i, k, h)) / 3.0
    err = float(np.max(np.abs(f - fd)))
    scale = float(np.max(np.abs(fd)))
    return {"abs_error": err, "rel_error": err / max(scale, 1e-12), "scale": scale}


def random_cluster(n: int, seed: int, min_dist: float = 0.95, density: float = 1.0) -> Configuration:
    """Random sequential addition in a cube, rejecting points closer than min_dist."""
    rng = np.random.default_rng(seed)
    side = (n / density) ** (1.0 / 3.0)
    pts = []
    while len(pts) < n:
        p = rng.uniform(0.0, side, 3)
        if all(np.linalg.norm(p - q) >= min_dist for q in pts):
            pts.append(p)
    return Configuration(np.array(pts))


# ---------------------------------------------------------------------------
# Experiments


def ball(kind: str, radius: float) -> Configuration:
    return Configuration(lattice.generate(kind, radius).cart)


def experiment_upper_bound(pair, triple, radii, e_star: float) -> list:
    """Rows (R, #Y_R, E/#Y_R, gap to e*) for lattice balls Y_R of fcc."""
    rows = []
    for R in radii:
        cfg = ball(lattice.FCC, R)
        e = en.energy(cfg, pair, triple)
        per = e.total / len(cfg)
        rows.append({"R": float(R), "n": len(cfg), "energy_per_particle": per,
                     "gap": per - e_star, "gap_times_R": (per - e_star) * R})
    return rows


def interior_average(config: Configuration, pair, triple, radius: float) -> float:
    e = en.energy(config, pair, triple)
    inner = np.linalg.norm(config.positions, axis=1) <= radius + 1e-9
    return float(np.mean(e.per_particle[inner]))


def experiment_fcc_vs_hcp(pair, triple, R: float = 6.0, interior: float | None = None) -> dict:
    """Interior per-particle energies of fcc and hcp balls, with the shell prediction."""
    interior = R / 3.0 if interior is None else interior
    ef = interior_average(ball(lattice.FCC, R), pair, triple, interior)
    eh = interior_average(ball(lattice.HCP, R), pair, triple, interior)
    predicted = 2.0 * (float(pair(math.sqrt(8.0 / 3.0))) - 3.0 * float(pair(math.sqrt(3.0))))
    return {"R": float(R), "interior_radius": float(interior), "fcc": ef, "hcp": eh,
            "difference": eh - ef, "shell_prediction": predicted}


def perturbed(config: Configuration, sigma: float, seed: int) -> Configuration:
    rng = np.random.default_rng(seed)
    return config.copy(config.positions + rng.normal(0.0, sigma, config.positions.shape))


def hull_depth(points: np.ndarray) -> np.ndarray:
    """Distance of each point to the boundary of the convex hull of all points (0 on facets)."""
    hull = ConvexHull(points)
    # Facet equations are outward unit normals n with n.x + c <= 0 inside.
    return np.maximum(-(points @ hull.equations[:, :3].T + hull.equations[:, 3]).max(axis=1), 0.0)


def experiment_recovery(pair, triple, R: float = 4.0, sigma: float = 0.03, seed: int = 1,
                        depth: float = 2.0, opts: RelaxOptions | None = None) -> dict:
    """Relax an fcc ball with and without Gaussian noise and compare the outcomes.

    Interior means hull depth >= `depth` in the unperturbed ball; particles keep
    their index through perturbation and relaxation.
    """
    opts = opts or RelaxOptions()
    clean = ball(lattice.FCC, R)
    inner = hull_depth(clean.positions) >= depth - 1e-9
    ref = relax(clean, pair, triple, opts)
    run = relax(perturbed(clean, sigma, seed), pair, triple, opts)
    cls = topo.classify(run.final, topo.bond_graph(run.final, pair.alpha))
    labels = cls.labels[inner]
    n = len(clean)
    return {
        "R": float(R), "sigma": float(sigma), "seed": int(seed), "n": n,
        "interior": int(np.sum(inner)), "interior_co": int(np.sum(labels == topo.CO)),
        "clean_converged": ref.converged, "perturbed_converged": run.converged,
        "clean_steps": ref.steps, "perturbed_steps": run.steps,
        "clean_energy_per_particle": ref.energy_trace[-1] / n,
        "perturbed_energy_per_particle": run.energy_trace[-1] / n,
        "energy_gap_per_particle": abs(run.energy_trace[-1] - ref.energy_trace[-1]) / n,
        "min_distance": run.min_distance, "max_force": run.max_force,
    }
