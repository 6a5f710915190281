"""Identity and property checks, shared by the CLI suites and the test-suite.

Each check returns a :class:`CheckResult` carrying the measured error and the
tolerance it was held to.  Oracles here are independent of the code under
test: finite differences, closed forms, brute-force enumeration, exact
face enumeration for small quadratic programs.
"""
from dataclasses import dataclass, field
from itertools import combinations
from math import factorial, floor, log

import numpy as np

from . import entropic as ent
from .branching import (
    branch_schedule,
    default_exponents,
    exponent_margins,
    simulate_branching,
)
from .dynamics import (
    KappaSchedule,
    Trajectory,
    eval_action,
    integrate_mag_limit,
    reparameterize,
)
from .heatflow import (
    FlowParams,
    a_star,
    closest_diagnostics,
    force_field,
    m_velocity,
    quantum_potential_mixture,
    velocity_jacobian,
)
from .kmap import (
    PermutationOrbit,
    SourceSet,
    min_norm_point,
    nearest_permutation,
    orbit_dist2,
    proj_o,
    projection_set,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: dict = field(default_factory=dict)

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: measured {self.measured:.3e} (tolerance {self.tolerance:.1e})"

    def record(self):
        return {"name": self.name, "passed": bool(self.passed), "measured": self.measured,
                "tolerance": self.tolerance, "detail": self.detail}


def _random_orbit(rng, d_max=3, k_max=4, k_min=1):
    d = int(rng.integers(1, d_max + 1))
    k = int(rng.integers(k_min, k_max + 1))
    return PermutationOrbit(SourceSet(rng.standard_normal((k, d))))


def _central_grad(f, y, h):
    g = np.empty(len(y))
    for i in range(len(y)):
        e = np.zeros(len(y))
        e[i] = h
        g[i] = (f(y + e) - f(y - e)) / (2 * h)
    return g


def check_force_identity(n=100, seed=0, tol=1e-4, fd_scale=1e-5):
    """4 tau^2 grad Q(m|Leb) = -m_velocity + F, with grad Q by central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        orbit = _random_orbit(rng)
        eps = float(np.exp(rng.uniform(log(0.05), log(2.0))))
        t = float(rng.uniform(-0.5, 0.5))
        params = FlowParams(eps, orbit)
        y = 1.2 * rng.standard_normal(orbit.dim)
        tau = eps * np.exp(2 * t)
        h = fd_scale * (1 + np.linalg.norm(y))
        grad = _central_grad(lambda z: quantum_potential_mixture(z, t, params), y, h)
        mv, F = m_velocity(y, t, params), force_field(y, t, params)
        err = np.linalg.norm(4 * tau**2 * grad - (F - mv)) / (np.linalg.norm(mv) + np.linalg.norm(F))
        worst = max(worst, float(err))
    return CheckResult("quantum-force-identity", worst <= tol, worst, tol, {"samples": n})


def _two_way_ties(rng, count):
    """Points equidistant from two orbit images and strictly closer to them than to the rest."""
    out = []
    while len(out) < count:
        orbit = _random_orbit(rng, k_min=2)
        y = rng.standard_normal(orbit.dim)
        d2 = orbit_dist2(y, orbit)
        a, b = np.argsort(d2)[:2]
        delta = orbit.images[a] - orbit.images[b]
        yt = y - (y @ delta) / (delta @ delta) * delta
        ties = projection_set(yt, orbit, 1e-9)
        if ties.size == 2:
            out.append((orbit, yt, ties))
    return out


def check_a_star_exactness(n=100, seed=1, tol=1e-12):
    """A* vanishes for tie sets of size <= 2; the triple {a, b, -a} gives 2b/27."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for orbit, y, _ in _two_way_ties(rng, n):
        diag = closest_diagnostics(y, orbit, 1e-9)
        worst = max(worst, float(np.linalg.norm(diag.A_star)) / orbit.r**3)
    for _ in range(n):
        orbit = _random_orbit(rng)
        y = rng.standard_normal(orbit.dim)
        diag = closest_diagnostics(y, orbit, 0.0)
        if diag.n_star == 1:
            worst = max(worst, float(np.linalg.norm(diag.A_star)) / orbit.r**3)
    triple_err = 0.0
    for dim in (2, 3, 5):
        a = np.eye(dim)[0]
        b = np.eye(dim)[1]
        triple_err = max(triple_err, float(np.max(np.abs(a_star([a, b, -a]) - 2 * b / 27))))
    measured = max(worst, triple_err)
    return CheckResult("a-star-small-ties", measured <= tol, measured, tol,
                       {"pair_worst": worst, "triple_error": triple_err})


def check_gap_bounds(n=1000, seed=2):
    """0 < c(y) <= 2 r |y|, |A*| <= 2 r^3, |tau F - A*| <= 8 k! r^2 (|y| + r) exp(-c/tau)."""
    rng = np.random.default_rng(seed)
    violations = 0
    worst_ratio = 0.0
    for _ in range(n):
        orbit = _random_orbit(rng, k_min=2)
        eps = float(np.exp(rng.uniform(log(0.01), log(1.0))))
        t = float(rng.uniform(-0.5, 0.5))
        params = FlowParams(eps, orbit)
        y = rng.standard_normal(orbit.dim)
        diag = closest_diagnostics(y, orbit, 0.0)
        r = orbit.r
        ny = float(np.linalg.norm(y))
        tau = eps * np.exp(2 * t)
        lhs = float(np.linalg.norm(tau * force_field(y, t, params) - diag.A_star))
        rhs = 8 * factorial(orbit.k) * r**2 * (ny + r) * np.exp(-diag.gap_c / tau)
        ok = (0 < diag.gap_c <= 2 * r * ny and np.linalg.norm(diag.A_star) <= 2 * r**3 and lhs <= rhs)
        violations += not ok
        worst_ratio = max(worst_ratio, lhs / rhs if rhs > 0 else np.inf)
    return CheckResult("gap-and-force-bounds", violations == 0, float(violations), 0.0,
                       {"samples": n, "worst_ratio": worst_ratio})


def check_small_eps_limits(tol_velocity=1e-6, tol_action=1e-3):
    """Soft velocity and eps action approach their hard-projection limits as eps -> 0."""
    orbit = PermutationOrbit(SourceSet([[0.0, 0.0], [1.5, 0.0], [0.0, 1.2]]))
    x0 = orbit.images[0]
    y = x0 + np.array([0.1, -0.05, 0.05, 0.1, -0.1, 0.05])
    t = 0.0
    diag = closest_diagnostics(y, orbit, 0.0)
    gap_ok = diag.n_star == 1 and diag.gap_c * np.exp(-2 * t) >= 1.0
    eps_list = [1e-1, 1e-2, 1e-3, 1e-4]
    limit = y - nearest_permutation(y, orbit).image
    errs = [float(np.linalg.norm(m_velocity(y, t, FlowParams(e, orbit)) - limit)) for e in eps_list]
    mono = all(b <= a for a, b in zip(errs, errs[1:]))

    times = np.linspace(0.0, 1.0, 201)
    w = np.array([0.15, -0.1, 0.05, 0.1, -0.05, 0.1])
    pos = x0 + np.outer(0.3 + 0.5 * np.sin(times), w)
    vel = np.outer(0.5 * np.cos(times), w)
    path = Trajectory("t", times, pos, vel)
    ref = eval_action(path, "mag_limit", orbit)
    gaps = [abs(eval_action(path, "eps_t", FlowParams(e, orbit)) - ref) / ref for e in eps_list]
    act_ok = gaps[-1] <= tol_action and all(b <= a for a, b in zip(gaps, gaps[1:]))
    passed = gap_ok and mono and errs[-1] <= tol_velocity and act_ok
    return CheckResult("small-epsilon-limits", passed, errs[-1], tol_velocity,
                       {"velocity_errors": errs, "action_gaps": gaps, "gap_c": diag.gap_c})


def check_jacobian(n=100, seed=3, tol=1e-5, fd_scale=1e-5):
    """Analytic velocity Jacobian against central differences of m_velocity."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        orbit = _random_orbit(rng)
        eps = float(np.exp(rng.uniform(log(0.05), log(2.0))))
        t = float(rng.uniform(-0.5, 0.5))
        params = FlowParams(eps, orbit)
        y = rng.standard_normal(orbit.dim)
        h = fd_scale * (1 + np.linalg.norm(y))
        J = velocity_jacobian(y, t, params)
        fd = np.empty_like(J)
        for j in range(orbit.dim):
            e = np.zeros(orbit.dim)
            e[j] = h
            fd[:, j] = (m_velocity(y + e, t, params) - m_velocity(y - e, t, params)) / (2 * h)
        worst = max(worst, float(np.linalg.norm(J - fd) / np.linalg.norm(J)))
    return CheckResult("velocity-jacobian", worst <= tol, worst, tol, {"samples": n})


def _smooth_s_path(rng, orbit, s0, s1, n):
    s = np.linspace(s0, s1, n)
    base = orbit.images[rng.integers(orbit.size)]
    amp = 0.3 * rng.standard_normal((3, orbit.dim))
    freq = np.pi * np.arange(1, 4) / (s1 - s0)
    phase = (s - s0)[:, None] * freq[None, :]
    pos = base + np.sin(phase) @ amp
    vel = (np.cos(phase) * freq) @ amp
    return Trajectory("s", s, pos, vel)


def check_time_change(n=20, seed=4, tol=1e-6, nodes=4001):
    """kappa_s = 2s action in the s-clock equals the t-clock action after s = e^{2t}."""
    rng = np.random.default_rng(seed)
    kappa = KappaSchedule.power(2.0)
    worst = 0.0
    roundtrip = 0.0
    for _ in range(n):
        orbit = _random_orbit(rng, d_max=2, k_max=3)
        params = FlowParams(float(rng.uniform(0.2, 1.0)), orbit)
        path = _smooth_s_path(rng, orbit, 1.0, float(np.e**2), nodes)
        a_s = eval_action(path, "eps_s", params, kappa)
        tpath = reparameterize(path)
        a_t = eval_action(tpath, "eps_t", params)
        worst = max(worst, abs(a_s - a_t) / max(abs(a_s), 1e-300))
        back = reparameterize(tpath)
        roundtrip = max(roundtrip, float(np.max(np.abs(back.times - path.times) / path.times)),
                        float(np.max(np.abs(back.velocities - path.velocities))))
    passed = worst <= tol and roundtrip <= 1e-12
    return CheckResult("time-change-equivalence", passed, worst, tol, {"roundtrip": roundtrip})


def branching_setup(epsilon=0.05):
    orbit = PermutationOrbit(SourceSet([[0.0], [1.0]]))
    return orbit, FlowParams(epsilon, orbit)


def check_branching(N=1000, horizon=(0.5, 1.0), slope_sizes=(200, 400, 800, 1600), seeds=(0, 1, 2), h=0.01):
    """Box bound at every event, exact unit mass, planned head-counts, decreasing cumulative jump."""
    orbit, params = branching_setup()
    kappa = KappaSchedule.power(2.0)
    plan = branch_schedule(N, horizon, kappa, orbit.dim, radius=orbit.r)
    path, events = simulate_branching(plan, params, seed=0, h=h)
    bound_ok = all(e.satisfied for e in events) and len(events) > 0
    mass_ok = all(c.mass == 1 for c in path.clouds())
    counts_ok = all(int(c) == floor(kappa(s) * N) for s, c in zip(plan.schedule, plan.counts))
    counts_ok &= all(e.n_after == int(plan.counts[e.index]) for e in events)
    counts_ok &= path.snapshots[-1][2].n == int(plan.counts[-1])
    totals = []
    for size in slope_sizes:
        pl = branch_schedule(size, horizon, kappa, orbit.dim, radius=orbit.r)
        acc = []
        for sd in seeds:
            _, evs = simulate_branching(pl, params, seed=sd, h=h, keep_snapshots=False)
            acc.append(sum(e.wasserstein_jump for e in evs))
        totals.append(float(np.mean(acc)))
    slope = float(np.polyfit(np.log(slope_sizes), np.log(totals), 1)[0])
    passed = bound_ok and mass_ok and counts_ok and slope < 0
    worst = max((e.newcomer_distance / e.bound_rhs for e in events), default=np.inf)
    return CheckResult("branching-process", passed, slope, 0.0,
                       {"events": len(events), "bound_ok": bound_ok, "mass_ok": mass_ok,
                        "counts_ok": bool(counts_ok), "cumulative_jumps": totals,
                        "worst_bound_ratio": worst})


def check_exponents(dims=range(1, 7)):
    """Both exponent inequalities hold for the default exponents."""
    worst = -np.inf
    for d in dims:
        a, b, c = default_exponents(d)
        m1, m2 = exponent_margins(a, b, c, d)
        worst = max(worst, float(m1), float(m2))
    return CheckResult("branching-exponents", worst < 0, worst, 0.0, {"dims": list(dims)})


def _gauss(mu, var):
    return lambda x: np.exp(-(x - mu) ** 2 / (2 * var))


def _order(errors):
    return float(np.log2(errors[-2] / errors[-1]))


def check_entropic():
    """Fisher closed form, decomposition and potential identities (order 2), rate functionals."""
    res = {}
    var = 0.7
    p = ent.GridDensity.from_function(_gauss(0.4, var), -10, 10, 2048)
    r = ent.GridDensity.from_function(_gauss(-0.2, var), -10, 10, 2048)
    exact = 0.6**2 / (8 * var**2)
    res["fisher_rel_error"] = abs(ent.fisher_information(p, r) / exact - 1)

    dec, pot = [], []
    x_per = lambda n: np.linspace(0, 2 * np.pi, n)
    for n in (257, 513, 1025, 2049):
        q = ent.GridDensity.from_function(lambda x: np.exp(-x**2 / 2) * (1 + 0.5 * np.sin(2 * x)), -6, 6, n)
        m = ent.GridDensity.from_function(_gauss(0.5, 2.0), -6, 6, n)
        dec.append(ent.decomposition_residual(q, m))
        pot.append(ent.potential_identity_residual(np.cos(x_per(n)), 0, 2 * np.pi, 0.5))
    res["decomposition_order"] = _order(dec)
    res["potential_order"] = _order(pot)

    eps, tau, u, s0, s1 = 0.5, 0.3, 0.8, 0.2, 1.0
    s = np.linspace(s0, s1, 161)
    flow = ent.GridFlow.from_function(lambda t, x: np.exp(-(x - u * t) ** 2 / (2 * (tau + eps * t))), s, -8, 8, 4096)
    ref = ent.GridFlow.from_function(lambda t, x: np.exp(-x**2 / (2 * (tau + eps * t))), s, -8, 8, 4096)
    res["rate_self"] = ent.rate_J(ref, ref, eps)
    drift_form = (u * s0) ** 2 / (2 * (tau + eps * s0)) + 0.5 * u**2 * (s1 - s0) / eps
    res["rate_drift_rel_error"] = abs(ent.rate_J(flow, ref, eps) / drift_form - 1)
    passed = (res["fisher_rel_error"] <= 1e-5 and res["decomposition_order"] >= 1.8
              and res["potential_order"] >= 1.8 and res["rate_self"] <= 1e-10
              and res["rate_drift_rel_error"] <= 1e-4)
    res["decomposition_residuals"] = dec
    res["potential_residuals"] = pot
    return CheckResult("entropic-identities", passed, res["rate_drift_rel_error"], 1e-4, res)


def face_enumeration_min_norm(points):
    """Exact minimum-norm point of a small hull by enumerating all faces (subsets)."""
    P = np.asarray(points, dtype=float)
    best, best_norm = None, np.inf
    for size in range(1, len(P) + 1):
        for idx in combinations(range(len(P)), size):
            Q = P[list(idx)]
            M = np.zeros((size + 1, size + 1))
            M[:size, :size] = Q @ Q.T
            M[:size, size] = M[size, :size] = 1.0
            rhs = np.zeros(size + 1)
            rhs[size] = 1.0
            lam = np.linalg.lstsq(M, rhs, rcond=None)[0][:size]
            if np.all(lam >= -1e-12):
                z = np.clip(lam, 0, None) @ Q / np.clip(lam, 0, None).sum()
                nz = float(z @ z)
                if nz < best_norm:
                    best, best_norm = z, nz
    return best


def _tie_configurations(rng, count):
    out = [(o, y) for o, y, _ in _two_way_ties(rng, count // 2)]
    while len(out) < count:
        orbit = _random_orbit(rng, k_min=2)
        out.append((orbit, np.zeros(orbit.dim)))
        center = orbit.images.mean(axis=0)
        out.append((orbit, 0.5 * center))
    return out[:count]


def check_min_norm_geometry(n_sets=500, n_ties=100, seed=5, tol_qp=1e-8, tol_hull=1e-10):
    """Wolfe iteration vs exact face enumeration; proj_o equals the nearest hull point on tie sets."""
    rng = np.random.default_rng(seed)
    worst_qp = 0.0
    for _ in range(n_sets):
        npts = int(rng.integers(1, 5))
        dim = int(rng.integers(1, 5))
        P = rng.standard_normal((npts, dim)) + rng.uniform(-1, 1) * rng.standard_normal(dim)
        if npts >= 3 and rng.random() < 0.3:
            P[2] = 0.5 * (P[0] + P[1])
        worst_qp = max(worst_qp, float(np.linalg.norm(min_norm_point(P) - face_enumeration_min_norm(P))))
    worst_hull = 0.0
    for orbit, y in _tie_configurations(rng, n_ties):
        ties = projection_set(y, orbit, 1e-9)
        nearest_hull = y + min_norm_point(ties.members - y)
        worst_hull = max(worst_hull, float(np.linalg.norm(proj_o(y, orbit, 1e-9) - nearest_hull)))
    passed = worst_qp <= tol_qp and worst_hull <= tol_hull
    return CheckResult("min-norm-geometry", passed, max(worst_qp, worst_hull), tol_qp,
                       {"qp_worst": worst_qp, "hull_worst": worst_hull})


def check_shock_dissipation(h=0.01, tol=1e-8):
    """Bisector crossing for sources {0, 1}: force modulus does not grow, distance to S stays continuous."""
    orbit = PermutationOrbit(SourceSet([[0.0], [1.0]]))
    traj = integrate_mag_limit([0.9, 0.2], [0.0, 0.0], 0.0, 3.0, h, orbit)
    if not traj.events:
        return CheckResult("shock-dissipation", False, np.inf, tol, {"events": 0})
    growth = max(e.post_force - e.pre_force for e in traj.events)
    speed = float(np.max(np.linalg.norm(traj.velocities, axis=1)))
    dist_jump = max(abs(e.dist_after - e.dist_before) for e in traj.events)
    force_drop = min(e.pre_force - e.post_force for e in traj.events)
    continuous = dist_jump <= 1.01 * speed * h
    passed = growth <= tol and continuous
    return CheckResult("shock-dissipation", passed, growth, tol,
                       {"events": len(traj.events), "dist_jump": dist_jump,
                        "force_drop": force_drop, "step_displacement_bound": speed * h})


def check_determinism():
    """Running the same config twice gives byte-identical artifacts.

    The two runs use different worker-thread counts.
    """
    import os
    import tempfile
    from pathlib import Path

    from .cli import run_config

    configs = [
        {"kind": "heat-paths", "problem": {"d": 2, "k": 2, "sources": "random:3,1.0"},
         "physics": {"epsilon": 0.1}, "time": {"clock": "s", "s0": 0.0, "s1": 1.0, "h": 0.05},
         "paths": 3, "seed": 11, "output": {"formats": ["csv", "json", "svg"]}},
        {"kind": "branching", "problem": {"d": 1, "k": 2, "sources": [[0.0], [1.0]]},
         "physics": {"epsilon": 0.05}, "time": {"clock": "s", "s0": 0.5, "s1": 0.8, "h": 0.02},
         "branching": {"N": 150}, "seed": 5, "output": {"formats": ["csv", "json", "svg"]}},
        {"kind": "mag-limit", "problem": {"d": 1, "k": 2, "sources": [[0.0], [1.0]]},
         "time": {"clock": "t", "t0": 0.0, "t1": 3.0, "h": 0.01},
         "initial": {"position": [0.9, 0.2], "velocity": [0.0, 0.0]}, "seed": 0,
         "output": {"formats": ["csv", "json", "svg"]}},
    ]
    mismatches = []
    with tempfile.TemporaryDirectory() as tmp:
        for i, cfg in enumerate(configs):
            dirs = [Path(tmp) / f"run{i}_{j}" for j in range(2)]
            for d, threads in zip(dirs, ("1", "4")):
                saved = os.environ.get("MAGKIT_THREADS")
                os.environ["MAGKIT_THREADS"] = threads
                try:
                    code = run_config(cfg, d)
                finally:
                    if saved is None:
                        os.environ.pop("MAGKIT_THREADS")
                    else:
                        os.environ["MAGKIT_THREADS"] = saved
                if code != 0:
                    mismatches.append(f"config {i} exited with {code}")
            names = sorted(p.name for p in dirs[0].iterdir())
            if names != sorted(p.name for p in dirs[1].iterdir()):
                mismatches.append(f"config {i}: different file sets")
                continue
            for name in names:
                if (dirs[0] / name).read_bytes() != (dirs[1] / name).read_bytes():
                    mismatches.append(f"config {i}: {name} differs")
    return CheckResult("determinism", not mismatches, float(len(mismatches)), 0.0, {"mismatches": mismatches})


SUITES = {
    "kmap": [check_min_norm_geometry],
    "heatflow": [check_force_identity, check_a_star_exactness, check_gap_bounds, check_jacobian],
    "dynamics": [check_small_eps_limits, check_time_change, check_shock_dissipation],
    "branching": [check_branching, check_exponents],
    "entropic": [check_entropic],
    "cli": [check_determinism],
}
ORDER = [
    check_force_identity, check_a_star_exactness, check_gap_bounds, check_small_eps_limits,
    check_jacobian, check_time_change, check_branching, check_exponents, check_entropic,
    check_min_norm_geometry, check_shock_dissipation, check_determinism,
]
SUITES["all"] = ORDER
SUITES["identity"] = [c for c in ORDER if c is not check_determinism]


def run_suite(name):
    if name not in SUITES:
        raise KeyError(name)
    return [check() for check in SUITES[name]]
