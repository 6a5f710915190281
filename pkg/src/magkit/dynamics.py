"""Trajectories: Newton-type integrators, diffusion samplers, actions, time change.

Clocks: the heat flow runs in s > 0; the t-clock is s = e^{2t}.  Actions use
the H-norm |v|_H^2 = |v|^2 / k.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from math import ceil, exp, log

import numpy as np

from . import _io
from .errors import NumericFailure, ValidationError
from .heatflow import (
    FlowParams,
    acceleration,
    log_density,
    m_velocity,
    quantum_potential_mixture,
    r_velocity,
)
from .kmap import DEFAULT_REL_TOL, min_norm_point, projection_set


@dataclass(frozen=True)
class ShockEvent:
    time: float
    pre_force: float
    post_force: float
    tie_size: int
    position: np.ndarray = field(repr=False)
    pre_members: tuple = ()
    post_members: tuple = ()
    dist_before: float = float("nan")
    dist_at: float = float("nan")
    dist_after: float = float("nan")
    bracket: float = float("nan")

    def record(self):
        return {
            "time": self.time,
            "pre_force": self.pre_force,
            "post_force": self.post_force,
            "tie_size": self.tie_size,
        }


@dataclass
class Trajectory:
    clock: str
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray = None
    events: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.clock not in ("s", "t"):
            raise ValidationError(f"clock must be 's' or 't', got {self.clock!r}")
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.times.ndim != 1 or len(self.times) != len(self.positions):
            raise ValidationError("times and positions must have matching length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValidationError("times must be strictly increasing")
        if self.velocities is not None:
            self.velocities = np.asarray(self.velocities, dtype=float)
            if self.velocities.shape != self.positions.shape:
                raise ValidationError("velocities must match positions in shape")

    @property
    def dim(self):
        return self.positions.shape[1]

    def to_csv(self, path):
        n = self.dim
        header = ["clock", "time"] + [f"pos_{i}" for i in range(n)]
        if self.velocities is not None:
            header += [f"vel_{i}" for i in range(n)]
        rows = []
        for i, t in enumerate(self.times):
            row = [self.clock, float(t)] + [float(v) for v in self.positions[i]]
            if self.velocities is not None:
                row += [float(v) for v in self.velocities[i]]
            rows.append(row)
        _io.write_csv(path, header, rows)

    @classmethod
    def from_csv(cls, path):
        header, rows = _io.read_csv(path)
        if header[:2] != ["clock", "time"]:
            raise ValidationError(f"{path}: not a trajectory file")
        npos = sum(h.startswith("pos_") for h in header)
        data = np.array([[float(v) for v in r[1:]] for r in rows])
        clock = rows[0][0] if rows else "t"
        vel = data[:, 1 + npos:] if data.shape[1] > 1 + npos else None
        return cls(clock, data[:, 0], data[:, 1:1 + npos], vel)

    def events_to_jsonl(self, path):
        _io.write_jsonl(path, [e.record() for e in self.events])


@dataclass(frozen=True)
class KappaSchedule:
    """Weight schedule kappa_s: ``power`` (coef * s), ``constant`` or piecewise-linear ``table``."""

    kind: str = "power"
    coef: float = 2.0
    nodes: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("power", "constant", "table"):
            raise ValidationError(f"unknown kappa kind {self.kind!r}")
        if self.kind == "table":
            nodes = np.asarray(self.nodes, dtype=float)
            vals = np.asarray(self.values, dtype=float)
            if nodes.ndim != 1 or nodes.shape != vals.shape or len(nodes) < 2:
                raise ValidationError("kappa table needs matching nodes/values of length >= 2")
            if np.any(np.diff(nodes) <= 0):
                raise ValidationError("kappa table nodes must be increasing")
        elif self.kind == "constant" and not self.coef > 0:
            raise ValidationError("constant kappa must be positive")

    @classmethod
    def power(cls, coef=2.0):
        return cls("power", coef)

    @classmethod
    def constant(cls, value):
        return cls("constant", value)

    @classmethod
    def table(cls, nodes, values):
        return cls("table", 0.0, tuple(float(v) for v in nodes), tuple(float(v) for v in values))

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "power":
            out = self.coef * s
        elif self.kind == "constant":
            out = np.full_like(s, self.coef)
        else:
            out = np.interp(s, self.nodes, self.values)
        return out if out.ndim else float(out)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "power":
            out = np.full_like(s, self.coef)
        elif self.kind == "constant":
            out = np.zeros_like(s)
        else:
            nodes = np.asarray(self.nodes)
            slopes = np.diff(self.values) / np.diff(nodes)
            j = np.clip(np.searchsorted(nodes, s, side="right") - 1, 0, len(slopes) - 1)
            out = slopes[j]
        return out if out.ndim else float(out)

    def to_dict(self):
        if self.kind == "table":
            return {"kind": "table", "nodes": list(self.nodes), "values": list(self.values)}
        return {"kind": self.kind, "coef": self.coef}


def _grid(t0, t1, h):
    if not h > 0:
        raise ValidationError(f"step must be positive, got {h}")
    if not t1 > t0:
        raise ValidationError(f"need t1 > t0, got [{t0}, {t1}]")
    n = max(1, int(ceil((t1 - t0) / h - 1e-9)))
    return n, (t1 - t0) / n


def _checked(a, y, t):
    if not np.all(np.isfinite(a)):
        raise NumericFailure(f"non-finite force at time {t!r}, position {np.asarray(y).tolist()}")
    return a


def verlet(accel, y0, v0, t0, t1, h):
    """Velocity Verlet for y'' = accel(y, t); returns (times, positions, velocities)."""
    n, h = _grid(t0, t1, h)
    y = np.array(y0, dtype=float)
    v = np.array(v0, dtype=float)
    Y = np.empty((n + 1, y.size))
    V = np.empty((n + 1, y.size))
    times = t0 + h * np.arange(n + 1)
    times[-1] = t1
    Y[0], V[0] = y, v
    a = _checked(accel(y, t0), y, t0)
    for i in range(n):
        vh = v + 0.5 * h * a
        y = y + h * vh
        a = _checked(accel(y, times[i + 1]), y, times[i + 1])
        v = vh + 0.5 * h * a
        Y[i + 1], V[i + 1] = y, v
    return times, Y, V


def rk4(accel, y0, v0, t0, t1, h):
    """Classical RK4 on the first-order system, for cross-checks."""
    n, h = _grid(t0, t1, h)
    y = np.array(y0, dtype=float)
    v = np.array(v0, dtype=float)
    Y = np.empty((n + 1, y.size))
    V = np.empty((n + 1, y.size))
    times = t0 + h * np.arange(n + 1)
    times[-1] = t1
    Y[0], V[0] = y, v
    for i in range(n):
        t = times[i]
        k1y, k1v = v, _checked(accel(y, t), y, t)
        k2y, k2v = v + 0.5 * h * k1v, accel(y + 0.5 * h * k1y, t + 0.5 * h)
        k3y, k3v = v + 0.5 * h * k2v, accel(y + 0.5 * h * k2y, t + 0.5 * h)
        k4y, k4v = v + h * k3v, _checked(accel(y + h * k3y, t + h), y, t + h)
        y = y + h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        v = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        Y[i + 1], V[i + 1] = y, v
    return times, Y, V


def eps_mag_potential(y, t, params):
    """U_t with acceleration = -grad U_t: U = 2 tau log m_t - 4 tau^2 Q(m_t|Leb)."""
    tau = params.epsilon * exp(2.0 * t)
    return 2.0 * tau * log_density(y, params, exp(2.0 * t)) - 4.0 * tau * tau * quantum_potential_mixture(y, t, params)


def integrate_eps_mag(y0, v0, t0, t1, h, params, method="verlet", diagnostics=True):
    """Integrate y'' = m_velocity + force_field (t-clock).

    With ``diagnostics`` the energy E = |v|^2/2 + U_t(y) and the work
    W = int dU/dt dt (partial in t) are tracked; ``energy_drift`` is
    max |E - E_0 - W| over the run, which is O(h^2) for Verlet.
    """
    orbit = params.orbit
    y0 = orbit.check_point(y0)
    v0 = orbit.check_point(v0)
    step = {"verlet": verlet, "rk4": rk4}.get(method)
    if step is None:
        raise ValidationError(f"unknown integrator {method!r}")
    times, Y, V = step(lambda y, t: acceleration(y, t, params), y0, v0, t0, t1, h)
    traj = Trajectory("t", times, Y, V)
    traj.diagnostics["method"] = method
    if diagnostics:
        U = np.array([eps_mag_potential(y, t, params) for y, t in zip(Y, times)])
        dt = 1e-6 * (1.0 + np.abs(times))
        dU = np.array([
            (eps_mag_potential(y, t + e, params) - eps_mag_potential(y, t - e, params)) / (2 * e)
            for y, t, e in zip(Y, times, dt)
        ])
        E = 0.5 * np.einsum("ij,ij->i", V, V) + U
        W = np.concatenate([[0.0], np.cumsum(0.5 * (dU[1:] + dU[:-1]) * np.diff(times))])
        traj.diagnostics["energy"] = E
        traj.diagnostics["energy_drift"] = float(np.max(np.abs(E - E[0] - W)))
    return traj


def _limit_state(y, orbit, rel_tol):
    ties = projection_set(y, orbit, rel_tol)
    target = ties.members[0] if ties.size == 1 else min_norm_point(ties.members)
    return y - target, ties


def integrate_mag_limit(y0, v0, t0, t1, h, orbit, rel_tol=DEFAULT_REL_TOL):
    """Velocity Verlet for y'' = y - proj_o(y), with shock logging.

    A shock is logged whenever the tie set changes between consecutive
    steps.  The crossing is bracketed by up to 8 step halvings and then
    located on the bracketing segment where the old and new closest images
    are equidistant.  ``pre_force`` is |y* - proj_o(old tie set)| and
    ``post_force`` is |y* - proj_o(old union new)|.
    """
    y = orbit.check_point(y0).copy()
    v = orbit.check_point(v0).copy()
    n, h = _grid(t0, t1, h)
    times = t0 + h * np.arange(n + 1)
    times[-1] = t1
    Y = np.empty((n + 1, y.size))
    V = np.empty((n + 1, y.size))
    Y[0], V[0] = y, v
    a, ties = _limit_state(y, orbit, rel_tol)
    events = []
    energy = [0.5 * v @ v - 0.5 * ties.min_dist2]
    for i in range(n):
        t = times[i]
        vh = v + 0.5 * h * a
        y_new = y + h * vh
        a_new, ties_new = _limit_state(y_new, orbit, rel_tol)
        _checked(a_new, y_new, times[i + 1])
        if not np.array_equal(ties.indices, ties_new.indices):
            events.append(_locate_shock(y, v, a, ties, t, h, y_new, ties_new, orbit, rel_tol))
        v = vh + 0.5 * h * a_new
        y, a, ties = y_new, a_new, ties_new
        Y[i + 1], V[i + 1] = y, v
        energy.append(0.5 * v @ v - 0.5 * ties.min_dist2)
    traj = Trajectory("t", times, Y, V, events)
    traj.diagnostics["energy"] = np.array(energy)
    traj.diagnostics["method"] = "verlet"
    return traj


def _locate_shock(y, v, a, ties, t, h, y_right, ties_right, orbit, rel_tol):
    yl, vl, al, tl = y, v, a, t
    yr, tr, tie_r = y_right, t + h, ties_right
    dt = h
    for _ in range(8):
        dt *= 0.5
        vh = vl + 0.5 * dt * al
        ym = yl + dt * vh
        am, tm = _limit_state(ym, orbit, rel_tol)
        if np.array_equal(tm.indices, ties.indices):
            vl = vh + 0.5 * dt * am
            yl, al, tl = ym, am, tl + dt
        else:
            yr, tr, tie_r = ym, tl + dt, tm
    xa = ties.members[0]
    xb = tie_r.members[0]
    gl = float(yl @ (xb - xa))
    gr = float(yr @ (xb - xa))
    lam = 0.0 if gl == gr else min(max(gl / (gl - gr), 0.0), 1.0)
    ystar = yl + lam * (yr - yl)
    tstar = tl + lam * (tr - tl)
    union = np.union1d(ties.indices, tie_r.indices)
    pre_target = xa if ties.size == 1 else min_norm_point(ties.members)
    post_target = min_norm_point(orbit.images[union])
    dist = lambda z: float(np.sqrt(projection_set(z, orbit, 0.0).min_dist2))
    return ShockEvent(
        time=float(tstar),
        pre_force=float(np.linalg.norm(ystar - pre_target)),
        post_force=float(np.linalg.norm(ystar - post_target)),
        tie_size=int(len(union)),
        position=ystar,
        pre_members=tuple(int(i) for i in ties.indices),
        post_members=tuple(int(i) for i in tie_r.indices),
        dist_before=dist(y),
        dist_at=dist(ystar),
        dist_after=dist(y_right),
        bracket=float(tr - tl),
    )


def _threads():
    env = os.environ.get("MAGKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"MAGKIT_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _heat_path(seq, s_grid, orbit, epsilon):
    rng = np.random.default_rng(seq)
    if orbit.enumerable:
        x0 = orbit.images[rng.integers(orbit.size)]
    else:
        x0 = orbit.image(rng.permutation(orbit.k))
    s = np.asarray(s_grid, dtype=float)
    ds = np.diff(np.concatenate([[0.0], s]))
    steps = np.sqrt(epsilon * ds)[:, None] * rng.standard_normal((len(s), orbit.dim))
    return x0 + np.cumsum(steps, axis=0)


def _check_s_grid(s_grid):
    s = np.asarray(s_grid, dtype=float)
    if s.ndim != 1 or len(s) < 1 or s[0] < 0 or np.any(np.diff(s) <= 0):
        raise ValidationError("s_grid must be increasing and nonnegative")
    return s


def simulate_heat_path(seed, s_grid, params, epsilon=None):
    """One path of X_s = X_0 + sqrt(eps) B_s with X_0 uniform on the orbit.

    ``epsilon`` overrides ``params.epsilon`` (0 is allowed here and gives
    the constant path).
    """
    s = _check_s_grid(s_grid)
    eps = params.epsilon if epsilon is None else float(epsilon)
    if eps < 0:
        raise ValidationError("epsilon must be >= 0")
    pos = _heat_path(np.random.SeedSequence(seed), s, params.orbit, eps)
    return Trajectory("s", s, pos)


def simulate_heat_paths(seed, s_grid, params, n_paths, threads=None):
    """``n_paths`` independent heat paths as an (n_paths, len(s_grid), dk) array.

    Path i uses the i-th child of ``SeedSequence(seed)``, so results do not
    depend on the number of worker threads.
    """
    s = _check_s_grid(s_grid)
    children = np.random.SeedSequence(seed).spawn(int(n_paths))
    work = lambda seq: _heat_path(seq, s, params.orbit, params.epsilon)
    nthreads = min(threads or _threads(), max(1, int(n_paths)))
    if nthreads == 1:
        paths = [work(c) for c in children]
    else:
        with ThreadPoolExecutor(nthreads) as pool:
            paths = list(pool.map(work, children))
    return np.stack(paths)


def simulate_surfing_sde(z0, s0, s1, h, params, eta=0.0, kappa=None, seed=0):
    """Euler-Maruyama for dZ = r_velocity(Z, s) ds + sqrt(eta k^2 / kappa_s) dW."""
    if not s0 > 0:
        raise ValidationError(f"s0 must be positive (drift is singular at 0), got {s0}")
    if eta < 0:
        raise ValidationError("eta must be >= 0")
    kappa = kappa or KappaSchedule.power()
    orbit = params.orbit
    z = orbit.check_point(z0).copy()
    n, h = _grid(s0, s1, h)
    times = s0 + h * np.arange(n + 1)
    times[-1] = s1
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    Z = np.empty((n + 1, z.size))
    Z[0] = z
    for i in range(n):
        s = times[i]
        drift = r_velocity(z, s, params)
        z = z + h * drift
        if eta > 0:
            z = z + np.sqrt(eta * orbit.k**2 / kappa(s) * h) * rng.standard_normal(z.size)
        Z[i + 1] = _checked(z, z, times[i + 1])
    return Trajectory("s", times, Z)


def path_velocities(traj):
    """Stored velocities, or centered differences (one-sided at the ends)."""
    if traj.velocities is not None:
        return traj.velocities
    if len(traj.times) < 3:
        raise ValidationError("need at least 3 samples to estimate velocities")
    return np.gradient(traj.positions, traj.times, axis=0, edge_order=2)


def action_integrand(traj, variant, params, kappa=None, rel_tol=DEFAULT_REL_TOL):
    """Pointwise integrand of :func:`eval_action` on the trajectory grid."""
    need = {"eps_t": "t", "eps_s": "s", "mag_limit": "t"}
    if variant not in need:
        raise ValidationError(f"unknown action variant {variant!r}")
    if traj.clock != need[variant]:
        raise ValidationError(f"action {variant} needs a {need[variant]}-clock trajectory, got {traj.clock}")
    orbit = params.orbit if isinstance(params, FlowParams) else params
    vel = path_velocities(traj)
    out = np.empty(len(traj.times))
    for i, (time, y) in enumerate(zip(traj.times, traj.positions)):
        if variant == "eps_t":
            drift, weight = m_velocity(y, time, params), 1.0
        elif variant == "eps_s":
            drift, weight = r_velocity(y, time, params), (kappa or KappaSchedule.power())(time)
        else:
            ties = projection_set(y, orbit, rel_tol)
            target = ties.members[0] if ties.size == 1 else min_norm_point(ties.members)
            drift, weight = y - target, 1.0
        dev = vel[i] - drift
        out[i] = 0.5 * weight * float(dev @ dev) / orbit.k
    return out


def eval_action(traj, variant, params, kappa=None, rel_tol=DEFAULT_REL_TOL, with_error=False):
    """Trapezoid quadrature of 1/2 |velocity - drift|_H^2 * weight along ``traj``.

    Variants: ``eps_t`` (drift m_velocity, t-clock), ``eps_s`` (drift
    r_velocity weighted by kappa_s, s-clock) and ``mag_limit`` (drift
    y - proj_o(y), t-clock).  For ``mag_limit`` ``params`` may be a bare
    orbit.  With ``with_error`` a Richardson estimate of the quadrature error
    (from the half-resolution rule) is also returned.
    """
    f = action_integrand(traj, variant, params, kappa, rel_tol)
    x = traj.times
    val = float(np.trapezoid(f, x))
    if not with_error:
        return val
    if len(x) >= 3 and len(x) % 2 == 1:
        coarse = float(np.trapezoid(f[::2], x[::2]))
        err = abs(val - coarse) / 3.0
    else:
        err = float("nan")
    return val, err


def reparameterize(traj):
    """Switch clocks: s -> t = log(s)/2 or t -> s = e^{2t}; velocities rescale by ds/dt = 2s."""
    if traj.clock == "s":
        if np.any(traj.times <= 0):
            raise ValidationError("s-clock times must be positive to change clock")
        s = traj.times
        new_times = 0.5 * np.log(s)
        vel = None if traj.velocities is None else traj.velocities * (2.0 * s)[:, None]
        clock = "t"
        remap = lambda tm: 0.5 * log(tm)
    else:
        s = np.exp(2.0 * traj.times)
        new_times = s
        vel = None if traj.velocities is None else traj.velocities / (2.0 * s)[:, None]
        clock = "s"
        remap = lambda tm: exp(2.0 * tm)
    events = [replace(e, time=float(remap(e.time))) for e in traj.events]
    return Trajectory(clock, new_times, traj.positions.copy(), vel, events, dict(traj.diagnostics))
