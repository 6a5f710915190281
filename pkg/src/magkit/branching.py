"""Branching empirical process with almost-deterministic newcomer selection.

A cloud of uniform-weight particles follows independent sqrt(eps) Brownian
motions stopped at the boundary of the box [-R, R]^D.  At scheduled times
sigma_k the head-count is reset to floor(kappa(sigma_k) N) by duplicating
(or removing) particles chosen through a box histogram, so the total mass
stays exactly one.
"""
import os
from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil, floor, sqrt

import numpy as np

from . import kernels
from .errors import CapabilityError, InvariantError, ValidationError

for _k in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_k}", "1")
import ot  # noqa: E402

MAX_EXACT_SIZE = 2000


@dataclass
class EmpiricalCloud:
    """n particles in R^D with weight 1/n each."""

    points: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValidationError("a cloud needs at least one point")
        self.points = pts

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def weight(self):
        return Fraction(1, self.n)

    @property
    def mass(self):
        """Total mass as an exact rational."""
        return self.weight * self.n


@dataclass(frozen=True)
class BranchPlan:
    N: int
    schedule: np.ndarray
    counts: np.ndarray
    exponents: tuple
    R: float
    m: int
    horizon: tuple
    kappa: object
    d_total: int
    variant: str
    R0: float
    m0: float


@dataclass
class BranchEvent:
    time: float
    index: int
    sign: int
    changed: np.ndarray
    n_before: int
    n_after: int
    wasserstein_jump: float
    newcomer_distance: float
    bound_rhs: float

    @property
    def satisfied(self):
        return self.wasserstein_jump <= self.bound_rhs and self.newcomer_distance <= self.bound_rhs

    def record(self):
        return {
            "time": self.time,
            "index": self.index,
            "sign": self.sign,
            "n_before": self.n_before,
            "n_after": self.n_after,
            "changed": self.changed,
            "wasserstein_jump": self.wasserstein_jump,
            "newcomer_distance": self.newcomer_distance,
            "bound_rhs": self.bound_rhs,
            "satisfied": self.satisfied,
        }


@dataclass
class EmpiricalPath:
    """Snapshots (time, label, cloud) in time order; label is 'start', 'pre', 'post' or 'end'."""

    snapshots: list = field(default_factory=list)

    @property
    def times(self):
        return [s[0] for s in self.snapshots]

    def clouds(self):
        return [s[2] for s in self.snapshots]


def default_exponents(d_total):
    """Exact exponents (a, b, c) for ambient dimension ``d_total``."""
    d = int(d_total)
    if d < 1:
        raise ValidationError("d_total must be >= 1")
    return (Fraction(d + 2, d + 3), Fraction(1, 3 * d * (d + 3)), Fraction(2 * d + 1, 2 * d * (d + 3)))


def exponent_margins(a, b, c, d_total):
    """The two quantities 1-a+b-c and 1-2a+b+c*d that must be negative."""
    return 1 - a + b - c, 1 - 2 * a + b + c * d_total


def _positive_kappa(kappa, s):
    val = kappa(s)
    if not val > 0:
        raise ValidationError(f"kappa must be positive on the horizon, got {val} at s={s}")
    return val


def branch_schedule(N, horizon, kappa, d_total, exponents=None, R0=None, m0=1.0, variant="auto", radius=1.0):
    """Event times and head-counts.

    Increasing variant: sigma_{k+1} = sigma_k + 1/(kappa' N^{1-a}).
    General variant: sigma_{k+1} = sigma_k + 1/(|kappa'| N^{1-a}) + 1/N, with the
    first term dropped where kappa' = 0.  Counts are floor(kappa(sigma_k) N);
    R = R0 N^b and m = max(1, floor(m0 N^c)); R0 defaults to 4 * radius
    (pass the orbit radius r).
    """
    R0 = 4.0 * float(radius) if R0 is None else R0
    N = int(N)
    if N < 1:
        raise ValidationError("N must be >= 1")
    s0, s1 = map(float, horizon)
    if not s1 > s0:
        raise ValidationError("horizon must satisfy s0 < s1")
    a, b, c = exponents if exponents is not None else default_exponents(d_total)
    if not (0 < a < 1 and b > 0 and c > 0):
        raise ValidationError("exponents need a in (0,1), b > 0, c > 0")
    probe = np.linspace(s0, s1, 257)
    kv = np.asarray(kappa(probe))
    if np.any(kv <= 0):
        raise ValidationError("kappa must be positive on the horizon")
    if variant == "auto":
        variant = "increasing" if np.all(np.asarray(kappa.derivative(probe)) > 0) else "general"
    if variant not in ("increasing", "general"):
        raise ValidationError(f"unknown schedule variant {variant!r}")
    scale = N ** (1.0 - float(a))
    sched = []
    sigma = s0
    while sigma < s1:
        sched.append(sigma)
        slope = float(kappa.derivative(sigma))
        if variant == "increasing":
            if not slope > 0:
                raise ValidationError(f"increasing schedule needs kappa' > 0, got {slope} at s={sigma}")
            sigma = sigma + 1.0 / (slope * scale)
        else:
            sigma = sigma + (1.0 / (abs(slope) * scale) if slope != 0 else 0.0) + 1.0 / N
    sched = np.array(sched)
    counts = np.array([floor(_positive_kappa(kappa, s) * N) for s in sched], dtype=np.int64)
    if np.any(counts < 1):
        raise ValidationError("kappa * N must be >= 1 along the schedule")
    R = float(R0) * N ** float(b)
    m = max(1, floor(float(m0) * N ** float(c)))
    return BranchPlan(N, sched, counts, (a, b, c), R, m, (s0, s1), kappa, int(d_total), variant, float(R0), float(m0))


def _box_ids(points, R, m):
    k = np.floor(points * (m / R)).astype(np.int64)
    np.clip(k, -m, m - 1, out=k)
    return k


def pick_newcomers(cloud, n_prime, R, m, rng=None):
    """Indices of ``n_prime`` distinct particles whose empirical measure tracks the cloud.

    The box [-R, R]^D is cut into (2m)^D cubes of side R/m.  Each cube B
    contributes floor(count(B) n'/n) particles (lowest indices first, or a
    random subset if ``rng`` is given); the remainder is filled from the
    cubes with the largest fractional quotas.
    """
    pts = cloud.points if isinstance(cloud, EmpiricalCloud) else np.atleast_2d(np.asarray(cloud, float))
    n = pts.shape[0]
    n_prime = int(n_prime)
    if n_prime < 0 or n_prime > n:
        raise ValidationError(f"cannot pick {n_prime} of {n} particles")
    if np.any(np.abs(pts) > R):
        raise ValidationError("all points must lie in the box [-R, R]^D (use stopped dynamics)")
    if n_prime == 0:
        return np.zeros(0, dtype=np.int64)
    boxes = _box_ids(pts, R, m)
    uniq, inverse, counts = np.unique(boxes, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    rank = np.arange(n) if rng is None else rng.permutation(n)
    order = np.lexsort((rank, inverse))
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    quota = (counts * n_prime) // n
    rem = counts * n_prime - quota * n
    picked = [order[st:st + q] for st, q in zip(starts, quota)]
    extra = n_prime - int(quota.sum())
    if extra > 0:
        by_rem = np.lexsort((np.arange(len(rem)), -rem))[:extra]
        picked += [order[starts[b] + quota[b]:starts[b] + quota[b] + 1] for b in by_rem]
    out = np.sort(np.concatenate(picked))
    if len(out) != n_prime or len(np.unique(out)) != n_prime:
        raise InvariantError("newcomer selection lost track of its quota")
    return out


def newcomer_bound(R, m, d_total, n_prime):
    """D_R (1/m + (2m)^D / n'), with D_R = 2 sqrt(D) R the box diameter."""
    return 2.0 * sqrt(d_total) * R * (1.0 / m + (2.0 * m) ** d_total / n_prime)


def _cost(X, Y, p):
    diff = X[:, None, :] - Y[None, :, :]
    dist = np.sqrt(np.einsum("ijl,ijl->ij", diff, diff))
    return dist if p == 1 else dist**p


def wasserstein_weighted(X, a, Y, b, p=2):
    """Exact W_p between sum a_i delta_{X_i} and sum b_j delta_{Y_j} (network simplex)."""
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    keep_a, keep_b = a > 0, b > 0
    X, a, Y, b = X[keep_a], a[keep_a], Y[keep_b], b[keep_b]
    M = _cost(X, Y, p)
    val = ot.emd2(a / a.sum(), b / b.sum(), M, numItermax=50_000_000)
    return float(max(val, 0.0)) ** (1.0 / p)


def wasserstein_discrete(mu, nu, p=2, max_size=MAX_EXACT_SIZE):
    """Exact W_p between two uniform-weight clouds."""
    X = mu.points if isinstance(mu, EmpiricalCloud) else np.atleast_2d(np.asarray(mu, float))
    Y = nu.points if isinstance(nu, EmpiricalCloud) else np.atleast_2d(np.asarray(nu, float))
    if p < 1:
        raise ValidationError("p must be >= 1")
    if X.shape[1] != Y.shape[1]:
        raise ValidationError("clouds live in different dimensions")
    if X.shape[0] + Y.shape[0] > max_size:
        raise CapabilityError(f"exact transport limited to {max_size} points in total")
    return wasserstein_weighted(X, np.full(len(X), 1.0 / len(X)), Y, np.full(len(Y), 1.0 / len(Y)), p)


def _initial_cloud(rng, n, params, s0):
    orbit = params.orbit
    if orbit.enumerable:
        start = orbit.images[rng.integers(orbit.size, size=n)]
    else:
        start = np.stack([orbit.image(rng.permutation(orbit.k)) for _ in range(n)])
    return start + sqrt(params.epsilon * s0) * rng.standard_normal(start.shape)


def _propagate(points, stopped, rng, ds, h, epsilon, R):
    if ds <= 0 or len(points) == 0:
        return
    nsub = max(1, int(ceil(ds / h - 1e-9)))
    normals = rng.standard_normal((nsub, points.shape[0], points.shape[1]))
    scales = np.full(nsub, sqrt(epsilon * ds / nsub))
    kernels.stopped_walk(points, stopped, normals, scales, R)


def simulate_branching(plan, params, seed, h, p=2, keep_snapshots=True):
    """Run the branching process over ``plan.horizon``.

    Returns ``(path, events)``.  Every event with a head-count change records
    the exact W_p jump between the clouds just before and after it, the W_p
    distance from the selected particles to the pre-event cloud, and the box
    bound; a bound violation raises :class:`InvariantError`.
    """
    D = params.orbit.dim
    if D != plan.d_total:
        raise ValidationError(f"plan is for d_total={plan.d_total}, orbit has dimension {D}")
    if not h > 0:
        raise ValidationError("substep h must be positive")
    root = np.random.SeedSequence(seed)
    streams = root.spawn(len(plan.schedule) + 1)
    rng0 = np.random.default_rng(streams[0])
    s0, s1 = plan.horizon
    pts = _initial_cloud(rng0, int(plan.counts[0]), params, s0)
    stopped = np.zeros(len(pts), dtype=np.uint8)
    outside = np.any(np.abs(pts) > plan.R, axis=1)
    np.clip(pts, -plan.R, plan.R, out=pts)
    stopped[outside] = 1
    path = EmpiricalPath()
    if keep_snapshots:
        path.snapshots.append((s0, "start", EmpiricalCloud(pts.copy(), s0)))
    events = []
    bounds = list(plan.schedule[1:]) + [s1]
    for k in range(len(plan.schedule)):
        rng = np.random.default_rng(streams[k + 1])
        if k > 0:
            pts, stopped, ev = _branch(pts, stopped, plan, k, p)
            if ev is not None:
                events.append(ev)
                if keep_snapshots:
                    path.snapshots.append((ev.time, "post", EmpiricalCloud(pts.copy(), ev.time)))
        _propagate(pts, stopped, rng, bounds[k] - plan.schedule[k], h, params.epsilon, plan.R)
        if keep_snapshots and k + 1 < len(plan.schedule) and plan.counts[k + 1] != plan.counts[k]:
            path.snapshots.append((bounds[k], "pre", EmpiricalCloud(pts.copy(), bounds[k])))
        if len(pts) != plan.counts[k]:
            raise InvariantError(f"head-count {len(pts)} differs from planned {plan.counts[k]}")
    if keep_snapshots:
        path.snapshots.append((s1, "end", EmpiricalCloud(pts.copy(), s1)))
    return path, events


def _branch(pts, stopped, plan, k, p):
    n = len(pts)
    target = int(plan.counts[k])
    delta = target - n
    if delta == 0:
        return pts, stopped, None
    n_prime = abs(delta)
    if n_prime > n:
        raise ValidationError(f"cannot {'add' if delta > 0 else 'remove'} {n_prime} particles to a cloud of {n}")
    chosen = pick_newcomers(pts, n_prime, plan.R, plan.m)
    sel = np.zeros(n)
    sel[chosen] = 1.0
    a = np.full(n, 1.0 / n)
    if delta > 0:
        b = (1.0 + sel) / (n + n_prime)
        new_pts = np.concatenate([pts, pts[chosen]])
        new_stopped = np.concatenate([stopped, stopped[chosen]])
    else:
        b = (1.0 - sel) / (n - n_prime)
        keep = sel == 0
        new_pts = pts[keep]
        new_stopped = stopped[keep]
    jump = wasserstein_weighted(pts, a, pts, b, p)
    to_cloud = wasserstein_weighted(pts, a, pts, sel / n_prime, p)
    bound = newcomer_bound(plan.R, plan.m, plan.d_total, n_prime)
    ev = BranchEvent(float(plan.schedule[k]), k, 1 if delta > 0 else -1, chosen, n, target, jump, to_cloud, bound)
    if not ev.satisfied:
        raise InvariantError(
            f"box bound violated at s={ev.time}: jump {jump}, newcomers {to_cloud}, bound {bound}"
        )
    return np.ascontiguousarray(new_pts), np.ascontiguousarray(new_stopped), ev


def rate_J_kappa(flow, reference, epsilon, kappa):
    """Kappa-weighted rate functional on 1D grid flows (s-clock).

    1/2 kappa_{s0} H(p_{s0}|r_{s0}) + 1/2 kappa_{s1} H(p_{s1}|r_{s1})
    + eps^-1 int 1/2 |v_p - v_r|^2_p kappa ds + eps int I(p|r) kappa ds.
    """
    from .entropic import rate_terms

    terms = rate_terms(flow, reference, epsilon)
    w = np.asarray(kappa(terms["times"]), dtype=float)
    if w.ndim == 0:
        w = np.full(len(terms["times"]), float(w))
    s = terms["times"]
    return float(
        0.5 * w[0] * terms["H0"]
        + 0.5 * w[-1] * terms["H1"]
        + np.trapezoid(w * terms["kinetic"], s) / epsilon
        + epsilon * np.trapezoid(w * terms["fisher"], s)
    )
