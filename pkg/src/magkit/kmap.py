"""Geometry of permutation orbits.

A k-mapping is a vector of R^{dk} read as k consecutive blocks of R^d.  The
orbit of a source set {x_1..x_k} is the set of all k! block reorderings
x^sigma = (x_{sigma(1)}, ..., x_{sigma(k)}).  Every element of the orbit has the
same Euclidean norm r.

Norm conventions: distances and squared distances returned here are
Euclidean.  The H-norm is ``|y|_H^2 = |y|^2 / k`` and is used only by
:func:`potentials` and :func:`h_norm2`.
"""
from dataclasses import dataclass, field
from functools import cached_property
from itertools import permutations
from math import factorial

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import CapabilityError, ValidationError

DEFAULT_K_MAX = 8
DEFAULT_REL_TOL = 1e-9


@dataclass(frozen=True)
class SourceSet:
    """k pairwise distinct points of R^d, stored as a (k, d) array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValidationError(f"source points must be a (k, d) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("source points must be finite")
        k = pts.shape[0]
        if k > 1:
            gaps = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
            gaps[np.diag_indices(k)] = np.inf
            if gaps.min() <= 0.0:
                raise ValidationError("source points must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def k(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    @classmethod
    def random(cls, k, d, seed=0, spread=1.0):
        rng = np.random.default_rng(seed)
        return cls(spread * rng.standard_normal((k, d)))


@dataclass(frozen=True)
class PermutationOrbit:
    """All block reorderings of a source set.

    Images are materialized lazily and only when ``k <= k_max``; permutations
    are kept in lexicographic order so the index of a permutation is its
    lexicographic rank.
    """

    source: SourceSet
    k_max: int = DEFAULT_K_MAX

    @property
    def k(self):
        return self.source.k

    @property
    def d(self):
        return self.source.d

    @property
    def dim(self):
        return self.source.k * self.source.d

    @property
    def size(self):
        return factorial(self.k)

    @cached_property
    def r(self):
        """Common Euclidean norm of all orbit elements."""
        return float(np.sqrt(np.sum(self.source.points**2)))

    @property
    def r_h2(self):
        """Squared H-norm of the orbit elements, r^2 / k."""
        return self.r**2 / self.k

    @property
    def enumerable(self):
        return self.k <= self.k_max

    def _require_enumeration(self):
        if not self.enumerable:
            raise CapabilityError(
                f"full permutation enumeration needs k <= k_max ({self.k} > {self.k_max})"
            )

    @cached_property
    def perms(self):
        """(k!, k) int array of permutations in lexicographic order."""
        self._require_enumeration()
        arr = np.array(list(permutations(range(self.k))), dtype=np.intp)
        arr.setflags(write=False)
        return arr

    @cached_property
    def images(self):
        """(k!, dk) array; row s is x^sigma for sigma = perms[s]."""
        arr = self.source.points[self.perms].reshape(len(self.perms), self.dim)
        arr.setflags(write=False)
        return arr

    def image(self, perm):
        return self.source.points[np.asarray(perm)].reshape(self.dim)

    def check_point(self, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self.dim:
            raise ValidationError(f"k-mapping has {y.shape[0]} coordinates, orbit needs {self.dim}")
        return y


@dataclass(frozen=True)
class TieSet:
    """Orbit elements (nearly) closest to a query point."""

    indices: np.ndarray
    members: np.ndarray
    min_dist2: float
    tol_used: float
    dist2: np.ndarray = field(repr=False)

    @property
    def size(self):
        return len(self.indices)


@dataclass(frozen=True)
class NearestResult:
    perm: tuple
    index: int
    image: np.ndarray
    dist2: float


def h_norm2(y, k):
    """Squared H-norm |y|^2 / k."""
    y = np.asarray(y, dtype=float)
    return float(y @ y) / k


def block_costs(y, source):
    """C[i, j] = |y_i - x_j|^2 for slot i and source j."""
    Y = np.asarray(y, dtype=float).reshape(source.k, source.d)
    diff = Y[:, None, :] - source.points[None, :, :]
    return np.einsum("ijl,ijl->ij", diff, diff)


def _canonical_sum(terms):
    # Sum along the last axis after sorting, so permuted copies of the same
    # multiset of block costs give bit-identical totals.
    return np.sort(terms, axis=-1).sum(axis=-1)


def perm_rank(perm):
    """Lexicographic rank of a permutation of range(k)."""
    perm = list(perm)
    k = len(perm)
    rank = 0
    rest = sorted(perm)
    for i, p in enumerate(perm):
        j = rest.index(p)
        rank += j * factorial(k - 1 - i)
        rest.pop(j)
    return rank


def orbit_dist2(y, orbit):
    """Squared Euclidean distances from y to every orbit element, in index order."""
    orbit._require_enumeration()
    y = orbit.check_point(y)
    C = block_costs(y, orbit.source)
    return _canonical_sum(C[np.arange(orbit.k), orbit.perms])


def nearest_permutation(y, orbit):
    """Closest orbit element to y (Euclidean), via linear assignment.

    Maximizes sum_i y_i . x_{sigma(i)}, equivalently minimizes |y - x^sigma|^2.
    Among equally close permutations the lexicographically smallest one is
    returned.  Works for any k, including k > k_max.
    """
    y = orbit.check_point(y)
    k = orbit.k
    C = block_costs(y, orbit.source)
    rows, cols = linear_sum_assignment(C)
    best = float(_canonical_sum(C[rows, cols]))
    if k > 1:
        cols = _lexicographic_optimum(C, best)
    perm = tuple(int(c) for c in cols)
    dist2 = float(_canonical_sum(C[np.arange(k), list(perm)]))
    return NearestResult(perm, perm_rank(perm), orbit.image(perm), dist2)


def _lexicographic_optimum(C, best):
    # Fix slots one at a time to the smallest source index that still admits
    # an optimal completion.
    k = C.shape[0]
    slack = 4 * np.finfo(float).eps * max(abs(best), float(np.abs(C).max()), 1e-300) * k
    chosen = []
    free = list(range(k))
    fixed_cost = 0.0
    for i in range(k):
        for j in sorted(free):
            rest = [c for c in free if c != j]
            tail = 0.0
            if rest:
                sub = C[np.ix_(range(i + 1, k), rest)]
                rr, cc = linear_sum_assignment(sub)
                tail = float(sub[rr, cc].sum())
            if fixed_cost + C[i, j] + tail <= best + slack:
                chosen.append(j)
                free.remove(j)
                fixed_cost += C[i, j]
                break
        else:  # numerical safety net, should not happen
            j = min(free)
            chosen.append(j)
            free.remove(j)
            fixed_cost += C[i, j]
    return chosen


def projection_set(y, orbit, rel_tol=DEFAULT_REL_TOL):
    """All orbit elements with dist2 <= (1 + rel_tol) * min dist2.

    With ``rel_tol = 0`` only exact floating-point ties are kept.  Squared
    distances are accumulated in a permutation-independent order so that
    symmetric ties are detected exactly.
    """
    if rel_tol < 0:
        raise ValidationError("rel_tol must be >= 0")
    d2 = orbit_dist2(y, orbit)
    dmin = float(d2.min())
    idx = np.flatnonzero(d2 <= dmin * (1.0 + rel_tol))
    return TieSet(idx, orbit.images[idx], dmin, float(rel_tol), d2)


def _affine_minimizer(Q):
    # Coefficients a (sum a = 1) minimizing |a @ Q|.
    n = Q.shape[0]
    G = Q @ Q.T
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = G
    M[:n, n] = 1.0
    M[n, :n] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return sol[:n]


def min_norm_point(points, tol=1e-10, max_iter=1000):
    """Point of minimal Euclidean norm in the convex hull of ``points``.

    Wolfe's active-set iteration; terminates when the duality gap
    |x|^2 - min_p <x, p> falls below ``tol`` (relative to the squared scale
    of the point set).
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[None, :]
    if P.shape[0] == 0:
        raise ValidationError("min_norm_point needs at least one point")
    scale2 = max(float(np.max(np.einsum("ij,ij->i", P, P))), 1e-300)
    zero_tol = 1e-12

    S = [int(np.argmin(np.einsum("ij,ij->i", P, P)))]
    lam = np.array([1.0])
    x = P[S[0]].copy()
    for _ in range(max_iter):
        dots = P @ x
        j = int(np.argmin(dots))
        if x @ x - dots[j] <= tol * scale2 or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:
            alpha = _affine_minimizer(P[S])
            if np.all(alpha > zero_tol):
                lam = alpha
                break
            mask = alpha <= zero_tol
            ratios = lam[mask] / (lam[mask] - alpha[mask])
            theta = float(np.min(ratios)) if ratios.size else 0.0
            theta = min(max(theta, 0.0), 1.0)
            lam = theta * alpha + (1.0 - theta) * lam
            keep = lam > zero_tol
            if not keep.any():
                keep[np.argmax(lam)] = True
            S = [s for s, kp in zip(S, keep) if kp]
            lam = lam[keep]
            lam /= lam.sum()
        x = lam @ P[S]
    return x


def min_norm_certificate(points, x):
    """min_p <x, p - x> over the points; >= 0 at the exact minimizer."""
    P = np.asarray(points, dtype=float)
    return float(np.min(P @ x - x @ x))


def proj_o(y, orbit, rel_tol=DEFAULT_REL_TOL):
    """Minimal-norm point of the convex hull of the tie set of y."""
    ties = projection_set(y, orbit, rel_tol)
    if ties.size == 1:
        return ties.members[0].copy()
    return min_norm_point(ties.members)


def mag_drift(y, orbit, rel_tol=DEFAULT_REL_TOL):
    """y - proj_o(y); the gradient of the squared half-distance where the projection is unique."""
    y = orbit.check_point(y)
    return y - proj_o(y, orbit, rel_tol)


def potentials(y, orbit):
    """(Phi, Pi_S) in H-norm.

    Phi(y) = min |y - x|_H^2 / 2 and Pi_S(y) = max <x, y>_H over the orbit, so
    that Phi = |y|_H^2 / 2 - Pi_S + r_H^2 / 2.
    """
    y = orbit.check_point(y)
    near = nearest_permutation(y, orbit)
    k = orbit.k
    phi = near.dist2 / (2.0 * k)
    pi_s = float(near.image @ y) / k
    return phi, pi_s
