"""Closed-form fields of the Gaussian-mixture heat flow.

The heat flow started from the uniform measure on a permutation orbit S is,
at time s, the mixture (1/k!) sum_sigma N(x^sigma, eps*s*I).  In the t-clock
s = e^{2t}, so the mixture temperature is tau = eps*e^{2t}.  Every field below
is a moment of the soft assignment

    pi^sigma(y) proportional to exp(-|y - x^sigma|^2 / (2 tau)).

All vectors are Euclidean coordinates in R^{dk}.
"""
from dataclasses import dataclass
from math import lgamma, exp, log

import numpy as np

from . import kernels
from .errors import ValidationError
from .kmap import DEFAULT_REL_TOL, PermutationOrbit, TieSet, projection_set


@dataclass(frozen=True)
class FlowParams:
    """Diffusion scale and orbit, plus a default clock reading.

    ``clock`` is ``"s"`` or ``"t"``; ``time`` is read in that clock.  Functions
    that take an explicit ``s`` or ``t`` argument ignore the stored time.
    """

    epsilon: float
    orbit: PermutationOrbit
    clock: str = "s"
    time: float = 1.0

    def __post_init__(self):
        if not (self.epsilon > 0 and np.isfinite(self.epsilon)):
            raise ValidationError(f"epsilon must be positive and finite, got {self.epsilon}")
        if self.clock not in ("s", "t"):
            raise ValidationError(f"clock must be 's' or 't', got {self.clock!r}")
        if self.clock == "s" and not self.time > 0:
            raise ValidationError(f"s must be positive, got {self.time}")

    @property
    def s(self):
        return exp(2.0 * self.time) if self.clock == "t" else float(self.time)

    def at_s(self, s):
        return FlowParams(self.epsilon, self.orbit, "s", s)

    def at_t(self, t):
        return FlowParams(self.epsilon, self.orbit, "t", t)


@dataclass(frozen=True)
class SoftAssignment:
    weights: np.ndarray
    log_weights: np.ndarray
    soft_mean: np.ndarray
    soft_second: np.ndarray
    fvec: np.ndarray
    centered_sq: float
    lse: float
    tau: float


@dataclass(frozen=True)
class ClosestDiagnostics:
    tie_set: TieSet
    n_star: int
    xbar_star: np.ndarray
    A_star: np.ndarray
    gap_c: float


def _tau_s(params, s):
    if not s > 0:
        raise ValidationError(f"s must be positive, got {s}")
    return params.epsilon * s


def _tau_t(params, t):
    return params.epsilon * exp(2.0 * t)


def soft_assignment(y, params, tau, want_second=True):
    """Soft assignment at mixture temperature ``tau``."""
    orbit = params.orbit
    y = orbit.check_point(y)
    images = orbit.images
    lse, w, mean, second, fvec, msq = kernels.mixture_moments(y, images, tau, want_second)
    diff = y[None, :] - images
    logw = -np.einsum("ij,ij->i", diff, diff) / (2.0 * tau) - lse
    return SoftAssignment(w, logw, mean, second, fvec, msq, lse, tau)


def soft_weights(y, params):
    """Soft assignment at the clock reading stored in ``params``."""
    return soft_assignment(y, params, _tau_s(params, params.s))


def log_density(y, params, s=None):
    """Log of the mixture density at s (defaults to the clock in ``params``)."""
    s = params.s if s is None else s
    tau = _tau_s(params, s)
    orbit = params.orbit
    y = orbit.check_point(y)
    lse = kernels.mixture_moments(y, orbit.images, tau, False)[0]
    n = orbit.dim
    return lse - lgamma(orbit.k + 1) - 0.5 * n * log(2.0 * np.pi * tau)


def r_velocity(y, s, params):
    """Current velocity of the heat flow in the s-clock, (y - soft_mean) / (2s)."""
    tau = _tau_s(params, s)
    sa = soft_assignment(y, params, tau, False)
    return (params.orbit.check_point(y) - sa.soft_mean) / (2.0 * s)


def m_velocity(y, t, params):
    """Current velocity in the t-clock, y - soft_mean at tau = eps*e^{2t}."""
    sa = soft_assignment(y, params, _tau_t(params, t), False)
    return params.orbit.check_point(y) - sa.soft_mean


def velocity_jacobian(y, t, params):
    """d(m_velocity)/dy = I - soft_second / tau, a symmetric dk x dk matrix."""
    tau = _tau_t(params, t)
    sa = soft_assignment(y, params, tau, True)
    return np.eye(params.orbit.dim) - sa.soft_second / tau


def quantum_potential_mixture(y, t, params):
    """Q(m|Leb) = -Lap(sqrt m) / (2 sqrt m) for the mixture at time t.

    Evaluated as div(v)/(4 tau) - |v|^2/(8 tau^2) with v = m_velocity and
    div(v) = dk - <|xt|^2, pi>/tau.
    """
    tau = _tau_t(params, t)
    y = params.orbit.check_point(y)
    sa = soft_assignment(y, params, tau, False)
    v = y - sa.soft_mean
    div = params.orbit.dim - sa.centered_sq / tau
    return div / (4.0 * tau) - float(v @ v) / (8.0 * tau * tau)


def force_field(y, t, params):
    """F = <((y - x) . xt) xt, pi> / tau."""
    tau = _tau_t(params, t)
    sa = soft_assignment(y, params, tau, False)
    return sa.fvec / tau


def acceleration(y, t, params):
    """m_velocity + force_field, from one moment pass."""
    tau = _tau_t(params, t)
    y = params.orbit.check_point(y)
    sa = soft_assignment(y, params, tau, False)
    return (y - sa.soft_mean) + sa.fvec / tau


def a_star(members):
    """A = n^-1 sum_n (xbar . (x_n - xbar)) (x_n - xbar) over the given points."""
    X = np.asarray(members, dtype=float)
    xbar = X.mean(axis=0)
    dev = X - xbar
    return (dev @ xbar) @ dev / X.shape[0]


def closest_diagnostics(y, orbit, rel_tol=DEFAULT_REL_TOL):
    """Tie set, barycenter, A* and energy gap c(y) at y.

    c(y) is the second-best minus the best squared half-distance to the
    orbit; +inf when every orbit element is tied.
    """
    ties = projection_set(y, orbit, rel_tol)
    X = ties.members
    xbar = X.mean(axis=0)
    others = np.ones(len(ties.dist2), dtype=bool)
    others[ties.indices] = False
    if others.any():
        gap = 0.5 * (float(ties.dist2[others].min()) - ties.min_dist2)
    else:
        gap = float("inf")
    return ClosestDiagnostics(ties, ties.size, xbar, a_star(X), gap)
