"""Entropic functionals on uniform 1D grids.

Densities are sampled on ``np.linspace(lo, hi, n)``; integrals use the
trapezoid rule, first derivatives second-order central differences and
second derivatives the three-point stencil (four-point one-sided at the
ends).  Where a density falls below ``FLOOR`` the derived fields are NaN and
excluded from integrals.
"""
import warnings
from dataclasses import dataclass

import numpy as np

from . import _io
from .errors import ValidationError

FLOOR = 1e-300
MASS_TOL = 1e-8


def _grid_x(lo, hi, n):
    return np.linspace(lo, hi, n)


@dataclass(frozen=True)
class GridDensity:
    lo: float
    hi: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or len(v) < 16:
            raise ValidationError("a grid density needs at least 16 samples")
        if not self.hi > self.lo:
            raise ValidationError("grid needs lo < hi")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValidationError("density values must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def n(self):
        return len(self.values)

    @property
    def x(self):
        return _grid_x(self.lo, self.hi, self.n)

    @property
    def dx(self):
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def mass(self):
        return float(np.trapezoid(self.values, dx=self.dx))

    def normalized(self):
        mass = self.mass
        if not mass > 0:
            raise ValidationError("cannot normalize a density with zero mass")
        return GridDensity(self.lo, self.hi, self.values / mass)

    def check_margin(self, rel=1e-12):
        top = self.values.max()
        if max(self.values[0], self.values[-1]) > rel * top:
            warnings.warn("density is not negligible at the grid boundary", RuntimeWarning, stacklevel=2)

    @classmethod
    def from_function(cls, f, lo, hi, n, normalize=True):
        dens = cls(lo, hi, f(_grid_x(lo, hi, n)))
        return dens.normalized() if normalize else dens

    def to_csv(self, path):
        _io.write_csv(path, ["x", "value"], zip(self.x.tolist(), self.values.tolist()))


@dataclass(frozen=True)
class GridFlow:
    """Time-indexed densities on a shared grid; ``values`` has shape (n_t, n_x)."""

    times: np.ndarray
    lo: float
    hi: float
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != len(t) or v.shape[1] < 16:
            raise ValidationError("flow values must be (n_times, n_x) with n_x >= 16")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValidationError("flow times must be increasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValidationError("density values must be finite and nonnegative")
        dx = (self.hi - self.lo) / (v.shape[1] - 1)
        mass = np.trapezoid(v, dx=dx, axis=1)
        if np.any(np.abs(mass - 1.0) > MASS_TOL):
            raise ValidationError(f"unnormalized density in flow (mass range {mass.min()}..{mass.max()})")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def x(self):
        return _grid_x(self.lo, self.hi, self.values.shape[1])

    @property
    def dx(self):
        return (self.hi - self.lo) / (self.values.shape[1] - 1)

    def __getitem__(self, i):
        return GridDensity(self.lo, self.hi, self.values[i])

    def __len__(self):
        return len(self.times)

    @classmethod
    def from_function(cls, f, times, lo, hi, n):
        """Sample f(t, x) and normalize every slice."""
        x = _grid_x(lo, hi, n)
        dx = (hi - lo) / (n - 1)
        vals = np.array([f(t, x) for t in times], dtype=float)
        vals /= np.trapezoid(vals, dx=dx, axis=1)[:, None]
        return cls(np.asarray(times, float), lo, hi, vals)

    def to_csv(self, path):
        x = self.x.tolist()
        rows = ((t, xi, v) for t, row in zip(self.times.tolist(), self.values.tolist()) for xi, v in zip(x, row))
        _io.write_csv(path, ["t", "x", "value"], rows)


def d1(f, dx):
    """First derivative, second order everywhere."""
    return np.gradient(f, dx, edge_order=2, axis=-1)


def d2(f, dx):
    """Second derivative: 3-point interior, 4-point one-sided ends."""
    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    out[..., 1:-1] = f[..., 2:] - 2.0 * f[..., 1:-1] + f[..., :-2]
    out[..., 0] = 2.0 * f[..., 0] - 5.0 * f[..., 1] + 4.0 * f[..., 2] - f[..., 3]
    out[..., -1] = 2.0 * f[..., -1] - 5.0 * f[..., -2] + 4.0 * f[..., -3] - f[..., -4]
    return out / (dx * dx)


def _same_grid(p, r):
    if p.n != r.n or p.lo != r.lo or p.hi != r.hi:
        raise ValidationError("densities live on different grids")


def _log(values):
    with np.errstate(divide="ignore"):
        out = np.log(np.where(values > FLOOR, values, np.nan))
    return out


def relative_entropy(p, r):
    """H(p|r) = int p log(p/r) dx (trapezoid)."""
    _same_grid(p, r)
    on = p.values > FLOOR
    if np.any(r.values[on] <= FLOOR):
        raise ValidationError("reference vanishes where the density is positive")
    integrand = np.zeros(p.n)
    integrand[on] = p.values[on] * (np.log(p.values[on]) - np.log(r.values[on]))
    return float(np.trapezoid(integrand, dx=p.dx))


def fisher_information(p, r):
    """I(p|r) = 1/2 int |d/dx log sqrt(p/r)|^2 p dx."""
    _same_grid(p, r)
    on = p.values > FLOOR
    if np.any(r.values[on] <= FLOOR):
        raise ValidationError("reference vanishes where the density is positive")
    g = d1(0.5 * (_log(p.values) - _log(r.values)), p.dx)
    integrand = np.where(on & np.isfinite(g), 0.5 * g * g * p.values, 0.0)
    return float(np.trapezoid(integrand, dx=p.dx))


def quantum_potential_grid(p, m=None, form="log"):
    """Q(p|m) = -(log sqrt m)' (log sqrt l)' - (sqrt l)'' / (2 sqrt l), with l = p/m.

    ``m=None`` means Lebesgue measure.  ``form="log"`` uses the identity
    (sqrt l)''/sqrt l = (log sqrt l)'' + ((log sqrt l)')^2, which is stable in
    the tails; ``form="sqrt"`` differentiates sqrt(l) directly.  NaN where p
    (or m) is below the floor.
    """
    dx = p.dx
    if m is None:
        logm = np.zeros(p.n)
    else:
        _same_grid(p, m)
        if np.any(m.values[1:-1] <= FLOOR):
            raise ValidationError("reference density must be positive on the grid interior")
        logm = _log(m.values)
    half_l = 0.5 * (_log(p.values) - logm)
    cross = -d1(0.5 * logm, dx) * d1(half_l, dx)
    if form == "log":
        g = d1(half_l, dx)
        return cross - 0.5 * (d2(half_l, dx) + g * g)
    if form == "sqrt":
        with np.errstate(invalid="ignore"):
            root = np.exp(half_l)
            return cross - d2(root, dx) / (2.0 * root)
    raise ValidationError(f"unknown form {form!r}")


def quantum_average(p, m=None):
    """int Q(p|m) dp over the support of p."""
    q = quantum_potential_grid(p, m)
    integrand = np.where(np.isfinite(q), q * p.values, 0.0)
    return float(np.trapezoid(integrand, dx=p.dx))


def decomposition_residual(q, m):
    """max over the interior of |Q(q|Leb) - Q(q|m) - Q(m|Leb)|.

    The left side is evaluated in square-root form and the right side in log
    form, so the residual measures discretization error (O(dx^2)).
    """
    lhs = quantum_potential_grid(q, None, form="sqrt")
    rhs = quantum_potential_grid(q, m) + quantum_potential_grid(m, None)
    res = np.abs(lhs - rhs)[1:-1]
    return float(np.nanmax(res))


def potential_identity_residual(U, lo, hi, epsilon):
    """max |eps^2 Q(e^{-U/eps}|Leb) - (eps U''/4 - U'^2/8)| over the interior.

    The left side differentiates sqrt(m) = exp(-U/(2 eps)) directly; the right
    side differentiates U.
    """
    U = np.asarray(U, dtype=float)
    n = len(U)
    dx = (hi - lo) / (n - 1)
    root = np.exp(-(U - U.min()) / (2.0 * epsilon))
    lhs = -epsilon**2 * d2(root, dx) / (2.0 * root)
    g = d1(U, dx)
    rhs = epsilon * d2(U, dx) / 4.0 - g * g / 8.0
    return float(np.max(np.abs(lhs - rhs)[1:-1]))


def current_velocity_1d(flow, floor=FLOOR):
    """Velocity fields v_t(x) with d/dt p + (p v)' = 0, shape (n_t, n_x).

    The flux -int_lo^x dp/dt is accumulated from whichever grid end carries
    less mass, which keeps tail velocities accurate.  NaN where p <= floor.
    """
    if len(flow) < 3:
        raise ValidationError("need at least 3 time slices")
    dx = flow.dx
    dp = np.gradient(flow.values, flow.times, axis=0, edge_order=2)
    left = np.zeros_like(dp)
    left[:, 1:] = np.cumsum(0.5 * (dp[:, 1:] + dp[:, :-1]) * dx, axis=1)
    right = np.zeros_like(dp)
    right[:, :-1] = np.cumsum((0.5 * (dp[:, 1:] + dp[:, :-1]) * dx)[:, ::-1], axis=1)[:, ::-1]
    mass = np.zeros_like(flow.values)
    mass[:, 1:] = np.cumsum(0.5 * (flow.values[:, 1:] + flow.values[:, :-1]) * dx, axis=1)
    flux = np.where(mass < 0.5, -left, right)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(flow.values > floor, flux / flow.values, np.nan)
    return v


def _check_pair(flow, reference):
    if (flow.values.shape != reference.values.shape or flow.lo != reference.lo
            or flow.hi != reference.hi or not np.array_equal(flow.times, reference.times)):
        raise ValidationError("flow and reference must share time and space grids")


def rate_terms(flow, reference, epsilon):
    """Per-time pieces of the rate functional: endpoint entropies, kinetic and Fisher terms."""
    _check_pair(flow, reference)
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    vp = current_velocity_1d(flow)
    vr = current_velocity_1d(reference)
    dev = vp - vr
    kin_int = np.where(np.isfinite(dev), 0.5 * dev * dev * flow.values, 0.0)
    kinetic = np.trapezoid(kin_int, dx=flow.dx, axis=1)
    fisher = np.array([fisher_information(flow[i], reference[i]) for i in range(len(flow))])
    return {
        "times": flow.times,
        "H0": relative_entropy(flow[0], reference[0]),
        "H1": relative_entropy(flow[-1], reference[-1]),
        "kinetic": kinetic,
        "fisher": fisher,
    }


def rate_J(flow, reference, epsilon):
    """1/2 H(p0|r0) + 1/2 H(p1|r1) + eps^-1 int 1/2 |v_p - v_r|^2_p ds + eps int I(p|r) ds."""
    t = rate_terms(flow, reference, epsilon)
    s = t["times"]
    return float(
        0.5 * t["H0"] + 0.5 * t["H1"]
        + np.trapezoid(t["kinetic"], s) / epsilon
        + epsilon * np.trapezoid(t["fisher"], s)
    )


def madelung_residual(q, theta, V, hbar2, m=None, form="entropic"):
    """Max residuals (r1, r2) of the hydrodynamic system for (q, theta).

    r1: d/dt q + (q theta')'.
    r2, ``form="entropic"``: d/dt theta + theta'^2/2 + V - hbar2 [Q(q|Leb) - Q(m|Leb)].
    r2, ``form="quantum"``: d/dt theta + theta'^2/2 + V + hbar2 Q(q|Leb)  (m must be None).
    Maxima are taken over interior grid points and interior times where q > floor.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != q.values.shape:
        raise ValidationError("theta must have the same shape as the flow values")
    V = np.broadcast_to(np.asarray(V, dtype=float), q.values.shape)
    if form not in ("entropic", "quantum"):
        raise ValidationError(f"unknown form {form!r}")
    if form == "quantum" and m is not None:
        raise ValidationError("the quantum form is relative to Lebesgue measure")
    dx = q.dx
    dq = np.gradient(q.values, q.times, axis=0, edge_order=2)
    dth = np.gradient(theta, q.times, axis=0, edge_order=2)
    gx = d1(theta, dx)
    r1 = dq + d1(q.values * gx, dx)
    Qq = np.array([quantum_potential_grid(q[i]) for i in range(len(q))])
    if form == "entropic":
        Qm = 0.0 if m is None else quantum_potential_grid(m)
        r2 = dth + 0.5 * gx * gx + V - hbar2 * (Qq - Qm)
    else:
        r2 = dth + 0.5 * gx * gx + V + hbar2 * Qq
    inner = (slice(1, -1), slice(1, -1))
    on = (q.values > FLOOR)[inner]
    r1i = np.abs(r1[inner])[on]
    r2i = np.abs(r2[inner])[on]
    return float(np.max(r1i)), float(np.nanmax(r2i))
