import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from magkit.entropic import (
    GridDensity,
    GridFlow,
    current_velocity_1d,
    d1,
    d2,
    decomposition_residual,
    fisher_information,
    madelung_residual,
    potential_identity_residual,
    quantum_average,
    quantum_potential_grid,
    rate_J,
    relative_entropy,
)
from magkit.errors import ValidationError


def gauss(mu, var):
    return lambda x: np.exp(-(x - mu) ** 2 / (2 * var))


def dens(f, lo=-12.0, hi=12.0, n=2048):
    return GridDensity.from_function(f, lo, hi, n)


def test_grid_validation():
    with pytest.raises(ValidationError):
        GridDensity(0.0, 1.0, np.ones(8))
    with pytest.raises(ValidationError):
        GridDensity(0.0, 1.0, -np.ones(32))
    with pytest.raises(ValidationError):
        GridFlow(np.array([0.0, 1.0]), 0.0, 1.0, np.ones((2, 32)) * 3)
    with pytest.warns(RuntimeWarning):
        GridDensity(0.0, 1.0, np.ones(32)).check_margin()


def test_stencils_are_second_order():
    errs1, errs2 = [], []
    for n in [101, 201]:
        x = np.linspace(0, 2, n)
        dx = x[1] - x[0]
        errs1.append(np.max(np.abs(d1(np.sin(x), dx) - np.cos(x))))
        errs2.append(np.max(np.abs(d2(np.sin(x), dx) + np.sin(x))))
    assert errs1[0] / errs1[1] == pytest.approx(4, rel=0.1)
    assert errs2[0] / errs2[1] == pytest.approx(4, rel=0.1)


def test_relative_entropy_examples():
    p = dens(gauss(0.0, 1.0))
    assert relative_entropy(p, p) == 0.0
    q = dens(gauss(0.3, 1.0))
    assert relative_entropy(q, p) == pytest.approx(0.045, abs=1e-6)
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = dens(gauss(rng.normal(), rng.uniform(0.5, 2)), n=256)
        b = dens(gauss(rng.normal(), rng.uniform(0.5, 2)), n=256)
        assert relative_entropy(a, b) >= -1e-12


def test_fisher_information_examples():
    p = dens(gauss(0.0, 0.8))
    assert fisher_information(p, p) == 0.0
    q = dens(gauss(0.5, 0.8))
    expect = 0.5**2 / (8 * 0.8**2)
    assert fisher_information(q, p) == pytest.approx(expect, rel=1e-5)
    bumpy = lambda x: np.exp(-x**2 / 2) * (1.2 + np.sin(x))
    z, _ = quad(bumpy, -10, 10, epsabs=1e-14)
    score = lambda x: 0.5 * (-x + np.cos(x) / (1.2 + np.sin(x)) + x / 1.3)
    ref, _ = quad(lambda x: 0.5 * score(x) ** 2 * bumpy(x) / z, -10, 10, epsabs=1e-14)
    errs = []
    for n in [256, 512, 1024]:
        a = GridDensity.from_function(bumpy, -10, 10, n)
        c = GridDensity.from_function(gauss(0.0, 1.3), -10, 10, n)
        errs.append(abs(fisher_information(a, c) - ref))
    assert errs[-1] <= 1e-4 * ref
    assert np.log2(errs[0] / errs[1]) >= 1.8 and np.log2(errs[1] / errs[2]) >= 1.8


def test_quantum_potential_examples():
    p = dens(gauss(0.2, 1.4))
    assert np.nanmax(np.abs(quantum_potential_grid(p, p))) == 0.0
    var = 0.7
    m = dens(gauss(0.0, var), lo=-8, hi=8, n=2049)
    q = quantum_potential_grid(m)
    assert q[1024] == pytest.approx(1 / (4 * var), rel=1e-5)
    x = m.x
    closed = 1 / (4 * var) - x**2 / (8 * var**2)
    assert np.allclose(q[1:-1], closed[1:-1], atol=1e-5)
    assert quantum_average(m) == pytest.approx(1 / (8 * var), rel=1e-6)


def test_decomposition_residual_second_order():
    res = []
    for n in [256, 512, 1024]:
        q = GridDensity.from_function(lambda x: np.exp(-x**2 / 2) * (1.2 + np.sin(x)), -8, 8, n)
        m = GridDensity.from_function(gauss(0.3, 1.5), -8, 8, n)
        res.append(decomposition_residual(q, m))
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(orders >= 1.8)


def test_potential_identity_examples():
    x = np.linspace(-3, 3, 2048)
    assert potential_identity_residual(0.5 * x**2, -3, 3, 1.0) <= 1e-6
    assert potential_identity_residual(np.full(2048, 2.0), -3, 3, 0.7) == 0.0
    res = [potential_identity_residual(np.cos(np.linspace(-3, 3, n)), -3, 3, 0.5) for n in [200, 400, 800]]
    assert np.log2(res[0] / res[1]) >= 1.8 and np.log2(res[1] / res[2]) >= 1.8


def test_current_velocity_examples():
    times = np.linspace(0.0, 1.0, 21)
    static = GridFlow.from_function(lambda t, x: np.exp(-x**2 / 2), times, -10, 10, 512)
    assert np.nanmax(np.abs(current_velocity_1d(static))) <= 1e-12
    u = 0.4
    moving = GridFlow.from_function(lambda t, x: np.exp(-(x - u * t) ** 2 / 2), np.linspace(0, 1, 101), -10, 10, 1024)
    v = current_velocity_1d(moving)
    on = moving.values > 1e-3
    assert np.max(np.abs(v[on] - u)) <= 1e-3
    sig2 = lambda t: 1.0 + 0.8 * t
    heat = GridFlow.from_function(lambda t, x: np.exp(-x**2 / (2 * sig2(t))), np.linspace(0, 1, 101), -10, 10, 1024)
    v = current_velocity_1d(heat)
    x = heat.x
    for i in [10, 50, 90]:
        t = heat.times[i]
        expect = x * 0.4 / sig2(t)  # x sigma'/sigma
        mask = heat.values[i] > 1e-3
        assert np.max(np.abs(v[i][mask] - expect[mask])) <= 1e-3


def _shifted_pair(eps, u, tau, nt=81, nx=2048):
    times = np.linspace(0.0, 1.0, nt)
    var = lambda t: tau + eps * t
    ref = GridFlow.from_function(lambda t, x: np.exp(-x**2 / (2 * var(t))), times, -12, 12, nx)
    flow = GridFlow.from_function(lambda t, x: np.exp(-(x - u * t) ** 2 / (2 * var(t))), times, -12, 12, nx)
    return flow, ref


def test_rate_J_examples():
    eps, u, tau = 0.5, 0.3, 1.0
    flow, ref = _shifted_pair(eps, u, tau)
    assert rate_J(ref, ref, eps) <= 1e-10
    var = lambda t: tau + eps * t
    h1 = u**2 / (2 * var(1.0))
    # velocity gap u (1 - t eps / (2 var)); Fisher term (u t)^2 / (8 var^2)
    kinetic, _ = quad(lambda t: 0.5 * (u * (1 - t * eps / (2 * var(t)))) ** 2, 0, 1)
    fisher, _ = quad(lambda t: (u * t) ** 2 / (8 * var(t) ** 2), 0, 1)
    closed = 0.5 * h1 + kinetic / eps + eps * fisher
    assert rate_J(flow, ref, eps) == pytest.approx(closed, rel=1e-4)
    assert closed == pytest.approx(u**2 / (2 * eps), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(0.5, 2.0), st.floats(0.1, 1.0))
def test_rate_J_nonnegative(u, stretch, eps):
    times = np.linspace(0.0, 1.0, 11)
    ref = GridFlow.from_function(lambda t, x: np.exp(-x**2 / (2 * (1 + t))), times, -12, 12, 512)
    flow = GridFlow.from_function(lambda t, x: np.exp(-(x - u * t) ** 2 / (2 * stretch * (1 + t))), times, -12, 12, 512)
    assert rate_J(flow, ref, eps) >= -1e-12


def _heat_madelung(eps, nx=1024, nt=81):
    times = np.linspace(0.0, 1.0, nt)
    var = lambda t: 1.0 + eps * t
    q = GridFlow.from_function(lambda t, x: np.exp(-x**2 / (2 * var(t))), times, -10, 10, nx)
    x = q.x
    theta = np.array([x**2 * eps / (4 * var(t)) + eps / 4 * np.log(var(t)) for t in times])
    return q, theta


def test_madelung_static_solution():
    times = np.linspace(0.0, 1.0, 11)
    q = GridFlow.from_function(lambda t, x: np.exp(-x**2 / 2) * (1 + 0.3 * np.cos(x)), times, -10, 10, 1024)
    theta = np.zeros(q.values.shape)
    hbar2 = 0.25
    Q = np.array([quantum_potential_grid(q[i]) for i in range(len(q))])
    r1, r2 = madelung_residual(q, theta, -hbar2 * Q, hbar2, form="quantum")
    assert r1 <= 1e-12 and r2 <= 1e-12
    r1, r2 = madelung_residual(q, theta, hbar2 * Q, hbar2, form="entropic")
    assert r1 <= 1e-12 and r2 <= 1e-12


def test_madelung_heat_flow_second_order_and_negative_control():
    eps = 0.5
    res = []
    for nx, nt in [(256, 41), (512, 81)]:
        q, theta = _heat_madelung(eps, nx, nt)
        res.append(madelung_residual(q, theta, 0.0, eps**2, form="entropic"))
    assert res[1][0] < 1e-3 and res[1][1] < 1e-3
    assert res[0][0] / res[1][0] >= 3.0 and res[0][1] / res[1][1] >= 3.0
    q, theta = _heat_madelung(eps, 512, 81)
    rng = np.random.default_rng(0)
    bad = theta + 0.05 * np.sin(3 * q.x)[None, :] * rng.uniform(0.5, 1.5)
    r1, r2 = madelung_residual(q, bad, 0.0, eps**2, form="entropic")
    assert r1 > 1e-2 and r2 > 1e-2
