from math import exp, factorial, lgamma, log, pi

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from magkit.errors import ValidationError
from magkit.heatflow import (
    FlowParams,
    a_star,
    acceleration,
    closest_diagnostics,
    force_field,
    log_density,
    m_velocity,
    quantum_potential_mixture,
    r_velocity,
    soft_assignment,
    soft_weights,
    velocity_jacobian,
)
from magkit.kmap import PermutationOrbit, SourceSet, mag_drift


def params_of(points, eps=0.3, **kw):
    return FlowParams(eps, PermutationOrbit(SourceSet(np.asarray(points, dtype=float))), **kw)


def mixture_log_density(y, images, tau):
    """Reference log-density of the uniform Gaussian mixture."""
    d2 = np.sum((y - images) ** 2, axis=1)
    n = images.shape[1]
    return logsumexp(-d2 / (2 * tau)) - log(len(images)) - 0.5 * n * log(2 * pi * tau)


def laplacian_sqrt_quantum(y, images, tau, h=1e-3):
    """-Lap(sqrt m)/(2 sqrt m) by central differences of sqrt m = exp(log m / 2)."""
    base = 0.5 * mixture_log_density(y, images, tau)
    lap = 0.0
    for e in np.eye(len(y)):
        up = 0.5 * mixture_log_density(y + h * e, images, tau)
        dn = 0.5 * mixture_log_density(y - h * e, images, tau)
        lap += (np.exp(up - base) + np.exp(dn - base) - 2.0) / h**2
    return -lap / 2.0


def test_flow_params_validation():
    orbit = PermutationOrbit(SourceSet(np.array([[0.0]])))
    with pytest.raises(ValidationError):
        FlowParams(0.0, orbit)
    with pytest.raises(ValidationError):
        FlowParams(1.0, orbit, clock="x")
    assert FlowParams(1.0, orbit, "t", 0.5).s == pytest.approx(exp(1.0))


def test_soft_weights_limits():
    pts = [[0.0, 1.0], [2.0, 0.0], [1.0, 1.0]]
    sa = soft_weights(np.array([0.3, 0.1, -0.2, 0.5, 0.9, 0.0]), params_of(pts, eps=1e8))
    assert np.allclose(sa.weights, 1 / 6, atol=1e-7)
    sym = soft_weights(np.zeros(2), params_of([[-1.0], [1.0]]))
    assert np.allclose(sym.weights, 0.5)
    one = soft_weights([4.0, 5.0], params_of([[1.0, 2.0]]))
    assert np.allclose(one.weights, [1.0])
    assert np.allclose(one.soft_mean, [1.0, 2.0])


def test_nearest_weight_bound():
    pts = [[0.0, 0.0], [1.0, 0.2], [0.3, 1.1]]
    params = params_of(pts, eps=0.02)
    orbit = params.orbit
    rng = np.random.default_rng(0)
    for _ in range(50):
        y = orbit.images[rng.integers(orbit.size)] + 0.2 * rng.standard_normal(6)
        t = rng.uniform(-0.5, 0.2)
        diag = closest_diagnostics(y, orbit)
        if diag.n_star != 1:
            continue
        tau = params.epsilon * exp(2 * t)
        w = soft_assignment(y, params, tau).weights
        bound = 1 - factorial(3) * exp(-diag.gap_c * exp(-2 * t) / params.epsilon)
        assert w[diag.tie_set.indices[0]] >= bound - 1e-15


def test_log_density_examples():
    one = params_of([[1.0, -1.0]], eps=0.5)
    y = np.array([0.2, 0.4])
    s = 1.7
    tau = 0.5 * s
    expect = -np.sum((y - [1.0, -1.0]) ** 2) / (2 * tau) - log(2 * pi * tau)
    assert log_density(y, one, s) == pytest.approx(expect, rel=1e-13)
    sep = params_of([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]], eps=0.01)
    x0 = sep.orbit.images[2]
    dominant = -lgamma(4) - 0.5 * 6 * log(2 * pi * 0.01)
    assert log_density(x0, sep, 1.0) == pytest.approx(dominant, abs=1e-12)
    rng = np.random.default_rng(1)
    for _ in range(20):
        y = rng.standard_normal(6) * 2
        assert log_density(y, sep, 1.3) == pytest.approx(mixture_log_density(y, sep.orbit.images, 0.013), rel=1e-12)
        shuffled = y.reshape(3, 2)[rng.permutation(3)].reshape(-1)
        assert log_density(shuffled, sep, 1.3) == pytest.approx(log_density(y, sep, 1.3), rel=1e-12)


def test_velocities():
    one = params_of([[1.0, -1.0]])
    y = np.array([0.2, 0.4])
    assert np.allclose(m_velocity(y, 0.3, one), y - [1.0, -1.0])
    pts = [[0.0], [1.0], [2.5]]
    params = params_of(pts, eps=0.4)
    rng = np.random.default_rng(2)
    for _ in range(10):
        y = rng.standard_normal(3)
        t = rng.uniform(-1, 1)
        assert np.allclose(r_velocity(y, exp(2 * t), params) * 2 * exp(2 * t), m_velocity(y, t, params))
        h = 1e-6
        grad = np.array([(mixture_log_density(y + h * e, params.orbit.images, 0.4 * exp(2 * t))
                          - mixture_log_density(y - h * e, params.orbit.images, 0.4 * exp(2 * t))) / (2 * h)
                         for e in np.eye(3)])
        assert np.allclose(m_velocity(y, t, params), -0.4 * exp(2 * t) * grad, atol=1e-6)


def test_velocity_small_epsilon_limits():
    pts = [[0.0], [1.0]]
    y = np.array([0.55, 0.45])
    s = 1.0
    limit = mag_drift(y, params_of(pts).orbit) / (2 * s)
    errs = [np.linalg.norm(r_velocity(y, s, params_of(pts, eps)) - limit) for eps in [0.2, 0.1, 0.05, 0.025, 1e-3]]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-12
    tied = np.array([0.7, 0.7])
    v = m_velocity(tied, 0.0, params_of(pts, 1e-3))
    assert np.allclose(v, tied - [0.5, 0.5], atol=1e-12)


def test_jacobian_examples():
    one = params_of([[1.0, -1.0]])
    assert np.allclose(velocity_jacobian([0.3, 0.1], 0.2, one), np.eye(2))
    sym = params_of([[-1.0], [1.0]], eps=0.5)
    tau = 0.5
    expect = np.eye(2) - np.array([[1.0, -1.0], [-1.0, 1.0]]) / tau
    assert np.allclose(velocity_jacobian([0.0, 0.0], 0.0, sym), expect)
    params = params_of([[0.0, 0.0], [1.0, 0.5], [-0.3, 1.0]], eps=0.3)
    rng = np.random.default_rng(3)
    for _ in range(10):
        y = rng.standard_normal(6)
        t = rng.uniform(-0.5, 0.5)
        h = 1e-6
        fd = np.column_stack([(m_velocity(y + h * e, t, params) - m_velocity(y - h * e, t, params)) / (2 * h)
                              for e in np.eye(6)])
        J = velocity_jacobian(y, t, params)
        assert np.allclose(J, J.T)
        assert np.allclose(J, fd, atol=1e-6)


def test_quantum_potential_single_gaussian():
    one = params_of([[1.0, -1.0]], eps=0.5)
    y = np.array([0.2, 0.4])
    for t in [-0.3, 0.0, 0.4]:
        tau = 0.5 * exp(2 * t)
        q = quantum_potential_mixture(y, t, one)
        closed = 2 / (4 * tau) - np.sum((y - [1.0, -1.0]) ** 2) / (8 * tau**2)
        assert q == pytest.approx(closed, rel=1e-12)
        assert q == pytest.approx(laplacian_sqrt_quantum(y, one.orbit.images, tau), rel=1e-5)


def test_quantum_potential_matches_laplacian_oracle():
    params = params_of([[0.0, 0.0], [1.0, 0.5], [-0.3, 1.0]], eps=0.2)
    rng = np.random.default_rng(4)
    for _ in range(10):
        y = rng.standard_normal(6)
        t = rng.uniform(-0.3, 0.3)
        tau = 0.2 * exp(2 * t)
        ref = laplacian_sqrt_quantum(y, params.orbit.images, tau)
        assert quantum_potential_mixture(y, t, params) == pytest.approx(ref, rel=1e-5, abs=1e-6)
    sym = params_of([[-1.0, 0.0], [1.0, 0.0]], eps=1e-3)
    tau = 1e-3
    ref = laplacian_sqrt_quantum(np.zeros(4), sym.orbit.images, tau, h=1e-5)
    assert quantum_potential_mixture(np.zeros(4), 0.0, sym) == pytest.approx(ref, rel=1e-5)


def test_quantum_potential_block_symmetry():
    params = params_of([[0.0, 0.0], [1.0, 0.5], [-0.3, 1.0]], eps=0.2)
    rng = np.random.default_rng(5)
    y = rng.standard_normal(6)
    for perm in params.orbit.perms:
        z = y.reshape(3, 2)[perm].reshape(-1)
        assert quantum_potential_mixture(z, 0.1, params) == pytest.approx(quantum_potential_mixture(y, 0.1, params))


def test_force_field_examples():
    one = params_of([[1.0, -1.0]])
    assert np.allclose(force_field([0.3, 0.2], 0.0, one), 0.0)
    y = np.array([0.3, 0.2])
    assert np.allclose(acceleration(y, 0.0, one), y - [1.0, -1.0])


def test_force_identity_gradient():
    params = params_of([[0.0, 0.0], [1.0, 0.5], [-0.3, 1.0]], eps=0.2)
    rng = np.random.default_rng(6)
    for _ in range(10):
        y = rng.standard_normal(6)
        t = rng.uniform(-0.3, 0.3)
        tau = 0.2 * exp(2 * t)
        h = 1e-5
        grad = np.array([(quantum_potential_mixture(y + h * e, t, params)
                          - quantum_potential_mixture(y - h * e, t, params)) / (2 * h) for e in np.eye(6)])
        rhs = -m_velocity(y, t, params) + force_field(y, t, params)
        assert np.allclose(4 * tau**2 * grad, rhs, rtol=1e-5, atol=1e-7)


def test_acceleration_is_convective_derivative():
    params = params_of([[0.0, 0.0], [1.0, 0.5], [-0.3, 1.0]], eps=0.3)
    rng = np.random.default_rng(7)
    for _ in range(10):
        y = rng.standard_normal(6)
        t = rng.uniform(-0.3, 0.3)
        h = 1e-5
        v = m_velocity(y, t, params)
        dt = (m_velocity(y, t + h, params) - m_velocity(y, t - h, params)) / (2 * h)
        conv = (m_velocity(y + h * v, t, params) - m_velocity(y - h * v, t, params)) / (2 * h)
        assert np.allclose(dt + conv, acceleration(y, t, params), atol=1e-4)


def test_acceleration_small_epsilon_limit():
    params = params_of([[0.0], [1.0]], eps=1e-4)
    y = np.array([0.9, 0.2])
    assert np.allclose(acceleration(y, 0.0, params), mag_drift(y, params.orbit), atol=1e-8)


def test_a_star_examples():
    assert np.allclose(a_star([[1.0, 2.0]]), 0.0)
    assert np.allclose(a_star([[1.0, 0.0], [0.0, 1.0]]), 0.0, atol=1e-15)
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0])
    assert np.allclose(a_star([a, b, -a]), 2 * b / 27, atol=1e-15)


def test_closest_diagnostics_bounds():
    rng = np.random.default_rng(8)
    for _ in range(200):
        k, d = rng.integers(1, 5), rng.integers(1, 4)
        orbit = PermutationOrbit(SourceSet.random(k, d, seed=int(rng.integers(1 << 30))))
        y = rng.standard_normal(k * d) * rng.uniform(0.1, 3)
        diag = closest_diagnostics(y, orbit)
        r = orbit.r
        assert np.linalg.norm(diag.A_star) <= 2 * r**3 + 1e-12
        if np.isfinite(diag.gap_c):
            assert 0 < diag.gap_c <= 2 * r * np.linalg.norm(y) + 1e-12
    full = closest_diagnostics(np.zeros(2), PermutationOrbit(SourceSet(np.array([[0.0], [1.0]]))))
    assert full.n_star == 2 and full.gap_c == np.inf


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 2.0), st.floats(-0.5, 0.5))
def test_weights_form_a_distribution(seed, eps, t):
    orbit = PermutationOrbit(SourceSet.random(3, 2, seed=seed))
    y = np.random.default_rng(seed).standard_normal(6) * 2
    sa = soft_assignment(y, FlowParams(eps, orbit), eps * exp(2 * t))
    assert sa.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(sa.weights >= 0)
    assert np.allclose(np.exp(sa.log_weights), sa.weights, atol=1e-14)
    centered = orbit.images - sa.soft_mean
    assert np.allclose(sa.soft_second, (sa.weights[:, None] * centered).T @ centered, atol=1e-12)
