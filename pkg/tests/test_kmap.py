from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from magkit.checks import face_enumeration_min_norm
from magkit.errors import CapabilityError, ValidationError
from magkit.kmap import (
    PermutationOrbit,
    SourceSet,
    mag_drift,
    min_norm_certificate,
    min_norm_point,
    nearest_permutation,
    orbit_dist2,
    perm_rank,
    potentials,
    proj_o,
    projection_set,
)


def orbit_of(points, **kw):
    return PermutationOrbit(SourceSet(np.asarray(points, dtype=float)), **kw)


def brute_nearest(y, pts):
    k, d = pts.shape
    best = None
    for perm in permutations(range(k)):
        img = pts[list(perm)].reshape(-1)
        d2 = float(np.sum((y - img) ** 2))
        if best is None or d2 < best[1] - 1e-12:
            best = (perm, d2, img)
    return best


def test_source_set_rejects_duplicates():
    with pytest.raises(ValidationError):
        SourceSet(np.array([[0.0, 0.0], [0.0, 0.0]]))


def test_orbit_sizes_and_radius():
    orbit = orbit_of([[0.0, 1.0], [2.0, 0.0], [1.0, 1.0]])
    assert orbit.size == 6
    assert orbit.images.shape == (6, 6)
    norms = np.linalg.norm(orbit.images, axis=1)
    assert np.allclose(norms, orbit.r)
    assert orbit.r_h2 == pytest.approx(orbit.r**2 / 3)
    assert [perm_rank(p) for p in orbit.perms] == list(range(6))


def test_enumeration_capability_limit():
    orbit = PermutationOrbit(SourceSet.random(5, 1, seed=0), k_max=4)
    with pytest.raises(CapabilityError):
        orbit.images
    res = nearest_permutation(np.arange(5.0), orbit)
    assert len(res.perm) == 5


def test_nearest_single_source():
    orbit = orbit_of([[1.0, 2.0]])
    y = np.array([0.5, -1.0])
    res = nearest_permutation(y, orbit)
    assert res.perm == (0,)
    assert np.allclose(res.image, [1.0, 2.0])
    assert res.dist2 == pytest.approx(0.25 + 9.0)


def test_nearest_two_points_on_line():
    orbit = orbit_of([[0.0], [1.0]])
    res = nearest_permutation([0.9, 0.2], orbit)
    assert res.perm == (1, 0)
    assert np.allclose(res.image, [1.0, 0.0])
    assert res.dist2 == pytest.approx(0.05, abs=1e-15)


def test_nearest_on_orbit_prefers_lexicographic_minimum():
    orbit = orbit_of([[0.0], [1.0], [3.0]])
    for perm in orbit.perms:
        res = nearest_permutation(orbit.image(perm), orbit)
        assert res.perm == tuple(perm)
        assert res.dist2 == 0.0
    tied = orbit_of([[0.0], [1.0]])
    assert nearest_permutation([0.5, 0.5], tied).perm == (0, 1)


def test_nearest_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k, d = rng.integers(1, 6), rng.integers(1, 4)
        pts = rng.standard_normal((k, d))
        orbit = orbit_of(pts)
        y = rng.standard_normal(k * d) * 2
        res = nearest_permutation(y, orbit)
        perm, d2, _ = brute_nearest(y, pts)
        assert res.dist2 == pytest.approx(d2, rel=1e-12, abs=1e-12)
        assert res.perm == perm


def test_projection_set_examples():
    orbit = orbit_of([[0.0, 1.0], [2.0, 0.0], [1.0, 1.0]])
    assert projection_set(np.zeros(6), orbit).size == 6
    line = orbit_of([[0.0], [1.0]])
    ties = projection_set([0.3, 0.3], line)
    assert ties.size == 2
    assert {tuple(m) for m in ties.members} == {(0.0, 1.0), (1.0, 0.0)}


def test_projection_set_generic_is_nearest_image():
    rng = np.random.default_rng(1)
    for _ in range(100):
        orbit = PermutationOrbit(SourceSet.random(4, 2, seed=int(rng.integers(1 << 30))))
        y = rng.standard_normal(8)
        ties = projection_set(y, orbit)
        assert ties.size == 1
        assert np.array_equal(ties.members[0], nearest_permutation(y, orbit).image)


def test_projection_set_rejects_negative_tolerance():
    with pytest.raises(ValidationError):
        projection_set([0.0, 0.0], orbit_of([[0.0], [1.0]]), rel_tol=-1.0)


def test_min_norm_point_examples():
    assert np.allclose(min_norm_point([[2.0, -1.0]]), [2.0, -1.0])
    assert np.allclose(min_norm_point([[1.0, 2.0], [-1.0, -2.0]]), 0.0, atol=1e-12)
    x = min_norm_point([[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(x, [0.5, 0.5], atol=1e-12)
    res = minimize_scalar(lambda a: a**2 + (1 - a) ** 2, bounds=(0, 1), method="bounded", options={"xatol": 1e-12})
    assert np.allclose(x, [res.x, 1 - res.x], atol=1e-6)


def test_min_norm_point_matches_face_enumeration():
    rng = np.random.default_rng(2)
    for _ in range(300):
        n, dim = rng.integers(1, 5), rng.integers(1, 5)
        P = rng.standard_normal((n, dim)) + rng.standard_normal(dim)
        x = min_norm_point(P)
        ref = face_enumeration_min_norm(P)
        assert np.linalg.norm(x - ref) <= 1e-8
        assert min_norm_certificate(P, x) >= -1e-10


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.floats(-5, 5), min_size=3, max_size=3), min_size=1, max_size=7))
def test_min_norm_point_is_optimal_in_hull(points):
    P = np.array(points)
    x = min_norm_point(P)
    scale = max(1.0, float(np.max(np.abs(P)))) ** 2
    assert min_norm_certificate(P, x) >= -1e-8 * scale
    assert x @ x <= np.min(np.einsum("ij,ij->i", P, P)) + 1e-9 * scale


def test_proj_o_examples():
    orbit = orbit_of([[0.0], [1.0]])
    assert np.allclose(proj_o([0.9, 0.2], orbit), [1.0, 0.0])
    assert np.allclose(proj_o([0.4, 0.4], orbit), [0.5, 0.5])
    sym = orbit_of([[-1.0], [1.0]])
    assert np.allclose(proj_o([0.0, 0.0], sym), 0.0, atol=1e-12)


def test_mag_drift_examples():
    orbit = orbit_of([[0.0], [1.0]])
    assert np.allclose(mag_drift([0.9, 0.2], orbit), [-0.1, 0.2])
    assert np.allclose(mag_drift([1.0, 0.0], orbit), 0.0)
    single = orbit_of([[0.3, -0.2]])
    assert np.allclose(mag_drift([1.0, 1.0], single), [0.7, 1.2])


def test_potentials_examples_and_identity():
    orbit = orbit_of([[0.0, 1.0], [2.0, 0.0], [1.0, 1.0]])
    y = orbit.images[3]
    phi, pi_s = potentials(y, orbit)
    assert phi == 0.0
    assert pi_s == pytest.approx(orbit.r_h2)
    single = orbit_of([[1.0, -1.0]])
    phi, _ = potentials([0.0, 0.0], single)
    assert phi == pytest.approx(1.0)
    rng = np.random.default_rng(3)
    for _ in range(50):
        y = rng.standard_normal(6) * 2
        phi, pi_s = potentials(y, orbit)
        d2 = orbit_dist2(y, orbit)
        assert phi == pytest.approx(d2.min() / 6, rel=1e-12)
        assert pi_s == pytest.approx(np.max(orbit.images @ y) / 3, rel=1e-12)
        assert phi == pytest.approx(y @ y / 6 - pi_s + orbit.r_h2 / 2, rel=1e-10, abs=1e-12)


def test_drift_is_gradient_of_half_distance():
    orbit = orbit_of([[0.0, 1.0], [2.0, 0.0], [1.0, 1.0]])
    rng = np.random.default_rng(4)
    for _ in range(20):
        y = rng.standard_normal(6)
        f = lambda z: 0.5 * orbit_dist2(z, orbit).min()
        h = 1e-6
        grad = np.array([(f(y + h * e) - f(y - h * e)) / (2 * h) for e in np.eye(6)])
        assert np.allclose(grad, mag_drift(y, orbit), atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(1, 3))
def test_nearest_is_invariant_under_block_relabeling(seed, k, d):
    rng = np.random.default_rng(seed)
    orbit = PermutationOrbit(SourceSet.random(k, d, seed=seed))
    y = rng.standard_normal(k * d)
    sigma = rng.permutation(k)
    y_perm = y.reshape(k, d)[sigma].reshape(-1)
    assert nearest_permutation(y, orbit).dist2 == pytest.approx(nearest_permutation(y_perm, orbit).dist2, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_proj_o_lies_in_hull_of_ties_and_has_min_norm(seed):
    rng = np.random.default_rng(seed)
    orbit = PermutationOrbit(SourceSet.random(3, 1, seed=seed))
    a, b = orbit.images[rng.choice(orbit.size, 2, replace=False)]
    y = 0.5 * (a + b)
    ties = projection_set(y, orbit, 1e-9)
    x = proj_o(y, orbit)
    assert min_norm_certificate(ties.members, x) >= -1e-10
