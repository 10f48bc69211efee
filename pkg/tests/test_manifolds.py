import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riemann_free.geometry import CutLocusError, CutLocusWarning
from riemann_free.manifolds import (Euclidean, Grassmann, PoincareBall, PowerManifold,
                                    ProductManifold, Sphere, mobius_add)

MANIFOLDS = [Euclidean(4), Sphere(5), Sphere(5, exact_transport=True), Grassmann(6, 2),
             PoincareBall(3), PowerManifold(PoincareBall(2), 4),
             ProductManifold([Sphere(3), PoincareBall(2)])]
IDS = ["euclid", "sphere", "sphere-exact", "grassmann", "poincare", "power", "product"]


def _scale(v, c):
    return tuple(a * c for a in v) if isinstance(v, tuple) else v * c


def _sub(a, b):
    return tuple(x - y for x, y in zip(a, b)) if isinstance(a, tuple) else a - b


seeds = st.integers(min_value=0, max_value=2**31 - 1)


@pytest.mark.parametrize("m", MANIFOLDS, ids=IDS)
@settings(max_examples=60, deadline=None)
@given(seed=seeds, length=st.floats(min_value=1e-9, max_value=1.0))
def test_log_exp_roundtrip(m, seed, length):
    rng = np.random.default_rng(seed)
    x = m.random_point(rng)
    v = m.random_tangent(x, rng)
    v = _scale(v, length / m.norm(x, v))
    y = m.exp(x, v)
    assert m.contains(y)
    err = m.norm(x, _sub(m.log(x, y), v))
    assert err <= 1e-6 * (1 + length)


@pytest.mark.parametrize("m", MANIFOLDS, ids=IDS)
@settings(max_examples=60, deadline=None)
@given(seed=seeds, length=st.floats(min_value=0.0, max_value=1.0))
def test_distance_consistency(m, seed, length):
    rng = np.random.default_rng(seed)
    x = m.random_point(rng)
    v = m.random_tangent(x, rng)
    v = _scale(v, length / m.norm(x, v))
    assert m.dist(x, m.exp(x, v)) == pytest.approx(length, abs=1e-7)


@pytest.mark.parametrize("m", MANIFOLDS, ids=IDS)
def test_zero_tangent_is_identity(m):
    rng = np.random.default_rng(3)
    x = m.random_point(rng)
    y = m.exp(x, m.zero_tangent(x))
    assert m.dist(x, y) <= 1e-12
    assert m.norm(x, m.log(x, x)) <= 1e-12


@pytest.mark.parametrize("m", MANIFOLDS, ids=IDS)
def test_transport_to_self_is_identity(m):
    rng = np.random.default_rng(4)
    x = m.random_point(rng)
    v = m.random_tangent(x, rng)
    assert m.norm(x, _sub(m.transport(x, x, v), v)) <= 1e-12


@pytest.mark.parametrize("m", MANIFOLDS, ids=IDS)
def test_inner_positive_definite(m):
    rng = np.random.default_rng(5)
    x = m.random_point(rng)
    v = m.random_tangent(x, rng)
    assert m.inner(x, v, v) > 0
    assert m.inner(x, m.zero_tangent(x), m.zero_tangent(x)) == 0


@pytest.mark.parametrize("m", MANIFOLDS, ids=IDS)
def test_exp_stays_on_manifold_after_many_steps(m):
    rng = np.random.default_rng(6)
    x = m.random_point(rng)
    for _ in range(2000):
        v = m.random_tangent(x, rng)
        x = m.exp(x, _scale(v, 0.3 / m.norm(x, v)))
    assert m.contains(x)


# --- Euclidean -------------------------------------------------------------


def test_euclidean_exp_is_addition():
    e = Euclidean(2)
    np.testing.assert_array_equal(e.exp(np.array([1.0, 1.0]), np.array([2.0, -1.0])), [3.0, 0.0])
    assert e.kappa == 0.0


# --- sphere ----------------------------------------------------------------


def test_sphere_exp_example():
    s = Sphere(3)
    y = s.exp(np.array([0, 0, 1.0]), math.pi / 2 * np.array([1.0, 0, 0]))
    np.testing.assert_allclose(y, [1, 0, 0], atol=1e-15)


def test_sphere_log_example():
    s = Sphere(3)
    v = s.log(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
    np.testing.assert_allclose(v, [0, math.pi / 2, 0], atol=1e-15)


def test_sphere_log_matches_arccos_form():
    s = Sphere(4)
    rng = np.random.default_rng(0)
    for _ in range(50):
        x, y = s.random_point(rng), s.random_point(rng)
        p = y - (x @ y) * x
        ref = math.acos(np.clip(x @ y, -1, 1)) * p / np.linalg.norm(p)
        np.testing.assert_allclose(s.log(x, y), ref, atol=1e-10)


def test_sphere_small_angle_accuracy():
    s = Sphere(3)
    x = np.array([1.0, 0, 0])
    y = s.exp(x, np.array([0, 1e-9, 0]))
    assert s.dist(x, y) == pytest.approx(1e-9, rel=1e-6)


def test_sphere_antipodal_branch_is_deterministic():
    s = Sphere(3)
    x = np.array([1.0, 0, 0])
    with pytest.warns(CutLocusWarning):
        v1 = s.log(x, -x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        v2 = s.log(x, -x)
    np.testing.assert_array_equal(v1, v2)
    np.testing.assert_allclose(v1, [0, math.pi, 0])
    np.testing.assert_allclose(s.exp(x, v1), -x, atol=1e-15)


def test_sphere_projection_examples():
    s = Sphere(3)
    e1, e2 = np.eye(3)[0], np.eye(3)[1]
    np.testing.assert_array_equal(s.proj(e1, e1), np.zeros(3))
    np.testing.assert_array_equal(s.proj(e1, e2), e2)
    w = np.array([0.3, -2.0, 1.0])
    np.testing.assert_allclose(s.proj(e1, s.proj(e1, w)), s.proj(e1, w))


def test_sphere_kappa_and_zeta_branch():
    s = Sphere(3)
    assert s.kappa == 1.0
    assert s.zeta_kappa == 0.0


def test_sphere_exact_transport():
    s = Sphere(4, exact_transport=True)
    rng = np.random.default_rng(2)
    for _ in range(50):
        x, y = s.random_point(rng), s.random_point(rng)
        v = s.random_tangent(x, rng)
        w = s.transport(x, y, v)
        assert abs(float(y @ w)) < 1e-12
        assert np.linalg.norm(w) == pytest.approx(np.linalg.norm(v), rel=1e-12)
        np.testing.assert_allclose(s.transport(x, y, s.log(x, y)), -s.log(y, x), atol=1e-10)


def test_sphere_projection_transport_not_isometric():
    s = Sphere(3)
    x, y = np.eye(3)[0], np.eye(3)[1]
    v = np.eye(3)[1]
    assert np.linalg.norm(s.transport(x, y, v)) == 0.0
    assert not s.exact_transport


# --- Grassmann -------------------------------------------------------------


def test_grassmann_projection_annihilates_span():
    g = Grassmann(5, 2)
    rng = np.random.default_rng(0)
    x = g.random_point(rng)
    R = rng.standard_normal((2, 2))
    np.testing.assert_allclose(g.proj(x, x @ R), 0, atol=1e-14)


def test_grassmann_distance_invariant_to_representative():
    g = Grassmann(6, 3)
    rng = np.random.default_rng(1)
    x, y = g.random_point(rng), g.random_point(rng)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    assert g.dist(x @ Q, y) == pytest.approx(g.dist(x, y), abs=1e-12)
    assert g.dist(x, x @ Q) <= 1e-7


def test_grassmann_distance_matches_principal_angle_definition():
    g = Grassmann(6, 2)
    rng = np.random.default_rng(2)
    for _ in range(20):
        x, y = g.random_point(rng), g.random_point(rng)
        s = np.clip(np.linalg.svd(x.T @ y, compute_uv=False), -1, 1)
        assert g.dist(x, y) == pytest.approx(np.linalg.norm(np.arccos(s)), abs=1e-8)


def test_grassmann_exp_matches_svd_formula():
    g = Grassmann(5, 2)
    rng = np.random.default_rng(3)
    x = g.random_point(rng)
    v = 0.7 * g.random_tangent(x, rng)
    u, s, vt = np.linalg.svd(v, full_matrices=False)
    ref = (x @ vt.T @ np.diag(np.cos(s)) + u @ np.diag(np.sin(s))) @ vt
    assert g.dist(g.exp(x, v), ref) <= 1e-7


def test_grassmann_cut_locus_raises():
    g = Grassmann(4, 2)
    x = np.eye(4)[:, :2]
    y = np.eye(4)[:, 2:]
    with pytest.raises(CutLocusError):
        g.log(x, y)
    assert g.dist(x, y) == pytest.approx(math.pi / 2 * math.sqrt(2))


def test_grassmann_kappa_zero():
    assert Grassmann(4, 2).kappa == 0.0


# --- Poincare ball ---------------------------------------------------------


def test_poincare_log_example():
    b = PoincareBall(2)
    np.testing.assert_allclose(b.log(np.zeros(2), np.array([0.5, 0])), [math.atanh(0.5), 0], atol=1e-15)
    assert math.atanh(0.5) == pytest.approx(0.549306, abs=1e-6)


def test_poincare_egrad_scaling():
    b = PoincareBall(2)
    np.testing.assert_allclose(b.egrad_to_rgrad(np.zeros(2), np.array([1.0, 2.0])), [0.25, 0.5])


def _mobius_reference(x, y):
    x, y = list(x), list(y)
    xy = sum(a * b for a, b in zip(x, y))
    x2 = sum(a * a for a in x)
    y2 = sum(b * b for b in y)
    den = 1 + 2 * xy + x2 * y2
    return [((1 + 2 * xy + y2) * a + (1 - x2) * b) / den for a, b in zip(x, y)]


def test_mobius_examples():
    x = np.array([0.3, 0.0])
    np.testing.assert_array_equal(mobius_add(x, np.zeros(2)), x)
    np.testing.assert_array_equal(mobius_add(np.zeros(2), x), x)
    # ((1 + 0.18 + 0.09) * 0.3 + 0.91 * 0.3) / (1 + 0.18 + 0.0081) = 0.654 / 1.1881
    np.testing.assert_allclose(mobius_add(x, x), [0.654 / 1.1881, 0.0], rtol=1e-14)
    rng = np.random.default_rng(0)
    b = PoincareBall(3)
    for _ in range(50):
        p, q = b.random_point(rng), b.random_point(rng)
        r = mobius_add(p, q)
        np.testing.assert_allclose(r, _mobius_reference(p, q), rtol=1e-12)
        assert np.linalg.norm(r) < 1


def test_mobius_left_cancellation():
    b = PoincareBall(3)
    rng = np.random.default_rng(1)
    for _ in range(50):
        p, q = b.random_point(rng), b.random_point(rng)
        np.testing.assert_allclose(mobius_add(-p, mobius_add(p, q)), q, atol=1e-12)


def test_poincare_distance_closed_form():
    b = PoincareBall(3)
    rng = np.random.default_rng(2)
    for _ in range(50):
        x, y = b.random_point(rng), b.random_point(rng)
        z = 1 + 2 * np.sum((x - y) ** 2) / ((1 - x @ x) * (1 - y @ y))
        assert b.dist(x, y) == pytest.approx(math.acosh(z), rel=1e-10)


def test_poincare_transport_isometry():
    b = PoincareBall(4)
    rng = np.random.default_rng(3)
    for _ in range(200):
        x, y = b.random_point(rng), b.random_point(rng)
        v = rng.standard_normal(4)
        assert b.norm(y, b.transport(x, y, v)) == pytest.approx(b.norm(x, v), rel=1e-9)


def test_poincare_transport_along_geodesic_maps_log():
    b = PoincareBall(3)
    rng = np.random.default_rng(4)
    for _ in range(50):
        x, y = b.random_point(rng), b.random_point(rng)
        np.testing.assert_allclose(b.transport(x, y, b.log(x, y)), -b.log(y, x), atol=1e-9)


def test_poincare_boundary_clipping():
    b = PoincareBall(2)
    x = np.array([0.999999, 0])
    y = b.exp(x, np.array([10.0, 0]))
    assert np.linalg.norm(y) <= 1 - 1e-12 + 1e-16
    assert np.isfinite(b.dist(x, y))


def test_poincare_exp_uses_tangent_norm():
    # exp_x(0) = x and exp_0(v) = tanh(|v|) v / |v|
    b = PoincareBall(2)
    x = np.array([0.4, -0.2])
    np.testing.assert_array_equal(b.exp(x, np.zeros(2)), x)
    v = np.array([0.3, 0.4])
    np.testing.assert_allclose(b.exp(np.zeros(2), v), math.tanh(0.5) * v / 0.5, rtol=1e-14)


# --- products --------------------------------------------------------------


def test_product_distance_is_root_sum_of_squares():
    m = ProductManifold([Sphere(3), PoincareBall(2), Grassmann(4, 2)])
    rng = np.random.default_rng(0)
    x, y = m.random_point(rng), m.random_point(rng)
    parts = [c.dist(a, b) for c, a, b in zip(m.components, x, y)]
    assert m.dist(x, y) ** 2 == pytest.approx(sum(p * p for p in parts), rel=1e-15)
    assert m.kappa == -1.0
    assert m.n_components == 3
    assert not m.exact_transport


def test_power_matches_product():
    base = PoincareBall(3)
    pw = PowerManifold(base, 5)
    pr = ProductManifold([base] * 5)
    rng = np.random.default_rng(1)
    x, y = pw.random_point(rng), pw.random_point(rng)
    v = pw.random_tangent(x, rng)
    tx, ty, tv = tuple(x), tuple(y), tuple(v)
    assert pw.dist(x, y) == pytest.approx(pr.dist(tx, ty), rel=1e-14)
    assert pw.inner(x, v, v) == pytest.approx(pr.inner(tx, tv, tv), rel=1e-14)
    np.testing.assert_allclose(pw.exp(x, v), np.stack(pr.exp(tx, tv)), rtol=1e-14)
    np.testing.assert_allclose(pw.log(x, y), np.stack(pr.log(tx, ty)), rtol=1e-12)
    np.testing.assert_allclose(pw.component_dist(x, y), pr.component_dist(tx, ty), rtol=1e-12)
    np.testing.assert_allclose(pw.scale_components(v, np.arange(5.0)),
                               np.stack(pr.scale_components(tv, np.arange(5.0))))


def test_power_rejects_unsupported_base():
    with pytest.raises(TypeError):
        PowerManifold(Sphere(3), 2)
