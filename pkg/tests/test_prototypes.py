import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import assert_grad_close, central_diff, random_prototype, random_set
from confaware.errors import DimensionMismatch, EmptySet
from confaware.prototypes import (
    LOG_DIAG_MAX,
    CategoryId,
    CategoryKind,
    GaussianPrototype,
    PrototypeSet,
    Shape,
    mahalanobis,
    mahalanobis_grads,
    nearest_prototype,
)

LIVE = CategoryId(CategoryKind.LIVE, "live", 0)


def explicit_inverse_distance(proto, z):
    # independent route: form Sigma, invert it back, evaluate the quadratic form
    m = proto.factor()
    sigma = np.linalg.inv(m @ m.T)
    u = z - proto.mean
    return float(u @ np.linalg.inv(sigma) @ u)


def test_zero_at_mean(rng):
    p = random_prototype(rng, 4)
    assert mahalanobis(p, p.mean) == 0.0


def test_identity_precision():
    p = GaussianPrototype.identity(LIVE, [0.0, 0.0])
    assert mahalanobis(p, [1.0, 0.0]) == 1.0


def test_diagonal_covariance():
    p = GaussianPrototype.from_covariance(LIVE, [0.0, 0.0], np.diag([4.0, 1.0]))
    assert mahalanobis(p, [2.0, 3.0]) == pytest.approx(10.0, rel=1e-12)


def test_from_covariance_roundtrip(rng):
    b = rng.normal(size=(3, 3))
    cov = b @ b.T + np.eye(3)
    p = GaussianPrototype.from_covariance(LIVE, np.zeros(3), cov)
    np.testing.assert_allclose(p.covariance(), cov, rtol=1e-9)


def test_matches_explicit_inverse(rng):
    for _ in range(200):
        d = int(rng.integers(2, 9))
        p = random_prototype(rng, d)
        z = rng.normal(size=d) * 2
        assert mahalanobis(p, z) == pytest.approx(explicit_inverse_distance(p, z), rel=1e-8)


def test_batch_distances_match_single(rng):
    p = random_prototype(rng, 5)
    z = rng.normal(size=(7, 5))
    np.testing.assert_allclose(p.distances(z), [mahalanobis(p, row) for row in z], rtol=1e-12)


def test_dimension_mismatch(rng):
    p = random_prototype(rng, 3)
    with pytest.raises(DimensionMismatch):
        mahalanobis(p, np.zeros(4))
    with pytest.raises(DimensionMismatch):
        mahalanobis_grads(p, np.zeros(2))


def test_log_diagonal_is_clamped():
    chol = np.diag([10.0, -10.0])
    p = GaussianPrototype(LIVE, np.zeros(2), chol)
    np.testing.assert_array_equal(np.diag(p.chol), [6.0, -6.0])


def test_diagonal_shape_zeroes_off_diagonal(rng):
    p = random_prototype(rng, 4, shape=Shape.DIAGONAL)
    assert np.count_nonzero(np.tril(p.chol, -1)) == 0
    d_chol = mahalanobis_grads(p, rng.normal(size=4))[2]
    assert np.count_nonzero(np.tril(d_chol, -1)) == 0


def test_grads_zero_at_mean(rng):
    p = random_prototype(rng, 3)
    for g in mahalanobis_grads(p, p.mean):
        assert not np.any(g)


def test_grads_identity_case():
    p = GaussianPrototype.identity(LIVE, [0.0, 0.0])
    d_z, d_mean, _ = mahalanobis_grads(p, [1.0, 0.0])
    np.testing.assert_array_equal(d_z, [2.0, 0.0])
    np.testing.assert_array_equal(d_mean, [-2.0, 0.0])


@pytest.mark.parametrize("shape", [Shape.FULL, Shape.DIAGONAL])
def test_grads_match_finite_differences(rng, shape):
    for _ in range(10):
        d = int(rng.integers(2, 7))
        p = random_prototype(rng, d, shape=shape)
        z = rng.normal(size=d)
        mean, chol = p.mean.copy(), p.chol.copy()
        d_z, d_mean, d_chol = mahalanobis_grads(p, z)

        def f():
            return mahalanobis(GaussianPrototype(p.category, mean, chol, shape), z)

        assert_grad_close(d_z, central_diff(lambda: mahalanobis(p, z), z))
        assert_grad_close(d_mean, central_diff(f, mean))
        num = central_diff(f, chol)
        # perturbing entries the shape ignores has no effect, so their FD is 0 too
        assert_grad_close(d_chol, num)


def test_scaling_factor_scales_distance(rng):
    p = random_prototype(rng, 4)
    z = rng.normal(size=4)
    c = 1.7
    chol = p.chol * c
    chol[np.diag_indices(4)] = p.chol[np.diag_indices(4)] + np.log(c)
    scaled = p.with_params(p.mean, chol)
    np.testing.assert_allclose(scaled.factor(), c * p.factor(), rtol=1e-14)
    assert mahalanobis(scaled, z) == pytest.approx(c * c * mahalanobis(p, z), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    d=st.integers(1, 8),
    seed=st.integers(0, 2**32 - 1),
    scale=st.floats(1e-3, 1e3),
)
def test_nonnegative(d, seed, scale):
    r = np.random.default_rng(seed)
    chol = np.tril(r.normal(size=(d, d)))
    chol[np.diag_indices(d)] = r.uniform(-LOG_DIAG_MAX, LOG_DIAG_MAX, size=d)
    p = GaussianPrototype(LIVE, r.normal(size=d), chol)
    assert mahalanobis(p, r.normal(size=d) * scale) >= 0.0


def test_nearest_zero_distance():
    protos = [GaussianPrototype.identity(CategoryId(CategoryKind.LIVE, "live", 0), [0.0, 0.0]),
              GaussianPrototype.identity(CategoryId(CategoryKind.ATTACK, "print", 1), [3.0, 1.0])]
    cat, dist = nearest_prototype(PrototypeSet(2, tuple(protos)), [3.0, 1.0])
    assert (cat.index, dist) == (1, 0.0)


def test_nearest_tie_goes_to_lowest_index():
    protos = [GaussianPrototype.identity(CategoryId(CategoryKind.LIVE, "live", 0), [1.0, 0.0]),
              GaussianPrototype.identity(CategoryId(CategoryKind.ATTACK, "print", 1), [-1.0, 0.0])]
    cat, dist = nearest_prototype(PrototypeSet(2, tuple(protos)), [0.0, 0.0])
    assert cat.index == 0 and dist == 1.0


def test_nearest_matches_exhaustive_scan(rng):
    for _ in range(100):
        pset = random_set(rng, 3, 3)
        z = rng.normal(size=3)
        dists = [explicit_inverse_distance(p, z) for p in pset]
        cat, dist = nearest_prototype(pset, z)
        assert cat.index == int(np.argmin(dists))
        assert dist == pytest.approx(min(dists), rel=1e-8)


def test_nearest_empty_set():
    with pytest.raises(EmptySet):
        nearest_prototype(PrototypeSet(2, ()), [0.0, 0.0])


def test_set_validates_indices(rng):
    p = random_prototype(rng, 2, index=1)
    with pytest.raises(ValueError):
        PrototypeSet(2, (p,))
