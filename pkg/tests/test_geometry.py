import numpy as np
import pytest

from lsr.errors import DegenerateShape, EmptyInput
from lsr.geometry import (SimilarityTransform, apply_transform, mean_shape,
                          normalize_shape, procrustes_align)


def rand_shape(seed, n=10):
    return np.random.default_rng(seed).normal(size=(n, 2)) * 10.0


def test_align_identity():
    s = rand_shape(0)
    t = procrustes_align(s, s)
    assert t.scale == pytest.approx(1.0, abs=1e-12)
    assert t.rotation == pytest.approx(0.0, abs=1e-12)
    assert t.tx == pytest.approx(0.0, abs=1e-9)
    assert t.ty == pytest.approx(0.0, abs=1e-9)


def test_align_inverse_of_generating_map():
    ref = rand_shape(1)
    src = 2.0 * ref + np.array([3.0, 4.0])
    t = procrustes_align(src, ref)
    assert t.scale == pytest.approx(0.5, abs=1e-12)
    assert t.rotation == pytest.approx(0.0, abs=1e-12)
    assert t.tx == pytest.approx(-1.5, abs=1e-9)
    assert t.ty == pytest.approx(-2.0, abs=1e-9)


def _lstsq_similarity_residual(src, ref):
    """Normal-equations oracle: solve for [a, b, tx, ty] in
    T(p) = [[a, -b], [b, a]] p + t by linear least squares."""
    n = len(src)
    A = np.zeros((2 * n, 4))
    A[0::2, 0] = src[:, 0]
    A[0::2, 1] = -src[:, 1]
    A[0::2, 2] = 1.0
    A[1::2, 0] = src[:, 1]
    A[1::2, 1] = src[:, 0]
    A[1::2, 3] = 1.0
    b = ref.reshape(-1)
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    return float(np.sum((A @ coef - b) ** 2))


def test_align_matches_least_squares_oracle():
    rng = np.random.default_rng(7)
    src = rng.normal(size=(10, 2)) * 5.0
    ref = rng.normal(size=(10, 2)) * 5.0
    t = procrustes_align(src, ref)
    residual = float(np.sum((t.apply(src) - ref) ** 2))
    assert residual == pytest.approx(_lstsq_similarity_residual(src, ref), abs=1e-9)


def test_align_degenerate_shape():
    src = np.ones((6, 2))
    with pytest.raises(DegenerateShape):
        procrustes_align(src, rand_shape(2, 6))


def test_mean_shape_single_element():
    s = rand_shape(3)
    assert np.allclose(mean_shape([s]), normalize_shape(s))


def test_mean_shape_symmetry():
    s = rand_shape(4)
    delta = np.array([2.0, -1.0])
    m = mean_shape([s + delta, s - delta])
    assert np.allclose(m, normalize_shape(s), atol=1e-9)


def _gpa_oracle(shapes, iterations=100):
    """Independent long-run fixed-point mean via lstsq-based alignment."""
    def norm(s):
        c = s - s.mean(axis=0)
        return c / np.sqrt(np.mean(np.sum(c**2, axis=1)))

    def align(src, ref):
        n = len(src)
        A = np.zeros((2 * n, 4))
        A[0::2, 0], A[0::2, 1], A[0::2, 2] = src[:, 0], -src[:, 1], 1.0
        A[1::2, 0], A[1::2, 1], A[1::2, 3] = src[:, 1], src[:, 0], 1.0
        coef, *_ = np.linalg.lstsq(A, ref.reshape(-1), rcond=None)
        a, b, tx, ty = coef
        return src @ np.array([[a, b], [-b, a]]) + np.array([tx, ty])

    mean = norm(np.mean([norm(s) for s in shapes], axis=0))
    for _ in range(iterations):
        mean = norm(np.mean([align(s, mean) for s in shapes], axis=0))
    return mean


def test_mean_shape_matches_fixed_point_oracle():
    rng = np.random.default_rng(5)
    base = rng.normal(size=(8, 2)) * 10.0
    shapes = [base + rng.normal(scale=0.5, size=base.shape) for _ in range(20)]
    assert np.allclose(mean_shape(shapes, iterations=100), _gpa_oracle(shapes),
                       atol=1e-6)


def test_mean_shape_order_invariance():
    rng = np.random.default_rng(6)
    base = rng.normal(size=(7, 2)) * 4.0
    shapes = [base + rng.normal(scale=0.3, size=base.shape) for _ in range(10)]
    m1 = mean_shape(shapes)
    m2 = mean_shape(shapes[::-1])
    assert np.allclose(m1, m2, atol=1e-6)


def test_mean_shape_empty():
    with pytest.raises(EmptyInput):
        mean_shape([])


def test_apply_identity_and_scale():
    s = rand_shape(8)
    assert np.array_equal(apply_transform(SimilarityTransform.identity(), s), s)
    t = SimilarityTransform(2.0, 0.0, 0.0, 0.0)
    out = apply_transform(t, np.array([[1.0, 0.0]]))
    assert np.allclose(out, [[2.0, 0.0]])


def test_transform_inverse_round_trip():
    rng = np.random.default_rng(9)
    for _ in range(20):
        t = SimilarityTransform(float(rng.uniform(0.2, 3.0)),
                                float(rng.uniform(-np.pi, np.pi)),
                                float(rng.normal() * 5), float(rng.normal() * 5))
        s = rng.normal(size=(6, 2))
        back = t.inverse().apply(t.apply(s))
        assert np.allclose(back, s, atol=1e-9)


def test_align_after_transform_is_inverse():
    rng = np.random.default_rng(10)
    for _ in range(10):
        s = rng.normal(size=(9, 2)) * 6.0
        t = SimilarityTransform(float(rng.uniform(0.5, 2.0)),
                                float(rng.uniform(-1, 1)),
                                float(rng.normal()), float(rng.normal()))
        back = procrustes_align(t.apply(s), s)
        comp = back.compose(t)
        assert comp.scale == pytest.approx(1.0, abs=1e-6)
        assert abs(comp.tx) < 1e-6 and abs(comp.ty) < 1e-6


def test_transform_preserves_distance_ratios():
    rng = np.random.default_rng(11)
    s = rng.normal(size=(5, 2)) * 3.0
    t = SimilarityTransform(1.7, 0.6, 2.0, -1.0)
    out = t.apply(s)
    d_in = np.linalg.norm(s[0] - s[1]) / np.linalg.norm(s[2] - s[3])
    d_out = np.linalg.norm(out[0] - out[1]) / np.linalg.norm(out[2] - out[3])
    assert d_out == pytest.approx(d_in, rel=1e-12)
