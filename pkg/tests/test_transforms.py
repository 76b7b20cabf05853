"""Walsh-Hadamard and projection tests against explicit-matrix oracles."""

import numpy as np
import pytest

from subzero.errors import DimensionError
from subzero.transforms import (
    DenseProjection,
    FastfoodProjection,
    build_dense,
    build_fastfood,
    next_pow_two,
    per_token_projections,
    project,
    walsh_hadamard,
)


def hadamard_matrix(n):
    # Sylvester construction, the textbook definition the fast transform
    # must agree with.
    h = np.array([[1.0]])
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


def test_walsh_hadamard_known_values():
    assert np.array_equal(walsh_hadamard([5.0]), [5.0])
    assert np.array_equal(walsh_hadamard([1.0, 0.0]), [1.0, 1.0])
    assert np.array_equal(walsh_hadamard([1.0, 1.0]), [2.0, 0.0])
    assert np.array_equal(walsh_hadamard([1.0, 1.0, 1.0, 1.0]), [4.0, 0.0, 0.0, 0.0])
    # applying twice multiplies by the length
    v = np.array([3.0, -1.0, 2.0, 0.0])
    assert np.array_equal(walsh_hadamard(walsh_hadamard(v)), 4.0 * v)


def test_walsh_hadamard_matches_matrix():
    """The butterfly recursion equals multiplication by the Sylvester matrix."""
    gen = np.random.default_rng(7)
    for n in (1, 2, 4, 8, 16, 32, 64):
        h = hadamard_matrix(n)
        v = gen.standard_normal(n)
        got = walsh_hadamard(v)
        want = h @ v
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


def test_walsh_hadamard_involution_random():
    gen = np.random.default_rng(11)
    for n in (2, 8, 128):
        v = gen.standard_normal(n)
        back = walsh_hadamard(walsh_hadamard(v)) / n
        assert np.allclose(back, v, rtol=1e-12, atol=1e-12)


def test_walsh_hadamard_linearity():
    gen = np.random.default_rng(3)
    v = gen.standard_normal(16)
    w = gen.standard_normal(16)
    lhs = walsh_hadamard(2.0 * v + w)
    rhs = 2.0 * walsh_hadamard(v) + walsh_hadamard(w)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_walsh_hadamard_rejects_bad_lengths():
    for n in (3, 5, 6, 7, 12, 100):
        with pytest.raises(DimensionError):
            walsh_hadamard(np.ones(n))
    with pytest.raises(DimensionError):
        walsh_hadamard(np.ones((4, 4)))
    with pytest.raises(DimensionError):
        walsh_hadamard(np.array([]))


def test_next_pow_two():
    for p, want in [(1, 1), (2, 2), (3, 4), (4, 4), (5, 8), (48, 64),
                    (256, 256), (257, 512)]:
        assert next_pow_two(p) == want
    with pytest.raises(DimensionError):
        next_pow_two(0)


def test_fastfood_reproducible_and_distinct():
    a = build_fastfood(42, p=64, q=16)
    b = build_fastfood(42, p=64, q=16)
    c = build_fastfood(43, p=64, q=16)
    assert np.array_equal(a.sign_flip, b.sign_flip)
    assert np.array_equal(a.perm, b.perm)
    assert np.array_equal(a.gauss, b.gauss)
    v = np.random.default_rng(0).standard_normal(16)
    assert np.array_equal(a.apply(v), b.apply(v))
    assert not np.array_equal(a.apply(v), c.apply(v))


def test_fastfood_factors_are_frozen():
    proj = build_fastfood(0, p=32, q=8)
    with pytest.raises(ValueError):
        proj.gauss[0] = 99.0
    with pytest.raises(ValueError):
        proj.sign_flip[0] = 0.0


def test_fastfood_matches_explicit_composition():
    """apply() agrees with the factor matrices multiplied out by hand."""
    proj = build_fastfood(5, p=48, q=10)  # p_pad = 64 exercises pad + truncate
    h = hadamard_matrix(proj.p_pad)
    perm_mat = np.eye(proj.p_pad)[proj.perm]
    full = proj.norm_const * (h @ np.diag(proj.gauss) @ perm_mat @ h
                              @ np.diag(proj.sign_flip))
    v = np.random.default_rng(1).standard_normal(10)
    padded = np.zeros(proj.p_pad)
    padded[:10] = v
    want = (full @ padded)[:48]
    assert np.allclose(proj.apply(v), want, rtol=1e-10, atol=1e-12)


def test_fastfood_is_linear():
    proj = build_fastfood(9, p=32, q=8)
    gen = np.random.default_rng(2)
    v = gen.standard_normal(8)
    w = gen.standard_normal(8)
    lhs = proj.apply(3.0 * v - w)
    rhs = 3.0 * proj.apply(v) - proj.apply(w)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_fastfood_zero_maps_to_zero():
    proj = build_fastfood(0, p=64, q=16)
    out = proj.apply(np.zeros(16))
    assert np.array_equal(out, np.zeros(64))


def test_fastfood_expected_isometry():
    """E[||Fv||^2] over fresh projections equals ||v||^2.

    Monte-Carlo over seeds; the 5% band is generous for 10^4 draws
    (observed relative error is under 2%).
    """
    v = np.random.default_rng(123).standard_normal(32)
    target = float(v @ v)
    total = 0.0
    m = 10_000
    for seed in range(m):
        out = build_fastfood(seed, p=256, q=32).apply(v)
        total += float(out @ out)
    ratio = (total / m) / target
    assert abs(ratio - 1.0) < 0.05, f"energy ratio {ratio}"


def test_fastfood_expected_isometry_padded():
    # p = 48 pads to 64 then truncates; the norm constant accounts for both
    v = np.random.default_rng(7).standard_normal(10)
    target = float(v @ v)
    total = 0.0
    m = 4_000
    for seed in range(m):
        out = build_fastfood(seed, p=48, q=10).apply(v)
        total += float(out @ out)
    ratio = (total / m) / target
    assert abs(ratio - 1.0) < 0.08, f"energy ratio {ratio}"


def test_dense_expected_isometry():
    v = np.random.default_rng(5).standard_normal(32)
    target = float(v @ v)
    total = 0.0
    m = 4_000
    for seed in range(m):
        out = build_dense(seed, p=256, q=32).apply(v)
        total += float(out @ out)
    ratio = (total / m) / target
    assert abs(ratio - 1.0) < 0.05, f"energy ratio {ratio}"


def test_dense_matches_matrix():
    proj = build_dense(3, p=20, q=6)
    v = np.random.default_rng(4).standard_normal(6)
    assert np.array_equal(proj.apply(v), proj.matrix @ v)
    assert proj.matrix.shape == (20, 6)


def test_project_helper_dispatches():
    v = np.random.default_rng(0).standard_normal(8)
    ff = build_fastfood(1, p=16, q=8)
    dn = build_dense(1, p=16, q=8)
    assert np.array_equal(project(ff, v), ff.apply(v))
    assert np.array_equal(project(dn, v), dn.apply(v))


def test_dimension_errors():
    with pytest.raises(DimensionError):
        build_fastfood(0, p=8, q=9)  # q > p
    with pytest.raises(DimensionError):
        build_fastfood(0, p=0, q=1)
    with pytest.raises(DimensionError):
        build_dense(0, p=4, q=0)
    proj = build_fastfood(0, p=16, q=4)
    with pytest.raises(DimensionError):
        proj.apply(np.ones(5))
    with pytest.raises(DimensionError):
        build_dense(0, p=16, q=4).apply(np.ones(16))


def test_per_token_projections():
    projs = per_token_projections(10, count=4, p=32, q=8)
    assert len(projs) == 4
    assert all(isinstance(p, FastfoodProjection) for p in projs)
    # slots get independent draws, and the family is reproducible
    assert not np.array_equal(projs[0].gauss, projs[1].gauss)
    again = per_token_projections(10, count=4, p=32, q=8)
    for a, b in zip(projs, again):
        assert np.array_equal(a.gauss, b.gauss)
    dense = per_token_projections(10, count=2, p=32, q=8, kind="dense")
    assert all(isinstance(p, DenseProjection) for p in dense)
    with pytest.raises(ValueError):
        per_token_projections(10, count=2, p=32, q=8, kind="sparse")
