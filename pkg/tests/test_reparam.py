"""Parameter-count, composition, and round-trip tests for the variants.

The counting oracle is independent of the formulas in the module: the
initial parameters are flattened and their length counted.
"""

import numpy as np
import pytest

from subzero.errors import DimensionError
from subzero.reparam import (
    IntrinsicParams,
    PromptShape,
    VariantKind,
    compose_weight,
    delta,
    flatten,
    init_intrinsic,
    parse_params,
    reconstruct_prompt,
    serialize_params,
    unflatten,
)
from subzero.transforms import build_dense, build_fastfood, per_token_projections

ALL_VARIANTS = list(VariantKind)


def random_params(seed, shape, variant):
    gen = np.random.default_rng(seed)
    q, m, r = shape.q, shape.m, shape.r
    if variant is VariantKind.STANDARD:
        return IntrinsicParams(shape, variant, direct=gen.standard_normal((q, m)))
    return IntrinsicParams(
        shape, variant,
        left=gen.standard_normal((q, r)),
        scale=gen.standard_normal(r) if variant.has_diag else None,
        right=gen.standard_normal((m, r)),
        shared=gen.standard_normal(q) if variant.has_share else None,
    )


def test_delta_reference_shape():
    # q=62, m=8, r=5: full stack has 5*(62+8+1) + 62 = 417 parameters
    shape = PromptShape(p=256, m=8, q=62, r=5)
    assert delta(shape, VariantKind.LOW_RANK_DIAG_SHARE) == 417
    assert delta(shape, VariantKind.STANDARD) == 62 * 8
    assert delta(shape, VariantKind.LOW_RANK) == 5 * 70
    assert delta(shape, VariantKind.LOW_RANK_DIAG) == 5 * 71
    assert delta(shape, VariantKind.LOW_RANK_SHARE) == 5 * 70 + 62


def test_delta_small_shape():
    shape = PromptShape(p=8, m=5, q=5, r=5)
    assert delta(shape, VariantKind.LOW_RANK_DIAG_SHARE) == 60


def test_delta_counts_actual_parameters():
    """Exhaustive check for small shapes: delta equals the flattened length."""
    for m in (1, 2, 5, 16):
        for q in (1, 3, 16):
            for r in range(1, min(q, m) + 1):
                shape = PromptShape(p=16, m=m, q=q, r=r)
                for variant in ALL_VARIANTS:
                    params = init_intrinsic(0, shape, variant)
                    assert flatten(params).size == delta(shape, variant), (
                        shape, variant)


def test_init_composes_to_zero():
    shape = PromptShape(p=32, m=6, q=10, r=3)
    for variant in ALL_VARIANTS:
        params = init_intrinsic(4, shape, variant)
        w = compose_weight(params)
        assert w.shape == (10, 6)
        assert np.array_equal(w, np.zeros((10, 6))), variant


def test_init_field_layout():
    shape = PromptShape(p=32, m=6, q=10, r=3)
    full = init_intrinsic(7, shape, VariantKind.LOW_RANK_DIAG_SHARE)
    assert np.array_equal(full.left, np.zeros((10, 3)))
    assert np.array_equal(full.scale, np.ones(3))
    assert full.right.shape == (6, 3)
    assert np.array_equal(full.shared, np.zeros(10))
    assert full.direct is None
    # V is seeded: same seed reproduces it, a different seed does not
    assert np.array_equal(full.right,
                          init_intrinsic(7, shape, VariantKind.LOW_RANK).right)
    assert not np.array_equal(full.right,
                              init_intrinsic(8, shape, VariantKind.LOW_RANK).right)
    plain = init_intrinsic(7, shape, VariantKind.LOW_RANK)
    assert plain.scale is None and plain.shared is None
    std = init_intrinsic(7, shape, VariantKind.STANDARD)
    assert std.left is None and np.array_equal(std.direct, np.zeros((10, 6)))


def test_compose_weight_matches_elementwise_oracle():
    """W entries computed with explicit loops over the factor sums."""
    shape = PromptShape(p=16, m=5, q=7, r=2)
    for variant in ALL_VARIANTS:
        params = random_params(99, shape, variant)
        w = compose_weight(params)
        for i in range(7):
            for j in range(5):
                if variant is VariantKind.STANDARD:
                    want = params.direct[i, j]
                else:
                    want = 0.0
                    for k in range(2):
                        s_k = params.scale[k] if variant.has_diag else 1.0
                        want += params.left[i, k] * s_k * params.right[j, k]
                    if variant.has_share:
                        want += params.shared[i]
                assert abs(w[i, j] - want) < 1e-12, (variant, i, j)


def test_flatten_unflatten_round_trip():
    shape = PromptShape(p=16, m=5, q=7, r=2)
    for variant in ALL_VARIANTS:
        params = random_params(13, shape, variant)
        vec = flatten(params)
        assert vec.shape == (delta(shape, variant),)
        back = unflatten(vec, shape, variant)
        for name in ("left", "scale", "right", "shared", "direct"):
            a, b = getattr(params, name), getattr(back, name)
            if a is None:
                assert b is None
            else:
                assert np.array_equal(a, b), (variant, name)
        # and the composed matrices agree bit for bit
        assert np.array_equal(compose_weight(params), compose_weight(back))


def test_flatten_block_order():
    """U occupies the first q*r slots column-major, then s, then V, then u.

    For q=62, r=5 the first scale entry sits at flat index 310.
    """
    shape = PromptShape(p=256, m=8, q=62, r=5)
    vec = flatten(init_intrinsic(0, shape, VariantKind.LOW_RANK_DIAG_SHARE))
    assert np.array_equal(vec[:310], np.zeros(310))          # U = 0
    assert np.array_equal(vec[310:315], np.ones(5))          # s = 1
    assert np.array_equal(vec[355:417], np.zeros(62))        # u = 0
    # poke one value through the flat vector and find it in the right field
    vec = vec.copy()
    vec[310] = 2.5
    vec[0] = -1.0
    back = unflatten(vec, shape, VariantKind.LOW_RANK_DIAG_SHARE)
    assert back.scale[0] == 2.5
    assert back.left[0, 0] == -1.0
    # column-major: flat index 1 is row 1 of column 0
    vec[1] = 7.0
    assert unflatten(vec, shape, VariantKind.LOW_RANK_DIAG_SHARE).left[1, 0] == 7.0


def test_unflatten_rejects_wrong_length():
    shape = PromptShape(p=16, m=5, q=7, r=2)
    with pytest.raises(DimensionError):
        unflatten(np.zeros(10), shape, VariantKind.LOW_RANK)
    with pytest.raises(DimensionError):
        unflatten(np.zeros((24, 1)), shape, VariantKind.LOW_RANK)


def test_shape_validation():
    with pytest.raises(DimensionError):
        PromptShape(p=4, m=2, q=5, r=1)   # q > p
    with pytest.raises(DimensionError):
        PromptShape(p=4, m=2, q=2, r=3)   # r > min(q, m)
    with pytest.raises(DimensionError):
        PromptShape(p=4, m=0, q=2, r=1)
    with pytest.raises(DimensionError):
        PromptShape(p=4, m=2, q=2, r=0)
    assert PromptShape.from_total_subspace(256, 8, 496, 5).q == 62


def test_params_field_validation():
    shape = PromptShape(p=16, m=5, q=7, r=2)
    with pytest.raises(DimensionError):
        IntrinsicParams(shape, VariantKind.LOW_RANK, left=np.zeros((7, 3)),
                        right=np.zeros((5, 3)))
    with pytest.raises(DimensionError):
        IntrinsicParams(shape, VariantKind.LOW_RANK, left=np.zeros((7, 2)),
                        right=np.zeros((5, 2)), scale=np.ones(2))
    with pytest.raises(DimensionError):
        IntrinsicParams(shape, VariantKind.STANDARD, direct=np.zeros((5, 7)))
    with pytest.raises(DimensionError):
        IntrinsicParams(shape, VariantKind.STANDARD)


def test_reconstruct_prompt_identity_at_init():
    """W = 0 must leave the base prompt untouched, exactly."""
    shape = PromptShape(p=32, m=4, q=8, r=2)
    base = np.random.default_rng(0).standard_normal((32, 4))
    projections = per_token_projections(5, count=4, p=32, q=8)
    for variant in ALL_VARIANTS:
        params = init_intrinsic(3, shape, variant)
        full = reconstruct_prompt(params, base, projections)
        assert np.array_equal(full.tuned, base), variant
        assert np.array_equal(full.base, base)


def test_reconstruct_prompt_matches_manual_projection():
    shape = PromptShape(p=32, m=4, q=8, r=2)
    base = np.random.default_rng(1).standard_normal((32, 4))
    projections = per_token_projections(6, count=4, p=32, q=8, kind="dense")
    params = random_params(2, shape, VariantKind.LOW_RANK_DIAG_SHARE)
    full = reconstruct_prompt(params, base, projections)
    w = compose_weight(params)
    for i in range(4):
        want = base[:, i] + projections[i].matrix @ w[:, i]
        assert np.allclose(full.tuned[:, i], want, rtol=1e-12, atol=1e-14)


def test_reconstruct_prompt_validates_inputs():
    shape = PromptShape(p=32, m=4, q=8, r=2)
    params = init_intrinsic(0, shape, VariantKind.LOW_RANK)
    base = np.zeros((32, 4))
    good = per_token_projections(0, count=4, p=32, q=8)
    with pytest.raises(DimensionError):
        reconstruct_prompt(params, np.zeros((4, 32)), good)
    with pytest.raises(DimensionError):
        reconstruct_prompt(params, base, good[:3])
    bad = tuple(build_fastfood(i, p=32, q=4) for i in range(4))
    with pytest.raises(DimensionError):
        reconstruct_prompt(params, base, bad)
    mixed = good[:3] + (build_dense(9, p=16, q=8),)
    with pytest.raises(DimensionError):
        reconstruct_prompt(params, base, mixed)


def test_serialize_round_trip():
    shape = PromptShape(p=16, m=5, q=7, r=2)
    for variant in ALL_VARIANTS:
        params = random_params(21, shape, variant)
        text = serialize_params(params)
        back = parse_params(text)
        assert back.variant is variant
        assert back.shape == shape
        assert np.array_equal(flatten(params), flatten(back)), variant


def test_serialize_preserves_extreme_values():
    shape = PromptShape(p=4, m=2, q=2, r=1)
    params = IntrinsicParams(
        shape, VariantKind.LOW_RANK,
        left=np.array([[1e-300], [-1.2345678901234567]]),
        right=np.array([[3.0000000000000004], [5e300]]),
    )
    back = parse_params(serialize_params(params))
    assert np.array_equal(flatten(params), flatten(back))


def test_parse_rejects_garbage():
    with pytest.raises(ValueError):
        parse_params("not a header\n")
    shape = PromptShape(p=4, m=2, q=2, r=1)
    text = serialize_params(init_intrinsic(0, shape, VariantKind.LOW_RANK))
    truncated = "\n".join(text.split("\n")[:-3])
    with pytest.raises(ValueError):
        parse_params(truncated)


def test_variant_flags():
    assert VariantKind.LOW_RANK_DIAG.has_diag
    assert not VariantKind.LOW_RANK_DIAG.has_share
    assert VariantKind.LOW_RANK_SHARE.has_share
    assert VariantKind.LOW_RANK_DIAG_SHARE.has_diag
    assert VariantKind.LOW_RANK_DIAG_SHARE.has_share
    assert not VariantKind.STANDARD.is_factorized
    assert VariantKind.LOW_RANK.is_factorized
    assert VariantKind("low_rank_diag_share") is VariantKind.LOW_RANK_DIAG_SHARE
