import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intrelight.intrinsics import (
    PASS_NAMES,
    ConditioningStack,
    IntrinsicTriplet,
    RenderPasses,
    build_conditioning,
    compose_image,
    conditioning_from_passes,
    load_passes,
    passes_to_intrinsics,
    percentile,
    percentile_rescale,
    rescale_triplet,
    save_passes,
)
from oracles import literal_intrinsics, literal_rescale, sorted_percentile


def _const(v, h=4, w=4):
    return np.broadcast_to(np.asarray(v, np.float32).reshape(-1, 1, 1), (3, h, w)).copy()


def _random_passes(rng, h=5, w=6):
    d = {n: (rng.random((3, h, w)) * rng.choice([1.0, 4.0])).astype(np.float32) for n in PASS_NAMES}
    d["diffuse_color"] = (rng.random((3, h, w)) * 1.3 - 0.1).clip(0, None).astype(np.float32)
    return d


def test_compose_examples():
    t = IntrinsicTriplet(_const(0.5), _const(1.0), _const(0.1))
    np.testing.assert_allclose(compose_image(t).data, 0.6, atol=1e-7)
    t = IntrinsicTriplet(_const(0.7), _const(0.0), _const(0.0))
    assert not compose_image(t).data.any()
    t = IntrinsicTriplet(_const(1.0), _const(0.3), _const(-0.1))
    np.testing.assert_allclose(compose_image(t).data, 0.2, atol=1e-7)


def test_triplet_invariants():
    with pytest.raises(ValueError):
        IntrinsicTriplet(_const(0.5), _const(1.0), np.zeros((3, 5, 4)))
    with pytest.raises(ValueError):
        IntrinsicTriplet(_const(1.2), _const(1.0), _const(0.0))
    with pytest.raises(ValueError):
        IntrinsicTriplet(_const(0.5), _const(-0.1), _const(0.0))


def test_passes_examples():
    zero = passes_to_intrinsics(RenderPasses(_const(0.0)))
    for arr in (zero.albedo, zero.shading, zero.residual):
        assert not arr.any()
    t = passes_to_intrinsics(RenderPasses(_const(0.8), diffuse_direct=_const(0.5), diffuse_indirect=_const(0.25)))
    np.testing.assert_allclose(t.albedo, 0.8)
    np.testing.assert_allclose(t.shading, 0.75)
    assert not t.residual.any()
    t = passes_to_intrinsics(RenderPasses(_const(0.0), glossy_color=_const([1, 0, 0]),
                                          glossy_direct=_const(2.0), emission=_const(0.5)))
    np.testing.assert_allclose(t.residual[:, 0, 0], [2.5, 0.5, 0.5])


def test_passes_match_literal_oracle(rng):
    for _ in range(5):
        d = _random_passes(rng)
        t = passes_to_intrinsics(RenderPasses(**d))
        A, S, R = literal_intrinsics(d)
        assert np.abs(t.albedo - A).max() == 0
        assert np.abs(t.shading - S).max() == 0
        assert np.abs(t.residual - R).max() == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_passes_always_valid(seed):
    t = passes_to_intrinsics(RenderPasses(**_random_passes(np.random.default_rng(seed), 3, 3)))
    assert t.albedo.min() >= 0 and t.albedo.max() <= 1
    assert t.shading.min() >= 0 and t.residual.min() >= 0


def test_passes_reject_bad_input():
    with pytest.raises(ValueError):
        RenderPasses(_const(0.5), diffuse_direct=np.zeros((3, 2, 2)))
    with pytest.raises(ValueError):
        RenderPasses(_const(0.5), emission=_const(-1.0))


def test_rescale_constant_buffers():
    s, r, tau = percentile_rescale(_const(2.0), _const(1.0))
    assert tau == 2.0
    np.testing.assert_array_equal(s, 1.0)
    np.testing.assert_array_equal(r, 0.5)


def test_rescale_eps_floor():
    s, r, tau = percentile_rescale(_const(0.0), _const(0.0), eps=1e-4)
    assert tau == pytest.approx(1e-4)
    assert not s.any() and not r.any()


def test_rescale_ramp():
    ramp = np.linspace(0.0, 1.0, 10000, dtype=np.float32).reshape(1, 100, 100)
    s, _, tau = percentile_rescale(ramp, np.zeros_like(ramp))
    assert tau == sorted_percentile(ramp)
    assert tau == pytest.approx(0.98, abs=1e-3)
    assert np.mean(s == 1.0) == pytest.approx(0.02, abs=1e-3)


def test_rescale_matches_sort_oracle(rng):
    for shape in [(3, 1, 1), (3, 7, 5), (3, 16, 16), (3, 64, 64)]:
        S = (rng.random(shape) ** 3 * 5).astype(np.float32)
        R = (rng.random(shape) ** 6 * 5).astype(np.float32)
        s, r, tau = percentile_rescale(S, R)
        s_ref, r_ref, tau_ref = literal_rescale(S, R)
        assert tau == tau_ref
        np.testing.assert_array_equal(s, s_ref)
        np.testing.assert_array_equal(r, r_ref)


def test_percentile_matches_sort(rng):
    for n in [1, 2, 49, 50, 51, 100, 1234]:
        v = rng.normal(size=n).astype(np.float32)
        assert percentile(v) == sorted_percentile(v)


def test_rescale_preserves_ratios(rng):
    S = (rng.random((3, 20, 20)) * 10).astype(np.float32)
    R = (rng.random((3, 20, 20)) * 3).astype(np.float32)
    s, r, tau = percentile_rescale(S, R)
    below_s, below_r = S < tau, R < tau
    ratio_in = S[below_s][:50, None] / (R[below_r][None, :50] + 1e-3)
    ratio_out = s[below_s][:50, None] / (r[below_r][None, :50] + 1e-3 / tau)
    np.testing.assert_allclose(ratio_out, ratio_in, rtol=1e-4)


def test_build_conditioning_layout(rng):
    stack = build_conditioning(IntrinsicTriplet(_const(0.2), _const(0.5), _const(0.1)))
    np.testing.assert_allclose(stack.data[:, 0, 0], [0.2] * 3 + [0.5] * 3 + [0.1] * 3)
    zero = build_conditioning(IntrinsicTriplet(_const(0.0), _const(0.0), _const(0.0)))
    assert not zero.data.any()
    t = IntrinsicTriplet(*(rng.random((3, 3, 4, 4)).astype(np.float32)))
    stack = build_conditioning(t)
    np.testing.assert_array_equal(stack.data[4], t.shading[1])
    np.testing.assert_array_equal(stack.shading, t.shading)


def test_build_conditioning_rejects_unscaled():
    with pytest.raises(ValueError):
        build_conditioning(IntrinsicTriplet(_const(0.2), _const(1.5), _const(0.1)))
    with pytest.raises(ValueError):
        ConditioningStack(np.zeros((6, 4, 4)))


def test_persistence_round_trips(tmp_path, rng):
    d = _random_passes(rng)
    passes = RenderPasses(**d)
    save_passes(passes, tmp_path / "p")
    back = load_passes(tmp_path / "p")
    for n in PASS_NAMES:
        np.testing.assert_array_equal(getattr(back, n), getattr(passes, n))
    t = rescale_triplet(passes_to_intrinsics(passes))
    t.save(tmp_path)
    back_t = IntrinsicTriplet.load(tmp_path)
    np.testing.assert_array_equal(back_t.shading, t.shading)
    c = conditioning_from_passes(passes)
    c.save(tmp_path)
    np.testing.assert_array_equal(ConditioningStack.load(tmp_path).data, c.data)


def test_load_passes_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_passes(tmp_path / "absent")
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError, match="missing pass files"):
        load_passes(tmp_path / "empty")
