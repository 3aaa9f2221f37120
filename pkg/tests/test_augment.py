import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intrelight.augment import (
    PIPELINE_ORDER,
    AugmentConfig,
    RngStream,
    augment_array,
    augment_conditioning,
    color_cast,
    edge_crack_mask,
    edge_cracks,
    gamma,
    gaussian_blur,
    gaussian_kernel,
    gaussian_noise,
    hole_mask,
    holes,
    posterize,
    salt_pepper,
)
from intrelight.intrinsics import ConditioningStack

DATA = Path(__file__).parent / "data"
CHI2_3DOF_P01 = 11.345  # upper 1% point of chi-square with 3 degrees of freedom


def _golden_input():
    return np.random.default_rng(3).random((9, 16, 16)).astype(np.float32)


def _zero_probs(**kw):
    probs = {f"{n}_p": 0.0 for n in PIPELINE_ORDER}
    probs.update(kw)
    return AugmentConfig(p_apply=1.0, **probs)


def test_defaults_match_table():
    c = AugmentConfig()
    assert c.p_apply == 0.70
    assert (c.color_cast_p, c.color_cast_scale, c.color_cast_bias) == (0.50, (0.85, 1.15), (-0.06, 0.06))
    assert (c.gamma_p, c.gamma_range) == (0.30, (0.75, 1.35))
    assert (c.holes_p, c.holes_fraction) == (0.50, (0.005, 0.040))
    assert (c.edge_cracks_p, c.edge_cracks_quantile, c.edge_cracks_strength) == (0.50, (0.92, 0.99), (0.4, 1.0))
    assert (c.salt_pepper_p, c.salt_pepper_fraction) == (0.25, (0.0, 0.003))
    assert (c.gaussian_noise_p, c.gaussian_noise_sigma) == (0.50, (0.0, 0.04))
    assert (c.gaussian_blur_p, c.gaussian_blur_sigma) == (0.25, (0.4, 1.2))
    assert (c.posterize_p, c.posterize_levels) == (0.25, (12, 64))


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(gamma_range=(0.75, 2.0))
    with pytest.raises(ValueError):
        AugmentConfig(p_apply=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(holes_fraction=(0.03, 0.01))
    with pytest.raises(ValueError):
        AugmentConfig.from_dict({"bogus": 1})
    c = AugmentConfig(gamma_p=0.1)
    assert AugmentConfig.from_dict(c.to_dict()) == c


def test_gate_failure_is_identity():
    x = _golden_input()
    out, trace = augment_array(x, AugmentConfig(), RngStream(42), 0)
    assert not trace.applied
    np.testing.assert_array_equal(out, x)
    out, trace = augment_array(x, AugmentConfig.disabled(), RngStream(42), 5)
    assert not trace.applied and np.array_equal(out, x)


def test_zero_probabilities_identity():
    x = _golden_input()
    for i in range(10):
        out, trace = augment_array(x, _zero_probs(), RngStream(1), i)
        assert trace.applied and not trace.fired
        np.testing.assert_array_equal(out, x)


def test_golden_output():
    golden = np.load(DATA / "augment_golden.npz")["outputs"]
    x = _golden_input()
    for i, ref in enumerate(golden):
        out, _ = augment_array(x, AugmentConfig(), RngStream(42), i)
        np.testing.assert_array_equal(out, ref)


def test_golden_hand_checked_pixels():
    # sample 1 fires color_cast then gamma only; recompute three pixels from the drawn parameters
    x = _golden_input()
    out, trace = augment_array(x, AugmentConfig(), RngStream(42), 1)
    assert trace.fired == ["color_cast", "gamma"]
    scale = np.array(trace.params["color_cast"]["scale"])
    bias = np.array(trace.params["color_cast"]["bias"])
    g = np.array(trace.params["gamma"]["gamma"])
    for ch, y, xx in [(0, 0, 0), (4, 7, 3), (8, 15, 15)]:
        grp, c = divmod(ch, 3)
        v = float(x[ch, y, xx]) * scale[grp, c] + bias[grp, c]
        v = max(v, 0.0) ** g[grp, c]
        assert out[ch, y, xx] == pytest.approx(min(max(v, 0.0), 1.0), abs=1e-6)


def test_determinism_and_sample_separation():
    x = _golden_input()
    a, _ = augment_array(x, AugmentConfig(p_apply=1.0), RngStream(9), 3)
    b, _ = augment_array(x, AugmentConfig(p_apply=1.0), RngStream(9), 3)
    c, _ = augment_array(x, AugmentConfig(p_apply=1.0), RngStream(9), 4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_order_sensitivity():
    x = _golden_input()
    cfg = _zero_probs(gaussian_noise_p=1.0, gaussian_blur_p=1.0)
    order = list(PIPELINE_ORDER)
    i, j = order.index("gaussian_noise"), order.index("gaussian_blur")
    order[i], order[j] = order[j], order[i]
    mandated, _ = augment_array(x, cfg, RngStream(0), 0)
    swapped, _ = augment_array(x, cfg, RngStream(0), 0, order=order)
    assert not np.array_equal(mandated, swapped)
    with pytest.raises(ValueError):
        augment_array(x, cfg, RngStream(0), 0, order=order[:-1])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), sample=st.integers(0, 10**6))
def test_output_in_unit_range(seed, sample):
    x = np.random.default_rng(sample).random((9, 16, 16)).astype(np.float32)
    out, _ = augment_array(x, AugmentConfig(p_apply=1.0, color_cast_p=1.0, gaussian_noise_p=1.0), RngStream(seed), sample)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_color_cast_examples():
    g = np.full((3, 4, 4), 0.5, np.float32)
    np.testing.assert_array_equal(color_cast(g, [1, 1, 1], [0, 0, 0]), g)
    np.testing.assert_allclose(color_cast(g, [1.1] * 3, [0.05] * 3), 0.60, atol=1e-6)


def test_color_cast_groups_draw_separately():
    x = np.full((9, 8, 8), 0.5, np.float32)
    out, trace = augment_array(x, _zero_probs(color_cast_p=1.0), RngStream(7), 0)
    assert not np.array_equal(out[0:3], out[3:6])
    scale = np.array(trace.params["color_cast"]["scale"])
    assert len({tuple(r) for r in scale}) == 3


def test_gamma_examples():
    g = np.linspace(0, 1, 48, dtype=np.float32).reshape(3, 4, 4)
    np.testing.assert_allclose(gamma(g, 1.0), g)
    for gv in (0.75, 1.0, 1.35):
        out = gamma(np.array([0.0, 1.0], np.float32).reshape(1, 1, 2), gv)
        assert out.ravel().tolist() == [0.0, 1.0]
    with pytest.raises(ValueError):
        gamma(g, 2.0)


def test_holes_minimum_fraction_count(rng):
    x = rng.random((9, 64, 64)).astype(np.float32)
    out = holes(x, 0.005, False, np.random.default_rng(1))
    changed = np.any(out != x, axis=0).mean()
    assert 0.004 <= changed <= 0.006
    assert np.any(out != x, axis=0).sum() == math.ceil(0.005 * 64 * 64)


def test_holes_fill_value():
    x = np.full((9, 32, 32), 0.5, np.float32)
    out = holes(x, 0.04, True, np.random.default_rng(2))
    hit = np.any(out != x, axis=0)
    assert hit.any()
    vals = out[:, hit]
    assert vals.min() >= 0.5 and vals.max() <= 0.51


def test_holes_uniform_without_edge_bias():
    x = np.full((9, 64, 64), 0.5, np.float32)
    counts = np.zeros(4)
    for seed in range(100):
        mask = hole_mask(x, False, np.random.default_rng(seed))
        y, xx = np.unravel_index(np.argmax(mask), mask.shape)
        counts[2 * (y >= 32) + (xx >= 32)] += 1
    chi2 = ((counts - 25.0) ** 2 / 25.0).sum()
    assert chi2 < CHI2_3DOF_P01


def test_holes_edge_bias_prefers_edges():
    x = np.zeros((9, 64, 64), np.float32)
    x[3:6, :, 32:] = 1.0
    near = 0
    for seed in range(20):
        out = holes(x, 0.02, True, np.random.default_rng(seed))
        cols = np.nonzero(np.any(out != x, axis=0))[1]
        near += np.mean(np.abs(cols - 31.5) < 8)
    assert near / 20 > 0.5


def test_edge_cracks_flat_field_identity():
    x = np.full((9, 16, 16), 0.3, np.float32)
    assert not edge_crack_mask(x, 0.92).any()
    np.testing.assert_array_equal(edge_cracks(x, 0.92, 1.0), x)


def test_edge_cracks_step_band():
    x = np.full((9, 32, 32), 0.5, np.float32)
    x[3:6, :, 16:] = 1.0
    out = edge_cracks(x, 0.92, 1.0)
    dark = np.all(out == 0.0, axis=0)
    # the centred Sobel responds on both sides of the step (columns 15, 16);
    # one dilation widens that to columns 14..17
    cols = np.nonzero(dark.all(axis=0))[0]
    assert cols.tolist() == [14, 15, 16, 17]
    assert dark.sum() == 4 * 32
    half = edge_cracks(x, 0.92, 0.5)
    np.testing.assert_allclose(half[:, dark], x[:, dark] * 0.5)


def test_salt_pepper():
    x = np.full((9, 64, 64), 0.5, np.float32)
    np.testing.assert_array_equal(salt_pepper(x, 0.0, np.random.default_rng(0)), x)
    out = salt_pepper(x, 0.003, np.random.default_rng(0))
    hit = np.any(out != x, axis=0)
    assert set(np.unique(out[:, hit])) <= {0.0, 1.0}
    # all channels of a hit pixel share the value
    assert np.all(out[:, hit] == out[0, hit])


def test_noise_blur_posterize():
    x = np.random.default_rng(0).random((9, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(gaussian_noise(x, 0.0, np.random.default_rng(0)), x)
    noisy = gaussian_noise(np.zeros((9, 64, 64), np.float32), 0.04, np.random.default_rng(0))
    assert noisy.std() == pytest.approx(0.04, rel=0.05)
    const = np.full((9, 16, 16), 0.37, np.float32)
    np.testing.assert_allclose(gaussian_blur(const, 1.2), 0.37, atol=1e-6)
    assert len(gaussian_kernel(0.4)) == 2 * math.ceil(1.2) + 1
    assert gaussian_kernel(1.2).sum() == pytest.approx(1.0)
    p = posterize(np.array([0.6, 0.4], np.float32).reshape(1, 1, 2), 2)
    assert p.ravel().tolist() == [1.0, 0.0]
    with pytest.raises(ValueError):
        posterize(x, 1)


def test_neutral_parameters_identity():
    x = np.random.default_rng(1).random((9, 16, 16)).astype(np.float32)
    gen = np.random.default_rng(0)
    np.testing.assert_array_equal(color_cast(x[:3], [1, 1, 1], [0, 0, 0]), x[:3])
    np.testing.assert_allclose(gamma(x[:3], 1.0), x[:3])
    np.testing.assert_array_equal(holes(x, 0.0, False, gen), x)
    np.testing.assert_array_equal(salt_pepper(x, 0.0, gen), x)
    np.testing.assert_array_equal(gaussian_noise(x, 0.0, gen), x)


def test_clean_fraction_small_sample():
    x = np.random.default_rng(2).random((9, 16, 16)).astype(np.float32)
    stream = RngStream(123)
    clean = sum(np.array_equal(augment_array(x, AugmentConfig(), stream, i)[0], x) for i in range(1500))
    assert abs(clean / 1500 - 0.313) < 0.04


def test_augment_conditioning_wrapper():
    stack = ConditioningStack(_golden_input())
    same = augment_conditioning(stack, AugmentConfig(), RngStream(42), 0)
    assert same is stack
    changed = augment_conditioning(stack, AugmentConfig(), RngStream(42), 1)
    assert isinstance(changed, ConditioningStack)
    assert not np.array_equal(changed.data, stack.data)
