import numpy as np
import pytest

from intrelight.autodiff import Tensor, check_gradients, no_grad, ops, precision
from intrelight.model import ModelConfig, PixlModel, modulate, rope_tables

MICRO = ModelConfig(d=16, L=2, heads=2, p=4, n_registers=2, readout_indices=(0, 1, 1, 1), head_width=16)


def _inputs(rng, b, h, w):
    return rng.random((b, 3, h, w)).astype(np.float32), rng.random((b, 9, h, w)).astype(np.float32)


def _rescale_all(model, rng):
    """Fan-in scaled random weights so every activation is O(1)."""
    for name, p in model.named_parameters():
        if p.ndim >= 2:
            # linear weights are (din, dout); conv kernels are (cout, cin, kh, kw) or (c, kh, kw)
            fan_in = p.shape[0] if p.ndim == 2 else p.size // p.shape[0]
            p.data[...] = rng.normal(0, fan_in**-0.5, p.shape)
        elif name.endswith("weight") or name.endswith("gamma"):
            p.data[...] = 1.0 + rng.normal(0, 0.1, p.shape)
        else:
            p.data[...] = rng.normal(0, 0.1, p.shape)


def _randomise_output(model, rng, scale=0.05):
    model.head.out.weight.data[...] = rng.normal(0, scale, model.head.out.weight.shape)
    model.head.out.bias.data[...] = rng.normal(0, scale, model.head.out.bias.shape)


@pytest.fixture(scope="module")
def desk():
    return PixlModel(ModelConfig())


# -- config -------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d=130)
    with pytest.raises(ValueError):
        ModelConfig(d=24, heads=4)  # head dim 6 is not divisible by 4
    with pytest.raises(ValueError):
        ModelConfig(readout_indices=(0, 2, 1, 3))
    with pytest.raises(ValueError):
        ModelConfig(readout_indices=(0, 1, 2, 4))
    with pytest.raises(ValueError):
        ModelConfig(p=6)
    with pytest.raises(ValueError):
        ModelConfig(head_mode="bogus")
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"depth": 3})


def test_config_round_trip_and_hash():
    c = ModelConfig(L=6, readout_indices=(1, 2, 4, 5))
    assert ModelConfig.from_dict(c.to_dict()) == c
    assert c.hash() == ModelConfig.from_dict(c.to_dict()).hash()
    assert c.hash() != ModelConfig().hash()


def test_desk_defaults():
    c = ModelConfig()
    assert (c.d, c.L, c.heads, c.p, c.n_registers) == (128, 4, 4, 8, 4)
    assert c.readout_indices == (0, 1, 2, 3)
    assert (c.source_encoder_depth, c.intrinsics_encoder_depth, c.rope_base) == (2, 2, 100.0)


# -- encoders and fusion ------------------------------------------------------------


def test_encode_source_grid(desk, rng):
    with no_grad():
        tokens = desk.encode_source(rng.random((1, 3, 32, 32)))
    assert tokens.shape == (1, 16, 128)
    with pytest.raises(ValueError):
        desk.encode_source(rng.random((1, 3, 30, 32)))


def test_patchify_locality(desk, rng):
    img = rng.random((1, 3, 16, 16)).astype(np.float32)
    swapped = img.copy()
    swapped[..., 0:8, 0:8], swapped[..., 8:16, 8:16] = img[..., 8:16, 8:16], img[..., 0:8, 0:8]
    with no_grad():
        a = desk.source.patchify(Tensor(img)).data[0]
        b = desk.source.patchify(Tensor(swapped)).data[0]
    np.testing.assert_array_equal(b[[3, 1, 2, 0]], a)


def test_zero_image_constant_embedding(desk):
    with no_grad():
        tok = desk.source.patchify(Tensor(np.zeros((1, 3, 16, 24)))).data[0]
    np.testing.assert_array_equal(tok, np.broadcast_to(desk.source.embed.bias.data, tok.shape))


def test_encode_intrinsics(desk, rng):
    with no_grad():
        src = desk.encode_source(rng.random((1, 3, 16, 24)))
        cond = desk.encode_intrinsics(rng.random((1, 9, 16, 24)))
        const = desk.encode_intrinsics(np.full((1, 9, 16, 24), 0.3)).data[0]
    assert cond.shape == src.shape
    np.testing.assert_allclose(const, np.broadcast_to(const[0], const.shape), atol=1e-5)
    with pytest.raises(ValueError):
        desk.encode_intrinsics(rng.random((1, 6, 16, 24)))


def test_fusion_contract(desk, rng):
    with no_grad():
        src = desk.encode_source(rng.random((1, 3, 16, 16)))
        cond = desk.encode_intrinsics(rng.random((1, 9, 16, 16)))
        fused = desk.fuse_tokens(src, cond)
        swapped = desk.fuse_tokens(cond, src)
    assert fused.shape == src.shape
    assert np.abs(fused.data - swapped.data).max() > 1e-4
    with pytest.raises(ValueError):
        desk.fuse_tokens(src, cond[:, :2])


def test_intrinsics_only_trunk(rng):
    cfg = ModelConfig(d=32, trunk_mode="intrinsics_only")
    model = PixlModel(cfg)
    assert model.source is None
    assert model.fuse.fc1.weight.shape == (32, 32)
    s, c = _inputs(rng, 1, 16, 16)
    _randomise_output(model, rng)
    with no_grad():
        a = model(s, c).data
        # the only route from the source to the output is the modulation itself
        g = model.head_output(s, c).data
        b = model(np.ones_like(s), c).data
    np.testing.assert_allclose(a, np.clip(s * (1 + g[:, :3]) + g[:, 3:], 0, 1), atol=1e-6)
    np.testing.assert_allclose(b, np.clip(1 + g[:, :3] + g[:, 3:], 0, 1), atol=1e-6)


# -- trunk and rotary -----------------------------------------------------------------


def test_rope_tables():
    cos, sin = rope_tables(3, 4, 16, 100.0, n_prefix=2)
    assert cos.shape == (14, 8)
    np.testing.assert_array_equal(cos[:3], 1.0)  # registers and grid (0, 0)
    np.testing.assert_array_equal(sin[:3], 0.0)
    # token (1, 2): first half of the pairs follows the row, second half the column
    freqs = 100.0 ** (-np.arange(4) / 4)
    np.testing.assert_allclose(np.arccos(cos[2 + 6, :1]), freqs[:1] * 1)
    np.testing.assert_allclose(sin[2 + 6, 4:], np.sin(2 * freqs))


def test_trunk_streams_strip_registers(desk, rng):
    with no_grad():
        streams = desk.trunk_forward(Tensor(rng.normal(size=(2, 6, 128))), 2, 3)
    assert len(streams) == 4
    assert all(s.shape == (2, 6, 128) for s in streams)


def test_rope_zero_position_is_unrotated(desk, rng):
    x = Tensor(rng.normal(size=(1, 4 + 6, 128)))
    attn = desk.blocks[0].attn
    with no_grad():
        q, k, _ = attn.qk(x, desk.rope(2, 3, 4))
        q0, k0, _ = attn.qk(x, None)
    # token index 4 is grid (0, 0); registers 0..3 are never rotated
    np.testing.assert_array_equal(q.data[..., :5, :], q0.data[..., :5, :])
    np.testing.assert_array_equal(k.data[..., :5, :], k0.data[..., :5, :])
    assert np.abs(q.data[..., 5:, :] - q0.data[..., 5:, :]).max() > 1e-3


def test_rope_translation_invariance(desk, rng):
    # every block's patch-to-patch logits, given the same block input, ignore a grid shift
    x = Tensor(rng.normal(size=(1, 4 + 12, 128)))
    worst = 0.0
    with no_grad():
        for blk in desk.blocks:
            h = blk.norm1(x)
            a = blk.attn.logits(h, desk.rope(3, 4, 4))[..., 4:, 4:]
            b = blk.attn.logits(h, desk.rope(3, 4, 4, offset=(5.0, 11.0)))[..., 4:, 4:]
            worst = max(worst, np.abs(a - b).max())
            x = blk(x, desk.rope(3, 4, 4))
    assert worst < 1e-5
    assert np.abs(a).max() > 1e-3


def test_rope_translation_whole_trunk_without_registers(rng):
    model = PixlModel(ModelConfig(n_registers=0))
    tokens = Tensor(rng.normal(size=(1, 12, 128)))
    with no_grad():
        base = model.trunk_logits(tokens, 3, 4)
        moved = model.trunk_logits(tokens, 3, 4, offset=(5.0, 11.0))
    assert max(np.abs(a - b).max() for a, b in zip(base, moved)) < 1e-5


def test_registers_unrotated_and_used(rng):
    model = PixlModel(MICRO)
    _randomise_output(model, rng, 0.5)
    s, c = _inputs(rng, 1, 8, 8)
    with no_grad():
        a = model(s, c).data
        model.registers.data[...] = 0.0
        b = model(s, c).data
    assert np.abs(a - b).max() > 0


# -- head -----------------------------------------------------------------------------


def test_dpt_readout_shapes(desk, rng):
    with no_grad():
        streams = [Tensor(rng.normal(size=(1, 6, 128))) for _ in range(4)]
        feats = desk.dpt_readout(streams, 2, 3)
        big = desk.dpt_readout([Tensor(rng.normal(size=(1, 24, 128))) for _ in range(4)], 4, 6)
        zero = desk.dpt_readout([Tensor(np.zeros((1, 6, 128))) for _ in range(4)], 2, 3).data
    assert feats.shape[-2:] == (16, 24)
    assert big.shape[-2:] == (32, 48)
    np.testing.assert_allclose(zero, zero[..., :1, :1] * np.ones_like(zero), atol=1e-5)


# -- forward -------------------------------------------------------------------------


def test_output_conv_zero_at_init(desk):
    assert not desk.head.out.weight.data.any()
    assert not desk.head.out.bias.data.any()
    assert all(np.isfinite(p.data).all() for p in desk.parameters())


@pytest.mark.parametrize("size", [(16, 16), (24, 40), (64, 64)])
def test_identity_at_init(desk, rng, size):
    s, c = _inputs(rng, 2, *size)
    with no_grad():
        out = desk(s, c).data
    assert np.abs(out - s).max() < 1e-6


def test_forward_errors(desk, rng):
    s, c = _inputs(rng, 1, 16, 16)
    with pytest.raises(ValueError):
        desk(s, c[:, :, :8])
    with pytest.raises(ValueError):
        desk(s[:, :2], c)


def test_modulation_arithmetic(rng):
    s = rng.random((1, 3, 4, 4))
    half = modulate(Tensor(s), Tensor(np.full_like(s, -1.0)), Tensor(np.full_like(s, 0.5))).data
    np.testing.assert_allclose(half, 0.5)
    sat = modulate(Tensor(np.full((1, 3, 1, 1), 0.9)), Tensor(np.full((1, 3, 1, 1), 0.5)),
                   Tensor(np.full((1, 3, 1, 1), 0.2))).data
    np.testing.assert_array_equal(sat, 1.0)


def test_modulation_clip_gradients():
    with precision(np.float64):
        s = Tensor(np.array([0.3, 0.9, 0.2, 0.6]))
        g = Tensor(np.array([0.1, 0.5, -0.2, -0.9]), requires_grad=True)
        b = Tensor(np.array([0.05, 0.2, -0.3, 0.1]), requires_grad=True)
        ops.sum(modulate(s, g, b)).backward()
    inside = np.array([True, False, False, True])  # pre-clip 0.38, 1.55, -0.14, 0.16
    np.testing.assert_allclose(g.grad, np.where(inside, s.data, 0.0))
    np.testing.assert_allclose(b.grad, np.where(inside, 1.0, 0.0))
    with precision(np.float64):
        errs = check_gradients(lambda: ops.sum(modulate(s, g, b)), {"g": g, "b": b}, h=1e-3)
    assert max(errs.values()) < 1e-3


def test_direct_regression_head(rng):
    model = PixlModel(ModelConfig(d=32, head_mode="direct_regression"))
    s, c = _inputs(rng, 1, 16, 16)
    with no_grad():
        out = model(s, c).data
    assert model.head.out.weight.shape[0] == 3
    np.testing.assert_allclose(out, 0.5)


def test_micro_model_gradients(rng):
    with precision(np.float64):
        model = PixlModel(MICRO, np.random.default_rng(1))
        _rescale_all(model, rng)
        _randomise_output(model, rng, 0.01)
        s, c = _inputs(rng, 2, 8, 8)
        # keep pre-clip values inside (0, 1) so the loss is smooth everywhere
        s = 0.25 + 0.5 * s
        target = Tensor(rng.random((2, 3, 8, 8)))

        def loss():
            out = model(s, c)
            return ops.mean(ops.mul(ops.sub(out, target), ops.sub(out, target)))

        params = dict(model.named_parameters())
        pre = model.head_output(s, c).data
        pre = s * (1 + pre[:, :3]) + pre[:, 3:]
        assert 0.0 < pre.min() and pre.max() < 1.0
        errs = check_gradients(loss, params, h=1e-3, max_coords=12)
    worst = max(errs, key=errs.get)
    assert errs[worst] < 1e-3, (worst, errs[worst])
    assert len(errs) == len(params)


def test_forward_deterministic_per_seed(rng):
    s, c = _inputs(rng, 1, 8, 8)
    a, b = PixlModel(MICRO), PixlModel(MICRO)
    for m in (a, b):
        _randomise_output(m, np.random.default_rng(3))
    with no_grad():
        np.testing.assert_array_equal(a(s, c).data, b(s, c).data)
