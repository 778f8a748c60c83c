import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from _fd import fd_relative_error
from evimae.encoders import (
    IMU,
    VIDEO,
    Attention,
    Block,
    EncoderConfig,
    ImuEmbedding,
    ModalityEncoder,
    TokenBatch,
    VideoEmbedding,
    concat_tokens,
    encode_unified,
    init_weights,
    pool,
    sincos_2d,
    sincos_3d,
)
from evimae.errors import EmptyGroup, ShapeError
from evimae.masking import random_mask, tube_mask


def _imu_embed(dim=16, n_dev=4, tc=2, fc=2, patch_dim=12):
    emb = ImuEmbedding(patch_dim, dim, n_dev, tc, fc)
    torch.nn.init.normal_(emb.device_embed, std=0.5)
    torch.nn.init.normal_(emb.type_embed, std=0.5)
    return emb


def test_config_validation():
    with pytest.raises(ShapeError):
        EncoderConfig(embed_dim=30, heads=4)
    with pytest.raises(ShapeError):
        EncoderConfig(unified_depth=0)


def test_sincos_tables():
    t = sincos_2d(8, 3, 2)
    assert t.shape == (6, 8)
    # row 0 col 0 is sin(0)=0 / cos(0)=1 everywhere
    np.testing.assert_allclose(t[0], [0, 0, 1, 1, 0, 0, 1, 1])
    assert sincos_3d(64, 4, 4, 4).shape == (64, 64)
    assert len({tuple(r) for r in np.round(sincos_3d(64, 4, 4, 4), 9)}) == 64


def test_zero_patch_is_pure_additive():
    emb = _imu_embed()
    idx = torch.tensor([[0, 5, 15]])
    out = emb(torch.zeros(1, 3, 12), idx).embeddings
    expected = emb.proj.bias + emb.pos[idx % 4] + emb.device_embed[idx // 4] + emb.type_embed
    torch.testing.assert_close(out, expected, rtol=0, atol=1e-6)


def test_device_difference_is_exact():
    emb = _imu_embed().double()
    x = torch.randn(1, 1, 12, dtype=torch.float64).repeat(1, 2, 1)
    out = emb(x, torch.tensor([[1, 9]])).embeddings  # same (t, f) cell, devices 0 and 2
    torch.testing.assert_close(out[0, 1] - out[0, 0], emb.device_embed[2] - emb.device_embed[0], rtol=0, atol=1e-12)


def test_type_tag_shift_is_exact():
    imu = _imu_embed().double()
    vid = VideoEmbedding(12, 16, 1, 2, 2).double()
    torch.nn.init.normal_(vid.type_embed)
    x, idx = torch.randn(1, 3, 12, dtype=torch.float64), torch.tensor([[0, 1, 2]])
    before = imu(x, idx).embeddings
    m_imu = imu.type_embed.detach().clone()
    with torch.no_grad():
        imu.type_embed.copy_(vid.type_embed)
    after = imu(x, idx).embeddings
    torch.testing.assert_close(after - before, (vid.type_embed - m_imu).expand_as(before), rtol=0, atol=1e-12)


def test_video_position_only_difference():
    vid = VideoEmbedding(12, 18, 2, 2, 2).double()
    x = torch.randn(1, 1, 12, dtype=torch.float64).repeat(1, 2, 1)
    out = vid(x, torch.tensor([[0, 7]])).embeddings
    torch.testing.assert_close(out[0, 1] - out[0, 0], (vid.pos[7] - vid.pos[0]).double(), rtol=0, atol=1e-12)
    assert (vid(x, torch.tensor([[0, 7]])).device_index == -1).all()


def test_visible_count_carries_indices():
    emb = ImuEmbedding(768, 64, 4, 10, 8)
    plan = random_mask(320, 0.75, 0)
    idx = torch.tensor([plan.visible_indices])
    tb = emb(torch.randn(1, 80, 768), idx)
    assert tb.num_tokens == 80
    assert tb.indices.tolist() == idx.tolist()
    assert (tb.modality == IMU).all()
    vplan = tube_mask(196, 8, 0.9, 0)
    assert vplan.num_visible == 160


def test_embedding_rejects_bad_input():
    emb = _imu_embed()
    with pytest.raises(ShapeError):
        emb(torch.zeros(1, 2, 11), torch.zeros(1, 2, dtype=torch.long))
    with pytest.raises(ShapeError):
        emb(torch.zeros(1, 1, 12), torch.tensor([[16]]))


def test_singleton_attention_equals_value_projection():
    attn = Attention(8, 2).double()
    x = torch.randn(3, 1, 8, dtype=torch.float64)
    v = attn.qkv(x)[..., 16:]
    torch.testing.assert_close(attn(x), attn.proj(v))


@given(st.integers(0, 1000))
@settings(max_examples=10, deadline=None)
def test_permutation_equivariance(seed):
    torch.manual_seed(seed)
    enc = ModalityEncoder(2, 16, 4).double()
    x = torch.randn(2, 7, 16, dtype=torch.float64)
    perm = torch.randperm(7)
    tb = TokenBatch(x, torch.zeros(7, dtype=torch.long), torch.arange(7).repeat(2, 1), torch.zeros(2, 7, dtype=torch.long))
    tbp = TokenBatch(x[:, perm], tb.modality, tb.indices[:, perm], tb.device_index)
    torch.testing.assert_close(enc(tbp).embeddings, enc(tb).embeddings[:, perm])


def test_encoder_shape_and_determinism():
    enc = ModalityEncoder(2, 16, 4)
    init_weights(enc)
    x = torch.randn(3, 5, 16)
    tb = TokenBatch(x, torch.zeros(5, dtype=torch.long), torch.arange(5).repeat(3, 1), torch.zeros(3, 5, dtype=torch.long))
    a, b = enc(tb), enc(tb)
    assert a.embeddings.shape == x.shape
    assert torch.equal(a.embeddings, b.embeddings)
    with pytest.raises(ShapeError):
        enc.stack(x[0])


def _tokens(n, tag, B=2, D=16, n_dev=2):
    dev = torch.arange(n).repeat(B, 1) % n_dev if tag == IMU else torch.full((B, n), -1)
    return TokenBatch(torch.randn(B, n, D), torch.full((n,), tag), torch.arange(n).repeat(B, 1), dev)


def test_unified_concat_order_and_counts():
    enc = ModalityEncoder(1, 16, 4)
    f_i, f_v = _tokens(4, IMU), _tokens(6, VIDEO)
    out = encode_unified(enc, f_i, f_v)
    assert out.num_tokens == 10
    assert out.modality.tolist() == [IMU] * 4 + [VIDEO] * 6
    assert encode_unified(enc, f_i, None).num_tokens == 4
    assert encode_unified(enc, None, f_v).num_tokens == 6
    with pytest.raises(ShapeError):
        concat_tokens(None, None)
    with pytest.raises(ShapeError):
        concat_tokens(f_i, _tokens(3, VIDEO, D=8))


def test_pool_identities():
    x = torch.randn(2, 1, 16).repeat(1, 5, 1)
    tb = TokenBatch(x, torch.zeros(5, dtype=torch.long), torch.arange(5).repeat(2, 1), torch.zeros(2, 5, dtype=torch.long))
    torch.testing.assert_close(pool(tb), x[:, 0])
    tb = _tokens(8, IMU, n_dev=4)
    per = pool(tb, "per_device", n_devices=4)
    assert per.shape == (2, 4, 16)
    torch.testing.assert_close(per.mean(1), pool(tb))
    torch.testing.assert_close(per[:, 1], tb.embeddings[:, [1, 5]].mean(1))
    mods = pool(concat_tokens(tb, _tokens(3, VIDEO)), "per_modality")
    assert set(mods) == {IMU, VIDEO}


def test_pool_empty_groups():
    with pytest.raises(EmptyGroup):
        pool(_tokens(0, IMU))
    with pytest.raises(EmptyGroup):
        pool(_tokens(2, IMU, n_dev=2), "per_device", n_devices=3)


@pytest.mark.parametrize("kind", ["attention", "block", "imu_encoder", "video_encoder", "unified"])
def test_finite_difference_gradients(kind):
    torch.manual_seed(1)
    D = 8
    if kind == "attention":
        mod = Attention(D, 2).double()
        x = torch.randn(1, 6, D, dtype=torch.float64, requires_grad=True)
        fn = lambda: (mod(x) ** 2).sum()
    elif kind == "block":
        mod = Block(D, 2).double()
        x = torch.randn(1, 6, D, dtype=torch.float64, requires_grad=True)
        fn = lambda: (mod(x) * torch.linspace(-1, 1, D, dtype=torch.float64)).sum()
    elif kind in ("imu_encoder", "video_encoder"):
        if kind == "imu_encoder":
            emb = ImuEmbedding(12, D, 2, 2, 2).double()
        else:
            emb = VideoEmbedding(12, 12, 2, 2, 2).double()
            D = 12
        mod = ModalityEncoder(2, D, 2).double()
        x = torch.randn(1, 8, 12, dtype=torch.float64, requires_grad=True)
        idx = torch.arange(8).unsqueeze(0)
        w = torch.randn(D, dtype=torch.float64)
        fn = lambda: (mod(emb(x, idx)).embeddings.tanh() * w).sum()
    else:
        mod = ModalityEncoder(1, D, 2).double()
        a = _tokens(4, IMU, B=1, D=D)
        b = _tokens(4, VIDEO, B=1, D=D)
        x = torch.randn(1, 8, D, dtype=torch.float64, requires_grad=True)
        fn = lambda: (encode_unified(mod, a.with_embeddings(x[:, :4]), b.with_embeddings(x[:, 4:])).embeddings.sin()).sum()
    params = [p for p in mod.parameters()][:3]
    assert fd_relative_error(fn, [x] + params) < 1e-4
