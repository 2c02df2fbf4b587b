import numpy as np
import pytest

from latvid.codec import (CodecError, CodecSpec, TrainingConfig,
                          codec_loss_and_grad, decode, encode, infill,
                          load_codec, make_linear_codec, make_mlp_codec,
                          save_codec, train_codec)


def _rand_video(seed=0, dims=(8, 32, 32)):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, size=(*dims, 3))


# -- linear codec -----------------------------------------------------------

def test_linear_basis_is_orthonormal(linear_codec):
    gram = linear_codec.basis @ linear_codec.basis.T
    assert np.max(np.abs(gram - np.eye(linear_codec.channels))) <= 1e-9


def test_encode_decode_identity_on_latents(linear_codec):
    rng = np.random.default_rng(1)
    z = rng.normal(size=linear_codec.latent_dims(8, 32, 32))
    back = encode(linear_codec, decode(linear_codec, z))
    assert np.max(np.abs(back - z)) <= 1e-10


def test_decode_encode_idempotent(linear_codec):
    x = _rand_video(2)
    x1 = decode(linear_codec, encode(linear_codec, x))
    x2 = decode(linear_codec, encode(linear_codec, x1))
    assert np.max(np.abs(x2 - x1)) <= 1e-10


def test_encode_is_linear(linear_codec):
    x, y = _rand_video(3), _rand_video(4)
    lhs = encode(linear_codec, 0.3 * x + 0.7 * y)
    rhs = 0.3 * encode(linear_codec, x) + 0.7 * encode(linear_codec, y)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_band_limited_video_reconstructs_exactly(linear_codec):
    rng = np.random.default_rng(5)
    z = rng.normal(size=linear_codec.latent_dims(8, 32, 32))
    video = decode(linear_codec, z)
    recon = decode(linear_codec, encode(linear_codec, video))
    assert np.max(np.abs(recon - video)) <= 1e-6


def test_latent_shape(linear_codec):
    z = encode(linear_codec, _rand_video(6))
    assert z.shape == (12, 4, 8, 8)


def test_patch_locality(linear_codec):
    """Changing pixels inside one (rt, rs, rs) patch moves only its cell."""
    x = _rand_video(7)
    x2 = x.copy()
    x2[2:4, 8:12, 16:20] += 0.1     # temporal group 1, cell (2, 4)
    dz = encode(linear_codec, x2) - encode(linear_codec, x)
    hot = np.zeros_like(dz, dtype=bool)
    hot[:, 1, 2, 4] = True
    assert np.any(np.abs(dz[hot]) > 1e-9)
    assert np.max(np.abs(dz[~hot])) <= 1e-12


def test_dims_must_divide(linear_codec):
    with pytest.raises(CodecError, match="divisible"):
        encode(linear_codec, np.zeros((7, 32, 32, 3)))


def test_too_many_channels_rejected():
    with pytest.raises(CodecError, match="exceeds"):
        make_linear_codec(1, 1, 4)


# -- nonlinear codec --------------------------------------------------------

def test_mlp_codec_shapes():
    spec = make_mlp_codec(2, 4, 12)
    x = _rand_video(8)
    z = encode(spec, x)
    assert z.shape == (12, 4, 8, 8)
    assert decode(spec, z).shape == x.shape


def test_train_codec_loss_decreases(video_bank):
    train, _ = video_bank
    cfg = TrainingConfig(epochs=10, batch_size=256, lr=3e-3, seed=0)
    spec = train_codec(train[:2], cfg)
    assert len(spec.loss_history) == 10
    assert spec.loss_history[-1] < spec.loss_history[0]


def test_trained_codec_heldout_psnr_pin(trained_codec, video_bank):
    """Reference schedule reaches ~29.6 dB on held-out clips (pinned +-1)."""
    from latvid.metrics import psnr

    _, held = video_bank
    vals = [psnr(decode(trained_codec, encode(trained_codec, v)), v)
            for v in held]
    mean = float(np.mean(vals))
    assert mean >= 28.0
    assert abs(mean - 29.6) <= 1.0


def test_train_codec_zero_epochs_keeps_init():
    cfg = TrainingConfig(epochs=0, batch_size=64, lr=1e-3, seed=3)
    spec = train_codec([_rand_video(9)], cfg)
    ref = make_mlp_codec(2, 4, 12, seed=3)
    for a, b in zip(spec.encoder.params, ref.encoder.params):
        assert np.array_equal(a, b)
    assert spec.loss_history == []


def test_train_codec_determinism(video_bank):
    train, _ = video_bank
    cfg = TrainingConfig(epochs=3, batch_size=256, lr=3e-3, seed=0)
    a = train_codec(train[:1], cfg)
    b = train_codec(train[:1], cfg)
    assert a.final_loss == b.final_loss
    for pa, pb in zip(a.encoder.params, b.encoder.params):
        assert np.array_equal(pa, pb)


def test_codec_gradients_finite_and_shaped():
    spec = make_mlp_codec(2, 4, 6, hidden=16, seed=0)
    rng = np.random.default_rng(0)
    patches = rng.uniform(0, 1, size=(10, spec.patch_dim))
    loss, grads = codec_loss_and_grad(spec, patches)
    params = spec.encoder.params + spec.decoder.params
    assert len(grads) == len(params)
    for g, p in zip(grads, params):
        assert g.shape == p.shape
        assert np.all(np.isfinite(g))


# -- infill -----------------------------------------------------------------

def test_infill_keeps_known_pixels():
    video = _rand_video(10, dims=(2, 8, 8))
    rng = np.random.default_rng(11)
    mask = (rng.uniform(size=(2, 8, 8)) > 0.4).astype(float)
    out = infill(video, mask)
    known = mask[..., None] > 0
    assert np.array_equal(out[known.repeat(3, -1)],
                          video[known.repeat(3, -1)])


def test_infill_single_known_pixel_floods():
    video = np.zeros((1, 6, 6, 3))
    video[0, 2, 3] = [0.1, 0.6, 0.9]
    mask = np.zeros((1, 6, 6))
    mask[0, 2, 3] = 1.0
    out = infill(video, mask)
    assert np.allclose(out[0], [0.1, 0.6, 0.9])


def test_infill_half_plane():
    video = np.zeros((1, 4, 8, 3))
    video[0, :, :4] = [0.8, 0.2, 0.2]
    mask = np.zeros((1, 4, 8))
    mask[0, :, :4] = 1.0
    out = infill(video, mask)
    assert np.allclose(out[0], [0.8, 0.2, 0.2])


def test_infill_fully_masked_frame_uses_previous_mean():
    video = np.zeros((2, 4, 4, 3))
    video[0] = 0.25
    mask = np.zeros((2, 4, 4))
    mask[0] = 1.0
    out = infill(video, mask)
    assert np.allclose(out[1], 0.25)


def test_infill_fully_masked_first_frame_is_midgray():
    out = infill(np.zeros((1, 4, 4, 3)), np.zeros((1, 4, 4)))
    assert np.allclose(out, 0.5)


def test_infill_idempotent_on_complete_mask():
    video = _rand_video(12, dims=(2, 8, 8))
    rng = np.random.default_rng(13)
    mask = (rng.uniform(size=(2, 8, 8)) > 0.5).astype(float)
    once = infill(video * mask[..., None], mask)
    again = infill(once, np.ones_like(mask))
    assert np.array_equal(once, again)


# -- checkpoints ------------------------------------------------------------

def test_linear_codec_save_load_roundtrip(tmp_path, linear_codec):
    save_codec(linear_codec, tmp_path / "codec")
    back = load_codec(tmp_path / "codec")
    x = _rand_video(14)
    za, zb = encode(linear_codec, x), encode(back, x)
    assert np.max(np.abs(za - zb)) < 1e-6     # f32 quantization only


def test_mlp_codec_save_load_roundtrip(tmp_path):
    spec = make_mlp_codec(2, 4, 6, hidden=16, seed=2)
    save_codec(spec, tmp_path / "codec")
    back = load_codec(tmp_path / "codec")
    x = _rand_video(15)
    assert np.max(np.abs(encode(spec, x) - encode(back, x))) < 1e-5


def test_load_codec_detects_corruption(tmp_path):
    spec = make_mlp_codec(2, 4, 6, hidden=16, seed=2)
    save_codec(spec, tmp_path / "codec")
    target = tmp_path / "codec" / "enc_w0.bt"
    data = bytearray(target.read_bytes())
    data[-1] ^= 0xFF
    target.write_bytes(bytes(data))
    with pytest.raises(CodecError, match="checksum"):
        load_codec(tmp_path / "codec")
