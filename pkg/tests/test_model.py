import numpy as np
import pytest

from dmrislice.ae import (
    Adam,
    ModelConfig,
    adam_step,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from dmrislice.errors import ParseError, ShapeError
from gradcheck import check_model_gradients

TINY = ModelConfig(input_channels=1, latent_maps=2, input_size=16, base_width=1, seed=3)


def test_latent_shapes_full_scale():
    # 128 -> 8 through four 2x2 poolings; M maps in the bottleneck.
    cfg = ModelConfig(input_channels=15, latent_maps=64, input_size=128, seed=0)
    model = build_model(cfg)
    x = np.random.default_rng(0).uniform(0, 1, (1, 15, 128, 128))
    z = model.encode(x)
    assert z.shape == (1, 64, 8, 8)
    y = model.decode(z)
    assert y.shape == x.shape

    cfg_b0 = ModelConfig(input_channels=1, latent_maps=32, input_size=128, seed=0)
    z0 = build_model(cfg_b0).encode(x[:, :1])
    assert z0.shape == (1, 32, 8, 8)


def test_encoder_halves_spatial_dims():
    cfg = ModelConfig(input_channels=1, latent_maps=4, input_size=64, base_width=2, seed=1)
    model = build_model(cfg)
    x = np.random.default_rng(1).uniform(0, 1, (1, 1, 64, 64))
    sizes = []
    for layer in model.encoder:
        x = layer.forward(x)
        sizes.append(x.shape[2])
    assert sorted(set(sizes), reverse=True) == [64, 32, 16, 8, 4]


def test_decoder_defaults_to_nearest_upsampling():
    from dmrislice.ae.layers import ConvTranspose2D, NearestUpsample2x2

    model = build_model(TINY)
    kinds = [type(layer) for layer in model.decoder]
    assert NearestUpsample2x2 in kinds
    assert ConvTranspose2D not in kinds
    variant = build_model(
        ModelConfig(input_channels=1, latent_maps=2, input_size=16, base_width=1,
                    upsample="transposed", seed=3)
    )
    kinds = [type(layer) for layer in variant.decoder]
    assert ConvTranspose2D in kinds
    assert NearestUpsample2x2 not in kinds


def test_output_in_unit_interval():
    model = build_model(TINY)
    x = np.random.default_rng(2).uniform(0, 1, (3, 1, 16, 16))
    y, _ = model.forward(x)
    assert np.all(y > 0.0) and np.all(y < 1.0)


def test_same_seed_same_parameters():
    a = build_model(TINY)
    b = build_model(TINY)
    for (na, pa), (nb, pb) in zip(a.parameters(), b.parameters()):
        assert na == nb
        assert np.array_equal(pa, pb)


def test_encode_decode_equals_forward():
    model = build_model(TINY)
    x = np.random.default_rng(3).uniform(0, 1, (2, 1, 16, 16))
    y, z = model.forward(x, train=False)
    z2 = model.encode(x, train=False)
    y2 = model.decode(z2, train=False)
    assert np.array_equal(z, z2)
    assert np.array_equal(y, y2)


def test_decoder_is_function_of_latent_only():
    model = build_model(TINY)
    z = np.zeros((1, 2, 1, 1))
    a = model.decode(z)
    b = model.decode(z)
    assert np.array_equal(a, b)


def test_identical_inputs_identical_latents():
    model = build_model(TINY)
    x = np.random.default_rng(4).uniform(0, 1, (1, 1, 16, 16))
    batch = np.concatenate([x, x])
    z = model.encode(batch)
    assert np.array_equal(z[0], z[1])


def test_shape_errors():
    model = build_model(TINY)
    with pytest.raises(ShapeError):
        model.encode(np.zeros((1, 2, 16, 16)))  # wrong channels
    with pytest.raises(ShapeError):
        model.encode(np.zeros((1, 1, 32, 32)))  # wrong spatial size
    with pytest.raises(ShapeError):
        model.decode(np.zeros((1, 3, 1, 1)))  # wrong latent maps


def test_loss_zero_when_output_equals_input():
    # Feeding the model's own eval-mode output as both input and target is
    # impractical; instead verify the loss/grad identities directly on a
    # crafted case: identical duplicated batches give identical mean grads.
    model = build_model(TINY)
    x = np.random.default_rng(5).uniform(0, 1, (2, 1, 16, 16))
    mse1, grads1 = model.loss_and_grads(x)
    mse2, grads2 = model.loss_and_grads(np.concatenate([x, x]))
    assert mse2 == pytest.approx(mse1, rel=1e-12)
    for g1, g2 in zip(grads1, grads2):
        assert np.allclose(g1, g2, atol=1e-12)


def test_composed_gradients_tiny_model():
    model = build_model(TINY)
    x = np.random.default_rng(7).uniform(0.05, 0.95, (2, 1, 16, 16))
    worst = check_model_gradients(model, x, n_per_tensor=6, seed=11)
    assert worst < 1e-4


def test_composed_gradients_transposed_decoder():
    cfg = ModelConfig(
        input_channels=1, latent_maps=2, input_size=16, base_width=1,
        upsample="transposed", seed=3,
    )
    model = build_model(cfg)
    x = np.random.default_rng(8).uniform(0.05, 0.95, (2, 1, 16, 16))
    worst = check_model_gradients(model, x, n_per_tensor=5, seed=12)
    assert worst < 1e-4


def test_adam_first_step_closed_form():
    # With g=1 on the first step, m_hat = 1, v_hat = 1: update = lr / (1 + eps).
    p = np.array([1.0])
    m = np.zeros(1)
    v = np.zeros(1)
    p2, m2, v2 = adam_step(p, np.ones(1), m, v, t=1, lr=5e-5)
    assert p2[0] == pytest.approx(1.0 - 5e-5 / (1.0 + 1e-7), abs=1e-15)


def test_adam_zero_gradient_keeps_parameters():
    opt = Adam(lr=1e-3)
    p = [np.array([1.0, -2.0])]
    opt.step(p, [np.zeros(2)])
    assert np.array_equal(p[0], [1.0, -2.0])


def test_adam_moment_decay():
    opt = Adam(lr=1e-3)
    p = [np.array([0.0])]
    opt.step(p, [np.array([1.0])])
    m_after_first = opt.m[0].copy()
    opt.step(p, [np.array([0.0])])
    assert abs(opt.m[0][0]) < abs(m_after_first[0])


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = build_model(TINY)
    # make running stats non-trivial
    model.forward(np.random.default_rng(9).uniform(0, 1, (2, 1, 16, 16)), train=True)
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(model, p1)
    loaded = load_checkpoint(p1)
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    x = np.random.default_rng(10).uniform(0, 1, (1, 1, 16, 16))
    y1, _ = loaded.forward(x)
    y2, _ = load_checkpoint(p2).forward(x)
    assert np.array_equal(y1, y2)


def test_checkpoint_magic(tmp_path):
    p = tmp_path / "x.ckpt"
    save_checkpoint(build_model(TINY), p)
    assert p.read_bytes()[:5] == b"DSAE1"


def test_checkpoint_truncated(tmp_path):
    p = tmp_path / "x.ckpt"
    save_checkpoint(build_model(TINY), p)
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) - 16])
    with pytest.raises(ParseError):
        load_checkpoint(p)


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "x.ckpt"
    save_checkpoint(build_model(TINY), p)
    raw = bytearray(p.read_bytes())
    raw[:5] = b"WRONG"
    p.write_bytes(bytes(raw))
    with pytest.raises(ParseError):
        load_checkpoint(p)


def test_wrong_channel_checkpoint_raises_at_use(tmp_path):
    p = tmp_path / "one_channel.ckpt"
    save_checkpoint(build_model(TINY), p)
    model = load_checkpoint(p)
    sh_batch = np.zeros((1, 15, 16, 16))
    with pytest.raises(ShapeError):
        model.encode(sh_batch)


def test_eval_forward_bit_identical():
    model = build_model(TINY)
    x = np.random.default_rng(11).uniform(0, 1, (1, 1, 16, 16))
    model.forward(np.random.default_rng(12).uniform(0, 1, (4, 1, 16, 16)), train=True)
    y1, _ = model.forward(x, train=False)
    y2, _ = model.forward(x, train=False)
    assert np.array_equal(y1, y2)
