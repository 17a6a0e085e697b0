import numpy as np
import pytest

import oracles
from coherent_embed.encoder import SGD, Encoder, EncoderConfig, conv_forward

SMALL = EncoderConfig(widths=[4, 6], dim=5)


def probe_loss(enc, x, ce, cr, train):
    emb, pooled, cache = enc.forward(x, train=train)
    return float(np.sum(ce * emb) + np.sum(cr * enc.rotation_logits(pooled))), cache, pooled


@pytest.mark.parametrize("train", [False, True])
def test_gradients_match_finite_differences(train):
    rng = np.random.default_rng(0)
    enc = Encoder.init(SMALL, seed=1, dtype=np.float64)
    for k in enc.buffers:  # non-trivial running statistics for eval mode
        enc.params[k][...] = rng.uniform(0.5, 1.5, enc.params[k].shape) if k.endswith("var") else rng.normal(0, 0.1, enc.params[k].shape)
    x = rng.random((4, 3, 8, 8))
    ce, cr = rng.standard_normal((4, 5)), rng.standard_normal((4, 4))
    frozen = {k: enc.params[k].copy() for k in enc.buffers}

    def restore():
        for k, v in frozen.items():
            enc.params[k][...] = v

    _, cache, pooled = probe_loss(enc, x, ce, cr, train)
    restore()
    grads = enc.backward(cache, d_emb=ce, d_rot=cr)
    for name in enc.trainable:
        p = enc.params[name]

        def f(v, p=p):
            old = p.copy()
            p[...] = v
            out = probe_loss(enc, x, ce, cr, train)[0]
            p[...] = old
            restore()
            return out

        num = oracles.central_diff(f, p.copy(), h=1e-6)
        if train and (name.startswith("conv") and name.endswith("bias") or name == "proj.bias"):
            # a bias right before batch normalization cancels out
            np.testing.assert_allclose(grads[name], 0, atol=1e-9)
            np.testing.assert_allclose(num, 0, atol=1e-6)
            continue
        assert oracles.rel_err(num, grads[name]) <= 1e-5, name


def test_shapes_and_unit_norm():
    enc = Encoder.init(EncoderConfig(widths=[8, 8, 8], dim=16), seed=0)
    x = np.random.default_rng(0).random((3, 3, 32, 32)).astype(np.float32)
    emb = enc.encode(x)
    assert emb.shape == (3, 16) and emb.dtype == np.float32
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1, atol=1e-5)
    assert enc.features(x).shape == (3, 8)
    assert enc.encode(x[0]).shape == (16,)
    with pytest.raises(ValueError):
        enc.encode(np.zeros((1, 4, 32, 32)))


def test_eval_mode_is_per_sample():
    enc = Encoder.init(SMALL, seed=0, dtype=np.float64)
    x = np.random.default_rng(1).random((5, 3, 8, 8))
    np.testing.assert_allclose(enc.encode(x)[2], enc.encode(x[2:3])[0], atol=1e-12)
    before = {k: enc.params[k].copy() for k in enc.buffers}
    enc.encode(x)
    assert all(np.array_equal(before[k], enc.params[k]) for k in before)
    enc.forward(x, train=True)
    assert not np.array_equal(before["bn0.running_mean"], enc.params["bn0.running_mean"])


def test_init_is_seeded():
    a, b = Encoder.init(SMALL, seed=3), Encoder.init(SMALL, seed=3)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert not np.array_equal(a.params["conv0.weight"], Encoder.init(SMALL, seed=4).params["conv0.weight"])


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(0)
    x, w, b = rng.random((1, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    out, _ = conv_forward(x, w, b)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = np.sum(xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_sgd_momentum():
    p = {"w": np.array([1.0])}
    opt = SGD(p, lr=0.1, momentum=0.9)
    opt.step({"w": np.array([1.0])})
    opt.step({"w": np.array([1.0])})
    # v1 = 1, v2 = 1.9
    assert p["w"][0] == pytest.approx(1 - 0.1 - 0.19)


def test_config_validation():
    for bad in (dict(widths=[]), dict(dim=1), dict(kernel_size=4)):
        with pytest.raises(ValueError):
            EncoderConfig(**bad)
