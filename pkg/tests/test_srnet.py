import numpy as np
import pytest
from conftest import gradient_check, random_psd
from hypothesis import given, settings
from hypothesis import strategies as st

from dfbsr import srnet
from dfbsr.exceptions import (
    BankMismatchError,
    ChannelMismatchError,
    EmptyBatchError,
    FormatError,
    NegativeAlphaError,
    ShapeMismatchError,
)
from dfbsr.filterdesign import FilterBank, design_filter_bank
from dfbsr.gram import conv2d_full


def conv_same_loop(x, W, b):
    """Zero-padded same cross-correlation of one (H, W, Cin) image by direct loops."""
    H, Wd, cin = x.shape
    cout, _, k, _ = W.shape
    p = k // 2
    out = np.zeros((H, Wd, cout))
    for o in range(cout):
        for r in range(H):
            for c in range(Wd):
                s = b[o]
                for ci in range(cin):
                    for i in range(k):
                        for j in range(k):
                            rr, cc = r + i - p, c + j - p
                            if 0 <= rr < H and 0 <= cc < Wd:
                                s += W[o, ci, i, j] * x[rr, cc, ci]
                out[r, c, o] = s
    return out


def forward_loop(params, x):
    h = x
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = conv_same_loop(h, W, b)
        if i < len(params.weights) - 1:
            h = np.maximum(h, 0)
    return h


def small_bank(rng, channels, k=3, M=2):
    return design_filter_bank([random_psd(rng, k * k) for _ in range(channels)], M, seed=0)


def tiny_params(seed, channels=1, widths=(4, 3), kernels=(3, 3, 3)):
    p = srnet.init_params(channels, widths, kernels, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 100)
    for b in p.biases:
        b[:] = rng.uniform(-0.1, 0.1, b.shape)
    return p


# parameters


def test_parameter_count():
    p = srnet.init_params(3)
    expected = 9 * 9 * 3 * 64 + 64 + 5 * 5 * 64 * 32 + 32 + 5 * 5 * 32 * 3 + 3
    assert p.n_params() == expected == srnet.n_params_for(3)
    assert srnet.init_params(1, (16, 8)).n_params() == srnet.n_params_for(1, (16, 8))


def test_init_is_seeded_he_uniform():
    a = srnet.init_params(3, (16, 8), seed=4)
    b = srnet.init_params(3, (16, 8), seed=4)
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(x, y)
    assert np.abs(a.weights[0]).max() <= np.sqrt(6 / (3 * 81))
    assert all(not np.any(bias) for bias in a.biases)


# forward


def test_zero_kernels_give_last_bias():
    p = srnet.init_params(3, (4, 2), seed=0)
    for W in p.weights:
        W[:] = 0
    p.biases[0][:] = 0.3
    p.biases[1][:] = -0.2
    p.biases[2][:] = [0.1, 0.2, 0.3]
    out = srnet.forward(p, np.random.default_rng(0).random((6, 5, 3)))
    assert out.shape == (6, 5, 3)
    np.testing.assert_allclose(out, np.broadcast_to([0.1, 0.2, 0.3], out.shape), atol=1e-7)


def test_delta_network_is_linear_map():
    # centred deltas: out = c3 * relu(c2 * relu(c1 * x)) = c1 c2 c3 x for x > 0
    p = srnet.init_params(1, (1, 1), (3, 3, 3), dtype=np.float64)
    for W, c in zip(p.weights, (2.0, 0.5, 3.0)):
        W[:] = 0
        W[0, 0, 1, 1] = c
    x = np.random.default_rng(1).uniform(0.1, 1.0, (5, 5, 1))
    np.testing.assert_allclose(srnet.forward(p, x), 3.0 * x, atol=1e-12)


def test_forward_matches_loop_oracle():
    p = tiny_params(3, channels=2)
    x = np.random.default_rng(2).random((8, 8, 2))
    np.testing.assert_allclose(srnet.forward(p, x), forward_loop(p, x), atol=1e-4)


def test_forward_batch_and_float32():
    p = srnet.init_params(3, (4, 2), seed=1)
    xb = np.random.default_rng(3).random((2, 6, 6, 3)).astype(np.float32)
    out = srnet.forward(p, xb)
    assert out.shape == xb.shape and out.dtype == np.float32
    np.testing.assert_allclose(out[1], srnet.forward(p, xb[1]), atol=1e-6)
    np.testing.assert_array_equal(out, srnet.forward(p, xb))


def test_forward_channel_mismatch():
    with pytest.raises(ChannelMismatchError):
        srnet.forward(srnet.init_params(3, (2, 2)), np.zeros((5, 5, 1)))


def test_translation_equivariance_interior():
    p = tiny_params(5, widths=(3, 2), kernels=(3, 3, 3))
    x = np.random.default_rng(4).random((20, 20, 1))
    shifted = np.roll(x, (2, 3), axis=(0, 1))
    a, b = srnet.forward(p, x), srnet.forward(p, shifted)
    # receptive radius 3; keep away from padding and the wrapped band
    np.testing.assert_allclose(b[2 + 4 : 20 - 4, 3 + 4 : 20 - 4], a[4 : 18 - 4, 4 : 17 - 4], atol=1e-5)


# losses


def test_pixel_loss_cases(rng):
    y = rng.random((2, 4, 4, 3))
    assert srnet.pixel_loss(y, y) == 0.0
    assert srnet.pixel_loss(np.ones((1, 1, 1)), np.zeros((1, 1, 1))) == 1.0


def test_pixel_loss_matches_loop(rng):
    y, yh = rng.random((3, 4, 5, 2)), rng.random((3, 4, 5, 2))
    total = 0.0
    for n in range(3):
        for idx in np.ndindex(4, 5, 2):
            total += (y[n][idx] - yh[n][idx]) ** 2
    assert srnet.pixel_loss(y, yh) == pytest.approx(total / 3, rel=1e-12)


def test_pixel_loss_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        srnet.pixel_loss(np.zeros((4, 4, 1)), np.zeros((4, 3, 1)))


def test_filter_loss_zero_for_equal_images(rng):
    y = rng.random((5, 5, 1))
    assert srnet.filter_loss(y, y, small_bank(rng, 1)) == 0.0


def test_filter_loss_impulse_gives_unit_energy(rng):
    bank = small_bank(rng, 1, k=3, M=1)
    y = np.zeros((7, 7, 1))
    y[3, 3] = 1.0
    assert srnet.filter_loss(y, np.zeros_like(y), bank) == pytest.approx(1.0, abs=1e-12)


def test_filter_loss_matches_convolution_oracle(rng):
    bank = small_bank(rng, 2, k=3, M=3)
    y, yh = rng.random((2, 6, 5, 2)), rng.random((2, 6, 5, 2))
    res = y - yh
    total = sum(np.sum(conv2d_full(res[n, :, :, c], bank.filters[c, m]) ** 2)
                for n in range(2) for c in range(2) for m in range(3))
    assert srnet.filter_loss(y, yh, bank) == pytest.approx(total / (3 * 2), rel=1e-10)


def test_filter_loss_bank_mismatch(rng):
    with pytest.raises(BankMismatchError):
        srnet.filter_loss(np.zeros((5, 5, 3)), np.zeros((5, 5, 3)), small_bank(rng, 1))


def test_filter_loss_permutation_invariant(rng):
    bank = small_bank(rng, 1, k=3, M=4)
    perm = FilterBank(bank.filters[:, [2, 0, 3, 1]], bank.epsilon)
    y, yh = rng.random((6, 6, 1)), rng.random((6, 6, 1))
    assert srnet.filter_loss(y, yh, perm) == pytest.approx(srnet.filter_loss(y, yh, bank), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 20.0), st.integers(0, 2**31 - 1))
def test_filter_loss_quadratic_in_residual(s, seed):
    rng = np.random.default_rng(seed)
    bank = small_bank(rng, 1)
    res = rng.standard_normal((6, 6, 1))
    zero = np.zeros_like(res)
    assert srnet.filter_loss(s * res, zero, bank) == pytest.approx(
        s * s * srnet.filter_loss(res, zero, bank), rel=1e-5)


def test_total_loss(rng):
    bank = small_bank(rng, 1)
    y, yh = rng.random((2, 6, 6, 1)), rng.random((2, 6, 6, 1))
    assert srnet.total_loss(y, yh, bank, 0.0) == srnet.pixel_loss(y, yh)
    assert srnet.total_loss(y, y, bank, 1.0) == 0.0
    assert srnet.total_loss(y, yh, bank, 0.5) == pytest.approx(
        srnet.pixel_loss(y, yh) + 0.5 * srnet.filter_loss(y, yh, bank), abs=1e-6)
    with pytest.raises(NegativeAlphaError):
        srnet.total_loss(y, yh, bank, -0.1)


# backward


def test_zero_residual_gives_zero_output_kernel_grad(rng):
    p = tiny_params(1, channels=1)
    x = rng.random((2, 6, 6, 1))
    y = srnet.forward(p, x)
    g = srnet.backward(p, x, y, small_bank(rng, 1), alpha=2.0)
    assert np.max(np.abs(g.weights[-1])) <= 1e-7
    assert all(np.max(np.abs(a)) <= 1e-7 for a in g.arrays())


@pytest.mark.parametrize("alpha", [0.0, 1.0, 2.5])
def test_scalar_network_chain_rule(rng, alpha):
    p = srnet.init_params(1, (1, 1), (1, 1, 1), dtype=np.float64)
    w1, w2, w3, b1, b2, b3 = 0.7, -1.3, 0.9, 0.2, 0.5, -0.1
    for W, w in zip(p.weights, (w1, w2, w3)):
        W[:] = w
    for B, b in zip(p.biases, (b1, b2, b3)):
        B[:] = b
    x, y = 0.6, 0.25
    # 1x1 residual: every unit-energy filter carries energy r^2, so the loss is (1 + alpha) r^2
    bank = small_bank(rng, 1, k=3, M=2)
    z1 = w1 * x + b1
    h1 = max(z1, 0.0)
    z2 = w2 * h1 + b2
    h2 = max(z2, 0.0)
    yhat = w3 * h2 + b3
    d = 2.0 * (1.0 + alpha) * (yhat - y)
    d2 = d * w3 * (z2 > 0)
    d1 = d2 * w2 * (z1 > 0)
    expected = [d1 * x, d1, d2 * h1, d2, d * h2, d]
    pix, filt, g = srnet.loss_and_grad(p, np.full((1, 1, 1, 1), x), np.full((1, 1, 1, 1), y),
                                       bank, alpha)
    assert pix == pytest.approx((yhat - y) ** 2)
    assert filt == pytest.approx((yhat - y) ** 2)
    got = [float(a.ravel()[0]) for a in g.arrays()]
    np.testing.assert_allclose(got, expected, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("alpha", [0.0, 1.0])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_finite_differences(alpha, seed):
    rng = np.random.default_rng(seed)
    p = tiny_params(seed, channels=2, widths=(4, 3), kernels=(3, 3, 3))
    x = rng.random((2, 8, 8, 2))
    y = rng.random((2, 8, 8, 2))
    bank = small_bank(rng, 2, k=3, M=3)
    worst, checked, _ = gradient_check(p, x, y, bank, alpha, 25, rng)
    assert checked == [25, 25, 25]
    assert worst < 1e-3


def test_empty_batch():
    p = srnet.init_params(1, (2, 2))
    with pytest.raises(EmptyBatchError):
        srnet.backward(p, np.zeros((0, 4, 4, 1)), np.zeros((0, 4, 4, 1)))


# adam


def test_adam_zero_gradient_keeps_params():
    p = srnet.init_params(1, (2, 2), seed=0)
    state = srnet.AdamState.zeros_like(p)
    p2, s2 = srnet.adam_step(p, p.zeros_like(), state, 1e-3)
    for a, b in zip(p.arrays(), p2.arrays()):
        np.testing.assert_array_equal(a, b)
    assert s2.step == 1


def test_adam_first_step_is_signed_lr():
    p = srnet.init_params(1, (2, 2), seed=0, dtype=np.float64)
    g = srnet.ModelParams.from_arrays(
        [np.random.default_rng(i).standard_normal(a.shape) for i, a in enumerate(p.arrays())])
    lr = 1e-3
    p2, _ = srnet.adam_step(p, g, srnet.AdamState.zeros_like(p), lr)
    for a, b, ga in zip(p.arrays(), p2.arrays(), g.arrays()):
        delta = b - a
        assert np.all(np.abs(delta) <= lr * (1 + 1e-6))
        np.testing.assert_allclose(delta, -lr * np.sign(ga), rtol=1e-4)


def test_adam_on_scalar_quadratic():
    W = np.ones((1, 1, 1, 1))
    p = srnet.ModelParams([W], [np.zeros(1)])
    state = srnet.AdamState.zeros_like(p)
    # independent scalar simulation
    q, m, v = 1.0, 0.0, 0.0
    for t in range(1, 101):
        g = 2 * p.weights[0].ravel()[0]
        p, state = srnet.adam_step(p, srnet.ModelParams([np.full((1, 1, 1, 1), g)], [np.zeros(1)]),
                                   state, 0.1)
        gq = 2 * q
        m = 0.9 * m + 0.1 * gq
        v = 0.999 * v + 0.001 * gq * gq
        q -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert p.weights[0].ravel()[0] == pytest.approx(q, abs=1e-12)
    assert abs(q) < 0.05


def test_adam_shape_mismatch():
    p = srnet.init_params(1, (2, 2))
    bad = srnet.init_params(1, (3, 2))
    with pytest.raises(ShapeMismatchError):
        srnet.adam_step(p, bad, srnet.AdamState.zeros_like(p), 1e-3)


# checkpoints


def test_checkpoint_round_trip(tmp_path):
    p = srnet.init_params(3, (16, 8), seed=7)
    p.biases[1][:] = np.linspace(-1, 1, 8)
    path = tmp_path / "m.srnw"
    srnet.save_params(p, path)
    blob = path.read_bytes()
    assert blob[:5] == b"SRNW1"
    assert int.from_bytes(blob[5:9], "little") == 3
    assert len(blob) == 5 + 4 + 3 * 16 + 4 * p.n_params()
    back = srnet.load_params(path)
    for a, b in zip(p.arrays(), back.arrays()):
        assert a.shape == b.shape
        np.testing.assert_array_equal(a, b)


def test_checkpoint_rejects_garbage(tmp_path):
    with pytest.raises(FormatError):
        srnet.params_from_bytes(b"NOPE1....")
    blob = srnet.params_to_bytes(srnet.init_params(1, (2, 2)))
    with pytest.raises(FormatError):
        srnet.params_from_bytes(blob[:-3])
    with pytest.raises(FormatError):
        srnet.params_from_bytes(blob + b"\x00")
