import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfbsr.exceptions import (
    ChannelMismatchError,
    CirculantTooLargeError,
    EmptyInputError,
    EmptySampleSetError,
)
from dfbsr.gram import accumulate_gram, build_circulant, conv2d_full, gram_from_autocorr


def conv_loop(x, f):
    """Full convolution by direct summation."""
    h, w = x.shape
    k1, k2 = f.shape
    out = np.zeros((h + k1 - 1, w + k2 - 1))
    for p in range(out.shape[0]):
        for q in range(out.shape[1]):
            s = 0.0
            for i in range(k1):
                for j in range(k2):
                    if 0 <= p - i < h and 0 <= q - j < w:
                        s += f[i, j] * x[p - i, q - j]
            out[p, q] = s
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


# conv2d_full


def test_conv_identity_kernel():
    x = np.random.default_rng(0).random((4, 5))
    np.testing.assert_allclose(conv2d_full(x, np.ones((1, 1))), x)


def test_conv_impulse_response():
    np.testing.assert_array_equal(conv2d_full(np.ones((1, 1)), np.ones((2, 2))), np.ones((2, 2)))


def test_conv_matches_loop():
    rng = np.random.default_rng(1)
    x, f = rng.standard_normal((5, 5)), rng.standard_normal((3, 3))
    np.testing.assert_allclose(conv2d_full(x, f), conv_loop(x, f), atol=1e-12)


def test_conv_empty_input():
    with pytest.raises(EmptyInputError):
        conv2d_full(np.zeros((0, 3)), np.ones((2, 2)))
    with pytest.raises(EmptyInputError):
        conv2d_full(np.ones((3, 3)), np.zeros((0, 0)))


# circulant


def test_circulant_of_zero_residual():
    assert not np.any(build_circulant(np.zeros((3, 4)), 2))


def test_circulant_single_pixel():
    np.testing.assert_array_equal(build_circulant(np.array([[2.5]]), 1), [[2.5]])


def test_circulant_times_filter_is_convolution():
    rng = np.random.default_rng(2)
    Y = rng.uniform(-1, 1, (3, 3))
    D = build_circulant(Y, 2)
    assert D.shape == (16, 4)
    for _ in range(10):
        f = rng.standard_normal((2, 2))
        assert np.max(np.abs(D @ f.ravel() - conv_loop(Y, f).ravel())) < 1e-5


def test_circulant_rectangular_residual():
    rng = np.random.default_rng(3)
    Y = rng.standard_normal((4, 7))
    f = rng.standard_normal((3, 3))
    D = build_circulant(Y, 3)
    assert D.shape == ((4 + 2) * (7 + 2), 9)
    np.testing.assert_allclose(D @ f.ravel(), conv2d_full(Y, f).ravel(), atol=1e-10)


def test_circulant_size_guard():
    with pytest.raises(CirculantTooLargeError):
        build_circulant(np.zeros((400, 400)), 7)


# gram_from_autocorr


def test_gram_zero_residual():
    G = gram_from_autocorr(np.zeros((5, 5)), 3)
    assert G.entries.shape == (9, 9)
    assert not np.any(G.entries)


def test_gram_single_pixel():
    G = gram_from_autocorr(np.array([[3.0]]), 1)
    np.testing.assert_array_equal(G.entries, [[9.0]])


def test_gram_matches_explicit_dtd():
    Y = np.random.default_rng(4).standard_normal((6, 6))
    D = build_circulant(Y, 3)
    assert rel_err(gram_from_autocorr(Y, 3).entries, D.T @ D) < 1e-4


@pytest.mark.parametrize("shape,k", [((2, 2), 3), ((1, 5), 4), ((7, 3), 2), ((3, 3), 5)])
def test_gram_small_or_thin_residuals(shape, k):
    # filter larger than the residual in one or both axes
    Y = np.random.default_rng(5).standard_normal(shape)
    D = build_circulant(Y, k)
    np.testing.assert_allclose(gram_from_autocorr(Y, k).entries, D.T @ D, atol=1e-10)


def test_gram_empty():
    with pytest.raises(EmptyInputError):
        gram_from_autocorr(np.zeros((0, 0)), 2)


# accumulate_gram


def test_accumulate_single():
    r = np.random.default_rng(6).standard_normal((6, 6, 2))
    Qs = accumulate_gram([r], 3)
    assert len(Qs) == 2
    for c in range(2):
        np.testing.assert_array_equal(Qs[c].entries, gram_from_autocorr(r[:, :, c], 3).entries)
        assert Qs[c].sample_count == 1


def test_accumulate_two_copies_is_double():
    r = np.random.default_rng(7).standard_normal((6, 6, 1))
    np.testing.assert_array_equal(accumulate_gram([r, r], 3)[0].entries,
                                  2 * accumulate_gram([r], 3)[0].entries)


def test_accumulate_matches_sum_of_dtd():
    rng = np.random.default_rng(8)
    res = [rng.uniform(-1, 1, (8, 8, 1)) for _ in range(5)]
    oracle = sum(build_circulant(r[:, :, 0], 3).T @ build_circulant(r[:, :, 0], 3) for r in res)
    Q = accumulate_gram(res, 3)[0]
    assert Q.sample_count == 5
    assert rel_err(Q.entries, oracle) < 1e-4


def test_accumulate_errors():
    with pytest.raises(EmptySampleSetError):
        accumulate_gram([], 3)
    with pytest.raises(ChannelMismatchError):
        accumulate_gram([np.zeros((4, 4, 1)), np.zeros((4, 4, 3))], 3)


# properties

residuals = st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(1, 4),
                      st.integers(0, 2**31 - 1))


@settings(max_examples=40, deadline=None)
@given(residuals)
def test_quadratic_form_equals_convolution_energy(args):
    h, w, k, seed = args
    rng = np.random.default_rng(seed)
    Y, f = rng.uniform(-1, 1, (h, w)), rng.standard_normal((k, k))
    quad = f.ravel() @ gram_from_autocorr(Y, k).entries @ f.ravel()
    energy = np.sum(conv_loop(Y, f) ** 2)
    assert quad == pytest.approx(energy, rel=1e-4, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(residuals)
def test_gram_symmetric_psd(args):
    h, w, k, seed = args
    Q = gram_from_autocorr(np.random.default_rng(seed).uniform(-1, 1, (h, w)), k).entries
    scale = max(np.max(np.abs(Q)), 1e-300)
    assert np.max(np.abs(Q - Q.T)) <= 1e-5 * scale
    assert np.linalg.eigvalsh(Q).min() >= -1e-4 * np.trace(Q) / k**2 - 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_accumulate_order_independent(n, seed):
    rng = np.random.default_rng(seed)
    res = [rng.uniform(-1, 1, (rng.integers(3, 9), rng.integers(3, 9), 2)) for _ in range(n)]
    a = accumulate_gram(res, 3)
    b = accumulate_gram([res[i] for i in rng.permutation(n)], 3)
    for qa, qb in zip(a, b):
        assert np.max(np.abs(qa.entries - qb.entries)) <= 1e-5 * np.max(np.abs(qa.entries))


@settings(max_examples=20, deadline=None)
@given(st.floats(-10, 10).filter(lambda s: abs(s) > 1e-3), st.integers(0, 2**31 - 1))
def test_gram_scales_quadratically(s, seed):
    Y = np.random.default_rng(seed).uniform(-1, 1, (6, 5))
    np.testing.assert_allclose(gram_from_autocorr(s * Y, 3).entries,
                               s * s * gram_from_autocorr(Y, 3).entries, rtol=1e-10, atol=1e-12)
