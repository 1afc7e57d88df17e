import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smearfm.errors import DimensionMismatch, EmptyInput
from smearfm.smear import (
    SmearField,
    cross_check,
    decode_double_angle,
    encode_double_angle,
    epe_s,
    loss_gaussian_nll,
    loss_gaussian_nll_grad,
    loss_masked,
    loss_masked_grad,
    softplus,
    softplus_inverse,
    sparsification_curve,
)

smear_vec = arrays(float, 2, elements=st.floats(-100, 100, allow_nan=False))


def test_field_shapes_and_pixel_centers():
    f = SmearField(np.zeros((2, 3, 2)), np.ones((2, 3)))
    assert (f.height, f.width) == (2, 3)
    np.testing.assert_array_equal(f.pixel_centers()[:4], [[0.5, 0.5], [1.5, 0.5], [2.5, 0.5], [0.5, 1.5]])
    with pytest.raises(DimensionMismatch):
        SmearField(np.zeros((2, 3, 2)), np.ones((3, 2)))
    with pytest.raises(ValueError):
        SmearField(np.zeros((1, 1, 2)), np.zeros((1, 1)))


@pytest.mark.parametrize("s, code", [
    ((1.0, 0.0), (1.0, 0.0)),
    ((0.0, 1.0), (-1.0, 0.0)),
    ((1.0, 1.0), (0.0, math.sqrt(2.0))),
    ((0.0, 0.0), (0.0, 0.0)),
])
def test_encode_examples(s, code):
    np.testing.assert_allclose(encode_double_angle(s), code, atol=1e-15)


@pytest.mark.parametrize("code, s", [((1.0, 0.0), (1.0, 0.0)), ((-1.0, 0.0), (0.0, 1.0)), ((0.0, 0.0), (0.0, 0.0))])
def test_decode_examples(code, s):
    np.testing.assert_allclose(decode_double_angle(code), s, atol=1e-15)


def test_decode_negative_zero_is_canonical():
    # (-1, -0.0) would give phi = -pi/2 without folding the sign of zero
    np.testing.assert_allclose(decode_double_angle([-1.0, -0.0]), [0.0, 1.0], atol=1e-15)


@given(smear_vec)
@settings(max_examples=300, deadline=None)
def test_codec_properties(s):
    code = encode_double_angle(s)
    assert np.array_equal(code, encode_double_angle(-s))
    assert np.hypot(*code) == pytest.approx(np.hypot(*s), rel=1e-12, abs=1e-300)
    assert epe_s(decode_double_angle(code), s) <= 1e-9
    phi = np.arctan2(*decode_double_angle(code)[::-1])
    assert np.hypot(*s) == 0 or -np.pi / 2 < phi <= np.pi / 2 + 1e-15


def test_epe_s_examples():
    assert epe_s([1.0, 2.0], [1.0, 2.0]) == 0
    assert epe_s([-1.0, -2.0], [1.0, 2.0]) == 0
    assert epe_s([1.0, 0.0], [0.0, 1.0]) == pytest.approx(math.sqrt(2))
    assert epe_s(np.zeros((4, 2)), np.ones((4, 2))).shape == (4,)


@given(smear_vec, smear_vec)
@settings(max_examples=200, deadline=None)
def test_epe_s_symmetric_nonnegative(a, b):
    assert epe_s(a, b) == epe_s(b, a) >= 0


def test_cross_check_examples():
    z = np.zeros((12, 16, 2))
    d, m = cross_check(z, z)
    assert np.all(d == 0) and np.all(m == 1)
    fw = np.zeros_like(z)
    fw[..., 0] = 5.0
    d, m = cross_check(fw, -fw)
    # the interior is every pixel whose forward and backward hops stay on the grid
    interior = (slice(None), slice(5, 16 - 5))
    assert np.all(d[interior] == 0) and np.all(m[interior] == 1)
    assert np.all(m[:, :5] == 0) and np.all(m[:, -5:] == 0)
    d, m = cross_check(fw, z)
    assert np.all(d[interior] == 10.0) and np.all(m == 0)


def test_cross_check_bilinear_sampling():
    # forward flow 0.5 px lands between two backward samples of -0.4 and -0.6
    fw = np.zeros((3, 4, 2))
    fw[..., 0] = 0.5
    bw = np.zeros((3, 4, 2))
    bw[:, 0, 0], bw[:, 1, 0], bw[:, 2, 0], bw[:, 3, 0] = -0.4, -0.6, -0.6, -0.6
    d, _ = cross_check(fw, bw, eps_cr=10)
    # pixel (row, 0): forward to x=0.5, backward sample is -0.5 -> back at 0.0
    assert d[1, 0] == pytest.approx(0.0 + abs(-0.4 + 0.5), abs=1e-12)


def test_cross_check_errors():
    with pytest.raises(DimensionMismatch):
        cross_check(np.zeros((3, 3, 2)), np.zeros((3, 4, 2)))
    with pytest.raises(ValueError):
        cross_check(np.zeros((3, 3, 2)), np.zeros((3, 3, 2)), eps_cr=0)


def test_softplus_inverse_roundtrip():
    for sigma in (0.1, 1.0, math.e, 10.0):
        assert softplus(softplus_inverse(sigma)) == pytest.approx(sigma, rel=1e-14)


def test_nll_examples():
    w1 = softplus_inverse(1.0)
    assert loss_gaussian_nll([1.0, 2.0], [1.0, 2.0], w1) == pytest.approx(0.0, abs=1e-15)
    assert loss_gaussian_nll([1.0, 2.0], [1.0, 2.0], softplus_inverse(math.e)) == pytest.approx(2.0, rel=1e-14)
    assert loss_gaussian_nll([1.0, 1.0], [0.0, 0.0], w1) == pytest.approx(1.0, rel=1e-14)


def test_masked_examples():
    rng = np.random.default_rng(0)
    pred, gt, w = rng.normal(size=(50, 2)), rng.normal(size=(50, 2)), rng.normal(size=50)
    assert np.array_equal(loss_masked(pred, gt, w, 1.0), loss_gaussian_nll(pred, gt, w))
    assert loss_masked(pred[0], gt[0], softplus_inverse(math.sqrt(100.0)), 0.0) == pytest.approx(0.0, abs=1e-12)
    assert loss_masked(pred[0], gt[0], softplus_inverse(1.0), 0.0) == pytest.approx(0.99, rel=1e-13)
    with pytest.raises(ValueError):
        loss_masked(pred, gt, w, 1.0, alpha=0.0)


def _central_diff(f, x, h=1e-5):
    g = np.zeros(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_gradients_against_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(200):
        gt = rng.normal(scale=3, size=2)
        x = np.concatenate([rng.normal(scale=3, size=2), rng.uniform(-2, 3, 1)])
        m = float(rng.integers(0, 2))
        sigma = softplus(x[2])
        if abs((1 - m) / sigma ** 2 - 0.01) < 1e-3:
            continue
        for loss, grad in ((loss_gaussian_nll, loss_gaussian_nll_grad),
                           (lambda p, g, w: loss_masked(p, g, w, m), lambda p, g, w: loss_masked_grad(p, g, w, m))):
            num = _central_diff(lambda v: loss(v[:2], gt, v[2]), x)
            ana = grad(x[:2], gt, x[2])
            np.testing.assert_allclose(ana, num, rtol=1e-5, atol=1e-7)


def test_sparsification_examples():
    out = sparsification_curve([4.0, 2.0], [1.0, 2.0], [0.0, 0.5])
    assert out[0, 1] == 1.0
    assert out[1, 1] == pytest.approx(4.0 / 3.0)
    err = np.arange(1.0, 11.0)
    curve = sparsification_curve(err, err, np.arange(10) / 10)
    assert np.all(np.diff(curve[:, 1]) <= 0)
    with pytest.raises(EmptyInput):
        sparsification_curve([], [], [0.0])
    with pytest.raises(ValueError):
        sparsification_curve([1.0], [1.0], [1.0])


def test_sparsification_ties_by_index():
    # equal sigmas: the lower index is dropped first
    out = sparsification_curve([10.0, 0.0, 5.0], [1.0, 1.0, 1.0], [1 / 3])
    assert out[0, 1] == pytest.approx(2.5 / 5.0)
