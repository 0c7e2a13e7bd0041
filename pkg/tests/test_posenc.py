import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifa import tensor as T
from ifa.gradcheck import gradient_check
from ifa.posenc import PosEncoder, encode, encoding_dim, freqs_for_dim, initial_frequencies
from ifa.tensor import Tensor


def test_initial_frequencies():
    L = 6
    enc = PosEncoder("sine+cosine-learned", L)
    expected = [2 * math.e ** l for l in range(1, L + 1)]
    np.testing.assert_allclose(enc.omega.data, expected, rtol=1e-15)
    assert abs(enc.omega.data[0] - 5.43656365691809) < 1e-13


def test_zero_delta():
    out = encode(PosEncoder("sine+cosine-learned", 3), (0.0, 0.0))
    np.testing.assert_array_equal(out, [0, 1] * 6)


def test_single_frequency_layout():
    d = 0.3
    out = encode(PosEncoder("sine+cosine-learned", 1), (d, 0.0))
    w = 5.43656365691809
    np.testing.assert_allclose(out, [math.sin(w * d), math.cos(w * d), 0.0, 1.0], rtol=1e-14)


def test_interleaved_order_per_axis():
    enc = PosEncoder("sine+cosine-fixed", 2)
    dx, dy = 0.2, -0.4
    w1, w2 = enc.omega.data
    expected = [math.sin(w1 * dx), math.cos(w1 * dx), math.sin(w2 * dx), math.cos(w2 * dx),
                math.sin(w1 * dy), math.cos(w1 * dy), math.sin(w2 * dy), math.cos(w2 * dy)]
    np.testing.assert_allclose(encode(enc, (dx, dy)), expected, rtol=1e-13)


@pytest.mark.parametrize("mode,L,dim", [
    ("none", 6, 0), ("coord-only", 6, 2), ("sine-only", 6, 12), ("cosine-only", 6, 12),
    ("sine+cosine-fixed", 6, 24), ("sine+cosine-learned", 6, 24),
])
def test_encoding_dim(mode, L, dim):
    enc = PosEncoder(mode, L)
    assert encoding_dim(enc) == dim
    assert len(encode(enc, (0.1, 0.2))) == dim


def test_total_dim_sweep_mapping():
    assert [freqs_for_dim("sine+cosine-learned", d) for d in (12, 24, 48, 72)] == [3, 6, 12, 18]
    with pytest.raises(ValueError):
        freqs_for_dim("sine+cosine-learned", 10)


def test_omega_gradient_matches_fd(rng):
    enc = PosEncoder("sine+cosine-learned", 4)
    delta = Tensor(rng.uniform(-0.5, 0.5, (6, 2)))
    rep = gradient_check(lambda: T.total(enc(delta)), [enc.omega], tolerance=1e-5)
    assert rep.passed, str(rep)


def test_omega_gradient_closed_form():
    enc = PosEncoder("sine+cosine-learned", 2)
    a = np.array([[0.3, -0.2]])
    T.backward(T.total(enc(Tensor(a))))
    w = enc.omega.data
    expected = sum(x * np.cos(w * x) - x * np.sin(w * x) for x in a[0])
    np.testing.assert_allclose(enc.omega.grad, expected, rtol=1e-13)


def test_fixed_mode_grad_stays_zero(rng):
    enc = PosEncoder("sine+cosine-fixed", 3)
    x = T.Parameter(rng.standard_normal((4, 2)))
    out = enc(Tensor(rng.uniform(-0.5, 0.5, (4, 2))))
    T.backward(T.total(T.add(out, T.Parameter(np.zeros(12)))))
    assert not enc.omega.grad.any()
    assert not enc.learned
    del x


@settings(max_examples=100, deadline=None)
@given(d=st.floats(-0.5, 0.5), L=st.integers(1, 8))
def test_parity_and_range(d, L):
    enc = PosEncoder("sine+cosine-learned", L)
    pos, neg = encode(enc, (d, 0.0)), encode(enc, (-d, 0.0))
    sign = np.tile([-1.0, 1.0], 2 * L)
    sign[2 * L:] = 1.0  # y axis untouched
    np.testing.assert_allclose(neg, pos * sign, atol=1e-15)
    assert np.all(np.abs(pos) <= 1.0)
