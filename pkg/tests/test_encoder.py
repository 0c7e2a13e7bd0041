import numpy as np
import pytest

from ifa import tensor as T
from ifa.encoder import (Encoder, EncoderConfig, aux_logits, downsample_labels, encode_image)
from ifa.gradcheck import gradient_check
from ifa.tensor import Tensor


def make(extra_pool=0, widths=(4, 4, 6, 6, 8), seed=0, blocks=2):
    return Encoder(EncoderConfig(list(widths), blocks, extra_pool, 3), np.random.default_rng(seed))


@pytest.mark.parametrize("extra_pool,sizes", [(0, [16, 8, 4, 2]), (1, [8, 4, 2, 1])])
def test_pyramid_shapes(extra_pool, sizes, rng):
    enc = make(extra_pool)
    pyr = encode_image(enc, rng.random((3, 64, 64)))
    assert [pyr[lv].height for lv in (2, 3, 4, 5)] == sizes
    assert [pyr[lv].width for lv in (2, 3, 4, 5)] == sizes
    assert [pyr[lv].channels for lv in (2, 3, 4, 5)] == [4, 6, 6, 8]
    assert [pyr[lv].stride for lv in (2, 3, 4, 5)] == [4, 8, 16, 32]


@pytest.mark.parametrize("H,W,k", [(32, 64, 0), (96, 32, 0), (128, 64, 1), (128, 128, 2)])
def test_shape_contract(H, W, k, rng):
    enc = make(k)
    pyr = encode_image(enc, rng.random((3, H, W)))
    for lv, g in pyr.items():
        assert (g.height, g.width) == (H // (2 ** lv * 2 ** k), W // (2 ** lv * 2 ** k))
        assert np.isfinite(g.values).all()
    assert enc.cfg.level_shapes(H, W) == {lv: (g.channels, g.height, g.width)
                                          for lv, g in pyr.items()}


def test_divisibility_error(rng):
    with pytest.raises(ValueError, match="divisible by 64"):
        encode_image(make(1), rng.random((3, 96, 96)))


def test_pixel_perturbation_reaches_f2(rng):
    enc = make()
    img = rng.random((3, 64, 64))
    base = encode_image(enc, img)[2].values
    img2 = img.copy()
    img2[1, 30, 17] += 0.5
    assert not np.array_equal(encode_image(enc, img2)[2].values, base)


def test_determinism(rng):
    img = rng.random((3, 64, 64))
    a = encode_image(make(seed=3), img)
    b = encode_image(make(seed=3), img)
    assert all(np.array_equal(a[lv].values, b[lv].values) for lv in a)


def test_aux_logits(rng):
    enc = make()
    pyr = encode_image(enc, rng.random((3, 64, 64)))
    assert aux_logits(enc, pyr[3]).shape == (3, 8, 8)
    enc.aux_w.data[:] = 0
    enc.aux_b.data[:] = 0
    assert not aux_logits(enc, pyr[3]).any()


def test_aux_gradient_check(rng):
    enc = make(widths=(3, 3, 4, 4, 4), blocks=1)
    img = Tensor(rng.random((1, 3, 32, 32)))
    labels = rng.integers(0, 3, (1, 4, 4))

    def build():
        return T.softmax_xent(enc.aux(enc(img)[3]), labels)

    rep = gradient_check(build, enc.parameters(), tolerance=1e-4, max_entries=10)
    assert rep.passed, str(rep)


def test_label_downsample_is_nearest():
    lab = np.arange(64).reshape(8, 8)
    out = downsample_labels(lab, 2, 2)
    assert out.tolist() == [[lab[2, 2], lab[2, 6]], [lab[6, 2], lab[6, 6]]]
    assert downsample_labels(lab, 8, 8).tolist() == lab.tolist()


def test_flops_scale_with_area():
    enc = make()
    assert enc.flops(128, 64) == 2 * enc.flops(64, 64)
    assert enc.flops(128, 128) == 4 * enc.flops(64, 64)
