import numpy as np
import pytest

from ifa import tensor as T
from ifa.aligners import FpnDecoder, flops_of_aligner
from ifa.gradcheck import gradient_check
from ifa.head import IfaHead, flops_of_head
from ifa.tensor import Tensor

CHANS = {2: 3, 3: 4, 4: 5, 5: 5}


def feats(rng, base=8, batch=1, param=False):
    make = T.Parameter if param else Tensor
    return {lv: make(rng.standard_normal((batch, CHANS[lv], base >> (lv - 2), base >> (lv - 2))))
            for lv in CHANS}


def test_nearest_upsample_replicates():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    out = T.nearest_upsample(x, 4, 4).data[0, 0]
    assert out.tolist() == [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]


def test_bilinear_constant_map():
    out = T.bilinear_upsample(Tensor(np.full((1, 2, 3, 5), 2.5)), 6, 10).data
    np.testing.assert_allclose(out, 2.5, rtol=0, atol=1e-15)


@pytest.mark.parametrize("kind", ["bilinear", "nearest", "deconv", "upsample-module"])
def test_all_kinds_same_output_shape(kind, rng):
    dec = FpnDecoder(kind, CHANS, 4, fpn_dim=6, rng=rng)
    out = dec(feats(rng, batch=2))
    assert out.shape == (2, 4, 8, 8)
    assert np.isfinite(out.data).all()


@pytest.mark.parametrize("kind", ["deconv", "upsample-module", "bilinear"])
def test_gradient_check(kind, rng):
    dec = FpnDecoder(kind, CHANS, 3, fpn_dim=4, rng=rng)
    f = feats(rng, param=True)
    labels = rng.integers(0, 3, (1, 8, 8))
    rep = gradient_check(lambda: T.softmax_xent(dec(f), labels),
                         dec.parameters() + list(f.values()), tolerance=1e-4, max_entries=12)
    assert rep.passed, str(rep)


def test_stride_chain_violation(rng):
    dec = FpnDecoder("bilinear", CHANS, 3, fpn_dim=4, rng=rng)
    f = feats(rng)
    f[3] = Tensor(rng.standard_normal((1, 4, 3, 3)))
    with pytest.raises(T.ShapeError, match="double"):
        dec(f)


def dims(side=64, chans=(32, 64, 128, 128)):
    return {lv: (c, side >> lv, side >> lv) for lv, c in zip((2, 3, 4, 5), chans)}


def test_resize_kinds_cost_the_same():
    d = dims()
    assert flops_of_aligner("bilinear", d, 256, 5) == flops_of_aligner("nearest", d, 256, 5)


def test_deconv_costs_more_than_upsample_module():
    d = dims()
    assert flops_of_aligner("deconv", d, 256, 5) > flops_of_aligner("upsample-module", d, 256, 5)


def test_flops_match_hand_count():
    d = {2: (2, 4, 4), 3: (3, 2, 2)}
    lat = 16 * (2 * 2 * 6 + 6) + 4 * (2 * 3 * 6 + 6)
    merge = 16 * 6
    cls = 16 * (2 * 6 * 5 + 5)
    assert flops_of_aligner("bilinear", d, 6, 5) == lat + merge + cls
    up = 4 * (2 * 6 * 9 * 6 + 6)
    assert flops_of_aligner("upsample-module", d, 6, 5) == lat + merge + cls + up


def test_ifa_cheaper_than_upsample_module_at_stride4():
    d = dims()
    head = IfaHead({lv: c for lv, (c, _, _) in d.items()}, 5)
    ifa = flops_of_head(head, 16, 16, d)
    up = flops_of_aligner("upsample-module", d, 256, 5)
    assert ifa < up
    dec = FpnDecoder("upsample-module", {lv: c for lv, (c, _, _) in d.items()}, 5, 256)
    assert head.num_params() < dec.num_params()
