import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifa.grid import (CoordinateError, FeatureGrid, QueryCoord, bilinear_at, bilinear_sample,
                      nearest_cells, nearest_latent, query_grid)


def brute_nearest(H, W, x, y):
    """Exhaustive argmin over all centers; first minimum in row-major order wins."""
    best, arg = None, None
    for r in range(H):
        for c in range(W):
            d = (x - (c + 0.5) / W) ** 2 + (y - (r + 0.5) / H) ** 2
            if best is None or d < best:
                best, arg = d, (r, c)
    return arg


def scalar_bilinear(values, x, y):
    C, H, W = values.shape
    sx = min(max(x * W - 0.5, 0.0), W - 1)
    sy = min(max(y * H - 0.5, 0.0), H - 1)
    x0, y0 = int(np.floor(sx)), int(np.floor(sy))
    x1, y1 = min(x0 + 1, W - 1), min(y0 + 1, H - 1)
    tx, ty = sx - x0, sy - y0
    out = []
    for ch in range(C):
        v = values[ch]
        out.append((1 - ty) * ((1 - tx) * v[y0, x0] + tx * v[y0, x1])
                   + ty * ((1 - tx) * v[y1, x0] + tx * v[y1, x1]))
    return np.array(out)


def grid_of(values, level=2):
    return FeatureGrid(level, np.asarray(values, dtype=float))


def test_quadrant_lookup():
    g = grid_of(np.arange(4.0).reshape(1, 2, 2))
    code, center, delta = nearest_latent(g, QueryCoord(0.3, 0.7))
    assert center == (0.25, 0.75)
    assert code[0] == 2.0  # row 1, col 0
    np.testing.assert_allclose(delta, [(0.3 - 0.25) * 2, (0.7 - 0.75) * 2])


def test_center_query_has_zero_delta():
    g = grid_of(np.zeros((3, 5, 7)))
    for r in range(5):
        for c in range(7):
            _, center, delta = nearest_latent(g, QueryCoord((c + 0.5) / 7, (r + 0.5) / 5))
            assert np.array_equal(delta, [0.0, 0.0])
            assert center == ((c + 0.5) / 7, (r + 0.5) / 5)


def test_random_queries_match_brute_force():
    rng = np.random.default_rng(0)
    xs, ys = rng.random(1000), rng.random(1000)
    rows, cols, dx, dy = nearest_cells(5, 7, xs, ys)
    for i in range(1000):
        assert (rows[i], cols[i]) == brute_nearest(5, 7, xs[i], ys[i])
    assert np.abs(dx).max() <= 0.5 and np.abs(dy).max() <= 0.5


def test_ties_go_to_smaller_indices():
    # x = 0.5 on a 2-wide grid is equidistant from both centers
    rows, cols, dx, dy = nearest_cells(2, 2, np.array([0.5, 0.5, 0.0]), np.array([0.5, 0.2, 1.0]))
    assert cols.tolist() == [0, 0, 0]
    assert rows.tolist() == [0, 0, 1]
    assert dx[0] == 0.5 and dy[0] == 0.5


def test_out_of_range():
    g = grid_of(np.zeros((1, 2, 2)))
    with pytest.raises(CoordinateError):
        nearest_latent(g, QueryCoord(1.2, 0.5))
    with pytest.raises(CoordinateError):
        bilinear_at(g, QueryCoord(0.5, -0.1))


def test_query_grid():
    assert query_grid(1, 1) == [(0.5, 0.5)]
    assert query_grid(2, 2) == [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
    q = query_grid(3, 5)
    assert len(q) == 15 and all(0 < x < 1 and 0 < y < 1 for x, y in q)
    assert q[5] == (0.1, 0.5)


@pytest.mark.parametrize("H,W", [(1, 1), (4, 4), (5, 7), (16, 3)])
def test_query_grid_is_bijection_on_same_size(H, W):
    q = np.array(query_grid(H, W))
    rows, cols, dx, dy = nearest_cells(H, W, q[:, 0], q[:, 1])
    assert sorted(zip(rows.tolist(), cols.tolist())) == [(r, c) for r in range(H) for c in range(W)]
    assert not dx.any() and not dy.any()


def test_bilinear_identities(rng):
    v = rng.standard_normal((3, 4, 5))
    g = grid_of(v)
    for r in range(4):
        for c in range(5):
            assert np.array_equal(bilinear_at(g, QueryCoord((c + 0.5) / 5, (r + 0.5) / 4)),
                                  v[:, r, c])
    mid = bilinear_at(g, QueryCoord(2 / 5, 2.5 / 4))  # between cols 1 and 2 of row 2
    np.testing.assert_allclose(mid, (v[:, 2, 1] + v[:, 2, 2]) / 2, atol=1e-15)


def test_bilinear_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        C, H, W = rng.integers(1, 4), rng.integers(1, 9), rng.integers(1, 9)
        v = rng.standard_normal((C, H, W))
        xs, ys = rng.random(100), rng.random(100)
        got = bilinear_sample(v, xs, ys)
        for i in range(100):
            np.testing.assert_allclose(got[i], scalar_bilinear(v, xs[i], ys[i]),
                                       rtol=0, atol=1e-12)


def test_bilinear_lipschitz(rng):
    v = rng.standard_normal((2, 6, 6))
    # largest neighbour difference scaled by cell count bounds the slope
    lip = 6 * max(np.abs(np.diff(v, axis=1)).max(), np.abs(np.diff(v, axis=2)).max()) * 2
    eps = 1e-6
    xs, ys = rng.random(500) * (1 - eps), rng.random(500)
    a = bilinear_sample(v, xs, ys)
    b = bilinear_sample(v, xs + eps, ys)
    assert np.abs(a - b).max() <= lip * eps


@settings(max_examples=200, deadline=None)
@given(H=st.integers(1, 12), W=st.integers(1, 12),
       x=st.floats(0, 1), y=st.floats(0, 1))
def test_nearest_property(H, W, x, y):
    rows, cols, dx, dy = nearest_cells(H, W, np.array([x]), np.array([y]))
    assert (rows[0], cols[0]) == brute_nearest(H, W, x, y)
    assert -0.5 <= dx[0] <= 0.5 and -0.5 <= dy[0] <= 0.5
