import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from formpipe.landmark import (
    HarrisConfig,
    detect_corners,
    find_landmarks,
    harris_response,
    match_points,
)
from formpipe.synthgen import random_grid


def naive_harris(img, sigma, k):
    """Per-pixel loops; gradients and window written out longhand."""
    a = img.astype(float) * 255.0
    h, w = a.shape
    ix = np.zeros_like(a)
    iy = np.zeros_like(a)
    for y in range(h):
        for x in range(w):
            ix[y, x] = (a[y, min(x + 1, w - 1)] - a[y, max(x - 1, 0)]) / 2
            iy[y, x] = (a[min(y + 1, h - 1), x] - a[max(y - 1, 0), x]) / 2
    r = int(3 * sigma + 0.5)
    g = np.array([math.exp(-(d * d) / (2 * sigma * sigma)) for d in range(-r, r + 1)])
    g /= g.sum()
    out = np.zeros_like(a)
    for y in range(h):
        for x in range(w):
            sxx = syy = sxy = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        wt = g[dy + r] * g[dx + r]
                        sxx += wt * ix[yy, xx] ** 2
                        syy += wt * iy[yy, xx] ** 2
                        sxy += wt * ix[yy, xx] * iy[yy, xx]
            out[y, x] = sxx * syy - sxy * sxy - k * (sxx + syy) ** 2
    return out


def test_constant_image_zero_response():
    for v in (0, 1):
        assert np.all(harris_response(np.full((20, 30), v, np.uint8)) == 0)


def test_step_edge_nonpositive():
    img = np.zeros((40, 40), np.uint8)
    img[:, 20:] = 1
    r = harris_response(img)
    assert np.all(r[8:-8] <= 1e-9)
    assert r[20, 19:21].min() < 0


def test_matches_naive_oracle():
    img = np.zeros((24, 26), np.uint8)
    img[6:18, 8:20] = 1
    img[3, 3] = 1
    np.testing.assert_allclose(harris_response(img, 1.5, 0.05), naive_harris(img, 1.5, 0.05), rtol=1e-9, atol=1e-6)


def test_filled_square_corner():
    img = np.zeros((60, 60), np.uint8)
    img[20:40, 20:40] = 1
    r = naive_harris(img, 2.0, 0.05)
    y, x = np.unravel_index(np.argmax(r), r.shape)
    corners = np.array([(20, 20), (39, 20), (20, 39), (39, 39)], float)  # corner pixels
    assert np.min(np.hypot(corners[:, 0] - x, corners[:, 1] - y)) <= 2
    np.testing.assert_allclose(harris_response(img), r, rtol=1e-9, atol=1e-6)


def test_bad_inputs():
    with pytest.raises(ValueError):
        harris_response(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        harris_response(np.zeros((5, 5)), window_sigma=0)
    with pytest.warns(UserWarning):
        harris_response(np.zeros((5, 5)), k=0.2)
    with pytest.raises(ValueError):
        detect_corners(np.ones((5, 5)), rel_threshold=0)
    with pytest.raises(ValueError):
        detect_corners(np.ones((5, 5)), nms_radius=0)


def test_zero_map_empty():
    assert detect_corners(np.zeros((30, 30))).shape == (0, 3)
    assert detect_corners(-np.ones((30, 30))).shape == (0, 3)


def test_three_by_three_grid():
    img = np.zeros((140, 140), np.uint8)
    for p in (30, 70, 110):
        img[30:113, p : p + 3] = 1
        img[p : p + 3, 30:113] = 1
    found = detect_corners(harris_response(img))
    assert len(found) == 9
    truth = np.array([(x + 1, y + 1) for y in (30, 70, 110) for x in (30, 70, 110)], float)
    d = np.linalg.norm(found[:, None, :2] - truth[None], axis=2)
    assert np.all(d.min(axis=1) <= 2)
    assert len(set(d.argmin(axis=1))) == 9
    assert np.all(np.diff(found[:, 2]) <= 0)


def test_equal_maxima_scan_order():
    r = np.zeros((30, 30))
    r[10, 12] = 1.0
    r[10, 10] = 1.0
    out = detect_corners(r, 0.5, 5, refine="none")
    assert out.tolist() == [[10.0, 10.0, 1.0]]
    r2 = np.zeros((30, 30))
    r2[12, 10] = r2[10, 11] = 1.0
    assert detect_corners(r2, 0.5, 5, refine="none")[:, :2].tolist() == [[11.0, 10.0]]


def test_refinement_modes_stay_near_peak():
    rng = np.random.default_rng(3)
    r = rng.random((40, 40))
    for mode in ("centroid", "quadratic", "none"):
        raw = detect_corners(r, 0.5, 4, refine="none")
        ref = detect_corners(r, 0.5, 4, refine=mode)
        assert len(raw) == len(ref)
        assert np.all(np.abs(ref[:, :2] - raw[:, :2]) <= 5)
        np.testing.assert_array_equal(ref[:, 2], raw[:, 2])


def test_nms_separation():
    rng = np.random.default_rng(0)
    out = detect_corners(rng.random((60, 60)), 0.1, 6, refine="none")
    d = np.linalg.norm(out[:, None, :2] - out[None, :, :2], axis=2)
    np.fill_diagonal(d, np.inf)
    assert d.min() > 6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_rotation_permutes_corners(seed):
    img, _, _ = random_grid(seed, (3, 5))
    a = find_landmarks(img)[:, :2]
    b = find_landmarks(np.rot90(img))[:, :2]
    w = img.shape[1]
    # np.rot90 sends (x, y) to (y, w - 1 - x)
    mapped = np.column_stack([a[:, 1], w - 1 - a[:, 0]])
    assert len(a) == len(b)
    d = np.linalg.norm(mapped[:, None] - b[None], axis=2)
    assert np.all(d.min(axis=1) <= 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_threshold_monotone(seed, t1, t2):
    lo, hi = sorted((t1, t2))
    r = np.random.default_rng(seed).standard_normal((30, 30))
    a = {tuple(p) for p in detect_corners(r, lo, 3, refine="none")[:, :2]}
    b = {tuple(p) for p in detect_corners(r, hi, 3, refine="none")[:, :2]}
    assert b <= a


def test_random_grids_precision_recall():
    ps, rs = [], []
    for seed in range(100):
        img, truth, _ = random_grid(seed)
        p, r = match_points(find_landmarks(img, HarrisConfig()), truth, 2.0)
        ps.append(p)
        rs.append(r)
    assert np.mean(ps) >= 0.95 and np.mean(rs) >= 0.95
    assert min(ps) >= 0.95 and min(rs) >= 0.95


def test_match_points():
    truth = np.array([[0.0, 0.0], [10.0, 0.0]])
    assert match_points(truth, truth, 0.5) == (1.0, 1.0)
    p, r = match_points(np.array([[0.5, 0.0], [0.6, 0.0]]), truth, 1.0)
    assert (p, r) == (0.5, 0.5)
    assert match_points(np.empty((0, 2)), truth, 1.0) == (1.0, 0.0)
