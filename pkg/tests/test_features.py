import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from formpipe.features import (
    DIM,
    BowVector,
    Codebook,
    DescriptorConfig,
    assign,
    bow_from_descriptors,
    descriptor_matrix,
    encode_bow,
    extract_descriptors,
    kmeans,
    train_codebook,
)


def _square_page():
    img = np.full((120, 120), 255, np.uint8)
    img[40:80, 30:90] = 0
    return img


def test_constant_image_has_no_descriptors():
    assert extract_descriptors(np.full((64, 64), 200, np.uint8)) == []


def test_too_small_image_rejected():
    with pytest.raises(ValueError):
        extract_descriptors(np.zeros((20, 64)))


def test_square_corners_found():
    descs = extract_descriptors(_square_page())
    corners = np.array([(30, 40), (89, 40), (30, 79), (89, 79)], float)
    locs = np.array([d.location for d in descs])
    assert len(descs) >= 4
    # every square corner has a keypoint within 3px
    d = np.linalg.norm(corners[:, None] - locs[None], axis=2).min(1)
    assert d.max() <= 3.0


def test_descriptors_unit_norm():
    rng = np.random.default_rng(0)
    img = (rng.random((200, 200)) < 0.5).astype(np.uint8) * 255
    descs = extract_descriptors(img)
    assert descs
    for d in descs:
        assert d.vector.shape == (DIM,)
        if not d.degenerate:
            assert abs(np.linalg.norm(d.vector) - 1) <= 1e-6
    assert len(descs) <= DescriptorConfig().max_keypoints


def test_descriptor_by_hand():
    # vertical step edge: dark left half, bright right half
    img = np.zeros((64, 64))
    img[:, 32:] = 1.0
    from formpipe.features import _descriptor_at

    p = np.pad(img, 1, mode="edge")
    gx = np.pad((p[1:-1, 2:] - p[1:-1, :-2]) / 2.0, 16)
    gy = np.pad((p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0, 16)
    v = _descriptor_at(gx, gy, 32, 32).reshape(4, 4, 4)
    # patch spans x 24..39; the edge gradient lives at x=31 and x=32 (0.5 each),
    # both inside cell column 1 (x 28..31) and column 2 (x 32..35)
    for r in range(4):
        assert v[r, 1, 0] == pytest.approx(4 * 0.5)
        assert v[r, 2, 0] == pytest.approx(4 * 0.5)
        assert v[r, 0, 0] == 0 and v[r, 3, 0] == 0
    assert np.all(v[..., 2:] == 0)


def test_kmeans_k_equals_n_reproduces_points():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(12, 5))
    C, lab, hist, _ = kmeans(X, 12, seed=3)
    assert hist[-1] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(np.sort(C, axis=0), np.sort(X, axis=0))
    assert sorted(lab.tolist()) == list(range(12))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_kmeans_objective_monotone_and_fixed_point(seed, M):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 3))
    C, lab, hist, _ = kmeans(X, M, seed)
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))
    lab2, _ = assign(X, C)
    np.testing.assert_array_equal(lab, lab2)
    # centroids are the means of their members
    for k in range(M):
        if (lab == k).any():
            np.testing.assert_allclose(C[k], X[lab == k].mean(0), atol=1e-12)


def test_kmeans_two_blobs():
    rng = np.random.default_rng(5)
    mu = np.array([[0.0] * 4, [3.0] * 4])
    X = np.vstack([rng.normal(mu[0], 0.1, (200, 4)), rng.normal(mu[1], 0.1, (200, 4))])
    C, _, _, _ = kmeans(X, 2, seed=0)
    C = C[np.argsort(C[:, 0])]
    assert np.abs(C - mu).max() < 0.05


def test_kmeans_errors():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 4, 0)
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 1, 0)


def test_kmeans_duplicates_reseed():
    X = np.vstack([np.zeros((10, 2)), np.ones((10, 2))])
    C, lab, hist, _ = kmeans(X, 3, seed=0)
    assert np.all(np.isfinite(C))
    assert hist[-1] == pytest.approx(0.0)


def test_codebook_deterministic_and_json():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, DIM))
    a, b = train_codebook(X, 10, seed=4), train_codebook(X, 10, seed=4)
    assert np.array_equal(a.centroids, b.centroids)
    c = Codebook.from_json(a.to_json())
    assert np.array_equal(c.centroids, a.centroids) and c.seed == 4
    assert set(json.loads(a.to_json())) == {"M", "seed", "centroids"}
    with pytest.raises(ValueError):
        Codebook.from_json(json.dumps({"M": 3, "seed": 0, "centroids": [[0.0] * DIM] * 2}))


def test_one_hot_encoding():
    rng = np.random.default_rng(3)
    C = rng.normal(size=(6, DIM))
    cb = Codebook(C, 0)
    X = C[3] + rng.normal(0, 1e-3, (25, DIM))
    v = bow_from_descriptors(X, cb)
    expect = np.zeros(6)
    expect[3] = 1
    np.testing.assert_array_equal(v.freqs, expect)
    assert v.total_keypoints == 25 and not v.degenerate


def test_tie_goes_to_lowest_index():
    C = np.array([[1.0, 0.0], [-1.0, 0.0]])
    lab, _ = assign(np.zeros((1, 2)), C)
    assert lab[0] == 0


def test_blank_image_degenerate():
    cb = Codebook(np.random.default_rng(0).normal(size=(4, DIM)), 0)
    v = encode_bow(np.full((100, 100), 255, np.uint8), cb)
    assert v.degenerate and not v.freqs.any()
    assert isinstance(v, BowVector)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_bow_order_invariant_and_normalised(seed):
    rng = np.random.default_rng(seed)
    cb = Codebook(rng.normal(size=(8, DIM)), 0)
    X = rng.normal(size=(int(rng.integers(1, 50)), DIM))
    a = bow_from_descriptors(X, cb)
    b = bow_from_descriptors(X[rng.permutation(len(X))], cb)
    np.testing.assert_array_equal(a.freqs, b.freqs)
    assert a.freqs.sum() == pytest.approx(1.0)
    assert (a.freqs >= 0).all()


def test_encode_page_end_to_end():
    img = _square_page()
    descs = extract_descriptors(img)
    cb = train_codebook(descriptor_matrix(descs), 2, seed=0)
    v = encode_bow(img, cb)
    assert v.total_keypoints == len(descs)
    assert v.freqs.sum() == pytest.approx(1.0)
