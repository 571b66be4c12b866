"""Bag-of-visual-words features for layout classification.

Keypoints are Harris maxima on the grayscale page; each gets a 64-d
gradient-grid descriptor (4x4 cells over a 16x16 patch, each cell summing
``dx, |dx|, dy, |dy|``).  A k-means codebook turns a page into a normalised
histogram of visual words.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .landmark import detect_corners, harris_response

log = logging.getLogger(__name__)

PATCH = 16
CELLS = 4
DIM = CELLS * CELLS * 4


@dataclass(frozen=True)
class DescriptorConfig:
    max_keypoints: int = 500
    max_side: int = 400  # pages are downscaled so the longest side fits
    window_sigma: float = 1.5
    k: float = 0.05
    rel_threshold: float = 0.01
    nms_radius: int = 4


@dataclass
class Descriptor:
    vector: np.ndarray  # (64,)
    location: tuple[float, float]  # x, y
    scale: float = float(PATCH)
    degenerate: bool = False


@dataclass
class Codebook:
    centroids: np.ndarray  # (M, 64)
    seed: int
    objective: list[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def M(self) -> int:
        return len(self.centroids)

    def to_json(self) -> str:
        return json.dumps({"M": self.M, "seed": self.seed, "centroids": self.centroids.tolist()})

    @classmethod
    def from_json(cls, data: str | bytes) -> "Codebook":
        d = json.loads(data)
        c = np.array(d["centroids"], float)
        if c.ndim != 2 or len(c) != d["M"] or len(c) < 2 or not np.all(np.isfinite(c)):
            raise ValueError("malformed codebook")
        return cls(c, int(d["seed"]))


@dataclass
class BowVector:
    freqs: np.ndarray
    total_keypoints: int

    @property
    def degenerate(self) -> bool:
        return self.total_keypoints == 0


def downscale(img: np.ndarray, max_side: int) -> np.ndarray:
    """Bilinear downscale so ``max(h, w) <= max_side``; smaller images pass through."""
    h, w = img.shape
    f = max_side / max(h, w)
    if f >= 1:
        return img
    return ndimage.zoom(img.astype(np.float64), f, order=1, mode="nearest", grid_mode=True)


def _descriptor_at(gx: np.ndarray, gy: np.ndarray, x: int, y: int) -> np.ndarray:
    """64-d vector from the 16x16 patch whose top-left pixel is ``(x - 8, y - 8)``.

    ``gx``/``gy`` are padded by ``PATCH`` on every side so patches near the
    border read zeros.
    """
    half = PATCH // 2
    y0, x0 = y - half + PATCH, x - half + PATCH
    px = gx[y0 : y0 + PATCH, x0 : x0 + PATCH].reshape(CELLS, PATCH // CELLS, CELLS, PATCH // CELLS)
    py = gy[y0 : y0 + PATCH, x0 : x0 + PATCH].reshape(CELLS, PATCH // CELLS, CELLS, PATCH // CELLS)
    v = np.stack(
        [px.sum(axis=(1, 3)), np.abs(px).sum(axis=(1, 3)), py.sum(axis=(1, 3)), np.abs(py).sum(axis=(1, 3))],
        axis=-1,
    )
    return v.reshape(DIM)


def extract_descriptors(img: np.ndarray, cfg: DescriptorConfig | None = None) -> list[Descriptor]:
    cfg = cfg or DescriptorConfig()
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 32:
        raise ValueError("image must be at least 32x32")
    img = downscale(img, cfg.max_side)
    resp = harris_response(img, cfg.window_sigma, cfg.k, binary=False)
    pts = detect_corners(resp, cfg.rel_threshold, cfg.nms_radius, refine="none")[: cfg.max_keypoints]
    if len(pts) == 0:
        return []
    p = np.pad(img, 1, mode="edge")
    gx = np.pad((p[1:-1, 2:] - p[1:-1, :-2]) / 2.0, PATCH)
    gy = np.pad((p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0, PATCH)
    out = []
    for x, y, _ in pts:
        v = _descriptor_at(gx, gy, int(x), int(y))
        n = np.linalg.norm(v)
        if n > 0:
            out.append(Descriptor(v / n, (float(x), float(y))))
        else:
            out.append(Descriptor(v, (float(x), float(y)), degenerate=True))
    return out


def descriptor_matrix(descs: list[Descriptor]) -> np.ndarray:
    if not descs:
        return np.empty((0, DIM))
    return np.vstack([d.vector for d in descs])


def _sqdist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def assign(X: np.ndarray, C: np.ndarray, chunk: int = 8192):
    """Nearest centroid per row (ties to the lowest index) and its squared distance."""
    lab = np.empty(len(X), np.int64)
    dist = np.empty(len(X))
    for s in range(0, len(X), chunk):
        d = _sqdist(X[s : s + chunk], C)
        lab[s : s + chunk] = d.argmin(axis=1)
        dist[s : s + chunk] = d[np.arange(len(d)), lab[s : s + chunk]]
    return lab, dist


def kmeans_pp_init(X: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    idx = [int(rng.integers(n))]
    d2 = _sqdist(X, X[idx[0] : idx[0] + 1])[:, 0]
    for _ in range(1, M):
        tot = d2.sum()
        if tot > 0:
            j = int(rng.choice(n, p=d2 / tot))
        else:
            # every point coincides with a chosen centre; take the next unused row
            j = next(i for i in range(n) if i not in idx)
        idx.append(j)
        d2 = np.minimum(d2, _sqdist(X, X[j : j + 1])[:, 0])
    return X[idx].copy()


def kmeans(X: np.ndarray, M: int, seed: int, max_iter: int = 300):
    """Lloyd's algorithm with k-means++ seeding.

    Returns ``(centroids, labels, objective_history, iterations)``; the
    history records the objective after each assignment step.
    """
    X = np.asarray(X, float)
    if M < 2:
        raise ValueError("M must be >= 2")
    if len(X) < M:
        raise ValueError(f"need at least M={M} descriptors, got {len(X)}")
    rng = np.random.default_rng(seed)
    C = kmeans_pp_init(X, M, rng)
    lab, dist = assign(X, C)
    history = [float(dist.sum())]
    it = 0
    for it in range(1, max_iter + 1):
        C_new = np.zeros_like(C)
        counts = np.bincount(lab, minlength=M)
        np.add.at(C_new, lab, X)
        empty = np.nonzero(counts == 0)[0]
        nz = counts > 0
        C_new[nz] /= counts[nz, None]
        if len(empty):
            # reseed each empty cluster at the point currently worst served
            d = dist.copy()
            for k in empty:
                j = int(np.argmax(d))
                C_new[k] = X[j]
                d[j] = -1.0
            log.debug("kmeans: reseeded %d empty clusters", len(empty))
        new_lab, dist = assign(X, C_new)
        C = C_new
        history.append(float(dist.sum()))
        if np.array_equal(new_lab, lab) and not len(empty):
            break
        lab = new_lab
    return C, lab, history, it


def train_codebook(descriptors, M: int = 200, seed: int = 0, max_iter: int = 300) -> Codebook:
    X = descriptors if isinstance(descriptors, np.ndarray) else descriptor_matrix(descriptors)
    C, _, hist, it = kmeans(X, M, seed, max_iter)
    return Codebook(C, seed, hist, it)


def bow_from_descriptors(X: np.ndarray, cb: Codebook) -> BowVector:
    X = np.asarray(X, float).reshape(-1, cb.centroids.shape[1])
    if len(X) == 0:
        return BowVector(np.zeros(cb.M), 0)
    lab, _ = assign(X, cb.centroids)
    counts = np.bincount(lab, minlength=cb.M).astype(float)
    return BowVector(counts / counts.sum(), len(X))


def encode_bow(img: np.ndarray, cb: Codebook, cfg: DescriptorConfig | None = None) -> BowVector:
    return bow_from_descriptors(descriptor_matrix(extract_descriptors(img, cfg)), cb)
