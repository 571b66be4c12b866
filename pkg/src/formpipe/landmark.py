"""Harris corner landmarks on table-line images."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class HarrisConfig:
    k: float = 0.05
    window_sigma: float = 2.0
    rel_threshold: float = 0.01
    nms_radius: int = 10


def _central_gradients(img: np.ndarray):
    p = np.pad(img, 1, mode="edge")
    ix = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    iy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    return ix, iy


def harris_response(img: np.ndarray, window_sigma: float = 2.0, k: float = 0.05, binary: bool = True) -> np.ndarray:
    """Per-pixel Harris response ``det(M) - k * trace(M)**2``.

    With ``binary=True`` the input is a {0, 1} line image and is scaled to
    {0, 255}; otherwise it is used as grayscale intensities.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError("image must be at least 3x3")
    if window_sigma <= 0:
        raise ValueError("window_sigma must be positive")
    if not 0.04 <= k <= 0.06:
        warnings.warn(f"Harris k={k} outside the usual [0.04, 0.06] range", stacklevel=2)
    if binary:
        img = img * 255.0
    ix, iy = _central_gradients(img)
    smooth = lambda a: ndimage.gaussian_filter(a, window_sigma, mode="constant", truncate=3.0)
    sxx = smooth(ix * ix)
    syy = smooth(iy * iy)
    sxy = smooth(ix * iy)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def _disc(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (xx * xx + yy * yy) <= r * r


def _quadratic_peak(resp: np.ndarray, y: int, x: int) -> tuple[float, float]:
    h, w = resp.shape

    def offset(a, c, b):
        den = a - 2.0 * c + b
        if den >= 0:
            return 0.0
        return float(np.clip(0.5 * (a - b) / den, -0.5, 0.5))

    dx = offset(resp[y, x - 1], resp[y, x], resp[y, x + 1]) if 0 < x < w - 1 else 0.0
    dy = offset(resp[y - 1, x], resp[y, x], resp[y + 1, x]) if 0 < y < h - 1 else 0.0
    return x + dx, y + dy


def _centroid_peak(resp: np.ndarray, y: int, x: int, radius: int) -> tuple[float, float]:
    """Response-weighted centroid of the half-maximum blob around a peak.

    Thick line crossings produce one response lobe per inner corner; the
    blob centroid sits on the crossing rather than on one of the lobes.
    """
    h, w = resp.shape
    y0, y1 = max(0, y - radius), min(h, y + radius + 1)
    x0, x1 = max(0, x - radius), min(w, x + radius + 1)
    win = resp[y0:y1, x0:x1]
    lab, _ = ndimage.label(win >= 0.5 * resp[y, x])
    wts = np.where(lab == lab[y - y0, x - x0], win, 0.0)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    tot = wts.sum()
    return float((wts * xx).sum() / tot), float((wts * yy).sum() / tot)


def detect_corners(
    resp: np.ndarray,
    rel_threshold: float = 0.01,
    nms_radius: int = 10,
    refine: str = "centroid",
    refine_radius: int = 5,
) -> np.ndarray:
    """Strict local maxima of the response within a disc of ``nms_radius``.

    Returns an ``(n, 3)`` array of ``x, y, response`` rows ordered by
    descending response.  Equal-valued maxima inside one disc keep only the
    first in row-major scan order.  ``refine`` selects sub-pixel refinement:
    ``"centroid"`` (half-max blob centroid), ``"quadratic"`` (3x3 parabola
    fit) or ``"none"``.
    """
    if not 0 < rel_threshold <= 1:
        raise ValueError("rel_threshold must be in (0, 1]")
    if nms_radius < 1:
        raise ValueError("nms_radius must be >= 1")
    resp = np.asarray(resp, dtype=np.float64)
    rmax = resp.max() if resp.size else 0.0
    if not rmax > 0:
        return np.empty((0, 3))
    fp = _disc(nms_radius)
    local_max = ndimage.maximum_filter(resp, footprint=fp, mode="constant", cval=-np.inf)
    cand = (resp >= rel_threshold * rmax) & (resp >= local_max)
    ys, xs = np.nonzero(cand)  # row-major order
    r = int(nms_radius)
    h, w = resp.shape
    keep = []
    for y, x in zip(ys, xs):
        v = resp[y, x]
        y0, y1 = max(0, y - r), min(h, y + r + 1)
        x0, x1 = max(0, x - r), min(w, x + r + 1)
        win = resp[y0:y1, x0:x1]
        disc = fp[y0 - y + r : y1 - y + r, x0 - x + r : x1 - x + r]
        ty, tx = np.nonzero((win == v) & disc)
        # earliest equal pixel in scan order wins the tie
        if (ty[0] + y0, tx[0] + x0) != (y, x):
            continue
        keep.append((y, x, v))
    keep.sort(key=lambda t: (-t[2], t[0], t[1]))
    out = np.empty((len(keep), 3))
    for i, (y, x, v) in enumerate(keep):
        if refine == "centroid":
            sx, sy = _centroid_peak(resp, y, x, refine_radius)
        elif refine == "quadratic":
            sx, sy = _quadratic_peak(resp, y, x)
        else:
            sx, sy = float(x), float(y)
        out[i] = sx, sy, v
    return out


def find_landmarks(lines: np.ndarray, cfg: HarrisConfig | None = None) -> np.ndarray:
    """Landmark rows ``x, y, response`` from a binary line image."""
    cfg = cfg or HarrisConfig()
    resp = harris_response(lines, cfg.window_sigma, cfg.k)
    return detect_corners(resp, cfg.rel_threshold, cfg.nms_radius)


def match_points(found: np.ndarray, truth: np.ndarray, tol: float) -> tuple[float, float]:
    """Greedy one-to-one matching; returns ``(precision, recall)`` at ``tol``."""
    found = np.asarray(found, float)[:, :2].reshape(-1, 2)
    truth = np.asarray(truth, float).reshape(-1, 2)
    if len(found) == 0 or len(truth) == 0:
        return (1.0 if len(found) == 0 else 0.0), (1.0 if len(truth) == 0 else 0.0)
    d = np.linalg.norm(found[:, None, :] - truth[None, :, :], axis=2)
    pairs = sorted((d[i, j], i, j) for i, j in zip(*np.nonzero(d <= tol)))
    used_f, used_t = set(), set()
    for _, i, j in pairs:
        if i not in used_f and j not in used_t:
            used_f.add(i)
            used_t.add(j)
    return len(used_f) / len(found), len(used_t) / len(truth)
