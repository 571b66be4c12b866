"""Unsupervised layout exploration: DBSCAN, exact t-SNE, and the bookkeeping
that turns page clusters into per-journal labels."""
from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

NOISE = -1
TSNE_MAX_N = 5000


@dataclass
class FeatureSet:
    item_ids: list[str]
    group_ids: list[str]
    X: np.ndarray  # (n, d)

    def __post_init__(self):
        self.X = np.asarray(self.X, float).reshape(len(self.item_ids), -1)
        if len(self.group_ids) != len(self.item_ids):
            raise ValueError("item and group id lists differ in length")


def read_features(path) -> FeatureSet:
    """CSV with header ``item_id,group_id,f0..f{d-1}``."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        head = next(r)
        if head[:2] != ["item_id", "group_id"]:
            raise ValueError("feature CSV must start with item_id,group_id")
        d = len(head) - 2
        ids, groups, rows = [], [], []
        for line in r:
            if not line:
                continue
            if len(line) != d + 2:
                raise ValueError(f"row {line[0]!r} has {len(line) - 2} features, expected {d}")
            ids.append(line[0])
            groups.append(line[1])
            rows.append([float(v) for v in line[2:]])
    X = np.array(rows, float).reshape(len(rows), d)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    return FeatureSet(ids, groups, X)


def write_features(path, fs: FeatureSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "group_id"] + [f"f{i}" for i in range(fs.X.shape[1])])
        for i, g, v in zip(fs.item_ids, fs.group_ids, fs.X):
            w.writerow([i, g] + [repr(float(x)) for x in v])


def _l2_normalise(X: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(X, axis=1, keepdims=True)
    return np.divide(X, n, out=np.zeros_like(X), where=n > 0)


def neighbourhoods(X: np.ndarray, eps: float, chunk_bytes: int = 1 << 26) -> list[np.ndarray]:
    """Indices within Euclidean distance ``eps`` (inclusive) of each row, itself included."""
    n, d = X.shape
    step = max(1, chunk_bytes // (8 * max(n * d, 1)))
    out = []
    for s in range(0, n, step):
        diff = X[s : s + step, None, :] - X[None, :, :]
        dist = np.sqrt((diff * diff).sum(-1))
        out.extend(np.flatnonzero(row <= eps) for row in dist)
    return out


def dbscan(X, eps: float, min_pts: int, normalize: bool = False) -> np.ndarray:
    """Cluster ids from 0 in order of discovery, ``NOISE`` (-1) elsewhere.

    A border point reachable from several clusters goes to the first one
    that reaches it in scan order.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    X = np.asarray(X, float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if normalize:
        X = _l2_normalise(X)
    n = len(X)
    nb = neighbourhoods(X, eps)
    core = np.array([len(v) >= min_pts for v in nb], bool)
    labels = np.full(n, NOISE, np.int64)
    c = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = c
        q = deque([i])
        while q:
            p = q.popleft()
            for r in nb[p]:
                if labels[r] == NOISE:
                    labels[r] = c
                    if core[r]:
                        q.append(r)
        c += 1
    return labels


# ---------------------------------------------------------------- t-SNE


def _sqdist(Y: np.ndarray) -> np.ndarray:
    s = (Y * Y).sum(1)
    D = s[:, None] - 2.0 * Y @ Y.T + s[None, :]
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def conditional_p(D: np.ndarray, perplexity: float, tol: float = 1e-5, max_tries: int = 200):
    """Row-conditional affinities whose entropy (nats) matches ``log(perplexity)``.

    Returns ``(P, beta)`` with ``beta = 1 / (2 sigma^2)`` per row.
    """
    n = len(D)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()  # shift for stability; cancels in the normalisation
        beta, lo, hi = 1.0, -np.inf, np.inf
        for _ in range(max_tries):
            p = np.exp(-d * beta)
            sp = p.sum()
            H = np.log(sp) + beta * (d * p).sum() / sp
            diff = H - target
            if abs(diff) < tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = beta / 2 if lo == -np.inf else (beta + lo) / 2
        else:
            log.debug("perplexity bisection for row %d stopped at |dH|=%.2g", i, abs(diff))
        P[i, np.arange(n) != i] = p / sp
        betas[i] = beta
    return P, betas


def joint_p(X: np.ndarray, perplexity: float) -> np.ndarray:
    P, _ = conditional_p(_sqdist(X), perplexity)
    P = (P + P.T) / (2 * len(X))
    return np.maximum(P, 1e-12)


def _q_and_kl(Y: np.ndarray, P: np.ndarray):
    num = 1.0 / (1.0 + _sqdist(Y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    mask = ~np.eye(len(Y), dtype=bool)
    kl = float((P[mask] * np.log(P[mask] / Q[mask])).sum())
    return num, Q, kl


def _grad(Y, P, num, Q) -> np.ndarray:
    W = (P - Q) * num
    return 4.0 * (W.sum(1)[:, None] * Y - W @ Y)


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iters: int = 1000
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum: tuple[float, float] = (0.5, 0.8)
    init_sigma: float = 1e-4
    gains: bool = True
    normalize: bool = False


@dataclass
class TsneResult:
    Y: np.ndarray
    kl: list[float] = field(default_factory=list)  # un-exaggerated KL after each iteration
    exaggeration_iters: int = 0
    rejected_steps: int = 0


def tsne_embed(X, seed: int = 0, cfg: TsneConfig | None = None, **overrides) -> TsneResult:
    """Exact O(n^2) t-SNE to two dimensions.

    After early exaggeration a step that would raise the KL divergence is
    retried from rest with a halved step size, so the tracked KL never
    increases in the final phase.
    """
    cfg = cfg or TsneConfig()
    if overrides:
        cfg = TsneConfig(**{**cfg.__dict__, **overrides})
    X = np.asarray(X, float)
    n = len(X)
    if n < 4:
        raise ValueError("t-SNE needs at least 4 points")
    if n > TSNE_MAX_N:
        raise ValueError(f"exact t-SNE is capped at n={TSNE_MAX_N}")
    if not 1 < cfg.perplexity < n / 3:
        raise ValueError(f"perplexity must lie in (1, n/3) = (1, {n / 3:.1f})")
    if cfg.iters < cfg.exaggeration_iters:
        raise ValueError("iters must cover the exaggeration phase")
    if cfg.normalize:
        X = _l2_normalise(X)
    P = joint_p(X, cfg.perplexity)
    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, cfg.init_sigma, (n, 2))
    vel = np.zeros_like(Y)
    gains = np.ones_like(Y)
    res = TsneResult(Y, exaggeration_iters=cfg.exaggeration_iters)
    num, Q, kl = _q_and_kl(Y, P)
    eta = cfg.learning_rate
    for it in range(cfg.iters):
        early = it < cfg.exaggeration_iters
        mom = cfg.momentum[0] if early else cfg.momentum[1]
        Pe = P * cfg.exaggeration if early else P
        g = _grad(Y, Pe, num, Q)
        if cfg.gains:
            same = np.sign(g) == np.sign(vel)
            gains = np.where(same, gains * 0.8, gains + 0.2)
            np.maximum(gains, 0.01, out=gains)
        vel_new = mom * vel - eta * gains * g
        Y_new = Y + vel_new
        num_n, Q_n, kl_n = _q_and_kl(Y_new, P)
        if not early and kl_n > kl:
            # safeguard: restart momentum and backtrack along the plain gradient
            res.rejected_steps += 1
            vel_new = np.zeros_like(Y)
            gains = np.ones_like(Y)
            step = eta
            for _ in range(30):
                step /= 2
                cand = Y - step * g
                num_n, Q_n, kl_n = _q_and_kl(cand, P)
                if kl_n <= kl:
                    Y_new = cand
                    break
            else:
                Y_new, num_n, Q_n, kl_n = Y, num, Q, kl
        Y, vel, num, Q, kl = Y_new, vel_new, num_n, Q_n, kl_n
        Y = Y - Y.mean(0)  # translation leaves Q and the KL unchanged
        res.kl.append(kl)
    res.Y = Y
    if not np.all(np.isfinite(Y)):
        raise FloatingPointError("t-SNE diverged")
    return res


def neighbour_purity(Y: np.ndarray, groups, k: int = 15) -> float:
    """Mean fraction of each point's k nearest neighbours sharing its group."""
    g = np.asarray(groups)
    D = _sqdist(np.asarray(Y, float))
    np.fill_diagonal(D, np.inf)
    nn = np.argsort(D, axis=1, kind="stable")[:, :k]
    return float((g[nn] == g[:, None]).mean())


# ----------------------------------------------------- cluster bookkeeping


@dataclass
class AnnotationSample:
    clusters: dict[int, list[str]]
    noise: list[str]

    @property
    def ids(self) -> list[str]:
        return [i for c in sorted(self.clusters) for i in self.clusters[c]]


def annotation_sample(labels, per_cluster: int = 10, seed: int = 0, item_ids=None) -> AnnotationSample:
    """Seeded sample without replacement of up to ``per_cluster`` items from
    each cluster and, separately, from the noise points."""
    if per_cluster < 1:
        raise ValueError("per_cluster must be >= 1")
    labels = np.asarray(labels)
    ids = [str(i) for i in range(len(labels))] if item_ids is None else list(item_ids)
    rng = np.random.default_rng(seed)

    def pick(idx):
        idx = np.asarray(idx)
        if len(idx) > per_cluster:
            idx = np.sort(rng.choice(idx, per_cluster, replace=False))
        return [ids[i] for i in idx]

    clusters = {int(c): pick(np.flatnonzero(labels == c)) for c in np.unique(labels) if c != NOISE}
    return AnnotationSample(clusters, pick(np.flatnonzero(labels == NOISE)))


def group_indicator(labels, group_ids, positive_clusters) -> dict[str, bool]:
    """Per group: whether any of its items falls in a positive cluster."""
    labels = np.asarray(labels)
    if len(labels) != len(group_ids):
        raise ValueError("labels and group ids differ in length")
    known = set(np.unique(labels[labels != NOISE]).tolist())
    unknown = set(positive_clusters) - known
    if unknown:
        raise ValueError(f"unknown cluster ids {sorted(unknown)}")
    pos = set(positive_clusters)
    out: dict[str, bool] = {}
    for lab, g in zip(labels.tolist(), group_ids):
        out[g] = out.get(g, False) or lab in pos
    return out
