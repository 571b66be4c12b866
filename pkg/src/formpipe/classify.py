"""One-vs-rest RBF-kernel SVMs trained by SMO, plus grid-search cross-validation."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_FACTORS = (0.5, 1.0, 2.0, 4.0)  # divided by the feature dimension


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    d = (A * A).sum(1)[:, None] - 2.0 * A @ B.T + (B * B).sum(1)[None, :]
    return np.exp(-gamma * np.maximum(d, 0.0))


@dataclass
class SmoResult:
    alpha: np.ndarray
    b: float
    iterations: int
    gap: float  # final maximal KKT violation m(alpha) - M(alpha)


def smo_train(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3, max_iter: int | None = None) -> SmoResult:
    """Solve the binary soft-margin dual by SMO with maximal-violating-pair selection.

    ``y`` holds +1/-1.  Decision values are ``K @ (alpha * y) + b``.
    """
    y = np.asarray(y, float)
    n = len(y)
    if C <= 0:
        raise ValueError("C must be > 0")
    Q = K * np.outer(y, y)
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of 0.5 a'Qa - e'a
    max_iter = max_iter or max(100_000, 1000 * n)
    tau = 1e-12
    it = 0
    gap = np.inf
    for it in range(1, max_iter + 1):
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        v = -y * G
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(v[up])])
        j = int(np.flatnonzero(low)[np.argmin(v[low])])
        gap = v[i] - v[j]
        if gap < tol:
            break
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(Q[i, i] + Q[j, j] + 2 * Q[i, j], tau)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            quad = max(Q[i, i] + Q[j, j] - 2 * Q[i, j], tau)
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            ni, nj = ai - delta, aj + delta
            if s > C:
                if ni > C:
                    ni, nj = C, s - C
            elif nj < 0:
                nj, ni = 0.0, s
            if s > C:
                if nj > C:
                    nj, ni = C, s - C
            elif ni < 0:
                ni, nj = 0.0, s
        G += Q[:, i] * (ni - ai) + Q[:, j] * (nj - aj)
        alpha[i], alpha[j] = ni, nj
    else:
        log.warning("SMO hit max_iter=%d with gap %.3g", max_iter, gap)

    # bias from free vectors, else the midpoint of the feasible interval
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        at_ub = alpha >= C
        ub_set = (at_ub & (y < 0)) | (~at_ub & (y > 0))
        lb_set = ~ub_set
        ub = yG[ub_set].min() if ub_set.any() else np.inf
        lb = yG[lb_set].max() if lb_set.any() else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else float(ub if np.isfinite(ub) else lb)
    return SmoResult(alpha, -rho, it, float(gap))


@dataclass
class BinarySvm:
    support_vectors: np.ndarray  # (s, d)
    dual_coef: np.ndarray  # alpha * y, (s,)
    b: float

    def decision(self, X: np.ndarray, gamma: float) -> np.ndarray:
        if len(self.dual_coef) == 0:
            return np.full(len(X), self.b)
        return rbf_kernel(X, self.support_vectors, gamma) @ self.dual_coef + self.b


@dataclass
class SvmModel:
    classes: list
    machines: list[BinarySvm]
    gamma: float
    C: float

    @property
    def dim(self) -> int:
        for m in self.machines:
            if len(m.support_vectors):
                return m.support_vectors.shape[1]
        return -1

    def to_json(self) -> str:
        return json.dumps(
            {
                "classes": list(self.classes),
                "gamma": self.gamma,
                "C": self.C,
                "machines": [
                    {"support_vectors": m.support_vectors.tolist(), "dual_coef": m.dual_coef.tolist(), "b": m.b}
                    for m in self.machines
                ],
            }
        )

    @classmethod
    def from_json(cls, data: str | bytes) -> "SvmModel":
        d = json.loads(data)
        ms = [
            BinarySvm(np.array(m["support_vectors"], float).reshape(len(m["dual_coef"]), -1), np.array(m["dual_coef"], float), float(m["b"]))
            for m in d["machines"]
        ]
        return cls(list(d["classes"]), ms, float(d["gamma"]), float(d["C"]))


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, np.ndarray):
        return X.astype(float, copy=False)
    return np.vstack([getattr(x, "freqs", x) for x in X]).astype(float)


def svm_train(X, y, C: float = 1.0, gamma: float = 1.0, seed: int = 0, tol: float = 1e-3) -> SvmModel:
    """One-vs-rest SVMs, one per class in sorted label order.

    SMO with maximal-violating-pair selection is deterministic, so ``seed``
    does not affect the result; it is accepted for interface symmetry.
    """
    X = _as_matrix(X)
    y = list(y)
    if len(X) != len(y):
        raise ValueError("X and y differ in length")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")
    classes = sorted(set(y))
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    K = rbf_kernel(X, X, gamma)
    machines = []
    for c in classes:
        yy = np.array([1.0 if v == c else -1.0 for v in y])
        r = smo_train(K, yy, C, tol)
        sv = r.alpha > 0
        machines.append(BinarySvm(X[sv].copy(), (r.alpha * yy)[sv], r.b))
    return SvmModel(classes, machines, gamma, C)


@dataclass
class Prediction:
    label: object
    scores: np.ndarray
    low_confidence: bool


def svm_predict(m: SvmModel, x) -> Prediction:
    x = np.asarray(getattr(x, "freqs", x), float).reshape(1, -1)
    if m.dim >= 0 and x.shape[1] != m.dim:
        raise ValueError(f"feature dimension {x.shape[1]} != model dimension {m.dim}")
    scores = np.array([mc.decision(x, m.gamma)[0] for mc in m.machines])
    k = int(np.argmax(scores))  # first maximum wins, i.e. class order
    low = not np.any(x) or scores[k] < 0
    return Prediction(m.classes[k], scores, bool(low))


def svm_predict_many(m: SvmModel, X) -> list:
    X = _as_matrix(X)
    if len(X) == 0:
        return []
    S = np.column_stack([mc.decision(X, m.gamma) for mc in m.machines])
    return [m.classes[int(k)] for k in np.argmax(S, axis=1)]


@dataclass
class CvEntry:
    C: float
    gamma: float
    mean_accuracy: float
    fold_accuracies: list[float]


@dataclass
class CvReport:
    grid: list[CvEntry] = field(default_factory=list)
    chosen: dict = field(default_factory=dict)
    rounds: int = 0  # train/predict rounds per grid point

    def to_dict(self) -> dict:
        return {
            "grid": [vars(e) for e in self.grid],
            "chosen": self.chosen,
            "rounds": self.rounds,
        }


def make_folds(y, scheme: str = "kfold", k: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Test-index arrays; k-fold is stratified by dealing each class round-robin."""
    n = len(y)
    if scheme == "loo":
        return [np.array([i]) for i in range(n)]
    if scheme != "kfold":
        raise ValueError(f"unknown scheme {scheme!r}")
    if not 2 <= k <= n:
        raise ValueError("k-fold needs 2 <= k <= n")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, np.int64)
    offset = 0
    y = np.asarray(y, dtype=object)
    for c in sorted(set(y.tolist())):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        fold_of[idx] = (offset + np.arange(len(idx))) % k
        offset += len(idx)
    return [np.flatnonzero(fold_of == f) for f in range(k)]


def cross_validate(
    X,
    y,
    C_grid=DEFAULT_C_GRID,
    gamma_grid=None,
    scheme: str = "kfold",
    k: int = 5,
    seed: int = 0,
) -> CvReport:
    X = _as_matrix(X)
    y = list(y)
    if gamma_grid is None:
        gamma_grid = [f / X.shape[1] for f in DEFAULT_GAMMA_FACTORS]
    if not len(C_grid) or not len(gamma_grid):
        raise ValueError("empty hyperparameter grid")
    folds = make_folds(y, scheme, k, seed)
    yarr = np.asarray(y, dtype=object)
    train_sets = [np.setdiff1d(np.arange(len(y)), f) for f in folds]
    seen = set()
    for tr in train_sets:
        seen.update(yarr[tr].tolist())
    if seen != set(y):
        raise ValueError(f"classes {sorted(set(y) - seen)} absent from every training fold")

    report = CvReport(rounds=len(folds))
    for C in sorted(C_grid):
        for g in sorted(gamma_grid):
            accs = []
            for te, tr in zip(folds, train_sets):
                ytr = yarr[tr].tolist()
                if len(set(ytr)) < 2:
                    pred = [ytr[0]] * len(te)
                else:
                    pred = svm_predict_many(svm_train(X[tr], ytr, C, g, seed), X[te])
                accs.append(float(np.mean([p == t for p, t in zip(pred, yarr[te])])))
            report.grid.append(CvEntry(float(C), float(g), float(np.mean(accs)), accs))
    # sorted iteration + strict improvement gives ties to smaller C, then smaller gamma
    best = None
    for e in report.grid:
        if best is None or e.mean_accuracy > best.mean_accuracy:
            best = e
    report.chosen = {"C": best.C, "gamma": best.gamma}
    return report
