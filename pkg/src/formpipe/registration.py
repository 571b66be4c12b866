"""Non-rigid Coherent Point Drift (2-D) with a Gaussian displacement field.

By default both point sets are shifted and scaled by the template's mean
and mean norm (``normalize="shared"``), so ``beta`` is measured in template
units.  The returned transform maps raw template coordinates to raw target
coordinates:

    T(z) = scale * z + offset + sum_m W[m] * exp(-|z - y_m|^2 / (2 beta^2))

Shared normalisation gives ``scale == 1`` and ``offset == 0``, i.e. the plain
displacement field ``z + G(z) W``.  ``normalize="separate"`` normalises each
set on its own and absorbs the difference into ``scale``/``offset``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)


class RegistrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CpdConfig:
    beta: float = 2.0
    lam: float = 3.0
    w: float = 0.1
    max_iters: int = 150
    tol: float = 1e-8
    normalize: str = "shared"  # "shared" | "separate" | "none"

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if not 0 <= self.w < 1:
            raise ValueError("w must be in [0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


@dataclass
class NonRigidTransform:
    base_points: np.ndarray  # (M, 2) template points, raw coordinates
    beta: float  # kernel width in raw template units
    coefficients: np.ndarray  # (M, 2)
    scale: float = 1.0
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.base_points = np.asarray(self.base_points, float).reshape(-1, 2)
        self.coefficients = np.asarray(self.coefficients, float).reshape(-1, 2)
        self.offset = np.asarray(self.offset, float).reshape(2)
        if len(self.coefficients) != len(self.base_points):
            raise ValueError("coefficients and base_points differ in length")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("non-finite coefficients")

    def __call__(self, z) -> np.ndarray:
        return apply_transform(self, z)

    def to_dict(self) -> dict:
        d = {
            "base_points": self.base_points.tolist(),
            "beta": self.beta,
            "coefficients": self.coefficients.tolist(),
        }
        # only separately normalised fits carry a global similarity part
        if self.scale != 1.0 or np.any(self.offset != 0):
            d["scale"] = self.scale
            d["offset"] = self.offset.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NonRigidTransform":
        return cls(
            np.array(d["base_points"], float),
            float(d["beta"]),
            np.array(d["coefficients"], float),
            float(d.get("scale", 1.0)),
            np.array(d.get("offset", [0.0, 0.0]), float),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class RegistrationResult:
    transform: NonRigidTransform
    sigma2: float  # final variance, target pixels squared
    iterations: int
    converged: bool
    objective: list[float] = field(default_factory=list)  # penalised NLL per iteration
    sigma2_history: list[float] = field(default_factory=list)  # normalised units


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def gaussian_kernel(Y: np.ndarray, beta: float) -> np.ndarray:
    Y = np.asarray(Y, float).reshape(-1, 2)
    if len(Y) < 1 or not beta > 0:
        raise ValueError("need at least one point and beta > 0")
    return np.exp(-_sqdist(Y, Y) / (2.0 * beta * beta))


def apply_transform(t: NonRigidTransform, z) -> np.ndarray:
    z = np.asarray(z, float)
    single = z.ndim == 1
    z2 = z.reshape(-1, 2)
    k = np.exp(-_sqdist(z2, t.base_points) / (2.0 * t.beta * t.beta))
    out = t.scale * z2 + t.offset + k @ t.coefficients
    return out[0] if single else out


def _normalise(P: np.ndarray, ref: np.ndarray):
    """Centre on the mean and scale to unit mean norm.

    Differences are taken against ``ref`` first, so shifting both ``P`` and
    ``ref`` by an exactly representable vector leaves the output bit-identical.
    """
    d = P - ref
    dm = d.mean(axis=0)
    c = d - dm
    scale = np.mean(np.linalg.norm(c, axis=1))
    if not scale > 0:
        scale = 1.0
    return c / scale, ref + dm, scale, dm


def _outlier_const(sigma2, w, M, N):
    return 2.0 * np.pi * sigma2 * (w / (1.0 - w)) * (M / N)


def e_step(X: np.ndarray, T: np.ndarray, sigma2: float, w: float):
    """Posterior matrix ``P[m, n] = p(m | x_n)`` and per-point log normaliser."""
    M, N = len(T), len(X)
    logk = -_sqdist(T, X) / (2.0 * sigma2)  # (M, N)
    c = _outlier_const(sigma2, w, M, N)
    if c > 0:
        stacked = np.vstack([logk, np.full((1, N), np.log(c))])
        lognorm = logsumexp(stacked, axis=0)
    else:
        lognorm = logsumexp(logk, axis=0)
    return np.exp(logk - lognorm), lognorm


def penalised_nll(X, T, W, G, sigma2, w, lam) -> float:
    """Negative log-likelihood of X under the mixture plus ``lam/2 tr(W'GW)``, up to constants."""
    M, N = len(T), len(X)
    _, lognorm = e_step(X, T, sigma2, w)
    nll = -lognorm.sum() + N * np.log(2.0 * np.pi * sigma2)
    return float(nll + 0.5 * lam * np.trace(W.T @ G @ W))


def _initial_sigma2(X, Y):
    M, N = len(Y), len(X)
    return float(_sqdist(X, Y).sum() / (2.0 * M * N))


def cpd_register(template, target, cfg: CpdConfig | None = None, track_objective: bool = False) -> RegistrationResult:
    """Register template points ``Y`` onto target points ``X``."""
    cfg = cfg or CpdConfig()
    Y_raw = np.asarray(template, float).reshape(-1, 2)
    X_raw = np.asarray(target, float).reshape(-1, 2)
    M, N = len(Y_raw), len(X_raw)
    if M < 3 or N < 3:
        raise ValueError("cpd_register needs at least 3 points in each set")
    if not (np.all(np.isfinite(Y_raw)) and np.all(np.isfinite(X_raw))):
        raise RegistrationError("non-finite input coordinates")

    if cfg.normalize == "separate":
        Y, my, sy, _ = _normalise(Y_raw, Y_raw[0])
        X, mx, sx, _ = _normalise(X_raw, X_raw[0])
    elif cfg.normalize == "shared":
        Y, my, sy, dm = _normalise(Y_raw, Y_raw[0])
        mx, sx = my, sy
        X = ((X_raw - Y_raw[0]) - dm) / sx
    elif cfg.normalize == "none":
        Y, my, sy = Y_raw, np.zeros(2), 1.0
        X, mx, sx = X_raw, np.zeros(2), 1.0
    else:
        raise ValueError(f"unknown normalisation {cfg.normalize!r}")

    G = gaussian_kernel(Y, cfg.beta)
    W = np.zeros((M, 2))
    T = Y.copy()
    sigma2 = _initial_sigma2(X, Y)
    if not sigma2 > 0:
        sigma2 = 1.0
    floor = 1e-12
    objective, history = [], [sigma2]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        P, _ = e_step(X, T, sigma2, cfg.w)
        P1 = P.sum(axis=1)
        Pt1 = P.sum(axis=0)
        Np = P1.sum()
        PX = P @ X
        # (G + lam s2 d(P1)^-1) W = d(P1)^-1 PX - Y, multiplied through by d(P1)
        A = P1[:, None] * G + cfg.lam * sigma2 * np.eye(M)
        B = PX - P1[:, None] * Y
        try:
            W = np.linalg.solve(A, B)
        except np.linalg.LinAlgError as exc:
            raise RegistrationError(f"singular M-step system at iteration {it}") from exc
        T = Y + G @ W
        new_sigma2 = (
            np.einsum("n,nd,nd->", Pt1, X, X)
            - 2.0 * np.einsum("md,md->", PX, T)
            + np.einsum("m,md,md->", P1, T, T)
        ) / (2.0 * Np)
        if not (np.isfinite(new_sigma2) and np.all(np.isfinite(W))):
            raise RegistrationError(f"non-finite state at iteration {it}")
        new_sigma2 = max(float(new_sigma2), floor)
        change = abs(new_sigma2 - sigma2) / sigma2
        sigma2 = new_sigma2
        history.append(sigma2)
        if track_objective:
            objective.append(penalised_nll(X, T, W, G, sigma2, cfg.w, cfg.lam))
        if change < cfg.tol or sigma2 <= floor:
            converged = True
            break

    transform = NonRigidTransform(
        base_points=Y_raw,
        beta=cfg.beta * sy,
        coefficients=W * sx,
        scale=sx / sy,
        offset=mx - (sx / sy) * my,
    )
    res = RegistrationResult(transform, sigma2 * sx * sx, it, converged, objective, history)
    log.debug("cpd: %d iterations, sigma2=%.3g, converged=%s", it, sigma2, converged)
    return res
