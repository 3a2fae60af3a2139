"""Gaussian process regression with a squared-exponential kernel.

Conventions: the kernel is k(x, x') = sigma2_f * exp(-0.5 * sum_j ((x_j -
x'_j)/l_j)^2) with one length scale per feature dimension.  Noise enters as
sigma2_n = sigma2_f * sigma2_n_tilde, so correlation-scale matrices
(Phi = K / sigma2_f) carry a unit diagonal; all factorizations are Cholesky
solves on that unit scale, with an absolute jitter ladder 1e-10 .. 1e-6.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from .errors import IllConditionedError

JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class KernelHyperparameters:
    """Squared-exponential kernel settings (length scales per feature)."""

    sigma2_f: float
    length_scales: tuple
    sigma2_n_tilde: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "length_scales", tuple(float(l) for l in self.length_scales))
        if not self.sigma2_f > 0.0:
            raise ValueError("sigma2_f must be positive")
        if any(not l > 0.0 for l in self.length_scales):
            raise ValueError("length scales must be positive")
        if self.sigma2_n_tilde < 0.0:
            raise ValueError("sigma2_n_tilde must be nonnegative")

    @property
    def sigma2_n(self) -> float:
        return self.sigma2_f * self.sigma2_n_tilde


@dataclass
class FeatureScaler:
    """Per-dimension z-score transform fitted on a training feature matrix.

    Dimensions with (numerically) zero spread are centered but left unscaled,
    so constant features (e.g. the current column of a constant-current
    profile) pass through as zeros instead of dividing by zero.
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "FeatureScaler":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("need a 2-D feature matrix with at least one row")
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        floor = 1e-12 * np.maximum(1.0, np.abs(mean))
        scale = np.where(std > floor, std, 1.0)
        return cls(mean=mean, scale=scale)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "scale": [float(v) for v in self.scale],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(
            mean=np.asarray(d["mean"], dtype=float),
            scale=np.asarray(d["scale"], dtype=float),
        )


def kernel(X, Z, length_scales, sigma2_f=1.0) -> np.ndarray:
    """Squared-exponential kernel matrix between two feature sets."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    l = np.asarray(length_scales, dtype=float)
    if X.shape[1] != Z.shape[1] or X.shape[1] != l.size:
        raise ValueError("feature dimension mismatch with length scales")
    d2 = cdist(X / l, Z / l, "sqeuclidean")
    return sigma2_f * np.exp(-0.5 * d2)


def build_phi_n(X, length_scales, sigma2_n_tilde) -> np.ndarray:
    """Unit-signal-variance covariance Phi + sigma2_n_tilde * I."""
    if sigma2_n_tilde < 0.0:
        raise ValueError("sigma2_n_tilde must be nonnegative")
    phi = kernel(X, X, length_scales, 1.0)
    phi[np.diag_indices_from(phi)] += sigma2_n_tilde
    return phi


def chol_unit(M) -> tuple[np.ndarray, float]:
    """Cholesky factor of a unit-diagonal-scale SPD matrix with jitter ladder.

    Returns (L, jitter_used); raises IllConditionedError (with a condition
    estimate) when even the largest jitter fails.
    """
    M = np.asarray(M, dtype=float)
    for jitter in JITTER_LADDER:
        try:
            if jitter == 0.0:
                return np.linalg.cholesky(M), 0.0
            return np.linalg.cholesky(M + jitter * np.eye(M.shape[0])), jitter
        except np.linalg.LinAlgError:
            continue
    raise IllConditionedError(float(np.linalg.cond(M)))


def gpr_predict(features_train, targets, features_test, hp: KernelHyperparameters,
                scaler: FeatureScaler | None = None):
    """GP posterior at test inputs.

    Returns (mean, cov) with cov including the sigma2_n noise floor on its
    diagonal.  When a FeatureScaler is given, both input sets are z-scored
    with it before kernel evaluation (length scales are then in standardized
    units).
    """
    X = np.atleast_2d(np.asarray(features_train, dtype=float))
    Xs = np.atleast_2d(np.asarray(features_test, dtype=float))
    y = np.asarray(targets, dtype=float)
    if X.shape[0] < 1:
        raise ValueError("need at least one training point")
    if y.shape != (X.shape[0],):
        raise ValueError("targets must be one value per training row")
    if scaler is not None:
        X = scaler.transform(X)
        Xs = scaler.transform(Xs)
    l = hp.length_scales
    phi_n = build_phi_n(X, l, hp.sigma2_n_tilde)
    L, _ = chol_unit(phi_n)
    # cross- and test-covariances on the unit scale; sigma2_f cancels in the mean
    phi_cross = kernel(X, Xs, l, 1.0)
    a = solve_triangular(L, y, lower=True)
    B = solve_triangular(L, phi_cross, lower=True)
    mean = B.T @ a
    phi_test = kernel(Xs, Xs, l, 1.0)
    cov = hp.sigma2_f * (phi_test - B.T @ B)
    cov[np.diag_indices_from(cov)] += hp.sigma2_n
    return mean, cov


def hybrid_predict(v_model, delta_mean) -> np.ndarray:
    """Corrected voltage: physics model output plus GP discrepancy mean."""
    v = np.asarray(v_model, dtype=float)
    d = np.asarray(delta_mean, dtype=float)
    if v.shape != d.shape:
        raise ValueError("model output and discrepancy mean must share a shape")
    return v + d


def save_hyperparameters(path, hp: KernelHyperparameters,
                         scaler: FeatureScaler | None = None) -> None:
    doc = {
        "kernel": {
            "sigma2_f": float(hp.sigma2_f),
            "length_scales": [float(l) for l in hp.length_scales],
            "sigma2_n_tilde": float(hp.sigma2_n_tilde),
        }
    }
    if scaler is not None:
        doc["feature_scaler"] = scaler.to_dict()
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_hyperparameters(path):
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    k = doc["kernel"]
    hp = KernelHyperparameters(
        sigma2_f=float(k["sigma2_f"]),
        length_scales=tuple(float(l) for l in k["length_scales"]),
        sigma2_n_tilde=float(k["sigma2_n_tilde"]),
    )
    scaler = None
    if "feature_scaler" in doc:
        scaler = FeatureScaler.from_dict(doc["feature_scaler"])
    return hp, scaler
