"""Logistic loss, gradients, and the spectral quantities the step-size
schedules rely on.

All functions are pure and operate on float64 arrays. Margins here always
mean the label-signed scores ``y_i * <x_i, w>``; the loss of a sample is
``softplus(-margin)``. Softplus is evaluated as ``max(z, 0) + log1p(exp(-|z|))``
so margins up to +-1e4 neither overflow nor collapse to 0 prematurely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from stepgrow.errors import ConvergenceError

# Unit-norm / margin validation slack; generation and CSV rescaling are exact
# up to a few ulps, not exactly 1.0.
_NORM_TOL = 1e-9

_POWER_ITER_CAP = 10_000


@dataclass(frozen=True)
class MarginCertificate:
    """A unit direction and a positive margin witnessing linear separability."""

    direction: np.ndarray
    margin: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        object.__setattr__(self, "direction", d)
        if d.ndim != 1:
            raise ValueError("certificate direction must be a 1-d vector")
        norm = float(np.linalg.norm(d))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"certificate direction must be unit norm, got {norm!r}")
        if not (self.margin > 0.0):
            raise ValueError(f"certificate margin must be positive, got {self.margin!r}")


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with +-1 labels and an optional margin certificate.

    Invariants enforced on construction: every row norm is at most 1, every
    label is exactly -1 or +1, and an attached certificate actually separates
    the data at its claimed margin.
    """

    features: np.ndarray
    labels: np.ndarray
    certificate: Optional[MarginCertificate] = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        if x.ndim != 2:
            raise ValueError("features must be an n x d matrix")
        if y.shape != (x.shape[0],):
            raise ValueError(
                f"labels shape {y.shape} does not match {x.shape[0]} samples"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite entries")
        norms = np.linalg.norm(x, axis=1)
        worst = float(norms.max(initial=0.0))
        if worst > 1.0 + _NORM_TOL:
            raise ValueError(f"feature row norm {worst!r} exceeds 1")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if self.certificate is not None:
            cert = self.certificate
            if cert.direction.shape != (x.shape[1],):
                raise ValueError("certificate dimension does not match features")
            attained = float(np.min(y * (x @ cert.direction)))
            if attained < cert.margin - _NORM_TOL:
                raise ValueError(
                    f"certificate claims margin {cert.margin} but data attains {attained}"
                )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def softplus(z):
    """ln(1 + e^z), stable for any finite z (scalar or array)."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    """Standard logistic function, evaluated without overflow."""
    z = np.asarray(z, dtype=np.float64)
    q = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + q), q / (1.0 + q))


def margins(w: np.ndarray, data: Dataset) -> np.ndarray:
    """Label-signed scores y_i * <x_i, w> for all samples."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (data.dim,):
        raise ValueError(f"weights shape {w.shape} does not match d={data.dim}")
    return data.labels * (data.features @ w)


def full_loss(w: np.ndarray, data: Dataset) -> float:
    """Mean logistic loss (1/n) sum_i softplus(-y_i <x_i, w>)."""
    return float(np.mean(softplus(-margins(w, data))))


def sample_loss(w: np.ndarray, data: Dataset, i: int) -> float:
    """Logistic loss of sample i alone."""
    if not 0 <= i < data.n:
        raise ValueError(f"sample index {i} out of range [0, {data.n})")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (data.dim,):
        raise ValueError(f"weights shape {w.shape} does not match d={data.dim}")
    m = data.labels[i] * float(data.features[i] @ w)
    return float(softplus(-m))


def full_gradient(w: np.ndarray, data: Dataset) -> np.ndarray:
    """Gradient of `full_loss`; its norm is at most min(1, full_loss)."""
    m = margins(w, data)
    coeff = sigmoid(-m) * data.labels
    return -(data.features.T @ coeff) / data.n


def sample_gradient(w: np.ndarray, data: Dataset, i: int) -> np.ndarray:
    """Gradient of the loss of sample i alone."""
    if not 0 <= i < data.n:
        raise ValueError(f"sample index {i} out of range [0, {data.n})")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (data.dim,):
        raise ValueError(f"weights shape {w.shape} does not match d={data.dim}")
    m = data.labels[i] * float(data.features[i] @ w)
    return -float(sigmoid(-m)) * data.labels[i] * data.features[i]


def exp_loss(w: np.ndarray, data: Dataset) -> float:
    """Mean exponential loss (1/n) sum_i exp(-y_i <x_i, w>).

    Upper-bounds the logistic loss and drives the schedule's warm-up phase.
    Raises OverflowError if some margin is below -700 (the iterate sits far
    on the wrong side and exp would overflow).
    """
    m = margins(w, data)
    worst = float(m.min())
    if worst < -700.0:
        raise OverflowError(
            f"exponential loss overflows: margin {worst} below -700"
        )
    return float(np.mean(np.exp(-m)))


def _curvature_coeffs(m: np.ndarray) -> np.ndarray:
    # sigma(m) * sigma(-m) = q / (1+q)^2 with q = exp(-|m|); exact in the tails
    # where the naive s*(1-s) product rounds to 0 too early.
    q = np.exp(-np.abs(m))
    return q / (1.0 + q) ** 2


def hessian_max_eigenvalue(
    w: np.ndarray, data: Dataset, tol: float, seed: int = 0
) -> float:
    """Largest eigenvalue of the loss Hessian at w, by power iteration.

    The Hessian (1/n) sum_i x_i x_i^T sigma(m_i) sigma(-m_i) is never
    materialized; matrix-vector products run sample-wise so the check stays
    usable at d ~ 1000. Deterministic given ``seed``. Raises ConvergenceError
    with the iteration count if the eigenvalue estimate has not settled to a
    relative ``tol`` within the cap.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    m = margins(w, data)
    coeff = _curvature_coeffs(m)
    x = data.features
    n = data.n

    def matvec(v):
        return x.T @ (coeff * (x @ v)) / n

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(data.dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(_POWER_ITER_CAP):
        hv = matvec(v)
        norm = float(np.linalg.norm(hv))
        if norm == 0.0:
            # Hessian numerically zero (all margins huge): top eigenvalue is 0.
            return 0.0
        lam_new = float(v @ hv)
        v = hv / norm
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new
        lam = lam_new
    raise ConvergenceError(
        f"power iteration did not reach rel tol {tol} in {_POWER_ITER_CAP} iterations",
        iterations=_POWER_ITER_CAP,
    )
