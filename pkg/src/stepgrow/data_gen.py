"""Margin-certified dataset generation, CSV ingestion, and margin estimation.

Every dataset leaving this module satisfies the two separability clauses the
optimizers assume: all feature rows have norm at most 1, and when a
certificate is attached the data attains its margin.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from stepgrow.errors import CsvFormatError, NotSeparableError
from stepgrow.loss_core import Dataset, MarginCertificate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenSpec:
    """Parameters for a synthetic separable dataset."""

    dim: int
    count: int
    margin: float
    seed: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be at least 1")
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if not 0.0 < self.margin < 1.0:
            raise ValueError(
                f"margin must lie strictly in (0, 1), got {self.margin!r}"
            )


def generate_separable(spec: GenSpec) -> Dataset:
    """Sample a dataset with an exact margin certificate.

    A random unit direction is drawn, points are sampled uniformly in the
    unit ball, and each point's coordinate along the direction is folded out
    of the forbidden slab (|coordinate| < margin) while the perpendicular
    component is shrunk enough to keep the row inside the unit ball. Labels
    are the sign of the folded coordinate, so the signed margin of every
    sample is at least ``spec.margin`` by construction. Deterministic given
    ``spec.seed`` (PCG64 stream).
    """
    rng = np.random.default_rng(spec.seed)
    d, n, gamma = spec.dim, spec.count, spec.margin

    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)

    # Uniform in the unit ball: direction uniform on the sphere, radius ~ U^(1/d).
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    u *= rng.random(n)[:, None] ** (1.0 / d)

    s = u @ direction
    sign = np.where(s >= 0.0, 1.0, -1.0)
    m_raw = np.abs(s)
    m = gamma + (1.0 - gamma) * m_raw  # folded coordinate, in [gamma, 1]

    perp = u - s[:, None] * direction[None, :]
    rho = np.linalg.norm(perp, axis=1)
    room_raw = np.sqrt(np.maximum(1.0 - m_raw**2, 0.0))
    room_new = np.sqrt(np.maximum(1.0 - m**2, 0.0))
    # Fraction of the available perpendicular room the point used; reuse it
    # at the folded coordinate so the row stays inside the unit ball.
    frac = np.divide(rho, room_raw, out=np.zeros(n), where=room_raw > 1e-300)
    unit_perp = np.divide(perp, rho[:, None], out=np.zeros_like(perp), where=rho[:, None] > 1e-300)

    features = (sign * m)[:, None] * direction[None, :] + (frac * room_new)[:, None] * unit_perp
    labels = sign
    cert = MarginCertificate(direction=direction, margin=gamma)
    return Dataset(features=features, labels=labels, certificate=cert)


def verify_margin(data: Dataset, cert: MarginCertificate) -> float:
    """Smallest signed margin of the data along the certificate direction.

    The certificate is valid for the data iff the returned value is at least
    ``cert.margin``.
    """
    if cert.direction.shape != (data.dim,):
        raise ValueError(
            f"certificate dimension {cert.direction.shape[0]} does not match d={data.dim}"
        )
    return float(np.min(data.labels * (data.features @ cert.direction)))


def estimate_margin(data: Dataset, max_epochs: int) -> MarginCertificate:
    """Perceptron-based certificate for data without one (e.g. CSV imports).

    Runs the classic perceptron until an epoch passes with no mistakes, then
    normalizes the separator and reports the margin it attains. That margin
    lower-bounds the maximum margin, which is all the schedules require.
    Raises NotSeparableError if no separator emerges within ``max_epochs``;
    a zero margin is never returned silently.
    """
    if max_epochs < 1:
        raise ValueError("max_epochs must be at least 1")
    x, y = data.features, data.labels
    w = np.zeros(data.dim)
    for _ in range(max_epochs):
        mistakes = 0
        for i in range(data.n):
            if y[i] * (x[i] @ w) <= 0.0:
                w += y[i] * x[i]
                mistakes += 1
        if mistakes == 0:
            w_unit = w / np.linalg.norm(w)
            attained = float(np.min(y * (x @ w_unit)))
            if attained <= 0.0:
                raise NotSeparableError(
                    "perceptron finished but attained margin is not positive"
                )
            return MarginCertificate(direction=w_unit, margin=attained)
    raise NotSeparableError(
        f"no separating direction found within {max_epochs} epochs: "
        "data may not be linearly separable"
    )


def parse_rows(path, skip_header: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Parse ``label,feature_1,...,feature_d`` rows without any rescaling.

    Returns the raw feature matrix and {-1,+1} labels ({0,1} labels are
    coerced, 0 meaning -1). Raises CsvFormatError naming the offending line
    for ragged rows, non-numeric fields, or labels outside {0, 1, -1, +1}.
    """
    path = Path(path)
    rows = []
    labels = []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if skip_header and lineno == 1:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise CsvFormatError(
                        f"{path}:{lineno}: expected label plus at least one feature"
                    )
            elif len(row) != width:
                raise CsvFormatError(
                    f"{path}:{lineno}: expected {width} fields, got {len(row)}"
                )
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise CsvFormatError(f"{path}:{lineno}: non-numeric field") from None
            raw_label = values[0]
            if raw_label not in (-1.0, 0.0, 1.0):
                raise CsvFormatError(
                    f"{path}:{lineno}: label {raw_label!r} not in {{0, 1, -1, +1}}"
                )
            labels.append(-1.0 if raw_label == 0.0 else raw_label)
            rows.append(values[1:])
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64), np.asarray(labels)


def load_csv(path, skip_header: bool = False) -> Dataset:
    """Read a dataset CSV, normalizing feature norms into the unit ball.

    Labels may be {0, 1} (0 is coerced to -1) or {-1, +1}. If the largest
    feature-row norm exceeds 1 the whole matrix is rescaled by its inverse,
    preserving relative geometry; the scale factor is logged.
    """
    features, labels = parse_rows(path, skip_header=skip_header)
    max_norm = float(np.linalg.norm(features, axis=1).max())
    scale = 1.0 / max_norm if max_norm > 1.0 else 1.0
    if scale != 1.0:
        features = features * scale
    log.info("loaded %s: n=%d d=%d max_row_norm=%g scale=%g",
             path, features.shape[0], features.shape[1], max_norm, scale)
    return Dataset(features=features, labels=labels)


def save_csv(data: Dataset, path) -> None:
    """Write the dataset in the same ``label,features...`` layout load_csv reads."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for i in range(data.n):
            fields = [repr(int(data.labels[i]))]
            fields += [repr(float(v)) for v in data.features[i]]
            fh.write(",".join(fields) + "\n")


def save_certificate(cert: MarginCertificate, path) -> None:
    """Write a certificate sidecar as JSON (direction plus margin)."""
    payload = {"direction": [float(v) for v in cert.direction],
               "margin": float(cert.margin)}
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=0) + "\n",
                          encoding="utf-8")


def load_certificate(path) -> MarginCertificate:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return MarginCertificate(
        direction=np.asarray(payload["direction"], dtype=np.float64),
        margin=float(payload["margin"]),
    )
