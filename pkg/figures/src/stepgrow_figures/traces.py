"""Readers for the harness's published file formats.

Run traces are CSV with header ``t,loss,eta,S,grad_norm,w_norm`` (the S
column is empty for SGD rows); run summaries are text files whose
machine-readable part is ``key=value`` lines.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TRACE_HEADER = ["t", "loss", "eta", "S", "grad_norm", "w_norm"]


class TraceFormatError(ValueError):
    """A trace or summary file does not match its published schema."""


@dataclass
class Trace:
    t: np.ndarray
    loss: np.ndarray
    eta: np.ndarray
    mass: np.ndarray  # NaN where the S column was empty

    @property
    def has_mass(self) -> bool:
        return bool(np.all(np.isfinite(self.mass)))


def read_trace(path) -> Trace:
    path = Path(path)
    ts, losses, etas, masses = [], [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_HEADER:
            raise TraceFormatError(
                f"{path}: expected header {','.join(TRACE_HEADER)}, got {header}")
        for row in reader:
            if len(row) != len(TRACE_HEADER):
                raise TraceFormatError(f"{path}: malformed row {row}")
            ts.append(int(row[0]))
            losses.append(float(row[1]))
            etas.append(float(row[2]))
            masses.append(float(row[3]) if row[3] else math.nan)
    if not ts:
        raise TraceFormatError(f"{path}: trace has no rows")
    return Trace(t=np.asarray(ts, dtype=np.int64), loss=np.asarray(losses),
                 eta=np.asarray(etas), mass=np.asarray(masses))


def read_summary(path) -> dict[str, str]:
    """key=value lines of a run summary (other lines are ignored)."""
    pairs: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            pairs[key.strip()] = value.strip()
    if not pairs:
        raise TraceFormatError(f"{path}: no key=value lines found")
    return pairs


def mean_loss_at_matched_t(traces: list[Trace]) -> tuple[np.ndarray, np.ndarray]:
    """Per-iteration mean loss across runs of different lengths.

    At each t the mean is over the runs that still have a row there (a run
    stops recording once it hits its target).
    """
    if not traces:
        raise TraceFormatError("no traces given")
    horizon = max(int(tr.t[-1]) for tr in traces) + 1
    sums = np.zeros(horizon)
    counts = np.zeros(horizon)
    for tr in traces:
        sums[tr.t] += tr.loss
        counts[tr.t] += 1
    present = counts > 0
    return np.flatnonzero(present), sums[present] / counts[present]
