"""Growth-rate regression: ln(S_t) against t^(1/3) over a tail window.

Computed here, not in the harness, because the fit window is a presentation
choice; the fit itself goes through numpy's least squares rather than any
closed form shared with the optimizer side, so cross-checks between the two
are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TailFit:
    slope: float
    intercept: float
    r2: float
    start: int
    points: int


def fit_growth_tail(t: np.ndarray, mass: np.ndarray, start: int) -> TailFit:
    """Least-squares line through (t^(1/3), ln(mass)) for t >= start."""
    t = np.asarray(t)
    mass = np.asarray(mass)
    keep = t >= start
    if int(keep.sum()) < 2:
        raise ValueError(f"tail window starting at {start} has fewer than 2 points")
    x = np.cbrt(t[keep].astype(np.float64))
    y = np.log(mass[keep])
    slope, intercept = np.polyfit(x, y, deg=1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return TailFit(slope=float(slope), intercept=float(intercept), r2=r2,
                   start=start, points=int(keep.sum()))
