"""Deterministic increasing step-size schedule for GD on separable logistic
loss, with every bound needed to certify a run.

The schedule is driven by a cumulative quantity ``mass_t`` (the margin-squared
weighted running sum of step sizes): the first step size is
``1 / (ln 2 + ||w0||)`` and afterwards

    eta_t = mass_{t-1} / (2 * max(2 * F0, ln^2(mass_{t-1})))

where ``F0`` is the mean exponential loss at the start. The mass therefore
obeys a multiplicative recurrence, growing geometrically until ``ln(mass)``
crosses ``-sqrt(2 F0)`` (crossing index ``tau1``), then at the fixed rate
``1 + gamma^2 / (4 F0)`` until it crosses ``+sqrt(2 F0)`` (``tau2``), after
which ``ln(mass) = Theta(t^(1/3))``. Everything in this module is exact
bookkeeping on that recurrence; no data is touched beyond ``F0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from stepgrow import loss_core
from stepgrow.errors import TheoremViolationError

# Steps between cross-checks of the multiplicative recurrence against the
# additive step-size sum (float-drift detector).
_CONSISTENCY_EVERY = 1000
_CONSISTENCY_RTOL = 1e-9


@dataclass(frozen=True)
class ScheduleState:
    """Schedule bookkeeping after emitting step size ``eta`` at index ``t``.

    ``mass`` is maintained by the recurrence ``mass += gamma^2 * eta``;
    ``eta_sum`` accumulates the raw step sizes separately so drift between
    the two forms is detectable. ``branch`` is 1 when ``ln^2(mass) > 2 F0``
    (the branch that will produce the next step size), else 0.
    """

    t: int
    eta: float
    mass: float
    f0: float
    gamma: float
    eta_sum: float
    branch: int
    tau1: Optional[int] = None
    tau2: Optional[int] = None


def initial_step_size(w0: np.ndarray) -> float:
    """First step size 1 / (ln 2 + ||w0||)."""
    w0 = np.asarray(w0, dtype=np.float64)
    if not np.all(np.isfinite(w0)):
        raise ValueError("w0 must be finite")
    return 1.0 / (math.log(2.0) + float(np.linalg.norm(w0)))


def initial_exp_loss(w0: np.ndarray, data: loss_core.Dataset) -> float:
    """Mean exponential loss at the start; equals 1 for w0 = 0."""
    return loss_core.exp_loss(w0, data)


def _detect(t: int, mass: float, f0: float,
            tau1: Optional[int], tau2: Optional[int]):
    thr = math.sqrt(2.0 * f0)
    ln_mass = math.log(mass)
    if tau1 is None and ln_mass > -thr:
        tau1 = t
    if tau2 is None and ln_mass > thr:
        tau2 = t
    return tau1, tau2


def start_state(gamma: float, eta0: float, f0: float) -> ScheduleState:
    """State at t = 0, with crossing detection already applied to mass_0."""
    if not 0.0 < gamma:
        raise ValueError("gamma must be positive")
    if not (eta0 > 0.0 and f0 > 0.0):
        raise ValueError("eta0 and f0 must be positive")
    mass0 = gamma * gamma * eta0
    tau1, tau2 = _detect(0, mass0, f0, None, None)
    branch = 1 if math.log(mass0) ** 2 > 2.0 * f0 else 0
    return ScheduleState(t=0, eta=eta0, mass=mass0, f0=f0, gamma=gamma,
                         eta_sum=eta0, branch=branch, tau1=tau1, tau2=tau2)


def next_step_size(state: ScheduleState) -> tuple[float, int]:
    """Step size for index t+1 and the branch (0 = warm-up, 1 = log^2) used."""
    if not math.isfinite(state.mass) or state.mass <= 0.0:
        raise ArithmeticError(f"schedule mass is not a positive finite value: {state.mass!r}")
    ln_sq = math.log(state.mass) ** 2
    warm = 2.0 * state.f0
    if ln_sq > warm:
        return state.mass / (2.0 * ln_sq), 1
    return state.mass / (2.0 * warm), 0


def advance(state: ScheduleState) -> ScheduleState:
    """Emit the next step size and fold it into the mass.

    The mass update is the additive form ``mass + gamma^2 * eta`` of the
    recurrence, which the growth lemmas analyze; every 1000 steps it is
    cross-checked against ``gamma^2 * eta_sum`` to catch float drift.
    """
    eta, branch = next_step_size(state)
    t = state.t + 1
    mass = state.mass + state.gamma * state.gamma * eta
    eta_sum = state.eta_sum + eta
    tau1, tau2 = _detect(t, mass, state.f0, state.tau1, state.tau2)
    if t % _CONSISTENCY_EVERY == 0:
        resummed = state.gamma * state.gamma * eta_sum
        if abs(mass - resummed) > _CONSISTENCY_RTOL * abs(mass):
            raise TheoremViolationError(
                f"schedule drift at t={t}: recurrence mass {mass!r} vs "
                f"resummed {resummed!r}"
            )
    new_branch = 1 if math.log(mass) ** 2 > 2.0 * state.f0 else 0
    return replace(state, t=t, eta=eta, mass=mass, eta_sum=eta_sum,
                   branch=new_branch, tau1=tau1, tau2=tau2)


@dataclass
class ScheduleTrace:
    """Column-wise schedule simulation, exportable as t,eta,S,lnS,branch."""

    t: np.ndarray
    eta: np.ndarray
    mass: np.ndarray
    branch: np.ndarray
    tau1: Optional[int]
    tau2: Optional[int]
    gamma: float
    f0: float

    @property
    def ln_mass(self) -> np.ndarray:
        return np.log(self.mass)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "eta", "S", "lnS", "branch"])
            ln = self.ln_mass
            for k in range(len(self.t)):
                writer.writerow([int(self.t[k]), repr(float(self.eta[k])),
                                 repr(float(self.mass[k])), repr(float(ln[k])),
                                 int(self.branch[k])])


def simulate(gamma: float, steps: int, eta0: Optional[float] = None,
             f0: float = 1.0) -> ScheduleTrace:
    """Run the schedule for ``steps`` updates (zero-initialization defaults)."""
    if eta0 is None:
        eta0 = 1.0 / math.log(2.0)
    state = start_state(gamma, eta0, f0)
    ts = np.empty(steps + 1, dtype=np.int64)
    etas = np.empty(steps + 1)
    masses = np.empty(steps + 1)
    branches = np.empty(steps + 1, dtype=np.int64)
    ts[0], etas[0], masses[0], branches[0] = 0, state.eta, state.mass, state.branch
    for k in range(1, steps + 1):
        state = advance(state)
        ts[k], etas[k], masses[k], branches[k] = k, state.eta, state.mass, state.branch
    return ScheduleTrace(t=ts, eta=etas, mass=masses, branch=branches,
                         tau1=state.tau1, tau2=state.tau2,
                         gamma=gamma, f0=f0)


def stable_phase_bound(f_start: float, mass: float) -> float:
    """Loss bound (2 F + ln^2(mass)) / mass from the stable-phase argument.

    ``mass`` is the margin-squared weighted sum of step sizes accumulated
    since the phase start; along a scheduled run with start s = 0 the bound
    holds at every t >= 1 with ``mass = mass_{t-1}``.
    """
    if not mass > 0.0:
        raise ValueError("mass must be positive")
    return (2.0 * f_start + math.log(mass) ** 2) / mass


def late_phase_bound(mass: float) -> float:
    """Pointwise loss bound 2 ln^2(mass)/mass, valid once ln(mass) > sqrt(2 F0)."""
    return 2.0 * math.log(mass) ** 2 / mass


@dataclass(frozen=True)
class GrowthConstants:
    """Constants bounding the growth of the schedule mass.

    ``c1``/``c2`` bound ``ln^3(mass)`` linearly in t from an anchor index with
    mass > 1; ``rate_a``/``rate_b`` are the per-step geometric factors valid
    before the first crossing; ``rate_c`` is the exponent of the headline
    decay rate.
    """

    c1: float
    c2: float
    rate_a: float
    rate_b: float
    rate_c: float
    anchor_t: int
    ln_mass_anchor: float
    gamma: float

    @classmethod
    def from_run(cls, gamma: float, f0: float, mass0: float,
                 anchor_t: int, mass_anchor: float) -> "GrowthConstants":
        if not mass_anchor > 1.0:
            raise ValueError(
                f"growth constants need anchor mass > 1, got {mass_anchor!r}"
            )
        ln_anchor = math.log(mass_anchor)
        ln0 = math.log(mass0)
        if ln0 == 0.0:
            raise ValueError("mass0 = 1 leaves the geometric rate undefined")
        g2 = gamma * gamma
        return cls(
            c1=1.0 + g2 / (2.0 * ln_anchor**2),
            c2=1.5 * g2 + 3.0 * g2 * g2 / (4.0 * ln_anchor**3)
               + g2**3 / (8.0 * ln_anchor**6),
            rate_a=1.0 + g2 / (2.0 * ln0**2),
            rate_b=1.0 + g2 / (4.0 * f0),
            rate_c=rate_exponent(gamma),
            anchor_t=anchor_t,
            ln_mass_anchor=ln_anchor,
            gamma=gamma,
        )


def growth_sandwich(constants: GrowthConstants, t: int) -> tuple[float, float]:
    """Lower and upper bounds on ln^3(mass_t) for t at or past the anchor."""
    if t < constants.anchor_t:
        raise ValueError(f"t={t} precedes anchor {constants.anchor_t}")
    base = constants.ln_mass_anchor**3
    span = t - constants.anchor_t
    g2 = constants.gamma**2
    lower = base + (3.0 * g2 / (2.0 * constants.c1)) * span
    upper = base + constants.c2 * span
    if t == constants.anchor_t:
        lower = upper = base
    return lower, upper


@dataclass(frozen=True)
class CrossingBrackets:
    """Analytic enclosures for the two crossing indices of the schedule.

    ``tau1`` lies in (tau1_lo, tau1_hi] unless ``tau1_degenerate`` (the start
    mass already clears the lower threshold, so tau1 = 0). ``tau2`` lies in
    [tau2_lo, tau2_hi) when tau1 is degenerate (the enclosure is then exact
    geometric counting from the known start mass) and in the open interval
    (tau2_lo, tau2_hi) otherwise.
    """

    tau1_lo: float
    tau1_hi: float
    tau2_lo: float
    tau2_hi: float
    tau1_degenerate: bool
    tau2_degenerate: bool

    def contains(self, tau1: int, tau2: int) -> bool:
        if self.tau1_degenerate:
            ok1 = tau1 == 0
        else:
            ok1 = self.tau1_lo < tau1 <= self.tau1_hi
        if self.tau2_degenerate:
            ok2 = tau2 == 0
        elif self.tau1_degenerate:
            ok2 = self.tau2_lo <= tau2 < self.tau2_hi
        else:
            ok2 = self.tau2_lo < tau2 < self.tau2_hi
        return ok1 and ok2


def crossing_time_brackets(mass0: float, f0: float, gamma: float) -> CrossingBrackets:
    """Enclosures for the crossing indices, from the growth-rate bounds.

    Uses only the start mass, the start exponential loss, and the margin;
    the simulated crossings must land inside (checked by ``contains``).
    """
    if not (mass0 > 0.0 and f0 > 0.0 and gamma > 0.0):
        raise ValueError("mass0, f0, gamma must be positive")
    thr = math.sqrt(2.0 * f0)
    ln0 = math.log(mass0)
    g2 = gamma * gamma
    ln_b = math.log1p(g2 / (4.0 * f0))

    if ln0 > thr:
        return CrossingBrackets(0.0, 0.0, 0.0, 0.0, True, True)
    if ln0 > -thr:
        # Start already past the lower threshold: pure geometric phase with
        # known start point, so tau2 is pinned within one step.
        lo = (thr - ln0) / ln_b
        return CrossingBrackets(0.0, 0.0, lo, lo + 1.0, True, False)

    ln_a = math.log1p(g2 / (2.0 * ln0 * ln0))
    tau1_lo = (-thr - ln0) / ln_b
    tau1_hi = 1.0 + (-thr - ln0) / ln_a
    # Compose with the overshoot enclosure -thr < ln(mass at tau1) <= -thr + ln_b.
    tau2_lo = tau1_lo + 2.0 * thr / ln_b - 1.0
    tau2_hi = tau1_hi + 1.0 + 2.0 * thr / ln_b
    return CrossingBrackets(tau1_lo, tau1_hi, tau2_lo, tau2_hi, False, False)


def rate_exponent(gamma: float) -> float:
    """Exponent c = (3 gamma^2 / 4)^(1/3) of the headline decay bound."""
    return (0.75 * gamma * gamma) ** (1.0 / 3.0)


def loss_rate_bound(t: int, gamma: float, coeff: float) -> float:
    """Headline decay envelope coeff * t^(2/3) * exp(-c * t^(1/3)).

    ``coeff`` is a calibration constant (see ``calibrate_rate_coeff``); the
    per-iteration certified check uses ``late_phase_bound`` instead, which
    needs no constant.
    """
    if t < 1:
        raise ValueError("t must be at least 1")
    c = rate_exponent(gamma)
    return coeff * t ** (2.0 / 3.0) * math.exp(-c * t ** (1.0 / 3.0))


def calibrate_rate_coeff(loss_value: float, t: int, gamma: float) -> float:
    """Coefficient making the decay envelope touch ``loss_value`` at ``t``."""
    c = rate_exponent(gamma)
    return loss_value * math.exp(c * t ** (1.0 / 3.0)) / t ** (2.0 / 3.0)


def cube_root_fit(t: np.ndarray, ln_mass: np.ndarray) -> tuple[float, float, float]:
    """Least-squares fit of ln(mass) against t^(1/3): (slope, intercept, r2)."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(ln_mass, dtype=np.float64)
    if t.shape != y.shape or t.size < 2:
        raise ValueError("need at least two matching points to fit")
    x = np.cbrt(t)
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    denom = float(dx @ dx)
    if denom == 0.0:
        raise ValueError("degenerate fit: all abscissae equal")
    slope = float(dx @ dy) / denom
    intercept = float(ym - slope * xm)
    resid = y - (slope * x + intercept)
    ss_tot = float(dy @ dy)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(resid @ resid) / ss_tot
    return slope, intercept, r2
