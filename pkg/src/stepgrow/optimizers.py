"""GD and SGD drivers: scheduled GD, constant-step GD, adaptive SGD with
hitting-time detection, and block-adaptive SGD, all recording full traces.

Scheduled GD enforces its certified invariants while it runs: the step-size
stability product ``loss * eta <= 1`` and monotone loss descent are hard
assertions, and a violation aborts the run with the offending iteration
named. SGD runs evaluate the full loss every iteration so hitting times are
exact first-hitting indices, and can carry a drift audit that checks the
per-step comparator inequality pathwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from stepgrow import schedule as sched
from stepgrow import _kernels
from stepgrow.errors import DivergenceError, TheoremViolationError
from stepgrow.loss_core import (
    Dataset,
    full_gradient,
    full_loss,
    margins,
    sigmoid,
    softplus,
)

_STABILITY_SLACK = 1e-10
_MONOTONE_SLACK = 1e-12
_PATHWISE_SLACK = 1e-10
_DIVERGENCE_CUTOFF = 1e12
_INDEX_CHUNK = 8192


@dataclass
class RunTrace:
    """Per-iteration observables of one optimizer run.

    ``mass`` is the schedule's cumulative quantity (the CSV column ``S``);
    it is None for SGD traces, where the column is left empty. Row t of a
    trace describes the iterate w_t before the step taken at t; the final
    row's ``eta`` carries the step-size cap in force even though no step is
    taken there.
    """

    t: np.ndarray
    loss: np.ndarray
    eta: np.ndarray
    mass: Optional[np.ndarray]
    grad_norm: np.ndarray
    w_norm: np.ndarray
    final_weights: np.ndarray
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.t)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "loss", "eta", "S", "grad_norm", "w_norm"])
            for k in range(len(self.t)):
                s_field = "" if self.mass is None else repr(float(self.mass[k]))
                writer.writerow([
                    int(self.t[k]), repr(float(self.loss[k])),
                    repr(float(self.eta[k])), s_field,
                    repr(float(self.grad_norm[k])), repr(float(self.w_norm[k])),
                ])

    @classmethod
    def from_csv(cls, path) -> "RunTrace":
        ts, losses, etas, ss, gns, wns = [], [], [], [], [], []
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["t", "loss", "eta", "S", "grad_norm", "w_norm"]:
                raise ValueError(f"unexpected trace header: {header}")
            for row in reader:
                ts.append(int(row[0]))
                losses.append(float(row[1]))
                etas.append(float(row[2]))
                ss.append(float(row[3]) if row[3] else math.nan)
                gns.append(float(row[4]))
                wns.append(float(row[5]))
        mass = np.asarray(ss)
        return cls(
            t=np.asarray(ts, dtype=np.int64),
            loss=np.asarray(losses),
            eta=np.asarray(etas),
            mass=None if np.all(np.isnan(mass)) else mass,
            grad_norm=np.asarray(gns),
            w_norm=np.asarray(wns),
            final_weights=np.empty(0),
        )


@dataclass
class GdResult:
    trace: RunTrace
    schedule: Optional[sched.ScheduleTrace]

    @property
    def tau1(self) -> Optional[int]:
        return self.schedule.tau1 if self.schedule is not None else None

    @property
    def tau2(self) -> Optional[int]:
        return self.schedule.tau2 if self.schedule is not None else None


def run_gd_schedule(data: Dataset, gamma: float, w0: np.ndarray, steps: int,
                    check_invariants: bool = True) -> GdResult:
    """Full-batch GD with the increasing step-size schedule.

    Records rows t = 0..steps. Raises TheoremViolationError the moment
    ``loss * eta`` exceeds 1 (beyond slack) or the loss fails to decrease:
    those are certification failures, never warnings.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    w0 = np.asarray(w0, dtype=np.float64)
    state = sched.start_state(gamma, sched.initial_step_size(w0),
                              sched.initial_exp_loss(w0, data))
    w = w0.copy()
    rows = steps + 1
    loss_col = np.empty(rows)
    eta_col = np.empty(rows)
    mass_col = np.empty(rows)
    gn_col = np.empty(rows)
    wn_col = np.empty(rows)
    branch_col = np.empty(rows, dtype=np.int64)
    prev_loss = math.inf
    for t in range(rows):
        grad = full_gradient(w, data)
        loss = full_loss(w, data)
        if check_invariants:
            if loss * state.eta > 1.0 + _STABILITY_SLACK:
                raise TheoremViolationError(
                    f"stability product violated at t={t}: "
                    f"loss={loss!r} eta={state.eta!r} product={loss * state.eta!r}"
                )
            if loss > prev_loss + _MONOTONE_SLACK:
                raise TheoremViolationError(
                    f"loss increased at t={t}: {prev_loss!r} -> {loss!r}"
                )
        loss_col[t] = loss
        eta_col[t] = state.eta
        mass_col[t] = state.mass
        gn_col[t] = float(np.linalg.norm(grad))
        wn_col[t] = float(np.linalg.norm(w))
        branch_col[t] = state.branch
        prev_loss = loss
        if t == steps:
            break
        w = w - state.eta * grad
        state = sched.advance(state)

    trace = RunTrace(t=np.arange(rows, dtype=np.int64), loss=loss_col,
                     eta=eta_col, mass=mass_col, grad_norm=gn_col,
                     w_norm=wn_col, final_weights=w)
    strace = sched.ScheduleTrace(t=np.arange(rows, dtype=np.int64),
                                 eta=eta_col.copy(), mass=mass_col,
                                 branch=branch_col, tau1=state.tau1,
                                 tau2=state.tau2, gamma=gamma, f0=state.f0)
    return GdResult(trace=trace, schedule=strace)


def run_gd_constant(data: Dataset, eta: float, w0: np.ndarray,
                    steps: int) -> RunTrace:
    """Plain GD with a fixed step size (the comparison baseline).

    No monotonicity is enforced: a large constant step may oscillate. The
    run aborts with DivergenceError if the loss overflows or goes
    non-finite, naming the iteration.
    """
    if eta < 0.0:
        raise ValueError("eta must be nonnegative")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    w = np.asarray(w0, dtype=np.float64).copy()
    rows = steps + 1
    loss_col = np.empty(rows)
    gn_col = np.empty(rows)
    wn_col = np.empty(rows)
    for t in range(rows):
        grad = full_gradient(w, data)
        loss = full_loss(w, data)
        if not math.isfinite(loss) or loss > _DIVERGENCE_CUTOFF:
            raise DivergenceError(
                f"constant-step GD diverged at t={t}: loss={loss!r} eta={eta!r}"
            )
        loss_col[t] = loss
        gn_col[t] = float(np.linalg.norm(grad))
        wn_col[t] = float(np.linalg.norm(w))
        if t == steps:
            break
        w = w - eta * grad
    return RunTrace(t=np.arange(rows, dtype=np.int64), loss=loss_col,
                    eta=np.full(rows, float(eta)), mass=None,
                    grad_norm=gn_col, w_norm=wn_col, final_weights=w)


@dataclass
class DriftReport:
    """What a drift audit observed along one SGD run."""

    comparator_loss: float
    comparator_loss_bound: float
    worst_pathwise_slack: float
    pre_hit_steps: int
    distance_series: np.ndarray


class DriftAudit:
    """Pathwise check of the comparator drift inequality during SGD.

    The comparator is the margin direction scaled to make its loss at most
    eps / (4 n). At every pre-hitting step the realized inequality

        ||w_{t+1} - u||^2 <= ||w_t - u||^2 - eta * loss_i(w_t) + 2 * eta * loss_i(u)

    must hold up to 1e-10 (it is deterministic, not an expectation), and
    there must exist a sample with loss >= eps whenever the full loss still
    exceeds eps. Violations raise TheoremViolationError immediately. The
    squared distances are kept so callers can average the realized one-step
    drift across seeds; that estimate is reported, never asserted.
    """

    def __init__(self, data: Dataset, epsilon: float):
        if data.certificate is None:
            raise ValueError("drift audit needs a margin certificate")
        cert = data.certificate
        scale = math.log(4.0 * data.n / epsilon) / cert.margin
        self.comparator = scale * cert.direction
        self.epsilon = epsilon
        self.comparator_sample_losses = softplus(-margins(self.comparator, data))
        self.comparator_loss = float(np.mean(self.comparator_sample_losses))
        self.comparator_loss_bound = epsilon / (4.0 * data.n)
        if self.comparator_loss > self.comparator_loss_bound:
            raise TheoremViolationError(
                f"comparator loss {self.comparator_loss!r} exceeds "
                f"eps/(4n) = {self.comparator_loss_bound!r}"
            )
        self.worst_slack = -math.inf
        self.distances: list[float] = []

    def check_step(self, t: int, w_before: np.ndarray, w_after: np.ndarray,
                   idx: int, eta: float, sample_loss_value: float,
                   max_sample_loss: float) -> None:
        if max_sample_loss < self.epsilon:
            raise TheoremViolationError(
                f"no sample with loss >= eps at pre-hitting step t={t}: "
                f"max sample loss {max_sample_loss!r} < {self.epsilon!r}"
            )
        du = w_before - self.comparator
        d_before = float(du @ du)
        dv = w_after - self.comparator
        d_after = float(dv @ dv)
        rhs = (d_before - eta * sample_loss_value
               + 2.0 * eta * float(self.comparator_sample_losses[idx]))
        slack = d_after - rhs
        if slack > self.worst_slack:
            self.worst_slack = slack
        if slack > _PATHWISE_SLACK:
            raise TheoremViolationError(
                f"pathwise drift inequality violated at t={t}: "
                f"lhs={d_after!r} rhs={rhs!r} slack={slack!r}"
            )
        if not self.distances:
            self.distances.append(d_before)
        self.distances.append(d_after)

    def report(self) -> DriftReport:
        return DriftReport(
            comparator_loss=self.comparator_loss,
            comparator_loss_bound=self.comparator_loss_bound,
            worst_pathwise_slack=self.worst_slack,
            pre_hit_steps=max(len(self.distances) - 1, 0),
            distance_series=np.asarray(self.distances),
        )


def conditional_drift_estimate(distance_series: list[np.ndarray]) -> np.ndarray:
    """Seed-averaged one-step change of the squared comparator distance.

    Entry t is the mean of D_{t+1} - D_t over the runs still running at t.
    Diagnostic only: finite-seed averages of a conditional expectation are
    noisy, so nothing is asserted against them.
    """
    horizon = max(len(s) for s in distance_series) - 1
    sums = np.zeros(horizon)
    counts = np.zeros(horizon)
    for series in distance_series:
        inc = np.diff(series)
        sums[: len(inc)] += inc
        counts[: len(inc)] += 1
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


@dataclass
class SgdResult:
    trace: RunTrace
    tau: Optional[int]
    censored: bool
    audit: Optional[DriftReport] = None


def run_adaptive_sgd(data: Dataset, epsilon: float, seed: int, cap: int,
                     audit: bool = False, record_every: int = 1) -> SgdResult:
    """Single-sample SGD with the loss-capped adaptive step size.

    At every iteration the index is drawn uniformly from one seeded stream,
    the step size is ``min(1/eps, 1/loss_of_sampled_point)``, and the full
    loss is evaluated exactly to implement the first-hitting time: the run
    stops at the first t with full loss <= eps, or reports a censored run
    once ``cap`` steps are exhausted (censoring is a normal outcome).
    """
    if not 0.0 < epsilon:
        raise ValueError("epsilon must be positive")
    if cap < 1:
        raise ValueError("cap must be at least 1")
    w = np.zeros(data.dim)
    start_loss = full_loss(w, data)
    if epsilon >= start_loss:
        raise ValueError(
            f"epsilon {epsilon!r} is not below the starting loss {start_loss!r}"
        )
    rng = np.random.default_rng(seed)
    x, y = data.features, data.labels
    auditor = DriftAudit(data, epsilon) if audit else None

    ts, losses, etas, gns, wns = [], [], [], [], []
    tau: Optional[int] = None
    censored = False
    t = 0
    chunk: np.ndarray = np.empty(0, dtype=np.int64)
    chunk_pos = 0
    while True:
        m = y * (x @ w)
        loss = float(np.mean(softplus(-m)))
        hit = loss <= epsilon
        done = hit or t >= cap
        record = done or (t % record_every == 0)
        if done:
            eta = 1.0 / epsilon
            gn = 0.0
        else:
            if chunk_pos >= len(chunk):
                chunk = rng.integers(0, data.n, size=_INDEX_CHUNK)
                chunk_pos = 0
            i = int(chunk[chunk_pos])
            chunk_pos += 1
            sample_margin = float(m[i])
            sample_loss_value = float(softplus(-sample_margin))
            eta = adaptive_step_size(epsilon, sample_loss_value)
            coeff = eta * float(sigmoid(-sample_margin)) * y[i]
            w_next = w + coeff * x[i]
            gn = abs(coeff / eta) * float(np.linalg.norm(x[i]))
            if auditor is not None:
                max_sample_loss = float(softplus(-float(m.min())))
                auditor.check_step(t, w, w_next, i, eta, sample_loss_value,
                                   max_sample_loss)
        if record:
            ts.append(t)
            losses.append(loss)
            etas.append(eta)
            gns.append(gn)
            wns.append(float(np.linalg.norm(w)))
        if hit:
            tau = t
            break
        if t >= cap:
            censored = True
            break
        w = w_next
        t += 1

    trace = RunTrace(t=np.asarray(ts, dtype=np.int64), loss=np.asarray(losses),
                     eta=np.asarray(etas), mass=None, grad_norm=np.asarray(gns),
                     w_norm=np.asarray(wns), final_weights=w, seed=seed)
    return SgdResult(trace=trace, tau=tau, censored=censored,
                     audit=auditor.report() if auditor is not None else None)


def adaptive_step_size(epsilon: float, sample_loss_value: float) -> float:
    """min(1/eps, 1/sample_loss), with a zero sample loss hitting the cap."""
    return 1.0 / max(epsilon, sample_loss_value)


def hitting_time_bound(n: int, gamma: float, epsilon: float) -> float:
    """Expected-hitting-time ceiling (2 n / gamma^2) ln^2(4 n / eps)."""
    return (2.0 * n / gamma**2) * math.log(4.0 * n / epsilon) ** 2


@dataclass
class HittingStats:
    """Hitting times of a seed sweep plus the bound they are checked against.

    ``taus`` holds (seed, tau, censored); a censored run's tau is the cap it
    was stopped at and is never treated as a hit.
    """

    taus: list[tuple[int, int, bool]]
    epsilon: float
    bound_expectation: float
    n: int
    gamma: float

    @classmethod
    def from_runs(cls, results: list[tuple[int, Optional[int], bool, int]],
                  epsilon: float, n: int, gamma: float) -> "HittingStats":
        rows = [(seed, cap if tau is None else tau, censored)
                for seed, tau, censored, cap in results]
        return cls(taus=sorted(rows), epsilon=epsilon,
                   bound_expectation=hitting_time_bound(n, gamma, epsilon),
                   n=n, gamma=gamma)

    def merge(self, other: "HittingStats") -> "HittingStats":
        if (self.epsilon, self.n, self.gamma) != (other.epsilon, other.n, other.gamma):
            raise ValueError("cannot merge stats from different experiments")
        return HittingStats(taus=sorted(self.taus + other.taus),
                            epsilon=self.epsilon,
                            bound_expectation=self.bound_expectation,
                            n=self.n, gamma=self.gamma)

    @property
    def censored_count(self) -> int:
        return sum(1 for _, _, c in self.taus if c)

    def mean_tau(self) -> float:
        if not self.taus:
            raise ValueError("no runs recorded")
        return float(np.mean([tau for _, tau, _ in self.taus]))

    def fraction_below(self, threshold: float) -> float:
        hits = [tau for _, tau, censored in self.taus if not censored]
        return sum(1 for tau in hits if tau < threshold) / len(self.taus)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "tau", "censored", "epsilon", "bound"])
            for seed, tau, censored in self.taus:
                writer.writerow([seed, tau, int(censored),
                                 repr(self.epsilon),
                                 repr(self.bound_expectation)])

    @classmethod
    def from_csv(cls, path, n: int = 0, gamma: float = math.nan) -> "HittingStats":
        rows = []
        epsilon = bound = math.nan
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["seed", "tau", "censored", "epsilon", "bound"]:
                raise ValueError(f"unexpected stats header: {header}")
            for row in reader:
                rows.append((int(row[0]), int(row[1]), bool(int(row[2]))))
                epsilon = float(row[3])
                bound = float(row[4])
        stats = cls(taus=sorted(rows), epsilon=epsilon,
                    bound_expectation=bound, n=n, gamma=gamma)
        return stats


@dataclass(frozen=True)
class BlockSpec:
    index: int
    eps: float
    length: int
    start: int


@dataclass(frozen=True)
class BlockPlan:
    """Tolerances, lengths, and boundaries for block-adaptive SGD.

    Block k runs iterations [start_k, start_k + length_k) at tolerance
    eps_k = eps0 / 2^k with length ceil((4 n / (delta gamma^2)) *
    ln^2(8 n / (delta eps_k))); the activated block is the first whose
    tolerance is at or below the target.
    """

    eps0: float
    delta: float
    target_eps: float
    gamma: float
    n: int
    blocks: tuple[BlockSpec, ...]
    activated: int

    @property
    def activated_eps(self) -> float:
        return self.blocks[self.activated].eps

    @property
    def activated_start(self) -> int:
        return self.blocks[self.activated].start

    @property
    def total_steps(self) -> int:
        last = self.blocks[-1]
        return last.start + last.length

    def block_length(self, eps_k: float) -> int:
        return math.ceil((4.0 * self.n / (self.delta * self.gamma**2))
                         * math.log(8.0 * self.n / (self.delta * eps_k)) ** 2)


def make_block_plan(n: int, gamma: float, eps0: float, delta: float,
                    target_eps: float) -> BlockPlan:
    """Blocks 0..activated inclusive, with exact integer lengths."""
    if not 0.0 < target_eps <= eps0 < 1.0:
        raise ValueError("need 0 < target_eps <= eps0 < 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if not gamma > 0.0:
        raise ValueError("gamma must be positive")
    if n < 1:
        raise ValueError("n must be at least 1")
    blocks = []
    start = 0
    k = 0
    while True:
        eps_k = eps0 / 2**k
        length = math.ceil((4.0 * n / (delta * gamma**2))
                           * math.log(8.0 * n / (delta * eps_k)) ** 2)
        blocks.append(BlockSpec(index=k, eps=eps_k, length=length, start=start))
        start += length
        if eps_k <= target_eps:
            break
        k += 1
    return BlockPlan(eps0=eps0, delta=delta, target_eps=target_eps,
                     gamma=gamma, n=n, blocks=tuple(blocks), activated=k)


@dataclass
class BlockResult:
    trace: RunTrace
    min_loss: float
    post_tau: Optional[int]
    censored: bool
    seed: int

    def capped_post_steps(self, plan: BlockPlan) -> int:
        """(tau - activation start)+ capped at the activated block length."""
        n_cap = plan.blocks[plan.activated].length
        if self.post_tau is None:
            return n_cap
        return min(max(self.post_tau - plan.activated_start, 0), n_cap)


def run_block_sgd(data: Dataset, plan: BlockPlan, seed: int,
                  record_every: int = 1000,
                  use_compiled: bool = True) -> BlockResult:
    """Run every block of the plan from zero initialization.

    The full loss is evaluated after every step (via incrementally
    maintained scores) to track the minimum over the whole horizon and the
    first post-activation iterate at or below the activated tolerance; the
    hitting index is censored at the end of the activated block's horizon
    if it never occurs. The trace is thinned to every ``record_every``
    iterations plus the first and last.
    """
    if plan.n != data.n:
        raise ValueError(f"plan was built for n={plan.n}, data has n={data.n}")
    if record_every < 1:
        raise ValueError("record_every must be at least 1")
    rng = np.random.default_rng(seed)
    x = np.ascontiguousarray(data.features)
    y = np.ascontiguousarray(data.labels)
    gram = np.ascontiguousarray(x @ x.T)
    w = np.zeros(data.dim)
    z = np.zeros(data.n)
    segment = _kernels.block_segment if use_compiled else _kernels._block_segment_impl

    total = plan.total_steps
    max_rows = total // record_every + 4
    rec_t = np.zeros(max_rows, dtype=np.int64)
    rec_loss = np.zeros(max_rows)
    rec_eta = np.zeros(max_rows)
    rec_gn = np.zeros(max_rows)
    rec_wn = np.zeros(max_rows)
    rec_pos = 0

    loss = full_loss(w, data)
    min_loss = loss
    post_tau: Optional[int] = None
    eps_bar = plan.activated_eps
    for block in plan.blocks:
        if block.index == plan.activated and post_tau is None and loss <= eps_bar:
            post_tau = block.start
        check_hit = block.index == plan.activated and post_tau is None
        idx = rng.integers(0, data.n, size=block.length)
        seg_min, hit, rec_pos, loss = segment(
            x, y, gram, w, z, idx, block.eps, eps_bar, check_hit, loss,
            record_every, block.start, rec_t, rec_loss, rec_eta, rec_gn,
            rec_wn, rec_pos,
        )
        min_loss = min(min_loss, seg_min)
        if check_hit and hit >= 0:
            post_tau = int(hit)

    if rec_pos == 0 or rec_t[rec_pos - 1] != total:
        rec_t[rec_pos] = total
        rec_loss[rec_pos] = loss
        rec_eta[rec_pos] = 1.0 / eps_bar
        rec_gn[rec_pos] = 0.0
        rec_wn[rec_pos] = float(np.linalg.norm(w))
        rec_pos += 1

    trace = RunTrace(t=rec_t[:rec_pos].copy(), loss=rec_loss[:rec_pos].copy(),
                     eta=rec_eta[:rec_pos].copy(), mass=None,
                     grad_norm=rec_gn[:rec_pos].copy(),
                     w_norm=rec_wn[:rec_pos].copy(), final_weights=w,
                     seed=seed)
    return BlockResult(trace=trace, min_loss=min_loss, post_tau=post_tau,
                       censored=post_tau is None, seed=seed)
