"""Optimizer runs, hitting-time semantics, block plans, and kernels."""

import math

import numpy as np
import pytest

from stepgrow import optimizers, schedule
from stepgrow.data_gen import GenSpec, generate_separable
from stepgrow.errors import DivergenceError
from stepgrow.loss_core import Dataset, full_gradient, full_loss, softplus
from stepgrow.optimizers import (
    HittingStats,
    RunTrace,
    adaptive_step_size,
    conditional_drift_estimate,
    hitting_time_bound,
    make_block_plan,
    run_adaptive_sgd,
    run_block_sgd,
    run_gd_constant,
    run_gd_schedule,
)


@pytest.fixture(scope="module")
def gd_data():
    return generate_separable(GenSpec(dim=12, count=150, margin=0.3, seed=11))


@pytest.fixture(scope="module")
def sgd_data():
    return generate_separable(GenSpec(dim=8, count=300, margin=0.4, seed=13))


class TestScheduledGd:
    def test_single_step_unrolls_explicitly(self, gd_data):
        result = run_gd_schedule(gd_data, 0.3, np.zeros(12), steps=1)
        expected = -(1.0 / math.log(2.0)) * full_gradient(np.zeros(12), gd_data)
        np.testing.assert_array_equal(result.trace.final_weights, expected)

    def test_monotone_and_stability_product(self, gd_data):
        result = run_gd_schedule(gd_data, 0.3, np.zeros(12), steps=600)
        trace = result.trace
        assert np.all(np.diff(trace.loss) <= 1e-12)
        assert np.max(trace.loss * trace.eta) <= 1.0 + 1e-10

    def test_stable_phase_bound_along_run(self, gd_data):
        result = run_gd_schedule(gd_data, 0.3, np.zeros(12), steps=600)
        trace = result.trace
        bounds = (2.0 + np.log(trace.mass[:-1]) ** 2) / trace.mass[:-1]
        assert np.all(trace.loss[1:] <= bounds * (1 + 1e-10))

    def test_late_phase_pointwise_bound(self):
        data = generate_separable(GenSpec(dim=20, count=200, margin=0.5, seed=29))
        result = run_gd_schedule(data, 0.5, np.zeros(20), steps=5000)
        trace, tau2 = result.trace, result.tau2
        assert tau2 is not None
        mass_prev = trace.mass[tau2:-1]
        bound = 2.0 * np.log(mass_prev) ** 2 / mass_prev
        assert np.all(trace.loss[tau2 + 1:] <= bound * (1 + 1e-10))

    def test_trace_has_schedule_crossings(self, gd_data):
        result = run_gd_schedule(gd_data, 0.3, np.zeros(12), steps=600)
        brackets = schedule.crossing_time_brackets(result.trace.mass[0], 1.0, 0.3)
        assert brackets.contains(result.tau1, result.tau2)

    def test_bad_steps_rejected(self, gd_data):
        with pytest.raises(ValueError):
            run_gd_schedule(gd_data, 0.3, np.zeros(12), steps=0)


class TestConstantGd:
    def test_zero_step_stays_put(self, gd_data):
        trace = run_gd_constant(gd_data, 0.0, np.zeros(12), steps=5)
        assert np.all(trace.loss == trace.loss[0])
        np.testing.assert_array_equal(trace.final_weights, np.zeros(12))

    def test_classical_step_is_monotone(self, gd_data):
        trace = run_gd_constant(gd_data, 2.0, np.zeros(12), steps=300)
        assert np.all(np.diff(trace.loss) <= 1e-12)

    def test_divergence_detected(self):
        # Separable pair whose mean-gradient direction misclassifies the
        # first point, so a huge constant step lands far on the wrong side.
        data = Dataset(features=np.array([[0.1, 0.0], [0.9, 0.3]]),
                       labels=np.array([1.0, -1.0]))
        with pytest.raises(DivergenceError, match="t="):
            run_gd_constant(data, 1e16, np.zeros(2), steps=10)


class TestAdaptiveStepSize:
    def test_double_epsilon_sample_loss(self):
        eps = 0.01
        assert adaptive_step_size(eps, 2 * eps) == pytest.approx(1.0 / 0.02, rel=1e-15)

    def test_zero_sample_loss_hits_cap(self):
        eps = 0.01
        assert adaptive_step_size(eps, 0.0) == 1.0 / eps

    def test_never_exceeds_cap(self):
        eps = 0.05
        for loss in (0.0, 1e-300, eps, 0.2, 50.0):
            assert adaptive_step_size(eps, loss) <= 1.0 / eps


class TestAdaptiveSgd:
    def test_first_hitting_semantics(self, sgd_data):
        result = run_adaptive_sgd(sgd_data, 0.05, seed=3, cap=100_000)
        trace = result.trace
        assert result.tau == trace.t[-1]
        assert not result.censored
        assert np.all(trace.loss[:-1] > 0.05)
        assert trace.loss[-1] <= 0.05
        assert full_loss(trace.final_weights, sgd_data) == trace.loss[-1]

    def test_recorded_eta_matches_rule(self, sgd_data):
        result = run_adaptive_sgd(sgd_data, 0.05, seed=5, cap=100_000)
        first_idx = int(np.random.default_rng(5).integers(0, sgd_data.n, 8192)[0])
        expected = adaptive_step_size(
            0.05, float(softplus(-sgd_data.labels[first_idx]
                                 * (sgd_data.features[first_idx] @ np.zeros(8)))))
        assert result.trace.eta[0] == expected

    def test_censoring_is_explicit(self, sgd_data):
        result = run_adaptive_sgd(sgd_data, 1e-6, seed=1, cap=5)
        assert result.censored
        assert result.tau is None
        assert result.trace.t[-1] == 5

    def test_determinism(self, sgd_data):
        a = run_adaptive_sgd(sgd_data, 0.05, seed=9, cap=100_000)
        b = run_adaptive_sgd(sgd_data, 0.05, seed=9, cap=100_000)
        assert a.tau == b.tau
        np.testing.assert_array_equal(a.trace.loss, b.trace.loss)
        np.testing.assert_array_equal(a.trace.final_weights, b.trace.final_weights)

    def test_epsilon_above_start_loss_rejected(self, sgd_data):
        with pytest.raises(ValueError):
            run_adaptive_sgd(sgd_data, 0.8, seed=0, cap=10)

    def test_audit_runs_clean_and_counts_steps(self, sgd_data):
        result = run_adaptive_sgd(sgd_data, 0.05, seed=2, cap=100_000, audit=True)
        audit = result.audit
        assert audit is not None
        assert audit.comparator_loss <= audit.comparator_loss_bound
        assert audit.worst_pathwise_slack <= 1e-10
        assert audit.pre_hit_steps == result.tau

    def test_conditional_drift_estimate_shape(self, sgd_data):
        runs = [run_adaptive_sgd(sgd_data, 0.05, seed=s, cap=100_000, audit=True)
                for s in range(4)]
        est = conditional_drift_estimate([r.audit.distance_series for r in runs])
        assert est.shape[0] == max(r.tau for r in runs)
        assert np.all(np.isfinite(est[:min(r.tau for r in runs)]))


class TestUniformSampling:
    def test_frequencies_within_five_sigma(self):
        n = 16
        draws = np.random.default_rng(123).integers(0, n, size=1_000_000)
        counts = np.bincount(draws, minlength=n)
        expected = 1_000_000 / n
        sigma = math.sqrt(1_000_000 * (1 / n) * (1 - 1 / n))
        assert np.all(np.abs(counts - expected) <= 5 * sigma)


class TestBlockPlan:
    def test_frozen_block_length(self):
        plan = make_block_plan(n=10, gamma=1.0, eps0=0.1, delta=0.5,
                               target_eps=0.1)
        assert plan.blocks[0].length == 4355

    def test_single_block_when_target_equals_eps0(self):
        plan = make_block_plan(n=10, gamma=1.0, eps0=0.1, delta=0.5,
                               target_eps=0.1)
        assert plan.activated == 0
        assert len(plan.blocks) == 1

    def test_halving_sequence(self):
        plan = make_block_plan(n=50, gamma=0.5, eps0=0.4, delta=0.2,
                               target_eps=0.1)
        assert [b.eps for b in plan.blocks] == [0.4, 0.2, 0.1]
        assert plan.activated == 2

    def test_boundaries_are_cumulative(self):
        plan = make_block_plan(n=50, gamma=0.5, eps0=0.4, delta=0.2,
                               target_eps=0.05)
        starts = [b.start for b in plan.blocks]
        lengths = [b.length for b in plan.blocks]
        assert starts[0] == 0
        for k in range(1, len(starts)):
            assert starts[k] == starts[k - 1] + lengths[k - 1]
        assert plan.total_steps == starts[-1] + lengths[-1]

    def test_lengths_match_formula_exactly(self):
        plan = make_block_plan(n=37, gamma=0.33, eps0=0.4, delta=0.25,
                               target_eps=0.1)
        for block in plan.blocks:
            expected = math.ceil((4 * 37 / (0.25 * 0.33**2))
                                 * math.log(8 * 37 / (0.25 * block.eps)) ** 2)
            assert block.length == expected

    @pytest.mark.parametrize("kwargs", [
        dict(n=10, gamma=1.0, eps0=0.1, delta=0.5, target_eps=0.2),
        dict(n=10, gamma=1.0, eps0=1.0, delta=0.5, target_eps=0.1),
        dict(n=10, gamma=1.0, eps0=0.4, delta=0.0, target_eps=0.1),
        dict(n=10, gamma=0.0, eps0=0.4, delta=0.5, target_eps=0.1),
        dict(n=0, gamma=1.0, eps0=0.4, delta=0.5, target_eps=0.1),
    ])
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ValueError):
            make_block_plan(**kwargs)


def small_block_setting():
    data = generate_separable(GenSpec(dim=4, count=5, margin=0.9, seed=17))
    plan = make_block_plan(n=5, gamma=0.9, eps0=0.5, delta=0.5, target_eps=0.25)
    return data, plan


class TestBlockSgd:
    def test_step_size_caps_respected_per_block(self):
        data, plan = small_block_setting()
        result = run_block_sgd(data, plan, seed=0, record_every=1)
        trace = result.trace
        for block in plan.blocks:
            in_block = (trace.t >= block.start) & (trace.t < block.start + block.length)
            assert np.all(trace.eta[in_block] <= 1.0 / block.eps * (1 + 1e-12))

    def test_hitting_semantics_from_dense_trace(self):
        data, plan = small_block_setting()
        result = run_block_sgd(data, plan, seed=1, record_every=1)
        trace = result.trace
        assert result.post_tau is not None
        start = plan.activated_start
        eps_bar = plan.activated_eps
        row = np.searchsorted(trace.t, result.post_tau)
        assert trace.loss[row] <= eps_bar
        window = (trace.t >= start) & (trace.t < result.post_tau)
        assert np.all(trace.loss[window] > eps_bar)

    def test_min_loss_matches_dense_trace(self):
        data, plan = small_block_setting()
        result = run_block_sgd(data, plan, seed=2, record_every=1)
        assert result.min_loss == pytest.approx(result.trace.loss.min(), rel=1e-12)

    def test_compiled_and_reference_paths_agree(self):
        data, plan = small_block_setting()
        fast = run_block_sgd(data, plan, seed=3, record_every=1, use_compiled=True)
        slow = run_block_sgd(data, plan, seed=3, record_every=1, use_compiled=False)
        assert fast.post_tau == slow.post_tau
        np.testing.assert_allclose(fast.trace.loss, slow.trace.loss, rtol=1e-12)
        np.testing.assert_allclose(fast.trace.final_weights,
                                   slow.trace.final_weights, rtol=1e-12)
        assert fast.min_loss == pytest.approx(slow.min_loss, rel=1e-12)

    def test_thinned_trace_endpoints(self):
        data, plan = small_block_setting()
        result = run_block_sgd(data, plan, seed=4, record_every=997)
        assert result.trace.t[0] == 0
        assert result.trace.t[-1] == plan.total_steps

    def test_plan_dataset_mismatch(self):
        data, _ = small_block_setting()
        plan = make_block_plan(n=6, gamma=0.9, eps0=0.5, delta=0.5,
                               target_eps=0.25)
        with pytest.raises(ValueError, match="n="):
            run_block_sgd(data, plan, seed=0)

    def test_determinism(self):
        data, plan = small_block_setting()
        a = run_block_sgd(data, plan, seed=6)
        b = run_block_sgd(data, plan, seed=6)
        assert a.min_loss == b.min_loss
        assert a.post_tau == b.post_tau
        np.testing.assert_array_equal(a.trace.final_weights, b.trace.final_weights)


class TestHittingStats:
    def make(self, rows):
        return HittingStats(taus=sorted(rows), epsilon=0.01,
                            bound_expectation=1000.0, n=100, gamma=0.5)

    def test_merge_is_order_independent(self):
        a = self.make([(0, 10, False), (1, 20, False)])
        b = self.make([(2, 30, False)])
        left = a.merge(b)
        right = b.merge(a)
        assert left.taus == right.taus == [(0, 10, False), (1, 20, False),
                                           (2, 30, False)]

    def test_mean_and_fraction(self):
        stats = self.make([(0, 10, False), (1, 30, False), (2, 5000, True)])
        assert stats.mean_tau() == pytest.approx((10 + 30 + 5000) / 3)
        assert stats.fraction_below(100.0) == pytest.approx(2 / 3)
        assert stats.censored_count == 1

    def test_censored_never_counts_as_hit(self):
        stats = self.make([(0, 5, True)])
        assert stats.fraction_below(1e9) == 0.0

    def test_csv_roundtrip(self, tmp_path):
        stats = self.make([(0, 10, False), (1, 20, True)])
        path = tmp_path / "stats.csv"
        stats.to_csv(path)
        back = HittingStats.from_csv(path)
        assert back.taus == stats.taus
        assert back.epsilon == stats.epsilon
        assert back.bound_expectation == stats.bound_expectation

    def test_bound_formula(self):
        assert hitting_time_bound(5000, 0.2, 0.01) == pytest.approx(
            (2 * 5000 / 0.04) * math.log(4 * 5000 / 0.01) ** 2, rel=1e-15)


class TestRunTraceCsv:
    def test_gd_roundtrip(self, gd_data, tmp_path):
        result = run_gd_schedule(gd_data, 0.3, np.zeros(12), steps=50)
        path = tmp_path / "trace.csv"
        result.trace.to_csv(path)
        back = RunTrace.from_csv(path)
        np.testing.assert_array_equal(back.t, result.trace.t)
        np.testing.assert_array_equal(back.loss, result.trace.loss)
        np.testing.assert_array_equal(back.eta, result.trace.eta)
        np.testing.assert_array_equal(back.mass, result.trace.mass)

    def test_sgd_roundtrip_keeps_mass_empty(self, sgd_data, tmp_path):
        result = run_adaptive_sgd(sgd_data, 0.05, seed=0, cap=100_000)
        path = tmp_path / "trace.csv"
        result.trace.to_csv(path)
        assert ",," in path.read_text(encoding="utf-8").splitlines()[1]
        back = RunTrace.from_csv(path)
        assert back.mass is None
        np.testing.assert_array_equal(back.loss, result.trace.loss)
