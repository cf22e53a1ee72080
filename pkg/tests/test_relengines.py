import math

import numpy as np
import pytest

from oracles import double_layer_oracle
from resilscreen.probcore import Marginal, RandomModel, std_normal_cdf
from resilscreen.relengines import (
    ConvergenceError,
    EstimateResult,
    EventQuery,
    ce_ais_estimate,
    estimate_scenario_indices,
    event_driver,
    mcs_estimate,
    mcs_survey,
    required_mcs_samples,
    subset_sim_estimate,
)
from resilscreen.scenarios import EventSpec, FailurePattern, ResilienceThreshold
from resilscreen.structmodels import CallCountingModel, ModelResponse


class LinearThresholdModel:
    """Toy component model: component k fails when x_k exceeds cap_k.

    With normal marginals the single-component event probability is an exact
    Gaussian tail, which makes this the ground truth for estimator tests.
    """

    def __init__(self, caps):
        self.caps = np.asarray(caps, dtype=float)
        self.n_components = len(self.caps)

    def margins(self, X):
        return np.atleast_2d(np.asarray(X, dtype=float)) - self.caps[None, :]

    def response(self, X, need_system=False):
        margins = self.margins(X)
        fail = margins > 0.0
        masks = fail.astype(np.int64) @ (1 << np.arange(self.n_components, dtype=np.int64))
        system = fail.any(axis=1) if need_system else None
        return ModelResponse(margins, masks, system)


def linear_setup(dim, beta, mean=100.0, cov=0.1):
    """Model + random model where component 0 fails with probability Phi(-beta)."""
    marginals = [Marginal("normal", mean, cov)] * dim
    rm = RandomModel.independent(marginals)
    caps = np.full(dim, np.inf)
    caps[0] = mean + mean * cov * beta
    return LinearThresholdModel(caps), rm


class TestBudgetFormula:
    def test_reference_values(self):
        assert 3.9e6 <= required_mcs_samples(1e-4, 0.05) <= 4.0e6
        assert required_mcs_samples(1e-5, 0.05) == pytest.approx(4e7, rel=0.01)
        assert required_mcs_samples(0.5, 1.0) == 1

    def test_validation(self):
        with pytest.raises(ValueError):
            required_mcs_samples(0.0, 0.1)
        with pytest.raises(ValueError):
            required_mcs_samples(0.5, 0.0)


class TestDriver:
    def test_sign_convention(self):
        model, _ = linear_setup(3, 1.0)
        event = EventSpec.joint_failure(3, [0])
        margins = model.margins(np.array([[120.0, 100.0, 100.0], [100.0, 100.0, 100.0]]))
        g = event_driver(margins, event)
        assert g[0] > 0 and g[1] < 0

    def test_survival_side(self):
        model, _ = linear_setup(2, 0.0)
        event = EventSpec(2, required_failed=0, required_survived=0b01)
        margins = model.margins(np.array([[150.0, 100.0]]))
        assert event_driver(margins, event)[0] < 0  # component 0 failed, so survival violated


class TestMcs:
    def test_single_layer_event(self, single_layer):
        rm = single_layer.random_model()
        q = EventQuery(target=EventSpec.joint_failure(6, [0]))
        est = mcs_estimate(single_layer, rm, q, n=400_000, seed=3)
        p_true = 0.030894  # lognormal CDF at the shared bar stress
        sd = math.sqrt(p_true * (1 - p_true) / est.n_evaluations)
        assert abs(est.probability - p_true) <= 3 * sd
        assert est.cov == pytest.approx(math.sqrt((1 - p_true) / (400_000 * p_true)), rel=0.1)

    def test_impossible_event_flagged_zero(self, double_layer):
        rm = double_layer.random_model()
        # yields sit far above every demand, so no pattern with failures occurs
        q = EventQuery(target=FailurePattern.from_indices(5, [0, 1, 2, 3, 4]))
        est = mcs_estimate(double_layer, rm, q, n=5_000, seed=1)
        assert est.flagged_zero
        assert math.isinf(est.cov)

    def test_estimator_cov_window(self):
        # empirical spread of repeated estimates matches the analytic c.o.v.
        model, rm = linear_setup(2, 2.3263478740408408)  # p = 1e-2
        n = required_mcs_samples(1e-2, 0.1)
        q = EventQuery(target=EventSpec.joint_failure(2, [0]))
        estimates = [
            mcs_estimate(model, rm, q, n=n, seed=1000 + r).probability for r in range(100)
        ]
        emp_cov = np.std(estimates) / np.mean(estimates)
        assert 0.07 <= emp_cov <= 0.13

    def test_ledger_matches_counter(self, double_layer):
        counted = CallCountingModel(double_layer)
        rm = double_layer.random_model()
        est = mcs_estimate(counted, rm, EventQuery(target=EventSpec.joint_failure(5, [0])), 12_345, 0)
        assert est.n_evaluations == counted.n_calls == 12_345


class TestCeAis:
    def test_gm_linear_tail(self):
        # reference budget for the mixture family: 1e5 points per level
        model, rm = linear_setup(5, 3.719016485455709)  # p = 1e-4
        q = EventQuery(target=EventSpec.joint_failure(5, [0]))
        est = ce_ais_estimate(model, rm, q, family="gaussian_mixture", n_per_level=100_000, seed=4)
        assert abs(est.probability - 1e-4) <= 2 * est.cov * 1e-4

    def test_gm_accuracy_over_seeds(self):
        model, rm = linear_setup(5, 3.719016485455709)
        q = EventQuery(target=EventSpec.joint_failure(5, [0]))
        errs = []
        for seed in range(5):
            est = ce_ais_estimate(model, rm, q, family="gaussian_mixture", n_per_level=30_000, seed=seed)
            errs.append(abs(est.probability / 1e-4 - 1.0))
        assert np.median(errs) < 0.10

    def test_vmfm_high_dimension_beats_gm(self):
        # at 27 random variables the Gaussian family loses the tail direction
        model, rm = linear_setup(27, 3.4)
        q = EventQuery(target=EventSpec.joint_failure(27, [0]))
        p_true = float(std_normal_cdf(-3.4))
        vmf_errs, gm_errs = [], []
        for seed in range(5):
            v = ce_ais_estimate(model, rm, q, family="vmf_mixture", n_per_level=1000, seed=seed)
            g = ce_ais_estimate(model, rm, q, family="gaussian_mixture", n_per_level=1000, seed=seed)
            vmf_errs.append(abs(v.probability / p_true - 1.0))
            gm_errs.append(abs(g.probability / p_true - 1.0))
        assert np.median(vmf_errs) < 0.25
        assert np.median(gm_errs) > np.median(vmf_errs)

    def test_vmfm_linear_tail(self):
        model, rm = linear_setup(8, 3.0)
        q = EventQuery(target=EventSpec.joint_failure(8, [0]))
        est = ce_ais_estimate(model, rm, q, family="vmf_mixture", n_per_level=3000, seed=5)
        p_true = float(std_normal_cdf(-3.0))
        assert abs(est.probability - p_true) <= 3 * est.cov * p_true

    def test_agrees_with_mcs_at_moderate_p(self, double_layer):
        rm = double_layer.random_model()
        q = EventQuery(target=EventSpec.joint_failure(5, [2]))  # p ~ 1.6e-2
        ce = ce_ais_estimate(double_layer, rm, q, n_per_level=4000, seed=6)
        mc = mcs_estimate(double_layer, rm, q, n=200_000, seed=7)
        diff = abs(ce.probability - mc.probability)
        combined_sd = math.hypot(ce.cov * ce.probability, mc.cov * mc.probability)
        assert diff <= 3 * combined_sd

    def test_ledger_matches_counter(self, double_layer):
        counted = CallCountingModel(double_layer)
        rm = double_layer.random_model()
        est = ce_ais_estimate(
            counted, rm, EventQuery(target=EventSpec.joint_failure(5, [1])), n_per_level=1500, seed=8
        )
        assert est.n_evaluations == counted.n_calls

    def test_unreachable_event_errors(self):
        model, rm = linear_setup(2, 60.0)  # absurd tail, unreachable in float
        q = EventQuery(target=EventSpec.joint_failure(2, [0]))
        with pytest.raises(ConvergenceError):
            ce_ais_estimate(model, rm, q, n_per_level=200, seed=9, max_levels=3)


class TestSubsetSimulation:
    def test_linear_tail_1e5(self):
        model, rm = linear_setup(6, 4.264890793922825)  # p = 1e-5
        q = EventQuery(target=EventSpec.joint_failure(6, [0]))
        est = subset_sim_estimate(model, rm, q, n_per_level=2000, p0=0.1, seed=10)
        assert abs(est.probability - 1e-5) <= 2.5 * est.cov * 1e-5

    @pytest.mark.parametrize("beta", [2.0, 3.0, 4.0])
    def test_unbiased_over_repetitions(self, beta):
        model, rm = linear_setup(3, beta)
        q = EventQuery(target=EventSpec.joint_failure(3, [0]))
        p_true = float(std_normal_cdf(-beta))
        estimates = np.array([
            subset_sim_estimate(model, rm, q, n_per_level=1000, p0=0.1, seed=100 + r).probability
            for r in range(50)
        ])
        sd = estimates.std() / math.sqrt(len(estimates))
        assert abs(estimates.mean() - p_true) <= 3 * max(sd, 1e-12)

    def test_moderate_probability_short_circuit(self):
        model, rm = linear_setup(2, 1.0)
        q = EventQuery(target=EventSpec.joint_failure(2, [0]))
        est = subset_sim_estimate(model, rm, q, n_per_level=1000, p0=0.1, seed=11)
        p_true = float(std_normal_cdf(-1.0))
        assert est.diagnostics["levels"] == 1
        assert abs(est.probability - p_true) <= 3 * est.cov * p_true

    def test_ledger_matches_counter(self, double_layer):
        counted = CallCountingModel(double_layer)
        rm = double_layer.random_model()
        est = subset_sim_estimate(
            counted, rm, EventQuery(target=EventSpec.joint_failure(5, [3])), n_per_level=500, seed=12
        )
        assert est.n_evaluations == counted.n_calls

    def test_validation(self, double_layer):
        rm = double_layer.random_model()
        q = EventQuery(target=EventSpec.joint_failure(5, [0]))
        with pytest.raises(ValueError):
            subset_sim_estimate(double_layer, rm, q, n_per_level=50, p0=0.1)


class TestConditioning:
    def test_ratio_form_matches_rejection(self, double_layer):
        rm = double_layer.random_model()
        pattern = FailurePattern.from_indices(5, [0])
        est = mcs_estimate(double_layer, rm, EventQuery(conditioning=pattern), n=400_000, seed=13)
        # independent rejection-style conditional estimate
        U = np.random.default_rng(14).standard_normal((400_000, 5))
        resp = double_layer.response(rm.to_physical(U), need_system=True)
        rows = resp.initial_masks == pattern.failed_mask
        p_rej = resp.system[rows].mean()
        sd_rej = math.sqrt(p_rej * (1 - p_rej) / rows.sum())
        sd_est = est.cov * est.probability
        assert abs(est.probability - p_rej) <= 3 * math.hypot(sd_rej, sd_est)

    def test_ce_conditional_matches_oracle(self, double_layer):
        oracle = double_layer_oracle()
        rm = double_layer.random_model()
        pattern = FailurePattern.from_indices(5, [2])
        est = ce_ais_estimate(
            double_layer, rm, EventQuery(conditioning=pattern), n_per_level=20_000, seed=15
        )
        p_true = oracle.system_prob_given([2])
        assert abs(est.probability - p_true) <= 3.5 * max(est.cov, 0.02) * p_true


def _oracle_engine(oracle):
    """Exact-probability engine for logic-level tests (no sampling noise)."""

    def run(query, seed):
        if query.is_conditional:
            p = oracle.system_prob_given(query.conditioning.failed_indices)
        else:
            target = query.target
            if isinstance(target, FailurePattern):
                p = oracle.scenario_probability(target.failed_indices)
            else:
                probs = oracle.initial_failure_probs()
                p = float(np.prod([probs[k] for k in target.failed_indices]))
        return EstimateResult(min(max(p, 0.0), 1.0), 0.0 if p > 0 else math.inf, 1, "oracle")

    return run


class TestScenarioIndices:
    THR = ResilienceThreshold.from_probability(1e-4)

    def test_trivial_scenario_skips_pi(self, double_layer):
        oracle = double_layer_oracle()
        pattern = FailurePattern.from_indices(5, [2, 3])  # beta just past the radius
        rows, _ = estimate_scenario_indices(
            double_layer, double_layer.random_model(), [pattern], self.THR,
            engine=_oracle_engine(oracle),
        )
        assert rows[0].indices.pi is None
        assert rows[0].indices.beta > self.THR.radius

    def test_reference_case_indices(self, double_layer):
        oracle = double_layer_oracle()
        pattern = FailurePattern.from_indices(5, [2])
        rows, _ = estimate_scenario_indices(
            double_layer, double_layer.random_model(), [pattern], self.THR,
            engine=_oracle_engine(oracle),
        )
        idx = rows[0].indices
        assert idx.beta == pytest.approx(2.17, abs=0.05)
        assert idx.pi == pytest.approx(2.57, abs=0.05)
        assert idx.combined == pytest.approx(3.79, abs=0.05)

    def test_empty_list(self, double_layer):
        rows, calls = estimate_scenario_indices(
            double_layer, double_layer.random_model(), [], self.THR, engine="mcs"
        )
        assert rows == [] and calls == 0

    def test_survey_matches_oracle(self, double_layer):
        oracle = double_layer_oracle()
        patterns = [FailurePattern.from_indices(5, f) for f in ([0], [2], [3])]
        rows, calls = estimate_scenario_indices(
            double_layer, double_layer.random_model(), patterns, self.THR,
            engine="mcs_survey", engine_options={"n": 600_000}, seed=21,
        )
        assert calls == 600_000
        by_mask = {r.pattern.failed_mask: r.indices for r in rows}
        for f in ([0], [2], [3]):
            mask = FailurePattern.from_indices(5, f).failed_mask
            assert by_mask[mask].beta == pytest.approx(oracle.scenario_beta(f), abs=0.05)

    def test_rows_sorted_by_combined(self, double_layer):
        oracle = double_layer_oracle()
        patterns = [FailurePattern.from_indices(5, f) for f in ([4], [0], [2])]
        rows, _ = estimate_scenario_indices(
            double_layer, double_layer.random_model(), patterns, self.THR,
            engine=_oracle_engine(oracle),
        )
        combineds = [r.indices.combined for r in rows]
        assert combineds == sorted(combineds)
