"""
Tests for representation selection rules and the algorithm registry.
"""

import numpy as np
import pytest

from lowdelay_abr.streaming.adaptation import (
    ContractViolation,
    DecisionContext,
    FestiveAlgorithm,
    FestiveConfig,
    FestiveState,
    LolypopAlgorithm,
    LolypopConfig,
    LowestAlgorithm,
    SelectionView,
    create_algorithm,
    festive_select,
    lolypop_select,
    lowest_select,
    next_tune_in,
    tune_in,
)

RATES = (1e6, 2e6, 4e6, 8e6, 16e6)


def _ctx(p_success, omega_t=0.0, j_prev=None, t_r=10.0, t_p=13.0):
    return DecisionContext(
        t_r=t_r, t_p=t_p, omega_t=omega_t, j_prev=j_prev, p_success=tuple(p_success)
    )


def _festive_state(throughputs, selections=(), segments_since_up=None):
    state = FestiveState(bw_window=20)
    for rate in throughputs:
        state.add_throughput(rate)
    state.selections = list(selections)
    state.segments_since_up = segments_since_up
    return state


class TestLolypopSelect:
    """Test the LOLYPOP decision rule."""

    def test_no_estimation_available(self):
        cfg = LolypopConfig(sigma_star=0.1, omega_star=0.1)

        assert lolypop_select(_ctx([-1.0, -1.0, -1.0]), cfg) == 0

    def test_highest_within_skip_target(self):
        cfg = LolypopConfig(sigma_star=0.15, omega_star=0.1)

        assert lolypop_select(_ctx([1.0, 0.9, 0.5], omega_t=0.0), cfg) == 1

    def test_upward_move_blocked_by_transitions(self):
        cfg = LolypopConfig(sigma_star=0.15, omega_star=0.1)

        assert lolypop_select(_ctx([1.0, 0.9, 0.5], omega_t=0.2, j_prev=0), cfg) == 0

    def test_downward_move_never_blocked(self):
        cfg = LolypopConfig(sigma_star=0.15, omega_star=0.1)

        assert lolypop_select(_ctx([1.0, 0.9, 0.5], omega_t=0.5, j_prev=2), cfg) == 1

    def test_none_qualifies(self):
        cfg = LolypopConfig(sigma_star=0.1, omega_star=0.1)

        assert lolypop_select(_ctx([0.5, 0.4]), cfg) == 0

    def test_sentinels_mixed_with_estimates(self):
        cfg = LolypopConfig(sigma_star=0.1, omega_star=0.1)

        assert lolypop_select(_ctx([1.0, -1.0, 0.95]), cfg) == 2

    def test_deadline_not_after_request(self):
        cfg = LolypopConfig(sigma_star=0.1, omega_star=0.1)

        with pytest.raises(ContractViolation, match="not after request"):
            lolypop_select(_ctx([1.0], t_r=13.0, t_p=13.0), cfg)

    def test_deadline_beyond_horizon(self):
        cfg = LolypopConfig(sigma_star=0.1, omega_star=0.1, t_max=2)

        with pytest.raises(ContractViolation, match="prediction horizon"):
            lolypop_select(_ctx([1.0], t_r=10.0, t_p=13.0), cfg)

    def test_probability_out_of_range(self):
        cfg = LolypopConfig(sigma_star=0.1, omega_star=0.1)

        with pytest.raises(ContractViolation, match="out of range"):
            lolypop_select(_ctx([1.5]), cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="sigma_star"):
            LolypopConfig(sigma_star=1.5, omega_star=0.1)
        with pytest.raises(ValueError, match="omega_star"):
            LolypopConfig(sigma_star=0.1, omega_star=-0.1)


class TestLolypopProperties:
    """Randomised checks of the selection rule."""

    SIGMA_STARS = (0.0, 0.005, 0.02, 0.05, 0.1, 0.3, 0.6, 0.95, 1.0)

    @staticmethod
    def _random_context(rng):
        p_success = [
            -1.0 if rng.random() < 0.15 else float(rng.random()) for _ in RATES
        ]
        j_prev = None if rng.random() < 0.2 else int(rng.integers(len(RATES)))
        return _ctx(p_success, omega_t=float(rng.random() * 0.3), j_prev=j_prev)

    def test_monotone_in_sigma_star(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            ctx = self._random_context(rng)
            omega_star = float(rng.random() * 0.3)
            picks = [
                lolypop_select(ctx, LolypopConfig(sigma_star=s, omega_star=omega_star))
                for s in self.SIGMA_STARS
            ]
            assert picks == sorted(picks), (ctx, omega_star, picks)

    def test_failing_entries_above_choice_are_ignored(self):
        """Changing probabilities above the pick that stay too low keeps the pick."""
        rng = np.random.default_rng(12)
        for _ in range(500):
            ctx = self._random_context(rng)
            cfg = LolypopConfig(
                sigma_star=float(rng.random() * 0.5), omega_star=float(rng.random() * 0.3)
            )
            j = lolypop_select(ctx, cfg)
            candidate = max(
                [0]
                + [
                    i
                    for i, p in enumerate(ctx.p_success)
                    if p != -1.0 and 1.0 - p <= cfg.sigma_star
                ]
            )
            changed = list(ctx.p_success)
            for i in range(candidate + 1, len(changed)):
                if rng.random() < 0.5:
                    changed[i] = -1.0
                else:
                    changed[i] = float(rng.random() * (1.0 - cfg.sigma_star) * 0.999)
            other = _ctx(changed, omega_t=ctx.omega_t, j_prev=ctx.j_prev)

            assert lolypop_select(other, cfg) == j

    def test_never_above_reference_when_over_budget(self):
        rng = np.random.default_rng(13)
        for _ in range(500):
            ctx = self._random_context(rng)
            cfg = LolypopConfig(sigma_star=0.1, omega_star=ctx.omega_t / 2)
            if ctx.omega_t <= cfg.omega_star:
                continue
            assert lolypop_select(ctx, cfg) <= (ctx.j_prev or 0)

class TestTuneIn:
    """Test the tune-in rule."""

    def test_mid_segment(self):
        assert tune_in(10.5, 2.0, 5.0) == 4

    def test_first_segment(self):
        assert tune_in(2.0, 2.0, 5.0) == 0

    def test_infeasible_delay(self):
        with pytest.raises(ValueError, match="at least 2\\*tau"):
            tune_in(10.0, 2.0, 3.5)

    def test_before_first_publication(self):
        with pytest.raises(ValueError, match="No segment qualifies"):
            tune_in(1.0, 2.0, 5.0)

    def test_next_tune_in_immediate(self):
        assert next_tune_in(10.5, 2.0, 5.0) == (4, 10.5)

    def test_next_tune_in_waits_for_publication(self):
        assert next_tune_in(1.0, 2.0, 5.0) == (0, 2.0)

    def test_next_tune_in_after_deadline(self):
        """A skip at the deadline of segment 4 (t=13) resumes with segment 5."""
        assert next_tune_in(13.0, 2.0, 5.0) == (5, 13.0)

    def test_next_tune_in_matches_tune_in_when_feasible(self):
        for tenth in range(20, 400):
            t = tenth / 10
            segment, t_request = next_tune_in(t, 2.0, 6.0)
            assert t_request >= t
            assert segment == tune_in(t_request, 2.0, 6.0)


class TestFestiveSelect:
    """Test the reconstructed FESTIVE rule."""

    def test_first_step_up(self):
        """p * estimate between rates 1 and 2 moves from 0 to 1."""
        state = _festive_state([3e6] * 5, selections=[0])
        cfg = FestiveConfig(alpha=12, p=1.0, k=1)

        assert festive_select(state, RATES, cfg) == 1

    def test_immediate_downward_step(self):
        state = _festive_state([3e6] * 5, selections=[3])
        cfg = FestiveConfig(alpha=12, p=0.85, k=4)

        assert festive_select(state, RATES, cfg) == 2

    def test_upward_gate(self):
        """Only k-1 segments since the last upward switch keeps the current level."""
        state = _festive_state([5e6] * 5, selections=[0, 1, 1, 1], segments_since_up=3)
        cfg = FestiveConfig(alpha=12, p=1.0, k=4)

        assert festive_select(state, RATES, cfg) == 1

    def test_gate_opens_after_k_segments(self):
        state = _festive_state([5e6] * 5, selections=[0, 1, 1, 1, 1], segments_since_up=4)
        cfg = FestiveConfig(alpha=12, p=1.0, k=4)

        assert festive_select(state, RATES, cfg) == 2

    def test_no_throughput_yet(self):
        assert festive_select(FestiveState(), RATES, FestiveConfig()) == 0

    def test_high_switch_penalty_keeps_level(self):
        """With many recent switches and no efficiency weight, staying wins."""
        state = _festive_state([40e6] * 5, selections=[0, 1, 0, 1, 0, 1])
        cfg = FestiveConfig(alpha=0, p=0.85, k=1)

        assert festive_select(state, RATES, cfg) == 1

    def test_harmonic_mean_estimate(self):
        """Harmonic mean of 1 and 100 Mbps is about 1.98 Mbps, so no step up from 0."""
        state = _festive_state([1e6, 100e6], selections=[0])
        cfg = FestiveConfig(alpha=12, p=1.0, k=1)

        assert festive_select(state, RATES, cfg) == 0

    def test_state_tracking(self):
        state = FestiveState(bw_window=2)
        for j in (0, 1, 1, 0):
            state.add_selection(j)
        for rate in (1.0, 2.0, 3.0):
            state.add_throughput(rate)

        assert state.j_cur == 0
        assert state.segments_since_up == 3
        assert state.recent_switches() == 2
        assert list(state.throughputs) == [2.0, 3.0]

    def test_config_validation(self):
        with pytest.raises(ValueError, match="p must be"):
            FestiveConfig(p=0.0)
        with pytest.raises(ValueError, match="k must be"):
            FestiveConfig(k=0)


class TestLowest:
    """Test the lowest-quality baseline."""

    def test_always_zero(self):
        assert lowest_select(RATES) == 0
        assert lowest_select(RATES) == 0

    def test_empty_catalog(self):
        with pytest.raises(ValueError, match="no representations"):
            lowest_select(())


class TestRegistry:
    """Test algorithm creation by name."""

    def _view(self, p_success=(1.0, 1.0, 1.0, 0.0, 0.0)):
        return SelectionView(
            segment=5,
            t_r=12.0,
            t_p=15.0,
            omega_t=0.0,
            j_prev=0,
            rates=RATES,
            sizes=tuple(r * 2 for r in RATES),
            p_success=tuple(p_success),
        )

    def test_lolypop(self):
        algorithm = create_algorithm("lolypop", {"sigma_star": 0.05, "omega_star": 0.1})

        assert isinstance(algorithm, LolypopAlgorithm)
        assert algorithm.uses_predictions
        assert algorithm.select(self._view()) == 2

    def test_lolypop_receives_estimator_settings(self):
        algorithm = create_algorithm(
            "lolypop", {"sigma_star": 0.05, "omega_star": 0.1}, {"t_max": 5}
        )

        assert algorithm.config.t_max == 5

    def test_lolypop_requires_targets(self):
        with pytest.raises(ValueError, match="requires parameters"):
            create_algorithm("lolypop", {"sigma_star": 0.05})

    def test_festive_records_history(self):
        algorithm = create_algorithm("festive", {"alpha": 12, "p": 0.85, "k": 4})

        assert isinstance(algorithm, FestiveAlgorithm)
        assert algorithm.label == "festive (reconstructed baseline)"
        algorithm.record(0, True, 5e6)
        algorithm.record(0, False, None)
        assert algorithm.state.selections == [0, 0]
        assert list(algorithm.state.throughputs) == [5e6]

    def test_lowest(self):
        algorithm = create_algorithm("lowest")

        assert isinstance(algorithm, LowestAlgorithm)
        assert algorithm.select(self._view()) == 0

    def test_lowest_rejects_parameters(self):
        with pytest.raises(ValueError, match="no parameters"):
            create_algorithm("lowest", {"alpha": 1})

    def test_unknown(self):
        with pytest.raises(ValueError, match="Unknown algorithm"):
            create_algorithm("bola")

    def test_instances_are_independent(self):
        a = create_algorithm("festive")
        b = create_algorithm("festive")
        a.record(1, False, 1e6)

        assert b.state.selections == []
