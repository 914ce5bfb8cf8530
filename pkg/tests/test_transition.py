"""Per-factor pmfs, kernel assembly, and kernel diagnostics."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pushmdp.model import (
    Action,
    SystemState,
    cumulative_popularity_table,
    state_index,
    zipf_pmf,
)
from pushmdp.transition import (
    ArrivalPmf,
    TransitionKernel,
    build_kernel,
    content_row,
    energy_row,
    poisson_pmf,
    request_row,
    validate_kernel,
)

from conftest import make_instance, make_scenario

# e^{-0.8} and 0.8 e^{-0.8}, evaluated independently
P0_08 = 0.44932896411722156
P1_08 = 0.35946317129377725


class TestPoissonPmf:
    def test_oracle_values(self):
        assert poisson_pmf(0.8, 0) == pytest.approx(P0_08, abs=1e-15)
        assert poisson_pmf(0.8, 1) == pytest.approx(P1_08, abs=1e-15)

    def test_normalization(self):
        for mean in (0.3, 0.8, 2.0, 17.5):
            total = math.fsum(poisson_pmf(mean, i) for i in range(61))
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_large_count_stable(self):
        # log-domain evaluation keeps huge factorials finite
        val = poisson_pmf(5.0, 400)
        assert 0.0 < val < 1e-300 or val == 0.0
        assert np.isfinite(val)

    def test_negative_count_zero(self):
        assert poisson_pmf(0.8, -1) == 0.0


class TestArrivalPmf:
    def test_poisson_truncation(self):
        arr = ArrivalPmf.poisson(0.8, 15)
        assert len(arr.probs) == 16
        assert arr.probs[0] == pytest.approx(P0_08, abs=1e-15)
        assert math.fsum(arr.probs) < 1.0

    def test_prefix(self):
        arr = ArrivalPmf.poisson(0.8, 15)
        assert arr.prefix(-1) == 0.0
        assert arr.prefix(0) == pytest.approx(P0_08, abs=1e-15)
        assert arr.prefix(1) == pytest.approx(P0_08 + P1_08, abs=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            ArrivalPmf(probs=(0.5, -0.1), mean=0.5)
        with pytest.raises(ValueError):
            ArrivalPmf(probs=(0.9, 0.2), mean=0.5)
        with pytest.raises(ValueError):
            ArrivalPmf(probs=(), mean=0.5)


class TestEnergyRow:
    def setup_method(self):
        _, _, self.grid, _ = make_scenario()
        self.arr = ArrivalPmf.poisson(0.8, 15)

    def test_full_battery_sleep_stays_full(self):
        row = energy_row(15, 0, Action.SLEEP, self.grid, self.arr, 15)
        assert row[15] == 1.0
        assert np.all(row[:15] == 0.0)

    def test_empty_battery_sleep(self):
        row = energy_row(0, 0, Action.SLEEP, self.grid, self.arr, 15)
        assert row[0] == pytest.approx(P0_08, abs=1e-15)
        assert row[1] == pytest.approx(P1_08, abs=1e-15)
        tail = 1.0 - self.arr.prefix(14)
        assert row[15] == pytest.approx(tail, abs=1e-15)
        assert math.fsum(row) == pytest.approx(1.0, abs=1e-12)

    def test_unicast_shifts_support(self):
        row = energy_row(5, 2, Action.UNICAST, self.grid, self.arr, 15)
        assert np.all(row[:3] == 0.0)
        assert row[3] == pytest.approx(P0_08, abs=1e-15)

    def test_infeasible_spend_rejected(self):
        with pytest.raises(ValueError):
            energy_row(3, 0, Action.PUSH, self.grid, self.arr, 15)

    @given(battery=st.integers(0, 15), ring=st.integers(0, 4))
    @settings(max_examples=60, deadline=None)
    def test_row_stochastic(self, battery, ring):
        for action in Action:
            if action == Action.UNICAST and (ring == 0 or self.grid.unicast_costs[ring] > battery):
                continue
            if action == Action.PUSH and self.grid.push_cost > battery:
                continue
            row = energy_row(battery, ring, action, self.grid, self.arr, 15)
            assert math.fsum(row) == pytest.approx(1.0, abs=1e-12)
            assert np.all(row >= 0.0)


class TestContentRow:
    def params(self):
        params, *_ = make_scenario()
        return params

    def test_nothing_cached_nothing_lost(self):
        assert content_row(0, Action.SLEEP, self.params()) == {0: 1.0}

    def test_push_from_empty_always_lands(self):
        assert content_row(0, Action.PUSH, self.params()) == {1: 1.0}

    def test_decay_rate(self):
        row = content_row(4, Action.UNICAST, self.params())
        assert row[3] == pytest.approx(0.06, abs=1e-15)
        assert row[4] == pytest.approx(0.94, abs=1e-15)

    def test_push_with_replacement(self):
        row = content_row(4, Action.PUSH, self.params())
        assert row[5] == pytest.approx(0.94, abs=1e-15)
        assert row[4] == pytest.approx(0.06, abs=1e-15)

    def test_push_on_full_cache_rejected(self):
        with pytest.raises(ValueError):
            content_row(20, Action.PUSH, self.params())

    def test_rows_normalized(self):
        params = self.params()
        for c in range(21):
            for action in (Action.SLEEP, Action.UNICAST, Action.PUSH):
                if action == Action.PUSH and c == 20:
                    continue
                row = content_row(c, action, params)
                assert math.fsum(row.values()) == pytest.approx(1.0, abs=1e-15)
                assert all(abs(cn - c) <= 1 for cn in row)


class TestRequestRow:
    def setup_method(self):
        params, _, self.grid, pop = make_scenario()
        self.pop_cum = cumulative_popularity_table(pop)

    def test_everything_cached_no_requests(self):
        row = request_row(20, self.pop_cum, self.grid, 0.7)
        assert row[0] == 1.0
        assert np.all(row[1:] == 0.0)

    def test_empty_cache_equal_rings(self):
        row = request_row(0, self.pop_cum, self.grid, 0.7)
        assert row[0] == pytest.approx(0.3, abs=1e-15)
        assert row[1:] == pytest.approx([0.175] * 4, abs=1e-15)

    def test_no_traffic(self):
        row = request_row(5, self.pop_cum, self.grid, 0.0)
        assert row[0] == 1.0

    def test_rows_normalized(self):
        for c in range(21):
            row = request_row(c, self.pop_cum, self.grid, 0.7)
            assert math.fsum(row) == pytest.approx(1.0, abs=1e-12)
            assert np.all(row >= 0.0)


class TestBuildKernel:
    def test_default_rows_stochastic(self, default_instance):
        _, _, _, _, kernel, _ = default_instance
        assert kernel.num_states == 1680
        for idx, prob in kernel.rows.values():
            assert math.fsum(prob) == pytest.approx(1.0, abs=1e-12)
            assert np.all(prob > 0.0)
            assert np.all(np.diff(idx) > 0)

    def test_successor_support(self, default_instance):
        params, _, grid, _, kernel, _ = default_instance
        # full battery, no request, full cache, sleep: battery stays full,
        # cache keeps or loses one
        s = state_index(SystemState(15, 0, 20), params)
        idx, prob = kernel.row(s, Action.SLEEP)
        succ = [(i // 105, (i // 21) % 5, i % 21) for i in idx]
        assert all(e == 15 for e, _, _ in succ)
        assert {c for _, _, c in succ} == {19, 20}

    def test_marginal_recovers_energy_row(self, default_instance):
        params, _, grid, _, kernel, _ = default_instance
        arr = ArrivalPmf.poisson(params.mean_arrival, params.battery_levels)
        for state, action in (
            (SystemState(0, 0, 0), Action.SLEEP),
            (SystemState(9, 2, 5), Action.UNICAST),
            (SystemState(12, 0, 3), Action.PUSH),
        ):
            s = state_index(state, params)
            idx, prob = kernel.row(s, action)
            marginal = np.zeros(16)
            for i, p in zip(idx, prob):
                marginal[i // 105] += p
            expect = energy_row(
                state.battery, state.request, action, grid, arr, 15
            )
            assert marginal == pytest.approx(expect, abs=1e-12)

    def test_feasible_actions_exposed(self, default_instance):
        params, _, _, _, kernel, _ = default_instance
        assert kernel.feasible_actions(0) == (Action.SLEEP,)
        s = state_index(SystemState(15, 2, 5), params)
        assert kernel.feasible_actions(s) == (
            Action.SLEEP,
            Action.UNICAST,
            Action.PUSH,
        )

    def test_missing_row_raises(self, default_instance):
        _, _, _, _, kernel, _ = default_instance
        with pytest.raises(KeyError):
            kernel.row(0, Action.PUSH)

    def test_single_state_degenerate(self):
        # no battery, no contents: only sleep is ever possible
        params, _, _, _, kernel, costs = make_instance(
            e_max=0, n_contents=0, m_rings=1
        )
        assert kernel.num_states == 2
        assert kernel.feasible_actions(0) == (Action.SLEEP,)
        idx, prob = kernel.row(0, Action.SLEEP)
        assert math.fsum(prob) == pytest.approx(1.0, abs=1e-12)

    def test_restrict_drops_push(self, default_instance):
        _, _, _, _, kernel, _ = default_instance
        sub = kernel.restrict({Action.SLEEP, Action.UNICAST})
        assert all(a != int(Action.PUSH) for _, a in sub.rows)
        assert sub.num_states == kernel.num_states
        with pytest.raises(ValueError):
            kernel.restrict({Action.PUSH})

    def test_action_matrix_rows(self, default_instance):
        _, _, _, _, kernel, _ = default_instance
        mat = kernel.action_matrix(Action.SLEEP)
        sums = np.asarray(mat.sum(axis=1)).ravel()
        assert np.allclose(sums, 1.0, atol=1e-12)

    def test_export_text(self, default_instance):
        _, _, _, _, kernel, _ = default_instance
        text = kernel.to_text(limit=5)
        lines = text.strip().splitlines()
        assert lines[0].startswith("0 SLEEP ")
        assert lines[-1] == "..."


class TestValidateKernel:
    def test_default_kernel_clean(self, default_instance):
        _, _, _, _, kernel, _ = default_instance
        report = validate_kernel(kernel)
        assert report.max_row_sum_deviation < 1e-12
        assert report.negative_entries == 0
        # states with a pending request and a full cache are never produced:
        # a fresh request requires an uncached content
        assert len(report.never_entered) == 64
        assert report.strong_components == 1 + len(report.never_entered)

    def test_corrupted_row_flagged(self, default_instance):
        _, _, _, _, kernel, _ = default_instance
        rows = dict(kernel.rows)
        idx, prob = rows[(0, 0)]
        rows[(0, 0)] = (idx, prob * 1.01)
        bad = TransitionKernel(num_states=kernel.num_states, rows=rows)
        report = validate_kernel(bad)
        assert report.max_row_sum_deviation > 1e-3

    def test_negative_entry_flagged(self, default_instance):
        _, _, _, _, kernel, _ = default_instance
        rows = dict(kernel.rows)
        idx, prob = rows[(0, 0)]
        tampered = prob.copy()
        tampered[0] *= -1.0
        rows[(0, 0)] = (idx, tampered)
        bad = TransitionKernel(num_states=kernel.num_states, rows=rows)
        assert validate_kernel(bad).negative_entries == 1


@given(
    e_max=st.integers(0, 3),
    n=st.integers(0, 3),
    m=st.integers(1, 3),
    p_c=st.floats(0.0, 1.0),
    p_u=st.floats(0.0, 1.0),
)
@settings(max_examples=40, deadline=None)
def test_kernel_rows_stochastic_on_random_instances(e_max, n, m, p_c, p_u):
    _, _, _, _, kernel, _ = make_instance(
        e_max=e_max, n_contents=n, m_rings=m, p_c=p_c, p_u=p_u
    )
    for idx, prob in kernel.rows.values():
        assert math.fsum(prob) == pytest.approx(1.0, abs=1e-12)
        assert np.all(prob >= 0.0)
        assert np.all(idx >= 0) and np.all(idx < kernel.num_states)
