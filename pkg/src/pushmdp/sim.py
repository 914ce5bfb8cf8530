"""Seeded Monte Carlo simulation of the slotted push system.

The simulator realizes the same period timeline the kernel encodes, but by
direct sampling (numpy Poisson and uniform draws) rather than through the
analytic pmfs, so solver and simulator stay independent routes to the same
averages.  Per period: observe the state, apply the policy, accrue the
macro-handling cost, then sample harvest arrivals, content replacement and
the next request.

Requests generated at the end of period k are observed (and possibly
handed to the macro cell) in period k+1; counters attribute them to the
observation period so that macro_handled <= requests_generated holds within
any measurement window.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, replace

import numpy as np

from .model import (
    Action,
    DistanceGrid,
    SystemParams,
    SystemState,
    cumulative_popularity_table,
    energy_spend,
    stage_cost_table,
)
from .policies import non_push_optimal, unicast_priority_table
from .solver import (
    PolicyTable,
    SingularPolicyError,
    policy_evaluation,
    policy_iteration,
    relative_value_iteration,
)
from .transition import ArrivalPmf, build_kernel

__all__ = [
    "SimConfig",
    "SimMetrics",
    "SimulationError",
    "simulate",
    "sample_transitions",
    "SweepRow",
    "sweep",
    "BASELINE_NAMES",
]

_BLOCK = 1 << 18

BASELINE_NAMES = ("optimal-push", "non-push", "unicast-priority")


class SimulationError(RuntimeError):
    """A policy returned an action infeasible in the visited state."""


@dataclass(frozen=True)
class SimConfig:
    """Horizon, seeding and measurement settings for one run."""

    policy: PolicyTable | str
    horizon: int = 1_000_000
    seed: int = 0
    warmup: int = 10_000
    batches: int = 100
    debug: bool = False

    def __post_init__(self):
        if self.warmup < 0 or self.horizon <= self.warmup:
            raise ValueError("need horizon > warmup >= 0")
        if self.batches < 1:
            raise ValueError("batches must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class SimMetrics:
    """Counters and rates over the post-warmup measurement window.

    Rates are per measured period; standard errors come from batch means,
    which absorb the serial correlation of the underlying chain.
    """

    total_periods: int
    measured_periods: int
    requests_generated: int
    macro_handled: int
    cache_hits: int
    energy_overflow_units: int
    macro_ratio: float
    macro_ratio_se: float
    request_rate: float
    request_rate_se: float
    hit_rate: float
    hit_rate_se: float
    overflow_rate: float
    overflow_rate_se: float
    seed: int
    warmup: int


def _batch_se(series: np.ndarray, batches: int) -> float:
    size = len(series) // batches
    if size < 1 or batches < 2:
        return float("nan")
    means = series[: batches * size].reshape(batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(batches))


def _resolve_policy(
    policy: PolicyTable | str,
    params: SystemParams,
    grid: DistanceGrid,
    popularity: np.ndarray,
) -> PolicyTable:
    if isinstance(policy, PolicyTable):
        return policy
    if policy == "unicast-priority":
        return unicast_priority_table(params, grid)
    if policy in ("optimal-push", "non-push"):
        arrival = ArrivalPmf.poisson(params.mean_arrival, params.battery_levels)
        kernel = build_kernel(params, grid, popularity, arrival)
        costs = stage_cost_table(params)
        if policy == "optimal-push":
            return policy_iteration(kernel, costs).policy
        return non_push_optimal(kernel, costs).policy
    raise ValueError(f"unknown policy name {policy!r}; known: {BASELINE_NAMES}")


def simulate(
    config: SimConfig,
    params: SystemParams,
    grid: DistanceGrid,
    popularity: np.ndarray,
    record: bool = False,
):
    """Run one seeded trajectory from the empty state (0, 0, 0).

    Deterministic given (config, params, grid, popularity).  With
    ``record=True`` also returns (state index, action) arrays over the full
    horizon for distribution checks.
    """
    table = _resolve_policy(config.policy, params, grid, popularity)
    if len(table) != params.num_states:
        raise ValueError("policy table size does not match the state space")
    actions = table.actions
    horizon, warmup = config.horizon, config.warmup
    n_meas = horizon - warmup

    m1 = params.num_rings + 1
    n1 = params.num_contents + 1
    cap = params.battery_levels
    n_cont = params.num_contents
    p_c = params.content_replace_prob
    p_u = params.request_prob
    l_cost = grid.unicast_costs
    l_push = grid.push_cost
    pop_cum = cumulative_popularity_table(popularity)
    ring_cum = np.cumsum(grid.ring_probs).tolist()
    m_rings = grid.num_rings
    # eviction threshold: replacement removes a pushed content w.p. C/N
    evict_thresh = [c / n_cont if n_cont else 0.0 for c in range(n_cont + 1)]

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))

    macro_ind = np.zeros(n_meas, dtype=np.uint8)
    req_ind = np.zeros(n_meas, dtype=np.uint8)
    hit_ind = np.zeros(n_meas, dtype=np.uint8)
    over_ind = np.zeros(n_meas, dtype=np.int16)
    if record:
        rec_states = np.zeros(horizon, dtype=np.int32)
        rec_actions = np.zeros(horizon, dtype=np.int8)

    e = q = c = 0
    req_flag = hit_flag = False
    sleep, unicast, push = int(Action.SLEEP), int(Action.UNICAST), int(Action.PUSH)

    k = 0
    while k < horizon:
        blk = min(_BLOCK, horizon - k)
        arr_blk = rng.poisson(params.mean_arrival, blk)
        repl_blk = rng.random(blk)
        evict_blk = rng.random(blk)
        requ_blk = rng.random(blk)
        hitu_blk = rng.random(blk)
        ringu_blk = rng.random(blk)
        for i in range(blk):
            kk = k + i
            j = kk - warmup
            if j >= 0:
                if req_flag:
                    req_ind[j] = 1
                    if hit_flag:
                        hit_ind[j] = 1
            a = actions[(e * m1 + q) * n1 + c]
            if a == unicast:
                if q < 1 or l_cost[q] > e:
                    raise SimulationError(
                        f"period {kk}: unicast infeasible in state ({e},{q},{c})"
                    )
                spent = l_cost[q]
            elif a == push:
                if l_push > e or c >= n_cont:
                    raise SimulationError(
                        f"period {kk}: push infeasible in state ({e},{q},{c})"
                    )
                spent = l_push
            else:
                spent = 0
            if record:
                rec_states[kk] = (e * m1 + q) * n1 + c
                rec_actions[kk] = a
            if q > 0 and a != unicast and j >= 0:
                macro_ind[j] = 1

            dropped = repl_blk[i] < p_c and evict_blk[i] < evict_thresh[c]
            c_next = c + (1 if a == push else 0) - (1 if dropped else 0)
            raw = e - spent + int(arr_blk[i])
            e_next = raw if raw < cap else cap
            if j >= 0:
                over_ind[j] = raw - e_next
            if requ_blk[i] < p_u:
                req_flag = True
                if hitu_blk[i] < pop_cum[c_next]:
                    hit_flag = True
                    q_next = 0
                else:
                    hit_flag = False
                    ring = bisect.bisect_right(ring_cum, ringu_blk[i])
                    q_next = (ring if ring < m_rings else m_rings - 1) + 1
            else:
                req_flag = hit_flag = False
                q_next = 0
            if config.debug:
                assert 0 <= e_next <= cap and 0 <= c_next <= n_cont
                assert 0 <= q_next <= m_rings
            e, q, c = e_next, q_next, c_next
        k += blk

    metrics = SimMetrics(
        total_periods=horizon,
        measured_periods=n_meas,
        requests_generated=int(req_ind.sum()),
        macro_handled=int(macro_ind.sum()),
        cache_hits=int(hit_ind.sum()),
        energy_overflow_units=int(over_ind.sum()),
        macro_ratio=float(macro_ind.mean()),
        macro_ratio_se=_batch_se(macro_ind, config.batches),
        request_rate=float(req_ind.mean()),
        request_rate_se=_batch_se(req_ind, config.batches),
        hit_rate=float(hit_ind.mean()),
        hit_rate_se=_batch_se(hit_ind, config.batches),
        overflow_rate=float(over_ind.mean()),
        overflow_rate_se=_batch_se(over_ind, config.batches),
        seed=config.seed,
        warmup=warmup,
    )
    if record:
        return metrics, (rec_states, rec_actions)
    return metrics


def sample_transitions(
    state: SystemState,
    action: Action,
    count: int,
    params: SystemParams,
    grid: DistanceGrid,
    popularity: np.ndarray,
    seed: int = 0,
) -> np.ndarray:
    """Sample next-state indices of one fixed (state, action) pair.

    Uses the same generative draws as the trajectory simulator, vectorized;
    this is the independent check against the analytic kernel rows.
    """
    spent = energy_spend(action, state.request, grid)
    if spent > state.battery:
        raise SimulationError(f"{action.name} infeasible in {state}")
    if action == Action.PUSH and state.pushed >= params.num_contents:
        raise SimulationError(f"push infeasible in {state}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    cap = params.battery_levels
    n_cont = params.num_contents
    pop_cum = cumulative_popularity_table(popularity)
    ring_cum = np.cumsum(grid.ring_probs)

    arr = rng.poisson(params.mean_arrival, count)
    repl = rng.random(count)
    evict = rng.random(count)
    requ = rng.random(count)
    hitu = rng.random(count)
    ringu = rng.random(count)

    thresh = state.pushed / n_cont if n_cont else 0.0
    dropped = (repl < params.content_replace_prob) & (evict < thresh)
    c_next = state.pushed + (1 if action == Action.PUSH else 0) - dropped.astype(int)
    e_next = np.minimum(cap, state.battery - spent + arr)
    hit = hitu < pop_cum[c_next]
    req = requ < params.request_prob
    ring = np.minimum(
        np.searchsorted(ring_cum, ringu, side="right"), grid.num_rings - 1
    ) + 1
    q_next = np.where(req & ~hit, ring, 0)
    m1 = params.num_rings + 1
    n1 = params.num_contents + 1
    return ((e_next * m1 + q_next) * n1 + c_next).astype(np.int64)


@dataclass(frozen=True)
class SweepRow:
    """One (policy, request-probability) point of the performance curve."""

    policy: str
    p_u: float
    p_c: float
    a_bar: float
    ratio_sim: float
    se: float
    ratio_solver: float
    horizon: int
    seed: int


def _policy_gain(kernel, costs, table: PolicyTable) -> float:
    try:
        return policy_evaluation(table, kernel, costs).gain
    except SingularPolicyError:
        return relative_value_iteration(kernel, costs, policy=table).gain


def sweep(
    params: SystemParams,
    grid: DistanceGrid,
    popularity: np.ndarray,
    pu_grid,
    policies=BASELINE_NAMES,
    replications: int = 1,
    horizon: int = 1_000_000,
    warmup: int = 10_000,
    seed: int = 0,
) -> list[SweepRow]:
    """Solve and simulate each policy at each request probability.

    The request pmf depends on p_u, so the kernel is rebuilt and the
    optimizing policies re-solved at every grid point.  Each
    (p_u, policy, replication) triple gets an independent child seed derived
    from the master seed; rows report both the solver gain and the simulated
    ratio so their agreement can be checked downstream.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    master = np.random.SeedSequence(seed)
    rows: list[SweepRow] = []
    for p_u in pu_grid:
        if not 0.0 < p_u <= 1.0:
            raise ValueError(f"p_u grid point {p_u} outside (0, 1]")
        pp = replace(params, request_prob=float(p_u))
        arrival = ArrivalPmf.poisson(pp.mean_arrival, pp.battery_levels)
        kernel = build_kernel(pp, grid, popularity, arrival)
        costs = stage_cost_table(pp)
        tables: dict[str, PolicyTable] = {}
        gains: dict[str, float] = {}
        for name in policies:
            if name == "optimal-push":
                res = policy_iteration(kernel, costs)
                tables[name], gains[name] = res.policy, res.values.gain
            elif name == "non-push":
                res = non_push_optimal(kernel, costs)
                tables[name], gains[name] = res.policy, res.values.gain
            elif name == "unicast-priority":
                t = unicast_priority_table(pp, grid)
                tables[name], gains[name] = t, _policy_gain(kernel, costs, t)
            else:
                raise ValueError(
                    f"unknown policy name {name!r}; known: {BASELINE_NAMES}"
                )
        for name in policies:
            children = master.spawn(replications)
            ratios = []
            ses = []
            child_seeds = []
            for child in children:
                child_seed = int(child.generate_state(1, np.uint64)[0])
                child_seeds.append(child_seed)
                cfg = SimConfig(
                    policy=tables[name],
                    horizon=horizon,
                    warmup=warmup,
                    seed=child_seed,
                )
                m = simulate(cfg, pp, grid, popularity)
                ratios.append(m.macro_ratio)
                ses.append(m.macro_ratio_se)
            if replications == 1:
                ratio, se = ratios[0], ses[0]
            else:
                ratio = float(np.mean(ratios))
                se = float(np.std(ratios, ddof=1) / np.sqrt(replications))
            rows.append(
                SweepRow(
                    policy=name,
                    p_u=float(p_u),
                    p_c=pp.content_replace_prob,
                    a_bar=pp.mean_arrival,
                    ratio_sim=ratio,
                    se=se,
                    ratio_solver=gains[name],
                    horizon=horizon,
                    seed=child_seeds[0],
                )
            )
    return rows
