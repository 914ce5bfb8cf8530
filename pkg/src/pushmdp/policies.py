"""Baseline policies and structural analysis of solved policies.

Two baselines frame the optimal push policy: the optimal non-push policy
(same solver, push removed from every action set) and the greedy
unicast-priority rule (serve any affordable request now, push only on idle
periods).  The threshold analyzer checks the sleep/act structure of a policy
along the battery axis.
"""
from __future__ import annotations

from dataclasses import dataclass

from .model import (
    Action,
    DistanceGrid,
    SystemParams,
    SystemState,
    index_state,
    state_index,
)
from .solver import PolicyIterationResult, PolicyTable, policy_iteration
from .transition import TransitionKernel

__all__ = [
    "non_push_optimal",
    "unicast_priority",
    "unicast_priority_table",
    "SliceThreshold",
    "ThresholdProfile",
    "threshold_profile",
    "format_threshold_grid",
]


def non_push_optimal(
    kernel: TransitionKernel,
    costs,
    ref_state: int = 0,
    max_iter: int = 1000,
) -> PolicyIterationResult:
    """Optimal policy over {Sleep, Unicast} only, with its gain and values.

    Runs the same policy iteration on the kernel with push rows dropped; the
    result is feasible in the unrestricted system as well.
    """
    restricted = kernel.restrict({Action.SLEEP, Action.UNICAST})
    return policy_iteration(restricted, costs, ref_state=ref_state, max_iter=max_iter)


def unicast_priority(
    state: SystemState, grid: DistanceGrid, params: SystemParams
) -> Action:
    """Greedy rule: serve an affordable request, else push on idle, else sleep.

    A pending request the battery cannot cover yields Sleep (the macro cell
    takes it); push never preempts a pending request.
    """
    if state.request >= 1 and grid.unicast_costs[state.request] <= state.battery:
        return Action.UNICAST
    if (
        state.request == 0
        and grid.push_cost <= state.battery
        and state.pushed < params.num_contents
    ):
        return Action.PUSH
    return Action.SLEEP


def unicast_priority_table(params: SystemParams, grid: DistanceGrid) -> PolicyTable:
    """Greedy rule tabulated over the whole state space."""
    actions = [0] * params.num_states
    for s in range(params.num_states):
        actions[s] = int(unicast_priority(index_state(s, params), grid, params))
    return PolicyTable(actions)


@dataclass(frozen=True)
class SliceThreshold:
    """Sleep/act structure of one (request, pushed) slice along the battery.

    ``threshold`` is the smallest battery level at which the policy acts, or
    None when the slice sleeps at every level; ``clean`` says whether the
    slice acts at *every* level at or above the threshold.
    """

    threshold: int | None
    clean: bool
    actions: tuple[Action, ...]


@dataclass(frozen=True)
class ThresholdProfile:
    """Per-(request, pushed) sleep thresholds of a policy."""

    slices: dict[tuple[int, int], SliceThreshold]

    @property
    def all_clean(self) -> bool:
        return all(s.clean for s in self.slices.values())

    @property
    def violations(self) -> tuple[tuple[int, int], ...]:
        return tuple(k for k, s in sorted(self.slices.items()) if not s.clean)


def threshold_profile(policy: PolicyTable, params: SystemParams) -> ThresholdProfile:
    """Classify every (request, pushed) slice of a policy.

    A slice is clean when it sleeps strictly below some battery level and
    acts at that level and above (the all-sleep slice is clean with no
    threshold).
    """
    slices = {}
    for q in range(params.num_rings + 1):
        for c in range(params.num_contents + 1):
            acts = tuple(
                policy[state_index(SystemState(e, q, c), params)]
                for e in range(params.battery_levels + 1)
            )
            awake = [e for e, a in enumerate(acts) if a != Action.SLEEP]
            if not awake:
                slices[(q, c)] = SliceThreshold(None, True, acts)
                continue
            t = awake[0]
            clean = len(awake) == params.battery_levels + 1 - t
            slices[(q, c)] = SliceThreshold(t, clean, acts)
    return ThresholdProfile(slices=slices)


def format_threshold_grid(
    policy: PolicyTable, params: SystemParams, pushed: int
) -> str:
    """One slice of a policy as a text grid: rows battery, columns request."""
    header = "E\\Q " + " ".join(str(q) for q in range(params.num_rings + 1))
    lines = [header]
    for e in range(params.battery_levels + 1):
        cells = []
        for q in range(params.num_rings + 1):
            a = policy[state_index(SystemState(e, q, pushed), params)]
            cells.append(a.name[0])
        lines.append(f"{e:3d} " + " ".join(cells))
    return "\n".join(lines) + "\n"
