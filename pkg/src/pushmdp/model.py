"""System model for an energy-harvesting small cell with proactive content push.

The cell is slotted: each period the base station observes its state, then
sleeps, unicasts a requested content to one user, or pushes (multicasts) the
most popular content users do not hold yet.  Battery charge, transmit energies
and harvest arrivals are discretized to integer energy units; user positions
are discretized to distance rings whose unicast costs are forced to exactly
1..M units by radio calibration.  The state is the triple

    (battery level E, request ring Q, pushed-content count C)

with E in 0..E_max, Q in 0..M (0 means no serviceable request) and C in 0..N.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "Action",
    "SystemParams",
    "RadioParams",
    "DistanceGrid",
    "SystemState",
    "CalibrationError",
    "zipf_pmf",
    "cumulative_popularity",
    "cumulative_popularity_table",
    "required_power",
    "calibrate_radio",
    "battery_update",
    "feasible_actions",
    "energy_spend",
    "stage_cost",
    "state_index",
    "index_state",
    "state_table",
    "stage_cost_table",
    "feasible_table",
]


class Action(IntEnum):
    """Per-period base station decision."""

    SLEEP = 0
    UNICAST = 1
    PUSH = 2


NUM_ACTIONS = len(Action)


class CalibrationError(ValueError):
    """Radio constants admit no distance grid with integer unicast costs."""


@dataclass(frozen=True)
class SystemParams:
    """Content, traffic and battery parameters.

    Energies are counted in integer multiples of ``energy_unit`` joules;
    ``battery_levels`` is the capacity in units, so the physical capacity is
    ``battery_levels * energy_unit``.  ``mean_arrival`` is the mean harvested
    units per period (Poisson arrivals in the default setup).
    """

    num_contents: int
    zipf_skew: float
    content_replace_prob: float
    request_prob: float
    period_length: float
    battery_levels: int
    num_rings: int
    energy_unit: float
    mean_arrival: float

    def __post_init__(self):
        # num_contents == 0 / battery_levels == 0 are degenerate but legal:
        # they exercise boundary handling in the kernel builder.
        if self.num_contents < 0:
            raise ValueError("num_contents must be >= 0")
        if self.zipf_skew < 0:
            raise ValueError("zipf_skew must be >= 0")
        for name in ("content_replace_prob", "request_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.period_length <= 0:
            raise ValueError("period_length must be > 0")
        if self.battery_levels < 0:
            raise ValueError("battery_levels must be >= 0")
        if self.num_rings < 1:
            raise ValueError("num_rings must be >= 1")
        if self.energy_unit <= 0:
            raise ValueError("energy_unit must be > 0")
        if self.mean_arrival <= 0:
            raise ValueError("mean_arrival must be > 0")

    @property
    def battery_capacity(self) -> float:
        """Physical battery capacity in joules."""
        return self.battery_levels * self.energy_unit

    @property
    def num_states(self) -> int:
        return (self.battery_levels + 1) * (self.num_rings + 1) * (self.num_contents + 1)


@dataclass(frozen=True)
class RadioParams:
    """Link-budget constants for the unit-gain AWGN channel model."""

    bandwidth: float               # Hz
    pathloss_const: float          # linear gain at unit distance
    pathloss_exp: float            # >= 2
    noise_plus_interference: float # watts
    min_rate: float                # bits/s guaranteed per transmission
    cell_radius: float             # meters
    edge_power: float              # watts needed at the cell edge

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        if self.pathloss_const <= 0:
            raise ValueError("pathloss_const must be > 0")
        if self.pathloss_exp < 2:
            raise ValueError("pathloss_exp must be >= 2")
        if self.noise_plus_interference <= 0:
            raise ValueError("noise_plus_interference must be > 0")
        if self.min_rate <= 0:
            raise ValueError("min_rate must be > 0")
        if self.cell_radius <= 0:
            raise ValueError("cell_radius must be > 0")
        if self.edge_power <= 0:
            raise ValueError("edge_power must be > 0")


@dataclass(frozen=True)
class DistanceGrid:
    """Calibrated ring boundaries, unicast costs and ring probabilities.

    ``distances[m-1]`` is the outer radius of ring m (1-based, the last one
    equals the cell radius); ``unicast_costs[i]`` is the energy in units for
    serving ring i, with ``unicast_costs[0] == 0``; ``ring_probs[m-1]`` is the
    probability that a uniformly placed user falls in ring m (ring area over
    cell area).
    """

    distances: tuple[float, ...]
    unicast_costs: tuple[int, ...]
    ring_probs: tuple[float, ...]

    def __post_init__(self):
        m = len(self.distances)
        if m < 1:
            raise ValueError("at least one ring required")
        if len(self.ring_probs) != m or len(self.unicast_costs) != m + 1:
            raise ValueError("inconsistent grid lengths")
        if self.unicast_costs[0] != 0:
            raise ValueError("unicast_costs[0] must be 0")
        if any(b <= a for a, b in zip(self.distances, self.distances[1:])):
            raise ValueError("distances must be strictly increasing")
        if any(b <= a for a, b in zip(self.unicast_costs, self.unicast_costs[1:])):
            raise ValueError("unicast_costs must be strictly increasing")
        if any(q < 0 for q in self.ring_probs):
            raise ValueError("ring_probs must be non-negative")
        if abs(math.fsum(self.ring_probs) - 1.0) > 1e-12:
            raise ValueError("ring_probs must sum to 1")

    @property
    def num_rings(self) -> int:
        return len(self.distances)

    @property
    def push_cost(self) -> int:
        """Units spent by a push, i.e. the edge-ring unicast cost."""
        return self.unicast_costs[-1]


@dataclass(frozen=True)
class SystemState:
    """One slotted-system state: battery units, request ring, pushed count."""

    battery: int
    request: int
    pushed: int

    def __post_init__(self):
        if self.battery < 0 or self.request < 0 or self.pushed < 0:
            raise ValueError("state components must be non-negative")


def zipf_pmf(params: SystemParams) -> np.ndarray:
    """Rank-based popularity f_i = i^-v / sum_j j^-v over the content catalog."""
    n = params.num_contents
    if n == 0:
        return np.zeros(0)
    ranks = np.arange(1, n + 1, dtype=float)
    weights = ranks ** (-params.zipf_skew)
    return weights / weights.sum()


def cumulative_popularity(popularity: np.ndarray, pushed: int) -> float:
    """Probability that a requested content ranks within the top ``pushed``.

    Exactly 0.0 for an empty pushed set and exactly 1.0 when everything is
    pushed (the popularity vector is normalized by construction).
    """
    n = len(popularity)
    if not 0 <= pushed <= n:
        raise ValueError(f"pushed count {pushed} outside [0, {n}]")
    if pushed == n:
        return 1.0
    if pushed == 0:
        return 0.0
    return float(np.sum(popularity[:pushed]))


def cumulative_popularity_table(popularity: np.ndarray) -> np.ndarray:
    """Vector of cumulative_popularity values for pushed = 0..N."""
    n = len(popularity)
    table = np.empty(n + 1)
    table[0] = 0.0
    if n:
        table[1:] = np.cumsum(popularity)
    table[n] = 1.0
    return table


def _snr_gap(radio: RadioParams) -> float:
    return 2.0 ** (radio.min_rate / radio.bandwidth) - 1.0


def required_power(d: float, radio: RadioParams) -> float:
    """Transmit power (W) sustaining the minimum rate at distance d.

    Inverts the unit-gain AWGN rate equation
    r = W * log2(1 + P * beta * d^-alpha / (sigma^2 + I)) at r = r_0:

        P(d) = (2^(r_0/W) - 1) * (sigma^2 + I) * d^alpha / beta
    """
    if not 0.0 < d <= radio.cell_radius:
        raise ValueError(f"distance {d} outside (0, {radio.cell_radius}]")
    return (
        _snr_gap(radio)
        * radio.noise_plus_interference
        * d ** radio.pathloss_exp
        / radio.pathloss_const
    )


def _snap_noise_to_edge_power(radio: RadioParams) -> RadioParams:
    # Nudge the solved noise constant by ulps so the float round trip through
    # required_power reproduces the edge power bit-exactly when possible.
    target = radio.edge_power
    best = radio
    best_err = abs(required_power(radio.cell_radius, radio) - target)
    if best_err == 0.0:
        return radio
    for direction in (math.inf, -math.inf):
        sigma = radio.noise_plus_interference
        for _ in range(8):
            sigma = math.nextafter(sigma, direction)
            cand = replace(radio, noise_plus_interference=sigma)
            err = abs(required_power(radio.cell_radius, cand) - target)
            if err == 0.0:
                return cand
            if err < best_err:
                best, best_err = cand, err
    return best


def calibrate_radio(
    params: SystemParams,
    radio: RadioParams,
    free: str = "noise",
) -> tuple[SystemParams, RadioParams, DistanceGrid]:
    """Pin the free radio constant so the edge ring costs exactly M units.

    Two conditions tie the constants together: an edge transmission runs at
    ``radio.edge_power`` and costs ``num_rings`` energy units per period.
    With ``free="noise"`` the noise-plus-interference power is solved from the
    edge-power equation and the energy unit follows as
    ``edge_power * period / num_rings``; with ``free="energy_unit"`` the given
    noise constant is kept, the edge power is re-derived from it and the
    energy unit is solved from that.  Either choice yields the same integer
    cost grid l_i = i.  Ring boundaries d_i are then root-found from
    required_power(d_i) * period = i * energy_unit (closed form
    d_i = R * (i/M)^(1/alpha) for the pure power law used here).

    Returns updated copies of (params, radio) plus the distance grid.
    """
    m = params.num_rings
    radius = radio.cell_radius
    period = params.period_length

    if free == "noise":
        unit = radio.edge_power * period / m
        sigma2 = radio.edge_power * radio.pathloss_const / (
            _snr_gap(radio) * radius ** radio.pathloss_exp
        )
        radio = _snap_noise_to_edge_power(
            replace(radio, noise_plus_interference=sigma2)
        )
    elif free == "energy_unit":
        edge = required_power(radius, radio)
        unit = edge * period / m
        radio = replace(radio, edge_power=edge)
    else:
        raise ValueError(f"free must be 'noise' or 'energy_unit', got {free!r}")

    params = replace(params, energy_unit=unit)

    distances = []
    lo = radius * 1e-12
    for i in range(1, m):
        target = i * unit

        def gap(d, target=target):
            return required_power(d, radio) * period - target

        if gap(lo) >= 0.0 or gap(radius) <= 0.0:
            raise CalibrationError(
                f"no distance in (0, {radius}] costs {i} units; "
                "radio parameters are inconsistent"
            )
        distances.append(
            brentq(gap, lo, radius, xtol=1e-13, rtol=4 * np.finfo(float).eps)
        )
    distances.append(radius)

    ring_probs = []
    prev = 0.0
    for d in distances:
        ring_probs.append((d * d - prev * prev) / (radius * radius))
        prev = d
    grid = DistanceGrid(
        distances=tuple(distances),
        unicast_costs=tuple(range(m + 1)),
        ring_probs=tuple(ring_probs),
    )
    return params, radio, grid


def battery_update(level: int, spent: int, arrived: int, capacity: int) -> int:
    """Next battery level, min(capacity, level - spent + arrived)."""
    if not 0 <= spent <= level:
        raise ValueError(f"cannot spend {spent} units from a battery at {level}")
    if arrived < 0:
        raise ValueError("arrived units must be >= 0")
    return min(capacity, level - spent + arrived)


def energy_spend(action: Action, request: int, grid: DistanceGrid) -> int:
    """Units consumed by an action taken against request ring ``request``."""
    if action == Action.SLEEP:
        return 0
    if action == Action.UNICAST:
        return grid.unicast_costs[request]
    return grid.push_cost


def feasible_actions(
    state: SystemState, grid: DistanceGrid, params: SystemParams
) -> tuple[Action, ...]:
    """Actions available in ``state``.

    Sleep is always allowed.  Unicast needs an actual request whose ring cost
    fits in the battery.  Push must cover the cell edge and needs an un-pushed
    content left.
    """
    actions = [Action.SLEEP]
    if state.request >= 1 and grid.unicast_costs[state.request] <= state.battery:
        actions.append(Action.UNICAST)
    if grid.push_cost <= state.battery and state.pushed < params.num_contents:
        actions.append(Action.PUSH)
    return tuple(actions)


def stage_cost(state: SystemState, action: Action) -> int:
    """1 when a pending request is handed to the macro cell, else 0."""
    return 1 if state.request > 0 and action != Action.UNICAST else 0


def state_index(state: SystemState, params: SystemParams) -> int:
    """Flat index of a state; (0, 0, 0) maps to 0."""
    if state.battery > params.battery_levels:
        raise ValueError(f"battery {state.battery} exceeds {params.battery_levels}")
    if state.request > params.num_rings:
        raise ValueError(f"request {state.request} exceeds {params.num_rings}")
    if state.pushed > params.num_contents:
        raise ValueError(f"pushed {state.pushed} exceeds {params.num_contents}")
    m1 = params.num_rings + 1
    n1 = params.num_contents + 1
    return (state.battery * m1 + state.request) * n1 + state.pushed


def index_state(index: int, params: SystemParams) -> SystemState:
    """Inverse of state_index."""
    if not 0 <= index < params.num_states:
        raise IndexError(f"state index {index} outside [0, {params.num_states})")
    m1 = params.num_rings + 1
    n1 = params.num_contents + 1
    pushed = index % n1
    rest = index // n1
    return SystemState(battery=rest // m1, request=rest % m1, pushed=pushed)


def state_table(params: SystemParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Battery, request and pushed components for every state index."""
    shape = (params.battery_levels + 1, params.num_rings + 1, params.num_contents + 1)
    e, q, c = np.indices(shape)
    return e.ravel(), q.ravel(), c.ravel()


def stage_cost_table(params: SystemParams) -> np.ndarray:
    """(num_actions, num_states) array of stage costs."""
    _, q, _ = state_table(params)
    costs = np.zeros((NUM_ACTIONS, params.num_states))
    pending = (q > 0).astype(float)
    costs[Action.SLEEP] = pending
    costs[Action.PUSH] = pending
    return costs


def feasible_table(params: SystemParams, grid: DistanceGrid) -> np.ndarray:
    """(num_actions, num_states) boolean feasibility mask."""
    e, q, c = state_table(params)
    costs = np.asarray(grid.unicast_costs)
    mask = np.zeros((NUM_ACTIONS, params.num_states), dtype=bool)
    mask[Action.SLEEP] = True
    mask[Action.UNICAST] = (q >= 1) & (costs[q] <= e)
    mask[Action.PUSH] = (grid.push_cost <= e) & (c < params.num_contents)
    return mask
