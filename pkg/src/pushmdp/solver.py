"""Exact average-cost solvers for the sleep/unicast/push decision process.

Policy iteration with linear-system policy evaluation is the workhorse; a
damped relative value iteration covers policies whose evaluation system is
singular (reducible chains), and a brute-force policy enumerator serves as an
independent oracle on tiny instances.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import NUM_ACTIONS, Action
from .transition import TransitionKernel

__all__ = [
    "ValueSolution",
    "PolicyTable",
    "SingularPolicyError",
    "ConvergenceError",
    "policy_evaluation",
    "policy_improvement",
    "policy_iteration",
    "PolicyIterationResult",
    "relative_value_iteration",
    "bellman_residual",
    "brute_force_oracle",
    "OracleResult",
]


class SingularPolicyError(np.linalg.LinAlgError):
    """Evaluation system is singular: the policy's chain is not unichain."""


class ConvergenceError(RuntimeError):
    """Iteration cap reached before the stopping rule fired."""


@dataclass(frozen=True)
class ValueSolution:
    """Gain (long-run average cost per period) and differential values."""

    gain: float
    h: np.ndarray
    ref_state: int

    def __post_init__(self):
        if not 0 <= self.ref_state < len(self.h):
            raise ValueError("ref_state outside the state space")
        if self.h[self.ref_state] != 0.0:
            raise ValueError("h must vanish at the reference state")


class PolicyTable:
    """Immutable per-state action assignment."""

    __slots__ = ("actions",)

    def __init__(self, actions):
        arr = np.asarray(actions, dtype=np.int64).copy()
        if arr.ndim != 1:
            raise ValueError("policy must be one action per state")
        if arr.size and (arr.min() < 0 or arr.max() >= NUM_ACTIONS):
            raise ValueError("policy contains an unknown action code")
        arr.setflags(write=False)
        object.__setattr__(self, "actions", arr)

    def __setattr__(self, name, value):
        raise AttributeError("PolicyTable is immutable")

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, state: int) -> Action:
        return Action(int(self.actions[state]))

    def __eq__(self, other):
        if not isinstance(other, PolicyTable):
            return NotImplemented
        return np.array_equal(self.actions, other.actions)

    def __hash__(self):
        return hash(self.actions.tobytes())

    def __repr__(self):
        return f"PolicyTable({self.actions.tolist()!r})"

    @classmethod
    def all_sleep(cls, num_states: int) -> "PolicyTable":
        return cls(np.zeros(num_states, dtype=np.int64))

    def validate(self, kernel: TransitionKernel) -> None:
        """Raise if any entry is infeasible in its state."""
        for s, a in enumerate(self.actions):
            if (s, int(a)) not in kernel.rows:
                raise ValueError(
                    f"policy assigns infeasible action {Action(int(a)).name} "
                    f"to state {s}"
                )


def _feasible_mask(kernel: TransitionKernel) -> np.ndarray:
    mask = np.zeros((NUM_ACTIONS, kernel.num_states), dtype=bool)
    for s, a in kernel.rows:
        mask[a, s] = True
    return mask


def _policy_matrix(kernel: TransitionKernel, policy: PolicyTable) -> np.ndarray:
    """Dense transition matrix of the chain induced by a fixed policy."""
    n = kernel.num_states
    p = np.zeros((n, n))
    for a in range(NUM_ACTIONS):
        states = np.flatnonzero(policy.actions == a)
        if states.size:
            p[states] = kernel.action_matrix(Action(a))[states].toarray()
    return p


def policy_evaluation(
    policy: PolicyTable,
    kernel: TransitionKernel,
    costs: np.ndarray,
    ref_state: int = 0,
) -> ValueSolution:
    """Solve the gain/differential-value equations of a fixed policy.

    Unknowns are (gain, h); equations are
    gain + h(x) = g(x, u(x)) + sum_y p(y|x, u(x)) h(y) for every state plus
    the normalization h(ref_state) = 0, solved as one dense square system.
    A singular or numerically inconsistent system signals a reducible chain
    and raises SingularPolicyError so the caller can fall back to value
    iteration.
    """
    policy.validate(kernel)
    n = kernel.num_states
    p_pi = _policy_matrix(kernel, policy)
    g_pi = costs[policy.actions, np.arange(n)]

    a = np.zeros((n + 1, n + 1))
    a[:n, 0] = 1.0
    a[:n, 1:] = np.eye(n) - p_pi
    a[n, 1 + ref_state] = 1.0
    b = np.concatenate([g_pi, [0.0]])
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularPolicyError(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularPolicyError("evaluation produced non-finite values")
    residual = np.max(np.abs(a @ x - b))
    if residual > 1e-8 * max(1.0, np.max(np.abs(x))):
        raise SingularPolicyError(
            f"evaluation residual {residual:.3g} indicates a singular system"
        )
    h = x[1:]
    h = h - h[ref_state]
    return ValueSolution(gain=float(x[0]), h=h, ref_state=ref_state)


def _q_values(kernel, costs, h):
    """Action-value table g + P h with +inf at infeasible pairs."""
    n = kernel.num_states
    q = np.full((NUM_ACTIONS, n), np.inf)
    mask = _feasible_mask(kernel)
    for a in range(NUM_ACTIONS):
        rows = mask[a]
        if rows.any():
            vals = costs[a] + kernel.action_matrix(Action(a)) @ h
            q[a, rows] = vals[rows]
    return q


def policy_improvement(
    values: ValueSolution, kernel: TransitionKernel, costs: np.ndarray
) -> PolicyTable:
    """Per-state minimizer of g + P h; ties go to the lowest action code."""
    q = _q_values(kernel, costs, values.h)
    return PolicyTable(np.argmin(q, axis=0))


class PolicyIterationResult(NamedTuple):
    policy: PolicyTable
    values: ValueSolution
    trace: tuple[float, ...]


def policy_iteration(
    kernel: TransitionKernel,
    costs: np.ndarray,
    init_policy: PolicyTable | None = None,
    ref_state: int = 0,
    gain_tol: float = 1e-12,
    max_iter: int = 1000,
) -> PolicyIterationResult:
    """Howard policy iteration from the all-sleep policy.

    Alternates evaluation and improvement until the policy repeats or the
    gain stops improving by more than ``gain_tol`` (guards against cycling
    among co-optimal policies).  Evaluation falls back to value iteration
    restricted to the incumbent policy when its linear system is singular.
    """
    if init_policy is None:
        init_policy = PolicyTable.all_sleep(kernel.num_states)
    policy = init_policy
    trace: list[float] = []
    prev_gain = None
    for _ in range(max_iter):
        try:
            sol = policy_evaluation(policy, kernel, costs, ref_state)
        except SingularPolicyError:
            sol = relative_value_iteration(
                kernel, costs, tol=1e-10, max_iter=500_000,
                ref_state=ref_state, policy=policy,
            )
        trace.append(sol.gain)
        improved = policy_improvement(sol, kernel, costs)
        if improved == policy:
            return PolicyIterationResult(policy, sol, tuple(trace))
        if prev_gain is not None and abs(prev_gain - sol.gain) < gain_tol:
            return PolicyIterationResult(policy, sol, tuple(trace))
        prev_gain = sol.gain
        policy = improved
    raise ConvergenceError(f"no fixed point within {max_iter} iterations")


def relative_value_iteration(
    kernel: TransitionKernel,
    costs: np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 500_000,
    ref_state: int = 0,
    policy: PolicyTable | None = None,
    damping: float = 0.5,
    span_trace: list | None = None,
) -> ValueSolution:
    """Damped successive approximation of the average-cost equations.

    With ``policy`` given the operator applies that fixed action per state
    (policy evaluation by iteration); otherwise it minimizes over feasible
    actions.  Stops when the span of the one-step differences w - h drops
    below ``tol``; the gain estimate is the midpoint of the span bounds, so
    the Bellman residual at return is at most tol/2.  Damping keeps the
    iteration convergent on periodic chains.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if policy is not None:
        policy.validate(kernel)
    n = kernel.num_states
    h = np.zeros(n)
    idx = np.arange(n)
    for _ in range(max_iter):
        q = _q_values(kernel, costs, h)
        w = q[policy.actions, idx] if policy is not None else q.min(axis=0)
        delta = w - h
        lo, hi = float(delta.min()), float(delta.max())
        if span_trace is not None:
            span_trace.append(hi - lo)
        if hi - lo < tol:
            h_out = w - w[ref_state]
            h_out = h_out - h_out[ref_state]
            return ValueSolution(gain=0.5 * (lo + hi), h=h_out, ref_state=ref_state)
        h = (1.0 - damping) * h + damping * w
        h = h - h[ref_state]
    raise ConvergenceError(f"span above {tol} after {max_iter} iterations")


def bellman_residual(
    values: ValueSolution,
    kernel: TransitionKernel,
    costs: np.ndarray,
    policy: PolicyTable | None = None,
) -> float:
    """max_x |gain + h(x) - min_u [g(x,u) + sum_y p(y|x,u) h(y)]|.

    With ``policy`` given the inner minimization is replaced by that policy's
    action, measuring evaluation (not optimality) error.
    """
    q = _q_values(kernel, costs, values.h)
    if policy is not None:
        w = q[policy.actions, np.arange(kernel.num_states)]
    else:
        w = q.min(axis=0)
    return float(np.max(np.abs(values.gain + values.h - w)))


class OracleResult(NamedTuple):
    policy: PolicyTable
    gain: float
    num_policies: int


def _stationary_power(p_sel: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Damped power iteration for a batch of chains; rows converge to pi."""
    b, n, _ = p_sel.shape
    pi = np.full((b, n), 1.0 / n)
    for _ in range(max_iter):
        nxt = 0.5 * pi + 0.5 * np.einsum("bi,bij->bj", pi, p_sel)
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    raise ConvergenceError("stationary distribution power iteration stalled")


def _stationary_batch(p_sel: np.ndarray, tol: float) -> np.ndarray:
    """Stationary distributions of a batch of row-stochastic matrices.

    Direct solve of pi (P - I) = 0 with a normalization row; falls back to
    damped power iteration for batch members whose system misbehaves
    (reducible chains make it singular).
    """
    b, n, _ = p_sel.shape
    a = np.swapaxes(p_sel, 1, 2) - np.eye(n)
    a[:, n - 1, :] = 1.0
    rhs = np.zeros((b, n, 1))
    rhs[:, n - 1, 0] = 1.0
    try:
        pi = np.linalg.solve(a, rhs)[..., 0]
    except np.linalg.LinAlgError:
        return _stationary_power(p_sel, tol, max_iter=200_000)
    check = np.einsum("bi,bij->bj", pi, p_sel) - pi
    bad = (
        (np.min(pi, axis=1) < -1e-9)
        | (np.max(np.abs(check), axis=1) > 1e-10)
        | ~np.all(np.isfinite(pi), axis=1)
    )
    if bad.any():
        pi[bad] = _stationary_power(p_sel[bad], tol, max_iter=200_000)
    return pi


def brute_force_oracle(
    kernel: TransitionKernel,
    costs: np.ndarray,
    max_states: int = 64,
    max_policies: int = 1_000_000,
    tol: float = 1e-12,
) -> OracleResult:
    """Minimum gain over every feasible deterministic stationary policy.

    Enumerates policies in mixed-radix order over per-state feasible action
    lists, computes each policy's stationary distribution and takes the
    expected stage cost under it.  Assumes each policy's chain is unichain
    (the caller samples instances that guarantee it); guarded to tiny
    instances.
    """
    n = kernel.num_states
    if n > max_states:
        raise ValueError(f"{n} states exceed the oracle guard of {max_states}")
    feas = [
        np.array([a for a in range(NUM_ACTIONS) if (s, a) in kernel.rows])
        for s in range(n)
    ]
    radix = np.array([len(f) for f in feas])
    total = int(np.prod(radix.astype(object)))
    if total > max_policies:
        raise ValueError(f"{total} policies exceed the oracle guard of {max_policies}")

    p_all = np.stack(
        [kernel.action_matrix(Action(a)).toarray() for a in range(NUM_ACTIONS)]
    )
    chunk = max(16, int(5_000_000 // (n * n)))
    best_gain = np.inf
    best_code = -1
    state_idx = np.arange(n)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        rem = codes.copy()
        policy_mat = np.empty((len(codes), n), dtype=np.int64)
        for s in range(n):
            policy_mat[:, s] = feas[s][rem % radix[s]]
            rem //= radix[s]
        p_sel = p_all[policy_mat, state_idx[None, :], :]
        g_sel = costs[policy_mat, state_idx[None, :]]
        pi = _stationary_batch(p_sel, tol)
        gains = np.einsum("bs,bs->b", pi, g_sel)
        k = int(np.argmin(gains))
        if gains[k] < best_gain:
            best_gain = float(gains[k])
            best_code = int(codes[k])

    rem = best_code
    best_actions = np.empty(n, dtype=np.int64)
    for s in range(n):
        best_actions[s] = feas[s][rem % radix[s]]
        rem //= radix[s]
    return OracleResult(
        policy=PolicyTable(best_actions), gain=best_gain, num_policies=total
    )
