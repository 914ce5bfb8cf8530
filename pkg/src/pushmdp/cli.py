"""Command line front end: configuration, experiment runs, artifact files.

All outputs are plain delimited text with the generating configuration and
seed embedded as comment headers, so any run is reproducible from its own
artifacts.  Config files are flat ``key = value`` lines with ``#`` comments;
the same keys can be overridden per run with ``--set KEY=VALUE``.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .model import (
    RadioParams,
    SystemParams,
    calibrate_radio,
    index_state,
    stage_cost_table,
    zipf_pmf,
)
from .policies import (
    format_threshold_grid,
    non_push_optimal,
    threshold_profile,
    unicast_priority_table,
)
from .sim import (
    BASELINE_NAMES,
    SimConfig,
    SimulationError,
    simulate,
    sweep,
)
from .solver import (
    ConvergenceError,
    SingularPolicyError,
    bellman_residual,
    brute_force_oracle,
    policy_evaluation,
    policy_iteration,
    relative_value_iteration,
)
from .transition import ArrivalPmf, build_kernel, validate_kernel

__all__ = ["main", "load_settings", "build_scenario", "ConfigError", "DEFAULTS"]


class ConfigError(ValueError):
    """Bad configuration input (unknown key, unparsable value)."""


_INT_KEYS = {"n_contents", "e_max", "m_rings", "horizon", "warmup", "replications"}
_FLOAT_KEYS = {
    "zipf_skew",
    "p_c",
    "p_u",
    "a_bar",
    "alpha",
    "beta_db",
    "r0_over_w",
    "radius_m",
    "pt_edge_w",
    "t_p_s",
}
_STR_KEYS = {"pu_grid"}

DEFAULTS = {
    "n_contents": 20,
    "zipf_skew": 0.5,
    "p_c": 0.3,
    "p_u": 0.7,
    "e_max": 15,
    "m_rings": 4,
    "a_bar": 0.8,
    "alpha": 2.0,
    "beta_db": 10.0,
    "r0_over_w": 1.0,
    "radius_m": 50.0,
    "pt_edge_w": 1.0,
    "t_p_s": 1.0,
    "horizon": 1_000_000,
    "warmup": 10_000,
    "replications": 1,
    "pu_grid": "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0",
}


def _coerce(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key '{key}' got unparsable value {raw!r}") from None


def parse_config_file(path: str) -> dict:
    """Read flat key = value lines; '#' starts a comment."""
    settings = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in text.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
            settings[key] = _coerce(key, raw)
    return settings


def load_settings(config_path: str | None, overrides: list[str]) -> dict:
    """Defaults, then the config file, then --set overrides."""
    settings = dict(DEFAULTS)
    if config_path is not None:
        settings.update(parse_config_file(config_path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key '{key}'")
        settings[key] = _coerce(key, raw)
    return settings


def parse_pu_grid(raw: str) -> tuple[float, ...]:
    try:
        grid = tuple(float(tok) for tok in raw.split(",") if tok.strip())
    except ValueError:
        raise ConfigError(f"config key 'pu_grid' got unparsable value {raw!r}") from None
    if not grid:
        raise ConfigError("config key 'pu_grid' is empty")
    return grid


def build_scenario(settings: dict):
    """Instantiate and calibrate the system from a settings mapping."""
    params = SystemParams(
        num_contents=settings["n_contents"],
        zipf_skew=settings["zipf_skew"],
        content_replace_prob=settings["p_c"],
        request_prob=settings["p_u"],
        period_length=settings["t_p_s"],
        battery_levels=settings["e_max"],
        num_rings=settings["m_rings"],
        energy_unit=1.0,  # placeholder; calibration overwrites it
        mean_arrival=settings["a_bar"],
    )
    radio = RadioParams(
        bandwidth=1.0,
        pathloss_const=10.0 ** (settings["beta_db"] / 10.0),
        pathloss_exp=settings["alpha"],
        noise_plus_interference=1.0,  # placeholder; calibration overwrites it
        min_rate=settings["r0_over_w"],
        cell_radius=settings["radius_m"],
        edge_power=settings["pt_edge_w"],
    )
    params, radio, grid = calibrate_radio(params, radio, free="noise")
    popularity = zipf_pmf(params)
    return params, radio, grid, popularity


def _build_all(settings: dict):
    params, radio, grid, popularity = build_scenario(settings)
    arrival = ArrivalPmf.poisson(params.mean_arrival, params.battery_levels)
    kernel = build_kernel(params, grid, popularity, arrival)
    costs = stage_cost_table(params)
    return params, radio, grid, popularity, kernel, costs


def _header(command: str, settings: dict, seed: int) -> list[str]:
    lines = [f"# pushmdp {command}"]
    lines += [f"# {key} = {settings[key]}" for key in sorted(settings)]
    lines.append(f"# seed = {seed}")
    return lines


def _write(out_dir: str, name: str, lines: list[str]) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def cmd_solve(settings: dict, out_dir: str, seed: int) -> int:
    params, _, grid, _, kernel, costs = _build_all(settings)
    result = policy_iteration(kernel, costs)
    lines = _header("solve", settings, seed)
    lines.append("E Q C action h")
    for s in range(params.num_states):
        st = index_state(s, params)
        act = result.policy[s]
        lines.append(
            f"{st.battery} {st.request} {st.pushed} {act.name} "
            f"{result.values.h[s]:.17g}"
        )
    lines.append(f"lambda {result.values.gain:.17g}")
    lines += [
        f"# iter {j + 1} lambda {g:.17g}" for j, g in enumerate(result.trace)
    ]
    _write(out_dir, "solution.txt", lines)

    width = max(2, len(str(params.num_contents)))
    for c in range(params.num_contents + 1):
        grid_lines = _header("solve", settings, seed)
        grid_lines.append(f"# pushed count C = {c}")
        grid_lines.append(format_threshold_grid(result.policy, params, c).rstrip("\n"))
        _write(out_dir, f"threshold_C{c:0{width}d}.txt", grid_lines)

    print(f"lambda {result.values.gain:.12g} after {len(result.trace)} iterations")
    print(f"wrote solution.txt and {params.num_contents + 1} threshold grids to {out_dir}")
    return 0


def cmd_simulate(settings: dict, out_dir: str, seed: int, policy_name: str) -> int:
    params, _, grid, popularity = build_scenario(settings)
    config = SimConfig(
        policy=policy_name,
        horizon=settings["horizon"],
        seed=seed,
        warmup=settings["warmup"],
    )
    metrics = simulate(config, params, grid, popularity)
    lines = _header("simulate", settings, seed)
    for field in (
        "total_periods",
        "measured_periods",
        "requests_generated",
        "macro_handled",
        "cache_hits",
        "energy_overflow_units",
    ):
        lines.append(f"# {field} = {getattr(metrics, field)}")
    lines.append("policy p_u p_c a_bar ratio se K seed")
    lines.append(
        f"{policy_name} {params.request_prob:.17g} {params.content_replace_prob:.17g} "
        f"{params.mean_arrival:.17g} {metrics.macro_ratio:.17g} "
        f"{metrics.macro_ratio_se:.17g} {metrics.measured_periods} {seed}"
    )
    _write(out_dir, "metrics.txt", lines)
    print(
        f"{policy_name}: macro ratio {metrics.macro_ratio:.6f} "
        f"(s.e. {metrics.macro_ratio_se:.2g}) over {metrics.measured_periods} periods"
    )
    return 0


def cmd_sweep(settings: dict, out_dir: str, seed: int) -> int:
    params, _, grid, popularity = build_scenario(settings)
    pu_grid = parse_pu_grid(settings["pu_grid"])
    rows = sweep(
        params,
        grid,
        popularity,
        pu_grid,
        replications=settings["replications"],
        horizon=settings["horizon"],
        warmup=settings["warmup"],
        seed=seed,
    )
    lines = _header("sweep", settings, seed)
    lines.append("policy p_u p_c a_bar ratio_sim se ratio_solver horizon seed")
    for r in rows:
        lines.append(
            f"{r.policy} {r.p_u:.17g} {r.p_c:.17g} {r.a_bar:.17g} "
            f"{r.ratio_sim:.17g} {r.se:.17g} {r.ratio_solver:.17g} "
            f"{r.horizon} {r.seed}"
        )
    _write(out_dir, "sweep.txt", lines)

    summary = _header("sweep", settings, seed)
    summary.append("p_u reduction_solver reduction_sim")
    by_point = {(r.policy, r.p_u): r for r in rows}
    for p_u in pu_grid:
        push = by_point.get(("optimal-push", p_u))
        nopush = by_point.get(("non-push", p_u))
        if push is None or nopush is None:
            continue
        red_solver = (
            (nopush.ratio_solver - push.ratio_solver) / nopush.ratio_solver
            if nopush.ratio_solver > 0
            else float("nan")
        )
        red_sim = (
            (nopush.ratio_sim - push.ratio_sim) / nopush.ratio_sim
            if nopush.ratio_sim > 0
            else float("nan")
        )
        summary.append(f"{p_u:.17g} {red_solver:.17g} {red_sim:.17g}")
        print(
            f"p_u {p_u:.2f}: push reduces macro ratio by "
            f"{100 * red_solver:.1f}% (solver) / {100 * red_sim:.1f}% (sim)"
        )
    _write(out_dir, "summary.txt", summary)
    return 0


def cmd_validate(settings: dict, out_dir: str, seed: int, dump_kernel: bool) -> int:
    params, _, grid, popularity, kernel, costs = _build_all(settings)
    checks: list[tuple[str, bool, str]] = []

    report = validate_kernel(kernel)
    checks.append(
        (
            "kernel-rows",
            report.max_row_sum_deviation < 1e-12 and report.negative_entries == 0,
            f"max row-sum deviation {report.max_row_sum_deviation:.3g}, "
            f"{report.negative_entries} negative entries, "
            f"{report.strong_components} strong components, "
            f"{len(report.never_entered)} never-entered states",
        )
    )

    result = policy_iteration(kernel, costs)
    trace = result.trace
    monotone = all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
    checks.append(
        ("gain-trace", monotone, f"{len(trace)} iterations, final {trace[-1]:.9g}")
    )
    residual = bellman_residual(result.values, kernel, costs)
    checks.append(("bellman-residual", residual <= 1e-9, f"residual {residual:.3g}"))
    checks.append(
        (
            "reference-value",
            result.values.h[result.values.ref_state] == 0.0,
            f"h[{result.values.ref_state}] = {result.values.h[result.values.ref_state]}",
        )
    )

    profile = threshold_profile(result.policy, params)
    checks.append(
        (
            "threshold-structure",
            profile.all_clean,
            f"{len(profile.violations)} non-threshold slices {profile.violations[:5]}",
        )
    )

    nonpush = non_push_optimal(kernel, costs)
    greedy = unicast_priority_table(params, grid)
    try:
        greedy_gain = policy_evaluation(greedy, kernel, costs).gain
    except SingularPolicyError:
        greedy_gain = relative_value_iteration(kernel, costs, policy=greedy).gain
    named = [
        ("optimal-push", result.policy, result.values.gain),
        ("non-push", nonpush.policy, nonpush.values.gain),
        ("unicast-priority", greedy, greedy_gain),
    ]
    children = np.random.SeedSequence(seed).spawn(len(named))
    for (name, table, gain), child in zip(named, children):
        child_seed = int(child.generate_state(1, np.uint64)[0])
        config = SimConfig(
            policy=table,
            horizon=settings["horizon"],
            seed=child_seed,
            warmup=settings["warmup"],
        )
        metrics = simulate(config, params, grid, popularity)
        gap = abs(gain - metrics.macro_ratio)
        limit = 3.0 * metrics.macro_ratio_se
        checks.append(
            (
                f"solver-vs-sim[{name}]",
                bool(gap <= limit),
                f"|{gain:.6f} - {metrics.macro_ratio:.6f}| = {gap:.3g} "
                f"vs 3 s.e. = {limit:.3g}",
            )
        )

    lines = _header("validate", settings, seed)
    all_ok = True
    for name, ok, detail in checks:
        status = "PASS" if ok else "FAIL"
        all_ok &= ok
        lines.append(f"{status} {name}: {detail}")
        print(f"{status} {name}: {detail}")
    _write(out_dir, "validate.txt", lines)
    if dump_kernel:
        _write(out_dir, "kernel.txt", [kernel.to_text().rstrip("\n")])
    return 0 if all_ok else 1


def cmd_oracle(settings: dict, out_dir: str, seed: int) -> int:
    params, _, grid, popularity, kernel, costs = _build_all(settings)
    result = policy_iteration(kernel, costs)
    try:
        oracle = brute_force_oracle(kernel, costs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    diff = abs(result.values.gain - oracle.gain)
    lines = _header("oracle", settings, seed)
    lines.append(f"lambda_policy_iteration {result.values.gain:.17g}")
    lines.append(f"lambda_oracle {oracle.gain:.17g}")
    lines.append(f"difference {diff:.17g}")
    lines.append(f"num_policies {oracle.num_policies}")
    _write(out_dir, "oracle.txt", lines)
    print(
        f"policy iteration {result.values.gain:.12g} vs oracle {oracle.gain:.12g} "
        f"over {oracle.num_policies} policies (diff {diff:.3g})"
    )
    return 0 if diff <= 1e-9 else 1


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="flat key = value file")
    parser.add_argument("--out", metavar="DIR", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=0, metavar="U64")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        dest="overrides",
        help="override one config key (repeatable)",
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pushmdp",
        description="Average-cost planning and simulation for an "
        "energy-harvesting small cell that proactively pushes content.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_solve = sub.add_parser("solve", help="solve the decision process, dump policy")
    p_sim = sub.add_parser("simulate", help="simulate one policy")
    p_sim.add_argument(
        "--policy", choices=BASELINE_NAMES, default="optimal-push"
    )
    p_sweep = sub.add_parser("sweep", help="ratio curves over a p_u grid")
    p_val = sub.add_parser("validate", help="run structural and agreement checks")
    p_val.add_argument("--dump-kernel", action="store_true")
    p_oracle = sub.add_parser("oracle", help="brute-force check on a tiny instance")
    for p in (p_solve, p_sim, p_sweep, p_val, p_oracle):
        _add_common(p)

    args = parser.parse_args(argv)
    try:
        settings = load_settings(args.config, args.overrides)
        if args.command == "solve":
            return cmd_solve(settings, args.out, args.seed)
        if args.command == "simulate":
            return cmd_simulate(settings, args.out, args.seed, args.policy)
        if args.command == "sweep":
            return cmd_sweep(settings, args.out, args.seed)
        if args.command == "validate":
            return cmd_validate(settings, args.out, args.seed, args.dump_kernel)
        if args.command == "oracle":
            return cmd_oracle(settings, args.out, args.seed)
        raise AssertionError(args.command)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        # CalibrationError lands here too: bad radio constants are a config problem
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
