"""Command-line front end.

Subcommands: ``plan`` runs anytime planning on a scenario (optionally a
seeded batch) and writes solution/profile/convergence artifacts plus a batch
summary; ``force`` evaluates the tissue force profile of a stored path;
``fit`` recovers piercing force and distributed friction from straight
insertion measurements.

Values printed to stdout use 17 significant digits so doubles round-trip;
batch summary lines round to 3 significant digits for reading. Exit codes:
0 success (planning found at least one solution), 2 planning found none,
1 malformed input.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .environment import ScenarioError, load_scenario_file
from .forces import (
    DEFAULT_TISSUE,
    TissueParams,
    fit_straight_insertion,
    internal_force_profile,
    read_insertion_csv,
    write_profile_csv,
)
from .kinematics import path_from_dict
from .planner import PlannerConfig, ano_plan, write_convergence_csv, write_solution_json

THREADS_ENV = "NEEDLE_PLANNER_THREADS"

# solution files carry these alongside the bare path fields
_SOLUTION_EXTRAS = ("bottleneck_cost", "length_m", "seed")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract reserves 2 for
    'planner found no solution', so remap usage errors to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _fmt3(v: float) -> str:
    return f"{v:.3g}"


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunOutcome:
    seed: int
    solved: bool
    bottleneck_cost: float
    length: float
    iterations: int
    wall_time: float
    # (wall_time, cost-in-optimizer-metric) per improvement
    improvements: tuple


def _run_one(args) -> RunOutcome:
    scenario_path, out_dir, seed, budget, optimizer = args
    scenario = load_scenario_file(scenario_path)
    config = PlannerConfig(rng_seed=seed, cost_mode=optimizer)
    best, log = ano_plan(scenario, config, budget)
    write_convergence_csv(log, os.path.join(out_dir, f"convergence_{seed}.csv"))
    if best is None:
        return RunOutcome(seed, False, math.inf, math.inf, 0, 0.0, ())
    write_solution_json(best, seed, os.path.join(out_dir, f"solution_{seed}.json"))
    if best.profile is not None:
        write_profile_csv(best.profile, os.path.join(out_dir, f"profile_{seed}.csv"))
    return RunOutcome(
        seed=seed,
        solved=True,
        bottleneck_cost=best.bottleneck_cost,
        length=best.length,
        iterations=best.iterations,
        wall_time=best.wall_time,
        improvements=tuple((e.wall_time, e.cost) for e in log.entries),
    )


def _quantile(sorted_vals: list, q: float) -> float:
    """Linear-interpolation quantile that tolerates +inf runs (no inf - inf)."""
    pos = q * (len(sorted_vals) - 1)
    lo, hi = math.floor(pos), math.ceil(pos)
    if sorted_vals[lo] == sorted_vals[hi]:
        return sorted_vals[lo]
    return sorted_vals[lo] + (pos - lo) * (sorted_vals[hi] - sorted_vals[lo])


@dataclass(frozen=True)
class BatchSummary:
    """Cross-run statistics of an anytime batch.

    The cost curve holds the 25/50/75 percentiles of each run's
    piecewise-constant anytime cost, evaluated at every time any run
    improved; runs with no solution yet count as +inf, so early quantiles
    can be infinite (serialized as null).
    """

    optimizer: str
    outcomes: tuple

    def curve(self) -> list[tuple[float, float, float, float]]:
        times = sorted({t for o in self.outcomes for t, _ in o.improvements})
        rows = []
        for t in times:
            costs = []
            for o in self.outcomes:
                cost = math.inf
                for tt, c in o.improvements:
                    if tt <= t:
                        cost = c
                    else:
                        break
                costs.append(cost)
            costs.sort()
            rows.append((t, _quantile(costs, 0.25), _quantile(costs, 0.5), _quantile(costs, 0.75)))
        return rows

    def to_dict(self) -> dict:
        def jf(v: float):
            return v if math.isfinite(v) else None

        return {
            "optimizer": self.optimizer,
            "run_count": len(self.outcomes),
            "runs": [
                {
                    "seed": o.seed,
                    "solved": o.solved,
                    "bottleneck_cost": jf(o.bottleneck_cost),
                    "length_m": jf(o.length),
                    "iterations": o.iterations,
                    "wall_time_s": o.wall_time,
                }
                for o in self.outcomes
            ],
            "cost_curve": [
                {
                    "wall_time_s": t,
                    "cost_q25": jf(q25),
                    "cost_median": jf(q50),
                    "cost_q75": jf(q75),
                }
                for t, q25, q50, q75 in self.curve()
            ],
        }


def _thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        cap = int(raw)
    except ValueError:
        raise ScenarioError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ScenarioError(f"{THREADS_ENV} must be >= 1, got {cap}")
    return cap


def cmd_plan(args) -> int:
    scenario_path = os.path.abspath(args.scenario)
    # validate before any run spins up so input errors exit 1 immediately
    load_scenario_file(scenario_path)
    out_dir = os.path.abspath(args.out)
    os.makedirs(out_dir, exist_ok=True)
    seeds = [args.seed + i for i in range(args.runs)]
    jobs = [(scenario_path, out_dir, seed, args.time, args.optimizer) for seed in seeds]
    workers = min(len(jobs), _thread_cap())
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(job) for job in jobs]
    outcomes.sort(key=lambda o: o.seed)

    for o in outcomes:
        if o.solved:
            print(
                f"seed {o.seed}: cost {_fmt3(o.bottleneck_cost)} N/m, "
                f"length {_fmt3(o.length)} m, {len(o.improvements)} improvement(s), "
                f"{_fmt3(o.wall_time)} s"
            )
        else:
            print(f"seed {o.seed}: no solution within {_fmt3(args.time)} s")

    if args.runs > 1:
        summary = BatchSummary(optimizer=args.optimizer, outcomes=tuple(outcomes))
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary.to_dict(), fh, indent=2)
            fh.write("\n")
        solved = [o for o in outcomes if o.solved]
        if solved:
            costs = sorted(o.bottleneck_cost for o in solved)
            print(
                f"solved {len(solved)}/{len(outcomes)} runs; "
                f"median final cost {_fmt3(_quantile(costs, 0.5))} N/m"
            )
        else:
            print(f"solved 0/{len(outcomes)} runs")

    return 0 if any(o.solved for o in outcomes) else 2


# ---------------------------------------------------------------------------
# force
# ---------------------------------------------------------------------------

def _read_path_file(path):
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        for key in _SOLUTION_EXTRAS:
            doc.pop(key, None)
    return path_from_dict(doc)


def _parse_tissue_flag(raw: str) -> TissueParams:
    parts = raw.split(",")
    if len(parts) != 3:
        raise ValueError(f"--tissue expects c,mu,fp, got {raw!r}")
    c, mu, fp = (float(p) for p in parts)
    return TissueParams(c_friction=c, mu=mu, piercing_force=fp)


def cmd_force(args) -> int:
    path = _read_path_file(args.path)
    tissue = DEFAULT_TISSUE if args.tissue is None else _parse_tissue_flag(args.tissue)
    profile = internal_force_profile(path, tissue, args.resolution)
    print(f"insertion_force_N = {_fmt(profile.insertion_force)}")
    print(f"max_tissue_force_N_per_m = {_fmt(profile.max_tissue_force)}")
    print(f"argmax_s_m = {_fmt(profile.argmax_s)}")
    if args.out is not None:
        write_profile_csv(profile, args.out)
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    rows = read_insertion_csv(args.data)
    if len(rows) < 3:
        raise ValueError(f"fit needs at least 3 data rows, got {len(rows)}")
    result = fit_straight_insertion(rows)
    print(f"piercing_force_N = {_fmt(result.piercing_force)}")
    print(f"c_friction_N_per_m = {_fmt(result.c_friction)}")
    print(f"r_squared = {_fmt(result.r_squared)}")
    if result.piercing_force_negative:
        print("warning: fitted piercing force is negative", file=sys.stderr)
    with open(args.out, "w") as fh:
        json.dump(
            {
                "piercing_force_N": result.piercing_force,
                "c_friction_N_per_m": result.c_friction,
                "r_squared": result.r_squared,
                "piercing_force_negative": result.piercing_force_negative,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="needleplan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="run the anytime planner on a scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--time", type=float, required=True, help="per-run budget in seconds")
    p.add_argument("--seed", type=int, default=0, help="first RNG seed (default 0)")
    p.add_argument("--runs", type=int, default=1, help="batch size; seeds are seed..seed+runs-1")
    p.add_argument("--optimizer", choices=("force", "length"), default="force")
    p.add_argument("--out", default=".", help="output directory (default .)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("force", help="force profile of a stored needle path")
    p.add_argument("--path", required=True, help="path or solution JSON file")
    p.add_argument("--tissue", default=None, metavar="C,MU,FP", help="override tissue parameters")
    p.add_argument("--resolution", type=float, default=0.001, help="sample spacing in m (default 0.001)")
    p.add_argument("--out", default=None, help="also write the profile CSV here")
    p.set_defaults(func=cmd_force)

    p = sub.add_parser("fit", help="fit F_p and C to straight-insertion data")
    p.add_argument("--data", required=True, help="CSV with header depth_m,force_N")
    p.add_argument("--out", default="fit.json", help="fit report file (default fit.json)")
    p.set_defaults(func=cmd_fit)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "time", None) is not None and not args.time > 0.0:
        print("error: --time must be > 0", file=sys.stderr)
        return 1
    if getattr(args, "runs", None) is not None and args.runs < 1:
        print("error: --runs must be >= 1", file=sys.stderr)
        return 1
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be >= 0", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ScenarioError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
