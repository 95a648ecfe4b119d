"""Command line interface.

Thin synchronous shell over the library: machine-readable output goes to
stdout (or ``--out``), diagnostics go to stderr. Exit codes: 0 success,
1 usage error, 2 validation error, 3 runtime or protocol error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .canonical import dumps
from .costmodel import normalized_latency, schedule_cost, speedup
from .errors import CheckpointError, EcadError, ProtocolError, ValidationError
from .nsga2 import GaParams
from .orchestrator import (
    load_history,
    overall_frontier,
    resume_run,
    select_by_budget,
    start_run,
    export_frontier,
)
from .schedule import (
    CachingSchedule,
    save_population,
    structural_topology,
    unpack_bits,
)
from .seeding import build_initial_population, load_strategy_mix
from .rng import derive_seed, make_rng
from .topology import load_topology


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; the contract reserves 2 for
    validation errors, so route usage problems through an exception instead."""

    def error(self, message):
        raise UsageError(message)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n", "utf-8")


def _read_schedule(path: str, topology=None) -> CachingSchedule:
    text = Path(path).read_text("utf-8")
    if topology is None:
        topology = structural_topology(json.loads(text))
    return CachingSchedule.deserialize(text, topology)


# -- subcommand handlers --------------------------------------------------------


def cmd_topology(args) -> int:
    topo = load_topology(args.topology)
    full = schedule_cost(CachingSchedule.new_full_recompute(topo))
    _emit(
        dumps(
            {
                "name": topo.name,
                "hash": topo.topology_hash,
                "steps": topo.steps,
                "cells_per_step": topo.cells_per_step,
                "total_cells": topo.total_cells,
                "groups": [
                    {
                        "name": g.name,
                        "blocks": g.block_count,
                        "components": [
                            {"name": c.name, "mac_weight": c.mac_weight} for c in g.components
                        ],
                    }
                    for g in topo.block_groups
                ],
                "full_recompute_tmacs": full.total_tmacs,
            }
        ),
        args.out,
    )
    return 0


def cmd_seed(args) -> int:
    topo = load_topology(args.topology)
    mix = load_strategy_mix(args.strategy_mix) if args.strategy_mix else None
    rng = make_rng(derive_seed(args.seed, "seeding"))
    candidates = build_initial_population(topo, mix, args.population, rng)
    schedules = [c.schedule for c in candidates]
    if args.out:
        save_population(args.out, schedules)
        print(f"wrote {len(schedules)} schedules to {args.out}", file=sys.stderr)
    else:
        _emit("[" + ",".join(s.serialize() for s in schedules) + "]", None)
    return 0


_RUN_CONFIG_KEYS = {
    "topology": str,
    "evaluator": str,
    "toy_seed": int,
    "worker_cmd": str,
    "workers": int,
    "timeout_s": float,
    "retries": int,
    "prompt_set": str,
    "images_per_prompt": int,
    "population": int,
    "generations": int,
    "crossover_prob": float,
    "crossover_points": int,
    "mutation_prob": float,
    "seed": int,
    "strategy_mix": str,
}

_RUN_DEFAULTS = {
    "topology": "toy",
    "evaluator": "toy",
    "toy_seed": 0,
    "worker_cmd": None,
    "workers": None,
    "timeout_s": 30.0,
    "retries": 2,
    "prompt_set": "default",
    "images_per_prompt": 1,
    "population": GaParams.population_size,
    "generations": GaParams.generations,
    "crossover_prob": GaParams.crossover_prob,
    "crossover_points": GaParams.crossover_points,
    "mutation_prob": GaParams.mutation_prob,
    "seed": GaParams.rng_seed,
    "strategy_mix": None,
}


def _resolve_run_settings(args) -> dict:
    """Flags > config file > defaults."""
    overlay = {}
    if args.config:
        try:
            overlay = json.loads(Path(args.config).read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(overlay, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = set(overlay) - set(_RUN_CONFIG_KEYS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for key, default in _RUN_DEFAULTS.items():
        flag_value = getattr(args, key)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in overlay:
            resolved[key] = _RUN_CONFIG_KEYS[key](overlay[key])
        else:
            resolved[key] = default
    if resolved["workers"] is None:
        env = os.environ.get("ECAD_WORKERS")
        resolved["workers"] = int(env) if env else 1
    return resolved


def _evaluator_config(s: dict) -> dict:
    if s["evaluator"] == "toy":
        return {"kind": "toy", "model_seed": s["toy_seed"]}
    if s["evaluator"] == "external":
        if not s["worker_cmd"]:
            raise UsageError("--worker-cmd is required with --evaluator external")
        return {
            "kind": "external",
            "worker_cmd": s["worker_cmd"],
            "workers": s["workers"],
            "timeout_s": s["timeout_s"],
            "retries": s["retries"],
            "prompt_set": s["prompt_set"],
            "images_per_prompt": s["images_per_prompt"],
        }
    raise UsageError(f"unknown evaluator {s['evaluator']!r}")


def cmd_run(args) -> int:
    if args.resume:
        results = resume_run(args.resume)
        run_dir = Path(args.resume)
        if not results:
            print("run already complete; nothing to resume", file=sys.stderr)
    else:
        if not args.run_dir:
            raise UsageError("either --run-dir (fresh run) or --resume is required")
        s = _resolve_run_settings(args)
        topo = load_topology(s["topology"])
        params = GaParams(
            population_size=s["population"],
            generations=s["generations"],
            crossover_prob=s["crossover_prob"],
            crossover_points=s["crossover_points"],
            mutation_prob=s["mutation_prob"],
            rng_seed=s["seed"],
        )
        mix = load_strategy_mix(s["strategy_mix"]) if s["strategy_mix"] else None
        results = start_run(args.run_dir, topo, params, _evaluator_config(s), mix)
        run_dir = Path(args.run_dir)

    _, records = load_history(run_dir)
    front = overall_frontier(records)
    _emit(
        dumps(
            {
                "run_dir": str(run_dir),
                "generations_completed": records[-1].generation,
                "generations_run": len(results),
                "evaluated_unique": len({c.id for r in records for c in r.union}),
                "frontier_size": len(front),
            }
        ),
        None,
    )
    return 0


def cmd_frontier(args) -> int:
    manifest, records = load_history(args.run)
    csv_text, _ = export_frontier(manifest, records, csv_path=args.csv, json_path=args.json)
    wrote_any = False
    for path in (args.csv, args.json):
        if path:
            print(f"wrote {path}", file=sys.stderr)
            wrote_any = True
    if args.plot or args.hypervolume_plot:
        from . import report  # matplotlib import deferred to the reporting path

        if args.plot:
            report.render_frontier_plot(manifest, records, args.plot)
            print(f"wrote {args.plot}", file=sys.stderr)
        if args.hypervolume_plot:
            report.render_hypervolume_plot(manifest, records, args.hypervolume_plot)
            print(f"wrote {args.hypervolume_plot}", file=sys.stderr)
        wrote_any = True
    if not wrote_any:
        sys.stdout.write(csv_text)
    return 0


def cmd_select(args) -> int:
    manifest, records = load_history(args.run)
    point = select_by_budget(overall_frontier(records), args.budget_tmacs)
    topology = manifest.topology()
    schedule = CachingSchedule(topology, unpack_bits(point.bits, topology.total_cells))
    if args.out:
        Path(args.out).write_text(schedule.serialize() + "\n", "utf-8")
        _emit(dumps(point.to_dict()), None)
    else:
        _emit(schedule.serialize(), None)
        print(
            f"selected {point.id[:12]} cost={point.cost_tmacs} TMACs "
            f"loss={point.quality_loss}",
            file=sys.stderr,
        )
    return 0


def cmd_rescale(args) -> int:
    schedule = _read_schedule(args.schedule)
    target = args.to_steps
    if target < 1:
        raise ValidationError(f"--to-steps must be >= 1, got {target}")
    while schedule.topology.steps < target:
        schedule = schedule.upscale_steps()
    while schedule.topology.steps > target:
        schedule = schedule.downscale_steps()
    if schedule.topology.steps != target:
        raise ValidationError(
            f"cannot reach {target} steps from {args.schedule} by doubling/halving"
        )
    _emit(schedule.serialize(), args.out)
    return 0


def cmd_cost(args) -> int:
    topo = load_topology(args.topology)
    if args.schedule:
        schedule = _read_schedule(args.schedule, topo)
    else:
        schedule = CachingSchedule.new_full_recompute(topo)
    breakdown = schedule_cost(schedule)
    lines = [dumps(breakdown.to_dict()), ""]
    lines.append(f"topology          {topo.name} ({topo.steps} steps)")
    lines.append(f"total             {breakdown.total_tmacs:.6f} TMACs")
    lines.append(f"  non-block       {breakdown.overhead_mmacs / 1e6:.6f} TMACs")
    for kind in sorted(breakdown.per_kind_mmacs):
        lines.append(f"  {kind:<16}{breakdown.per_kind_mmacs[kind] / 1e6:.6f} TMACs")
    _emit("\n".join(lines), args.out)
    return 0


def cmd_normalize_latency(args) -> int:
    latency = normalized_latency(args.cached_other, args.unaccel_other, args.unaccel_ours)
    out = {"normalized_latency_ms": latency, "speedup": speedup(args.unaccel_ours, latency)}
    _emit(dumps(out), args.out)
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="ecad",
        description="Evolutionary search for Pareto-optimal caching schedules "
        "in iterative denoising transformer inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topology", help="inspect a model topology")
    p.add_argument("topology", help="built-in name (pixart-like, flux-like, toy) or JSON path")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_topology)

    p = sub.add_parser("seed", help="build an initial schedule population")
    p.add_argument("--topology", default="toy", help="topology name or path")
    p.add_argument(
        "--population",
        type=int,
        default=GaParams.population_size,
        help=f"number of schedules (default {GaParams.population_size})",
    )
    p.add_argument("--seed", type=int, default=0, help="RNG seed for random strategies")
    p.add_argument("--strategy-mix", help="JSON file listing strategies and counts")
    p.add_argument("--out", help="population file (JSON array of schedule objects)")
    p.set_defaults(func=cmd_seed)

    p = sub.add_parser("run", help="run or resume an optimization")
    p.add_argument("--run-dir", help="directory for a fresh run")
    p.add_argument("--resume", metavar="RUN_DIR", help="resume a checkpointed run")
    p.add_argument("--config", help="JSON config file (flags > file > defaults)")
    p.add_argument("--topology", help="topology name or path (default toy)")
    p.add_argument("--evaluator", choices=["toy", "external"], help="default toy")
    p.add_argument("--toy-seed", type=int, help="toy evaluator model seed (default 0)")
    p.add_argument("--worker-cmd", help="external worker argv, shell style")
    p.add_argument("--workers", type=int, help="worker count (env ECAD_WORKERS, then 1)")
    p.add_argument("--timeout-s", type=float, help="per-request timeout (default 30)")
    p.add_argument("--retries", type=int, help="retries per failing request (default 2)")
    p.add_argument("--prompt-set", help="evaluator prompt set (default 'default')")
    p.add_argument("--images-per-prompt", type=int, help="default 1")
    p.add_argument("--population", type=int, help=f"default {GaParams.population_size}")
    p.add_argument("--generations", type=int, help=f"default {GaParams.generations}")
    p.add_argument("--crossover-prob", type=float, help=f"default {GaParams.crossover_prob}")
    p.add_argument("--crossover-points", type=int, help=f"default {GaParams.crossover_points}")
    p.add_argument("--mutation-prob", type=float, help=f"default {GaParams.mutation_prob}")
    p.add_argument("--seed", type=int, help="run RNG seed (default 0)")
    p.add_argument("--strategy-mix", help="JSON seeding mix (default heuristic mix)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("frontier", help="export Pareto frontiers from a run")
    p.add_argument("--run", required=True, metavar="RUN_DIR", help="run directory to read")
    p.add_argument("--csv", help="write CSV here")
    p.add_argument("--json", help="write JSON here")
    p.add_argument("--plot", help="render the frontier figure (PNG) here")
    p.add_argument("--hypervolume-plot", help="render the progress figure (PNG) here")
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("select", help="pick the best schedule within a cost budget")
    p.add_argument("--run", required=True, metavar="RUN_DIR", help="run directory to read")
    p.add_argument("--budget-tmacs", type=float, required=True, help="cost ceiling in TMACs")
    p.add_argument("--out", help="write the selected schedule JSON here")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("rescale", help="double/halve a schedule's step count")
    p.add_argument("schedule", help="schedule JSON file")
    p.add_argument(
        "--to-steps", type=int, required=True, help="target step count (reached by 2x hops)"
    )
    p.add_argument("--out", help="write the rescaled schedule here")
    p.set_defaults(func=cmd_rescale)

    p = sub.add_parser("cost", help="cost a schedule under a topology")
    p.add_argument("--topology", required=True, help="topology name or path")
    p.add_argument("--schedule", help="schedule JSON file (default: full recompute)")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser(
        "normalize-latency", help="project a latency measured elsewhere onto our baseline"
    )
    p.add_argument("--cached-other", type=float, required=True, help="ms, their hardware")
    p.add_argument("--unaccel-other", type=float, required=True, help="ms, their hardware")
    p.add_argument("--unaccel-ours", type=float, required=True, help="ms, our hardware")
    p.add_argument("--out", help="write the JSON here instead of stdout")
    p.set_defaults(func=cmd_normalize_latency)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ValidationError, CheckpointError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except (ProtocolError, EcadError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
