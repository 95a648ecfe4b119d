"""Run lifecycle: persistence, resume, frontier analysis, budget selection.

A run directory contains:

- ``manifest.json``    immutable run configuration (topology, GA params, evaluator)
- ``history.jsonl``    one deterministic record per generation, append-only
- ``checkpoint.json``  population + RNG state after the last completed generation
- ``timings.jsonl``    wall-time sidecar; deliberately outside determinism checks

Two runs with the same manifest produce byte-identical ``history.jsonl``, and a
resumed run continues that byte stream exactly where the checkpoint left off.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .canonical import dumps
from .costmodel import schedule_cost
from .errors import (
    CheckpointError,
    CorruptCheckpointError,
    ManifestMismatchError,
    ScheduleFormatError,
    ValidationError,
)
from .nsga2 import (
    Candidate,
    Evaluator,
    GaParams,
    GenerationResult,
    ObjectiveVector,
    dominates,
    run as nsga2_run,
)
from .protocol import ExternalEvaluator
from .rng import RNG_ALGORITHM, derive_seed, get_state, make_rng, set_state
from .schedule import CachingSchedule, pack_bits, unpack_bits
from .seeding import SeedStrategy, build_initial_population
from .topology import ModelTopology
from .toydit import ToyEvaluator, ToyModelConfig

RUN_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
HISTORY_NAME = "history.jsonl"
CHECKPOINT_NAME = "checkpoint.json"
TIMINGS_NAME = "timings.jsonl"


# -- records -------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateRecord:
    id: str
    bits: str  # base64-packed
    origin: str
    cost_tmacs: float
    quality_loss: float

    @classmethod
    def from_candidate(cls, c: Candidate) -> "CandidateRecord":
        obj = c.require_objectives()
        return cls(
            id=c.id,
            bits=pack_bits(c.schedule.bits),
            origin=c.origin,
            cost_tmacs=obj.cost_tmacs,
            quality_loss=obj.quality_loss,
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "bits": self.bits,
            "origin": self.origin,
            "cost_tmacs": self.cost_tmacs,
            "quality_loss": self.quality_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateRecord":
        return cls(
            id=d["id"],
            bits=d["bits"],
            origin=d["origin"],
            cost_tmacs=float(d["cost_tmacs"]),
            quality_loss=float(d["quality_loss"]),
        )

    def objectives(self) -> ObjectiveVector:
        return ObjectiveVector(cost_tmacs=self.cost_tmacs, quality_loss=self.quality_loss)

    def to_candidate(self, topology: ModelTopology) -> Candidate:
        schedule = CachingSchedule(topology, unpack_bits(self.bits, topology.total_cells))
        return Candidate(schedule, objectives=self.objectives(), origin=self.origin)


@dataclass
class GenerationRecord:
    generation: int
    union: list[CandidateRecord]
    population_ids: list[str]
    rng_digest: str
    wall_time_s: float | None = None  # sidecar only; never serialized into history

    def to_history_line(self) -> str:
        return dumps(
            {
                "format_version": RUN_FORMAT_VERSION,
                "generation": self.generation,
                "rng_digest": self.rng_digest,
                "population": self.population_ids,
                "union": [c.to_dict() for c in self.union],
            }
        )

    @classmethod
    def from_history_line(cls, line: str) -> "GenerationRecord":
        try:
            obj = json.loads(line)
            return cls(
                generation=int(obj["generation"]),
                union=[CandidateRecord.from_dict(d) for d in obj["union"]],
                population_ids=list(obj["population"]),
                rng_digest=obj["rng_digest"],
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ScheduleFormatError(f"bad history line: {exc!r}") from exc

    @classmethod
    def from_result(cls, result: GenerationResult) -> "GenerationRecord":
        return cls(
            generation=result.generation,
            union=[CandidateRecord.from_candidate(c) for c in result.union],
            population_ids=[c.id for c in result.population],
            rng_digest=result.rng_digest,
        )


@dataclass(frozen=True)
class RunManifest:
    topology_config: dict
    topology_hash: str
    ga_params: dict
    evaluator: dict
    seeding: dict
    rng_algorithm: str = RNG_ALGORITHM
    code_version: str = __version__
    format_version: int = RUN_FORMAT_VERSION

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "topology_config": self.topology_config,
            "topology_hash": self.topology_hash,
            "ga_params": self.ga_params,
            "evaluator": self.evaluator,
            "seeding": self.seeding,
            "rng_algorithm": self.rng_algorithm,
            "code_version": self.code_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        try:
            return cls(
                topology_config=d["topology_config"],
                topology_hash=d["topology_hash"],
                ga_params=d["ga_params"],
                evaluator=d["evaluator"],
                seeding=d["seeding"],
                rng_algorithm=d["rng_algorithm"],
                code_version=d["code_version"],
                format_version=d["format_version"],
            )
        except (KeyError, TypeError) as exc:
            raise CorruptCheckpointError(f"bad manifest: {exc!r}") from exc

    def save(self, run_dir: Path) -> None:
        _atomic_write(run_dir / MANIFEST_NAME, dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, run_dir: Path) -> "RunManifest":
        path = run_dir / MANIFEST_NAME
        if not path.exists():
            raise ValidationError(f"{run_dir} has no {MANIFEST_NAME}; not a run directory")
        try:
            return cls.from_dict(json.loads(path.read_text("utf-8")))
        except json.JSONDecodeError as exc:
            raise CorruptCheckpointError(f"manifest is not valid JSON: {exc}") from exc

    def topology(self) -> ModelTopology:
        topo = ModelTopology.from_config_dict(self.topology_config)
        if topo.topology_hash != self.topology_hash:
            raise CorruptCheckpointError("manifest topology hash does not match its config")
        return topo


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, "utf-8")
    os.replace(tmp, path)


# -- evaluator factory ------------------------------------------------------------


def make_evaluator(topology: ModelTopology, cfg: dict, run_seed: int) -> Evaluator:
    kind = cfg.get("kind")
    if kind == "toy":
        return ToyEvaluator(topology, ToyModelConfig(seed=int(cfg.get("model_seed", 0))))
    if kind == "external":
        return ExternalEvaluator(
            topology,
            worker_cmd=cfg["worker_cmd"],
            workers=int(cfg.get("workers", 1)),
            timeout_s=float(cfg.get("timeout_s", 30.0)),
            retries=int(cfg.get("retries", 2)),
            prompt_set=cfg.get("prompt_set", "default"),
            images_per_prompt=int(cfg.get("images_per_prompt", 1)),
            run_seed=run_seed,
        )
    raise ValidationError(f"unknown evaluator kind {kind!r}")


def external_evaluate(
    schedules: Sequence[CachingSchedule],
    topology: ModelTopology,
    worker_cmd: str | Sequence[str],
    workers: int = 1,
    timeout_s: float = 30.0,
    retries: int = 2,
    run_seed: int = 0,
    prompt_set: str = "default",
    images_per_prompt: int = 1,
) -> list[ObjectiveVector]:
    """One-shot batch evaluation through a temporary worker pool."""
    with ExternalEvaluator(
        topology,
        worker_cmd,
        workers=workers,
        timeout_s=timeout_s,
        retries=retries,
        prompt_set=prompt_set,
        images_per_prompt=images_per_prompt,
        run_seed=run_seed,
    ) as ev:
        return ev.evaluate(schedules)


# -- run lifecycle -------------------------------------------------------------------


class _RunPersister:
    """Appends history/timings and rewrites the checkpoint per generation."""

    def __init__(self, run_dir: Path):
        self.run_dir = run_dir
        self._mark = time.monotonic()

    def __call__(self, result: GenerationResult, rng: np.random.Generator) -> None:
        now = time.monotonic()
        record = GenerationRecord.from_result(result)
        record.wall_time_s = now - self._mark
        self._mark = now
        with open(self.run_dir / HISTORY_NAME, "a", encoding="utf-8") as f:
            f.write(record.to_history_line() + "\n")
        with open(self.run_dir / TIMINGS_NAME, "a", encoding="utf-8") as f:
            f.write(
                json.dumps({"generation": record.generation, "wall_time_s": record.wall_time_s})
                + "\n"
            )
        checkpoint = {
            "format_version": RUN_FORMAT_VERSION,
            "generation": result.generation,
            "rng_state": _jsonable_rng_state(get_state(rng)),
            "population": [CandidateRecord.from_candidate(c).to_dict() for c in result.population],
        }
        _atomic_write(self.run_dir / CHECKPOINT_NAME, dumps(checkpoint) + "\n")


def _jsonable_rng_state(state: dict) -> dict:
    # PCG64 state holds plain ints; keep the structure as-is for JSON
    return json.loads(json.dumps(state))


def start_run(
    run_dir: str | Path,
    topology: ModelTopology,
    params: GaParams,
    evaluator_cfg: dict,
    strategy_mix: Sequence[SeedStrategy] | None = None,
) -> list[GenerationResult]:
    """Initialize a run directory and execute all generations."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if (run_dir / MANIFEST_NAME).exists():
        raise ValidationError(f"{run_dir} already holds a run; resume it instead")

    seeding_desc = {
        "kind": "explicit_mix" if strategy_mix is not None else "default_mix",
    }
    if strategy_mix is not None:
        seeding_desc["mix"] = [
            {"kind": s.kind, "count": s.count, "params": s.params} for s in strategy_mix
        ]
    manifest = RunManifest(
        topology_config=topology.to_config_dict(),
        topology_hash=topology.topology_hash,
        ga_params=params.to_dict(),
        evaluator=evaluator_cfg,
        seeding=seeding_desc,
    )
    manifest.save(run_dir)

    seeding_rng = make_rng(derive_seed(params.rng_seed, "seeding"))
    initial = build_initial_population(topology, strategy_mix, params.population_size, seeding_rng)
    evaluator = make_evaluator(topology, evaluator_cfg, params.rng_seed)
    try:
        return nsga2_run(
            initial,
            evaluator,
            params,
            rng=make_rng(params.rng_seed),
            on_generation=_RunPersister(run_dir),
        )
    finally:
        close = getattr(evaluator, "close", None)
        if close is not None:
            close()


def resume_run(
    run_dir: str | Path,
    params: GaParams | None = None,
    evaluator_cfg: dict | None = None,
) -> list[GenerationResult]:
    """Continue a checkpointed run to its configured generation count.

    Optional params/evaluator arguments assert intent: they must match the
    stored manifest exactly, otherwise the resume is rejected.
    """
    run_dir = Path(run_dir)
    manifest = RunManifest.load(run_dir)
    if params is not None and params.to_dict() != manifest.ga_params:
        raise ManifestMismatchError(
            f"requested GA params {params.to_dict()} differ from the manifest's "
            f"{manifest.ga_params}"
        )
    if evaluator_cfg is not None and evaluator_cfg != manifest.evaluator:
        raise ManifestMismatchError(
            f"requested evaluator {evaluator_cfg} differs from the manifest's "
            f"{manifest.evaluator}"
        )
    stored_params = GaParams(**manifest.ga_params)
    topology = manifest.topology()

    ckpt_path = run_dir / CHECKPOINT_NAME
    if not ckpt_path.exists():
        raise CheckpointError(f"{run_dir} has no {CHECKPOINT_NAME} to resume from")
    try:
        ckpt = json.loads(ckpt_path.read_text("utf-8"))
        generation = int(ckpt["generation"])
        rng_state = ckpt["rng_state"]
        population = [
            CandidateRecord.from_dict(d).to_candidate(topology) for d in ckpt["population"]
        ]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"checkpoint unreadable: {exc!r}") from exc
    if len(population) != stored_params.population_size:
        raise CorruptCheckpointError(
            f"checkpoint population of {len(population)} does not match manifest's "
            f"{stored_params.population_size}"
        )

    records = _trim_history_to_generation(run_dir, generation)
    cache = {c.id: c.objectives() for r in records for c in r.union}
    if generation >= stored_params.generations:
        return []

    rng = make_rng(stored_params.rng_seed)
    try:
        set_state(rng, rng_state)
    except (TypeError, ValueError, KeyError) as exc:
        raise CorruptCheckpointError(f"checkpoint RNG state invalid: {exc!r}") from exc

    evaluator = make_evaluator(topology, manifest.evaluator, stored_params.rng_seed)
    try:
        return nsga2_run(
            population,
            evaluator,
            stored_params,
            rng=rng,
            cache=cache,
            start_generation=generation + 1,
            record_initial=False,
            on_generation=_RunPersister(run_dir),
        )
    finally:
        close = getattr(evaluator, "close", None)
        if close is not None:
            close()


def _trim_history_to_generation(run_dir: Path, generation: int) -> list[GenerationRecord]:
    """Drop history lines past the checkpointed generation (a crash can leave
    one) plus any partially written final line; returns the kept records."""
    path = run_dir / HISTORY_NAME
    if not path.exists():
        raise CheckpointError(f"{run_dir} has no {HISTORY_NAME}")
    raw_lines = path.read_text("utf-8").splitlines()
    kept: list[str] = []
    records: list[GenerationRecord] = []
    for i, line in enumerate(raw_lines):
        try:
            record = GenerationRecord.from_history_line(line)
        except ScheduleFormatError:
            if i == len(raw_lines) - 1:
                break  # partial append from an interrupted run
            raise CorruptCheckpointError(f"history line {i + 1} is corrupt")
        if record.generation > generation:
            continue
        kept.append(line)
        records.append(record)
    if len(kept) != len(raw_lines):
        _atomic_write(path, "".join(line + "\n" for line in kept))
    expected = list(range(generation + 1))
    if [r.generation for r in records] != expected:
        raise CorruptCheckpointError(
            f"history generations {[r.generation for r in records]} do not line up "
            f"with checkpoint generation {generation}"
        )
    return records


def load_history(run_dir: str | Path) -> tuple[RunManifest, list[GenerationRecord]]:
    run_dir = Path(run_dir)
    manifest = RunManifest.load(run_dir)
    path = run_dir / HISTORY_NAME
    if not path.exists():
        raise ValidationError(f"{run_dir} has no {HISTORY_NAME}")
    records = [
        GenerationRecord.from_history_line(line)
        for line in path.read_text("utf-8").splitlines()
        if line
    ]
    return manifest, records


# -- frontier analysis -----------------------------------------------------------------


@dataclass(frozen=True)
class FrontierPoint:
    id: str
    bits: str
    generation: int  # first generation the schedule was seen
    cost_tmacs: float
    quality_loss: float

    def objectives(self) -> ObjectiveVector:
        return ObjectiveVector(cost_tmacs=self.cost_tmacs, quality_loss=self.quality_loss)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "bits": self.bits,
            "generation": self.generation,
            "cost_tmacs": self.cost_tmacs,
            "quality_loss": self.quality_loss,
        }


@dataclass(frozen=True)
class ParetoFrontier:
    """Non-dominated points sorted by strictly increasing cost (and therefore
    strictly decreasing quality loss)."""

    points: tuple[FrontierPoint, ...]

    def __post_init__(self):
        for a, b in zip(self.points, self.points[1:]):
            if not (a.cost_tmacs < b.cost_tmacs and a.quality_loss > b.quality_loss):
                raise ValidationError("frontier ordering invariant violated")

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def _staircase(points: Sequence[FrontierPoint]) -> tuple[FrontierPoint, ...]:
    """Non-dominated subset via a sorted sweep; ties collapse deterministically
    (lowest loss, then first-seen generation, then id)."""
    best_loss = math.inf
    kept = []
    for p in sorted(points, key=lambda p: (p.cost_tmacs, p.quality_loss, p.generation, p.id)):
        if p.quality_loss < best_loss:
            kept.append(p)
            best_loss = p.quality_loss
    return tuple(kept)


def _dedupe_by_id(records: Sequence[GenerationRecord]) -> list[FrontierPoint]:
    seen: dict[str, FrontierPoint] = {}
    for record in records:
        for c in record.union:
            if c.id not in seen:
                seen[c.id] = FrontierPoint(
                    id=c.id,
                    bits=c.bits,
                    generation=record.generation,
                    cost_tmacs=c.cost_tmacs,
                    quality_loss=c.quality_loss,
                )
    return list(seen.values())


def overall_frontier(records: Sequence[GenerationRecord]) -> ParetoFrontier:
    """Non-dominated set over every candidate ever evaluated, deduplicated by
    schedule hash."""
    if not records:
        raise ValidationError("cannot build a frontier from an empty history")
    return ParetoFrontier(points=_staircase(_dedupe_by_id(records)))


def assert_frontier_matches_bruteforce(
    frontier: ParetoFrontier, records: Sequence[GenerationRecord]
) -> None:
    """O(n^2)-style check that no evaluated point dominates a frontier member."""
    pool = _dedupe_by_id(records)
    costs = np.array([p.cost_tmacs for p in pool])
    losses = np.array([p.quality_loss for p in pool])
    for member in frontier:
        no_worse = (costs <= member.cost_tmacs) & (losses <= member.quality_loss)
        better = (costs < member.cost_tmacs) | (losses < member.quality_loss)
        if bool(np.any(no_worse & better)):
            raise ValidationError(
                f"frontier member {member.id[:12]} is dominated; frontier stale"
            )


def select_by_budget(frontier: ParetoFrontier, max_cost_tmacs: float) -> FrontierPoint:
    """Lowest-quality-loss frontier member whose cost fits the budget."""
    feasible = [p for p in frontier if p.cost_tmacs <= max_cost_tmacs]
    if not feasible:
        cheapest = min((p.cost_tmacs for p in frontier), default=math.nan)
        raise ValidationError(
            f"no feasible schedule: budget {max_cost_tmacs} TMACs is below the "
            f"cheapest frontier member ({cheapest} TMACs)"
        )
    return feasible[-1]  # frontier sorted by cost asc == loss desc


# -- export -------------------------------------------------------------------------


def per_generation_frontiers(
    records: Sequence[GenerationRecord],
) -> list[tuple[int, tuple[FrontierPoint, ...]]]:
    """Frontier of each generation's post-selection population."""
    out = []
    for record in records:
        by_id = {c.id: c for c in record.union}
        points = [
            FrontierPoint(
                id=cid,
                bits=by_id[cid].bits,
                generation=record.generation,
                cost_tmacs=by_id[cid].cost_tmacs,
                quality_loss=by_id[cid].quality_loss,
            )
            for cid in record.population_ids
        ]
        out.append((record.generation, _staircase(points)))
    return out


def export_frontier(
    manifest: RunManifest,
    records: Sequence[GenerationRecord],
    csv_path: str | Path | None = None,
    json_path: str | Path | None = None,
) -> tuple[str, dict]:
    """Render per-generation and overall frontiers as CSV text and a JSON
    object; optionally write them. Re-exports are byte-identical."""
    topology = manifest.topology()
    total_cells = topology.total_cells

    def fraction_cached(bits_b64: str) -> float:
        bits = unpack_bits(bits_b64, total_cells)
        return float((bits == 0).sum()) / total_cells

    per_gen = per_generation_frontiers(records)
    overall = overall_frontier(records) if records else ParetoFrontier(points=())
    if records:
        assert_frontier_matches_bruteforce(overall, records)

    rows = ["generation,schedule_hash,tmacs,quality_loss,cached_fraction"]
    for gen, points in per_gen:
        for p in points:
            rows.append(
                f"{gen},{p.id},{p.cost_tmacs!r},{p.quality_loss!r},{fraction_cached(p.bits)!r}"
            )
    for p in overall:
        rows.append(
            f"overall,{p.id},{p.cost_tmacs!r},{p.quality_loss!r},{fraction_cached(p.bits)!r}"
        )
    csv_text = "\n".join(rows) + "\n"

    json_obj = {
        "format_version": RUN_FORMAT_VERSION,
        "topology": topology.name,
        "per_generation": [
            {"generation": gen, "points": [p.to_dict() for p in points]}
            for gen, points in per_gen
        ],
        "overall": [p.to_dict() for p in overall],
    }
    if csv_path is not None:
        Path(csv_path).write_text(csv_text, "utf-8")
    if json_path is not None:
        Path(json_path).write_text(dumps(json_obj) + "\n", "utf-8")
    return csv_text, json_obj


# -- hypervolume -----------------------------------------------------------------------


def hypervolume_2d(
    points: Sequence[tuple[float, float]], ref_cost: float, ref_loss: float
) -> float:
    """Area dominated by the point set inside [0, ref_cost] x [0, ref_loss].

    Points outside the reference box contribute only their clipped part.
    """
    staircase: list[tuple[float, float]] = []
    best = math.inf
    for cost, loss in sorted(points):
        if loss < best:
            staircase.append((cost, loss))
            best = loss
    area = 0.0
    prev_loss = ref_loss
    for cost, loss in staircase:
        if cost >= ref_cost:
            break
        clipped = max(loss, 0.0)
        if clipped < prev_loss:
            area += (ref_cost - cost) * (prev_loss - min(prev_loss, max(clipped, 0.0)))
            prev_loss = clipped
        if prev_loss <= 0.0:
            break
    return area


def run_hypervolumes(
    topology: ModelTopology, records: Sequence[GenerationRecord]
) -> list[float]:
    """Hypervolume of the overall frontier through each recorded generation,
    with the reference point at (full-recompute cost, max observed loss)."""
    ref_cost = schedule_cost(CachingSchedule.new_full_recompute(topology)).total_tmacs
    ref_loss = max((c.quality_loss for r in records for c in r.union), default=0.0)
    out = []
    for upto in range(1, len(records) + 1):
        frontier = overall_frontier(records[:upto])
        out.append(
            hypervolume_2d(
                [(p.cost_tmacs, p.quality_loss) for p in frontier], ref_cost, ref_loss
            )
        )
    return out
