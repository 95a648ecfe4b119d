"""NSGA-II engine over caching schedules.

Two minimized objectives: compute cost (TMACs) and quality loss. The engine is
deliberately evaluation-agnostic; anything with an ``evaluate`` method mapping
schedules to objective vectors plugs in.

Every random decision draws from a single generator in a fixed, documented
order, so a run is reproducible from its seed and can be resumed mid-stream by
restoring generator state. Per generation the draw order is: for each offspring
pair, tournament A (one 4-wide integer draw, then at most one uniform per full
tie), tournament B, one uniform for the crossover gate, the k cut points if the
gate fired, then per child one uniform for the mutation gate and one
total_cells-wide uniform mask if that fired.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import ValidationError
from .rng import make_rng, state_digest
from .schedule import CachingSchedule

ORIGINS = ("seed", "crossover", "copy", "mutation")


@dataclass(frozen=True)
class ObjectiveVector:
    """Minimized pair: (compute cost in TMACs, quality loss)."""

    cost_tmacs: float
    quality_loss: float

    def __post_init__(self):
        if not math.isfinite(self.cost_tmacs) or not math.isfinite(self.quality_loss):
            raise ValidationError(
                f"objectives must be finite, got ({self.cost_tmacs}, {self.quality_loss})"
            )

    def as_tuple(self) -> tuple[float, float]:
        return (self.cost_tmacs, self.quality_loss)


@dataclass
class Candidate:
    schedule: CachingSchedule
    objectives: ObjectiveVector | None = None
    origin: str = "seed"
    id: str = field(default="")

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValidationError(f"unknown origin {self.origin!r}")
        if not self.id:
            self.id = self.schedule.schedule_hash

    def require_objectives(self) -> ObjectiveVector:
        if self.objectives is None:
            raise ValidationError(f"candidate {self.id[:12]} has not been evaluated")
        return self.objectives


@dataclass(frozen=True)
class GaParams:
    population_size: int = 72
    generations: int = 50
    crossover_prob: float = 0.9
    crossover_points: int = 4
    mutation_prob: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValidationError("population_size must be >= 2")
        if self.generations < 0:
            raise ValidationError("generations must be >= 0")
        if not 0.0 <= self.crossover_prob <= 1.0:
            raise ValidationError("crossover_prob must be in [0, 1]")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValidationError("mutation_prob must be in [0, 1]")
        if self.crossover_points < 1:
            raise ValidationError("crossover_points must be >= 1")
        if not 0 <= self.rng_seed < 2**64:
            raise ValidationError("rng_seed must be a u64")

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size,
            "generations": self.generations,
            "crossover_prob": self.crossover_prob,
            "crossover_points": self.crossover_points,
            "mutation_prob": self.mutation_prob,
            "rng_seed": self.rng_seed,
        }


class Evaluator(Protocol):
    def evaluate(self, schedules: Sequence[CachingSchedule]) -> list[ObjectiveVector]: ...


# -- dominance and sorting ----------------------------------------------------


def dominates(a: ObjectiveVector, b: ObjectiveVector) -> bool:
    """True iff a is no worse in both objectives and strictly better in one."""
    if a.cost_tmacs > b.cost_tmacs or a.quality_loss > b.quality_loss:
        return False
    return a.cost_tmacs < b.cost_tmacs or a.quality_loss < b.quality_loss


@dataclass(frozen=True)
class FrontPartition:
    """Population indices split into Pareto fronts; rank[i] is i's front number."""

    fronts: tuple[tuple[int, ...], ...]
    rank: tuple[int, ...]


def non_dominated_sort(population: Sequence[Candidate]) -> FrontPartition:
    """Iterative dominance-count sort (Deb's fast non-dominated sort)."""
    objs = [c.require_objectives() for c in population]
    n = len(objs)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    dom_count = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(objs[i], objs[j]):
                dominated_by[i].append(j)
                dom_count[j] += 1
            elif dominates(objs[j], objs[i]):
                dominated_by[j].append(i)
                dom_count[i] += 1

    rank = [-1] * n
    fronts: list[tuple[int, ...]] = []
    current = [i for i in range(n) if dom_count[i] == 0]
    level = 0
    while current:
        for i in current:
            rank[i] = level
        fronts.append(tuple(current))
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                dom_count[j] -= 1
                if dom_count[j] == 0:
                    nxt.append(j)
        current = sorted(nxt)
        level += 1
    return FrontPartition(fronts=tuple(fronts), rank=tuple(rank))


def crowding_distance(objectives: Sequence[ObjectiveVector]) -> list[float]:
    """Crowding of one front: boundaries +inf, interiors sum normalized gaps.

    Fronts of size <= 2 are all boundaries. A zero-range objective contributes
    nothing to interior distances (its boundary markers still apply).
    """
    m = len(objectives)
    if m == 0:
        return []
    if m <= 2:
        return [math.inf] * m
    dist = [0.0] * m
    for key in (lambda o: o.cost_tmacs, lambda o: o.quality_loss):
        values = [key(o) for o in objectives]
        order = sorted(range(m), key=lambda i: values[i])  # stable for ties
        dist[order[0]] = math.inf
        dist[order[-1]] = math.inf
        span = values[order[-1]] - values[order[0]]
        if span == 0.0:
            continue
        for pos in range(1, m - 1):
            i = order[pos]
            if dist[i] != math.inf:
                dist[i] += (values[order[pos + 1]] - values[order[pos - 1]]) / span
    return dist


def crowding_by_front(
    population: Sequence[Candidate], partition: FrontPartition
) -> list[float]:
    """Per-candidate crowding, computed within each front."""
    crowding = [0.0] * len(population)
    for front in partition.fronts:
        objs = [population[i].require_objectives() for i in front]
        for i, d in zip(front, crowding_distance(objs)):
            crowding[i] = d
    return crowding


# -- variation operators ---------------------------------------------------------


def _binary_winner(
    i: int, j: int, partition: FrontPartition, crowding: Sequence[float], rng: np.random.Generator
) -> int:
    if partition.rank[i] != partition.rank[j]:
        return i if partition.rank[i] < partition.rank[j] else j
    if crowding[i] != crowding[j]:
        return i if crowding[i] > crowding[j] else j
    return i if rng.random() < 0.5 else j


def tournament_select(
    population: Sequence[Candidate],
    partition: FrontPartition,
    crowding: Sequence[float],
    rng: np.random.Generator,
) -> tuple[Candidate, Candidate]:
    """Two independent binary tournaments, contestants drawn uniformly with
    replacement. Lower rank wins; ties go to larger crowding, then a coin flip."""
    picks = rng.integers(0, len(population), size=4)
    a = _binary_winner(int(picks[0]), int(picks[1]), partition, crowding, rng)
    b = _binary_winner(int(picks[2]), int(picks[3]), partition, crowding, rng)
    return population[a], population[b]


def splice_k_point(
    bits_a: np.ndarray, bits_b: np.ndarray, cuts: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Exchange alternating segments delimited by sorted interior cut points."""
    child_a = bits_a.copy()
    child_b = bits_b.copy()
    take_b = False
    bounds = list(cuts) + [len(bits_a)]
    start = 0
    for end in bounds:
        if take_b:
            child_a[start:end] = bits_b[start:end]
            child_b[start:end] = bits_a[start:end]
        take_b = not take_b
        start = end
    return child_a, child_b


def crossover_k_point(
    a: Candidate, b: Candidate, params: GaParams, rng: np.random.Generator
) -> tuple[Candidate, Candidate]:
    """With probability crossover_prob, k-point crossover over the flat bit
    vectors (k distinct interior cuts); otherwise the children are plain copies.
    Children always get step 0 re-enforced."""
    topo = a.schedule.topology
    if topo != b.schedule.topology:
        raise ValidationError("crossover parents must share a topology")
    total = topo.total_cells
    if rng.random() < params.crossover_prob:
        if params.crossover_points > total - 1:
            raise ValidationError(
                f"{params.crossover_points} cut points need at least "
                f"{params.crossover_points + 1} cells, topology has {total}"
            )
        cuts = np.sort(rng.choice(total - 1, size=params.crossover_points, replace=False) + 1)
        bits_a, bits_b = splice_k_point(a.schedule.bits, b.schedule.bits, [int(c) for c in cuts])
        origin = "crossover"
    else:
        bits_a, bits_b = a.schedule.bits.copy(), b.schedule.bits.copy()
        origin = "copy"
    child_a = CachingSchedule(topo, bits_a).enforce_first_step_recompute()
    child_b = CachingSchedule(topo, bits_b).enforce_first_step_recompute()
    return Candidate(child_a, origin=origin), Candidate(child_b, origin=origin)


def mutation_draw(
    params: GaParams, total_cells: int, rng: np.random.Generator
) -> np.ndarray | None:
    """One mutation decision: None if the per-candidate gate stays closed,
    otherwise a boolean flip mask where each bit flips with prob 1/total_cells."""
    if rng.random() >= params.mutation_prob:
        return None
    return rng.random(total_cells) < (1.0 / total_cells)


def mutate_bit_flip(
    candidate: Candidate, params: GaParams, rng: np.random.Generator
) -> Candidate:
    """Gated uniform bit-flip mutation; step 0 is re-enforced afterwards, so a
    mask touching only step 0 leaves the candidate unchanged."""
    mask = mutation_draw(params, candidate.schedule.topology.total_cells, rng)
    if mask is None:
        return candidate
    bits = candidate.schedule.bits ^ mask.astype(np.uint8)
    mutated = CachingSchedule(candidate.schedule.topology, bits).enforce_first_step_recompute()
    if np.array_equal(mutated.bits, candidate.schedule.bits):
        return candidate
    return Candidate(mutated, origin="mutation")


# -- selection ----------------------------------------------------------------------


def environmental_selection(union: Sequence[Candidate], n: int) -> list[Candidate]:
    """Keep the best n of a 2n union: whole fronts while they fit, then the
    split front by descending crowding (per-objective extrema enter first)."""
    if len(union) != 2 * n:
        raise ValidationError(f"environmental selection expects 2n={2 * n} candidates, got {len(union)}")
    partition = non_dominated_sort(union)
    selected: list[int] = []
    for front in partition.fronts:
        if len(selected) + len(front) <= n:
            selected.extend(front)
            continue
        need = n - len(selected)
        if need > 0:
            objs = [union[i].require_objectives() for i in front]
            dist = crowding_distance(objs)
            by_crowding = sorted(range(len(front)), key=lambda p: -dist[p])  # stable
            selected.extend(front[p] for p in by_crowding[:need])
        break
    return [union[i] for i in selected]


# -- engine loop -----------------------------------------------------------------------


def evaluate_candidates(
    candidates: Sequence[Candidate],
    evaluator: Evaluator,
    cache: dict[str, ObjectiveVector],
) -> None:
    """Fill in missing objectives, evaluating each distinct bit pattern once."""
    pending: dict[str, Candidate] = {}
    for c in candidates:
        if c.objectives is not None:
            cache.setdefault(c.id, c.objectives)
        elif c.id not in cache and c.id not in pending:
            pending[c.id] = c
    if pending:
        fresh = list(pending.values())
        results = evaluator.evaluate([c.schedule for c in fresh])
        if len(results) != len(fresh):
            raise ValidationError(
                f"evaluator returned {len(results)} results for {len(fresh)} schedules"
            )
        for c, obj in zip(fresh, results):
            cache[c.id] = obj
    for c in candidates:
        if c.objectives is None:
            c.objectives = cache[c.id]


@dataclass
class GenerationResult:
    generation: int
    population: list[Candidate]
    union: list[Candidate]
    rng_digest: str


def evolve_generation(
    population: Sequence[Candidate],
    evaluator: Evaluator,
    params: GaParams,
    rng: np.random.Generator,
    cache: dict[str, ObjectiveVector] | None = None,
) -> GenerationResult:
    """One NSGA-II step: breed n offspring, evaluate, select n from the union."""
    n = params.population_size
    if len(population) != n:
        raise ValidationError(f"expected population of {n}, got {len(population)}")
    if cache is None:
        cache = {}
    evaluate_candidates(population, evaluator, cache)
    partition = non_dominated_sort(population)
    crowding = crowding_by_front(population, partition)

    offspring: list[Candidate] = []
    while len(offspring) < n:
        parent_a, parent_b = tournament_select(population, partition, crowding, rng)
        child_a, child_b = crossover_k_point(parent_a, parent_b, params, rng)
        child_a = mutate_bit_flip(child_a, params, rng)
        child_b = mutate_bit_flip(child_b, params, rng)
        offspring.append(child_a)
        if len(offspring) < n:
            offspring.append(child_b)

    evaluate_candidates(offspring, evaluator, cache)
    union = list(population) + offspring
    next_population = environmental_selection(union, n)
    return GenerationResult(
        generation=-1,  # caller stamps the index
        population=next_population,
        union=union,
        rng_digest=state_digest(rng),
    )


def run(
    initial_population: Sequence[Candidate],
    evaluator: Evaluator,
    params: GaParams,
    *,
    rng: np.random.Generator | None = None,
    cache: dict[str, ObjectiveVector] | None = None,
    start_generation: int = 1,
    record_initial: bool = True,
    on_generation: Callable[[GenerationResult, np.random.Generator], None] | None = None,
) -> list[GenerationResult]:
    """Full GA loop. Returns one GenerationResult per recorded generation
    (generation 0 is the evaluated initial population).

    Resume support: pass the restored population, a generator with restored
    state, ``start_generation`` pointing past the last completed generation,
    and ``record_initial=False``.
    """
    if rng is None:
        rng = make_rng(params.rng_seed)
    if cache is None:
        cache = {}
    population = list(initial_population)
    if len(population) != params.population_size:
        raise ValidationError(
            f"initial population has {len(population)} candidates, "
            f"params want {params.population_size}"
        )

    results: list[GenerationResult] = []
    evaluate_candidates(population, evaluator, cache)
    if record_initial:
        initial = GenerationResult(
            generation=0,
            population=list(population),
            union=list(population),
            rng_digest=state_digest(rng),
        )
        results.append(initial)
        if on_generation is not None:
            on_generation(initial, rng)

    for gen in range(start_generation, params.generations + 1):
        result = evolve_generation(population, evaluator, params, rng, cache)
        result.generation = gen
        population = result.population
        results.append(result)
        if on_generation is not None:
            on_generation(result, rng)
    return results
