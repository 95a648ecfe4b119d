"""Initial-population construction: caching heuristics and random samplers.

Heuristic families (interval recompute, gated attention caching, single
component caching) mirror published handcrafted baselines; the two random
samplers differ on purpose. ``true_random_schedule`` flips each bit i.i.d.,
which concentrates total cost tightly around its mean; ``uniform_random_
schedule`` first draws a target cost uniformly over the feasible range, snaps
it onto the achievable lattice with an extended-Euclid solver, and only then
places bits, giving the population a wide cost spread.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ScheduleFormatError, ValidationError
from .nsga2 import Candidate, GaParams, crossover_k_point, mutation_draw
from .schedule import CachingSchedule
from .topology import ModelTopology


def _blank(topology: ModelTopology, fill: int) -> np.ndarray:
    return np.full(topology.total_cells, fill, dtype=np.uint8)


def _with_first_step(topology: ModelTopology, bits: np.ndarray) -> CachingSchedule:
    bits[: topology.cells_per_step] = 1
    return CachingSchedule(topology, bits)


# -- handcrafted heuristics ---------------------------------------------------


def fora_schedule(topology: ModelTopology, interval: int) -> CachingSchedule:
    """Recompute everything on steps divisible by ``interval``, cache the rest."""
    if interval < 1:
        raise ValidationError(f"interval must be >= 1, got {interval}")
    bits = _blank(topology, 0).reshape(topology.steps, topology.cells_per_step)
    bits[::interval] = 1
    return _with_first_step(topology, bits.reshape(-1))


def tgate_schedule(topology: ModelTopology, gate_step: int, interval: int) -> CachingSchedule:
    """Warm up for two steps; before the gate, recompute self-attention only on
    steps divisible by ``interval``; from the gate on, freeze cross-attention
    and recompute everything else every step."""
    if not 2 <= gate_step <= topology.steps:
        raise ValidationError(f"gate_step must be in [2, {topology.steps}], got {gate_step}")
    if interval < 1:
        raise ValidationError(f"interval must be >= 1, got {interval}")
    self_cells = _kind_step_columns(topology, "self_attn")
    cross_cells = _kind_step_columns(topology, "cross_attn")
    bits = _blank(topology, 1).reshape(topology.steps, topology.cells_per_step)
    for step in range(2, gate_step):
        if step % interval != 0:
            bits[step, self_cells] = 0
    for step in range(gate_step, topology.steps):
        bits[step, cross_cells] = 0
    return _with_first_step(topology, bits.reshape(-1))


def component_only_schedule(
    topology: ModelTopology, component_name: str, steps_cached: int, blocks_cached: int
) -> CachingSchedule:
    """Cache one component kind on evenly spaced steps/blocks, recompute all else.

    Cached steps are spread over [1, steps) (never step 0) and cached blocks
    over the blocks holding the kind, both by floor(i * span / count)."""
    kind_blocks = topology.kind_blocks(component_name)
    span = topology.steps - 1
    if not 0 <= steps_cached <= span:
        raise ValidationError(f"steps_cached must be in [0, {span}], got {steps_cached}")
    if not 0 <= blocks_cached <= len(kind_blocks):
        raise ValidationError(
            f"blocks_cached must be in [0, {len(kind_blocks)}], got {blocks_cached}"
        )
    bits = _blank(topology, 1)
    if steps_cached and blocks_cached:
        steps = [1 + (i * span) // steps_cached for i in range(steps_cached)]
        blocks = [kind_blocks[(j * len(kind_blocks)) // blocks_cached] for j in range(blocks_cached)]
        for step in steps:
            for g, b, c in blocks:
                bits[topology.cell_index(step, g, b, c)] = 0
    return _with_first_step(topology, bits)


def cross_self_all_blocks_schedule(topology: ModelTopology, interval: int) -> CachingSchedule:
    """Cache both attentions in every block on steps divisible by ``interval``
    (step 0 excepted); recompute everything else."""
    if interval < 1:
        raise ValidationError(f"interval must be >= 1, got {interval}")
    cols = np.concatenate(
        [_kind_step_columns(topology, "self_attn"), _kind_step_columns(topology, "cross_attn")]
    )
    bits = _blank(topology, 1).reshape(topology.steps, topology.cells_per_step)
    for step in range(1, topology.steps):
        if step % interval == 0:
            bits[step, cols] = 0
    return _with_first_step(topology, bits.reshape(-1))


def _kind_step_columns(topology: ModelTopology, component_name: str) -> np.ndarray:
    """Within-step cell offsets of every (block, component) holding the kind."""
    cols = [
        topology.cell_index(0, g, b, c) for g, b, c in topology.kind_blocks(component_name)
    ]
    return np.array(cols, dtype=np.int64)


def max_cached_schedule(topology: ModelTopology) -> CachingSchedule:
    """Recompute step 0 only; everything afterwards reuses the cache."""
    return _with_first_step(topology, _blank(topology, 0))


# -- linear Diophantine machinery ---------------------------------------------


def extended_euclid(a: int, b: int) -> tuple[int, int, int]:
    """(g, x, y) with a*x + b*y = g = gcd(a, b)."""
    old_r, r = a, b
    old_x, x = 1, 0
    old_y, y = 0, 1
    while r:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_x, x = x, old_x - q * x
        old_y, y = y, old_y - q * y
    return old_r, old_x, old_y


@dataclass(frozen=True)
class DiophantineSolutions:
    """All (k1, k2) with w1*k1 + w2*k2 = target, 0 <= k_i <= cap_i.

    Parameterized as (base1 + t*stride1, base2 - t*stride2) for t in
    [0, count); count == 0 means infeasible.
    """

    w1: int
    w2: int
    target: int
    base1: int = 0
    base2: int = 0
    stride1: int = 0
    stride2: int = 0
    count: int = 0

    def solution(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.count:
            raise IndexError(f"solution index {index} out of range [0, {self.count})")
        return (self.base1 + index * self.stride1, self.base2 - index * self.stride2)

    def to_list(self) -> list[tuple[int, int]]:
        return [self.solution(i) for i in range(self.count)]


def solve_two_var_diophantine(
    w1: int, w2: int, target: int, cap1: int, cap2: int
) -> DiophantineSolutions:
    """Solve w1*k1 + w2*k2 = target over 0 <= k1 <= cap1, 0 <= k2 <= cap2."""
    if w1 < 1 or w2 < 1:
        raise ValidationError(f"weights must be >= 1, got ({w1}, {w2})")
    if target < 0 or cap1 < 0 or cap2 < 0:
        raise ValidationError("target and caps must be >= 0")
    g, x, _ = extended_euclid(w1, w2)
    empty = DiophantineSolutions(w1=w1, w2=w2, target=target)
    if target % g:
        return empty
    stride1 = w2 // g
    stride2 = w1 // g
    residue = (x * (target // g)) % stride1  # k1 must be == residue (mod stride1)
    lo = max(0, _ceil_div(target - w2 * cap2, w1))
    hi = min(cap1, target // w1)
    if lo > hi:
        return empty
    first = lo + ((residue - lo) % stride1)
    if first > hi:
        return empty
    count = (hi - first) // stride1 + 1
    return DiophantineSolutions(
        w1=w1,
        w2=w2,
        target=target,
        base1=first,
        base2=(target - w1 * first) // w2,
        stride1=stride1,
        stride2=stride2,
        count=count,
    )


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def _two_var_counts(
    residuals: np.ndarray, w1: int, w2: int, cap1: int, cap2: int
) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Vectorized solution counts of w1*k1 + w2*k2 = r for an array of residuals.

    Returns (counts, first_k1, stride1, g). Mirrors solve_two_var_diophantine.
    """
    g, x, _ = extended_euclid(w1, w2)
    stride1 = w2 // g
    feasible = (residuals >= 0) & (residuals % g == 0)
    q = np.where(feasible, residuals // g, 0)
    residue = (x % stride1) * (q % stride1) % stride1 if stride1 > 1 else np.zeros_like(q)
    lo = np.maximum(0, -((w2 * cap2 - residuals) // w1))
    hi = np.minimum(cap1, np.where(residuals >= 0, residuals // w1, -1))
    first = lo + ((residue - lo) % stride1)
    counts = np.where(feasible & (first <= hi), (hi - first) // stride1 + 1, 0)
    return counts.astype(np.int64), first.astype(np.int64), stride1, g


# -- random samplers ------------------------------------------------------------


def true_random_schedule(
    topology: ModelTopology, p_cached: float, rng: np.random.Generator
) -> CachingSchedule:
    """Each cell cached i.i.d. with probability p_cached; step 0 re-enforced."""
    if not 0.0 <= p_cached <= 1.0:
        raise ValidationError(f"p_cached must be in [0, 1], got {p_cached}")
    bits = (rng.random(topology.total_cells) >= p_cached).astype(np.uint8)
    return _with_first_step(topology, bits)


@dataclass(frozen=True)
class UniformCostSample:
    schedule: CachingSchedule
    raw_target_mmacs: float  # uniform draw over [step-0 floor, full recompute]
    snapped_target_mmacs: int  # nearest achievable block total; achieved exactly


class _KindTable:
    """Per-component-kind weights, caps, and cell positions for one topology."""

    def __init__(self, topology: ModelTopology):
        self.topology = topology
        self.weights: list[int] = []
        self.floors: list[int] = []  # step-0 cells, always recomputed
        self.caps: list[int] = []  # total cells of the kind
        self.positions: list[np.ndarray] = []  # non-step-0 flat indices
        for gi, group in enumerate(topology.block_groups):
            for ci, comp in enumerate(group.components):
                if comp.weight_mmacs < 1:
                    raise ValidationError(
                        f"uniform cost sampling needs positive weights; "
                        f"{group.name}.{comp.name} has {comp.mac_weight} GMACs"
                    )
                cols = [
                    topology.cell_index(0, gi, b, ci) for b in range(group.block_count)
                ]
                pos = np.array(
                    [
                        step * topology.cells_per_step + col
                        for step in range(1, topology.steps)
                        for col in cols
                    ],
                    dtype=np.int64,
                )
                self.weights.append(comp.weight_mmacs)
                self.floors.append(group.block_count)
                self.caps.append(topology.steps * group.block_count)
                self.positions.append(pos)
        # heaviest kinds first; ties broken by original order (stable)
        self.order = sorted(range(len(self.weights)), key=lambda i: -self.weights[i])

    @property
    def floor_mmacs(self) -> int:
        return sum(w * f for w, f in zip(self.weights, self.floors))

    @property
    def max_mmacs(self) -> int:
        return sum(w * c for w, c in zip(self.weights, self.caps))


def uniform_random_schedule(
    topology: ModelTopology, rng: np.random.Generator
) -> CachingSchedule:
    return sample_uniform_cost_schedule(topology, rng).schedule


def sample_uniform_cost_schedule(
    topology: ModelTopology, rng: np.random.Generator
) -> UniformCostSample:
    """Draw a target block cost uniformly, snap it onto the achievable lattice,
    pick uniformly among count vectors realizing it (exactly so for up to three
    component kinds), then place the per-kind recompute cells at random."""
    table = _KindTable(topology)
    raw = rng.uniform(0.0, table.max_mmacs)
    raw = min(max(raw, float(table.floor_mmacs)), float(table.max_mmacs))
    spare = [c - f for c, f in zip(table.caps, table.floors)]  # adjustable cells
    target_above_floor = raw - table.floor_mmacs

    kinds = table.order
    if len(kinds) <= 3:
        counts_above = _sample_counts_exact(
            [table.weights[i] for i in kinds], [spare[i] for i in kinds], target_above_floor, rng
        )
    else:
        counts_above = _sample_counts_heaviest_first(
            [table.weights[i] for i in kinds], [spare[i] for i in kinds], target_above_floor, rng
        )

    bits = _blank(topology, 0)
    achieved = 0
    for kind_pos, extra in zip(kinds, counts_above):
        achieved += table.weights[kind_pos] * (extra + table.floors[kind_pos])
        if extra:
            chosen = rng.choice(table.positions[kind_pos].shape[0], size=extra, replace=False)
            bits[table.positions[kind_pos][chosen]] = 1
    schedule = _with_first_step(topology, bits)
    return UniformCostSample(
        schedule=schedule, raw_target_mmacs=raw, snapped_target_mmacs=achieved
    )


def _sample_counts_exact(
    weights: list[int], caps: list[int], target: float, rng: np.random.Generator
) -> list[int]:
    """Uniform draw over every count vector hitting the snapped target (1-3 kinds)."""
    if len(weights) == 1:
        w, cap = weights[0], caps[0]
        k = min(cap, max(0, round(target / w)))
        return [k]
    if len(weights) == 2:
        counter = lambda t: _two_var_counts(  # noqa: E731
            np.array([t], dtype=np.int64), weights[0], weights[1], caps[0], caps[1]
        )[0][0]
        g = math.gcd(weights[0], weights[1])
        snapped = _snap_to_feasible(target, g, weights, counter)
        sols = solve_two_var_diophantine(weights[0], weights[1], snapped, caps[0], caps[1])
        k1, k2 = sols.solution(int(rng.integers(0, sols.count)))
        return [k1, k2]

    w0, w1, w2 = weights
    cap0 = caps[0]
    k0_grid = np.arange(cap0 + 1, dtype=np.int64)

    def counter(t: int) -> int:
        counts, _, _, _ = _two_var_counts(t - w0 * k0_grid, w1, w2, caps[1], caps[2])
        return int(counts.sum())

    g = math.gcd(math.gcd(w0, w1), w2)
    snapped = _snap_to_feasible(target, g, weights, counter)
    counts, first, stride1, _ = _two_var_counts(snapped - w0 * k0_grid, w1, w2, caps[1], caps[2])
    total = int(counts.sum())
    pick = int(rng.integers(0, total))
    cum = np.cumsum(counts)
    j = int(np.searchsorted(cum, pick, side="right"))
    within = pick - (int(cum[j - 1]) if j else 0)
    k1 = int(first[j]) + within * stride1
    k2 = (snapped - w0 * int(k0_grid[j]) - w1 * k1) // w2
    return [int(k0_grid[j]), k1, k2]


def _snap_to_feasible(target: float, g: int, weights: list[int], counter) -> int:
    """Nearest achievable integer total: try multiples of gcd outward."""
    base = round(target / g) * g
    max_radius = sum(weights) // g + 2
    for radius in range(max_radius + 1):
        for candidate in (base + radius * g, base - radius * g):
            if candidate >= 0 and counter(candidate) > 0:
                return int(candidate)
            if radius == 0:
                break
    raise ValidationError(f"no achievable cost near target {target}")  # pragma: no cover


def _sample_counts_heaviest_first(
    weights: list[int], caps: list[int], target: float, rng: np.random.Generator
) -> list[int]:
    """Four or more kinds: randomize all but the last two, solve the pair exactly.

    Not exactly uniform over count vectors, but cheap, deterministic under the
    generator, and still cost-uniform to first order.
    """
    tail_max = [0] * (len(weights) + 1)
    for i in range(len(weights) - 1, -1, -1):
        tail_max[i] = tail_max[i + 1] + weights[i] * caps[i]
    w1, w2 = weights[-2], weights[-1]
    cap1, cap2 = caps[-2], caps[-1]
    counter = lambda t: _two_var_counts(  # noqa: E731
        np.array([t], dtype=np.int64), w1, w2, cap1, cap2
    )[0][0]

    for _ in range(100):
        counts = [0] * len(weights)
        remaining = round(target)
        feasible = True
        for i in range(len(weights) - 2):
            # keep the residual inside what the remaining kinds can absorb
            hi = min(caps[i], remaining // weights[i])
            lo = max(0, _ceil_div(remaining - tail_max[i + 1], weights[i]))
            if lo > hi:
                feasible = False
                break
            counts[i] = int(rng.integers(lo, hi + 1))
            remaining -= weights[i] * counts[i]
        if not feasible:
            continue
        try:
            snapped = _snap_to_feasible(float(remaining), math.gcd(w1, w2), [w1, w2], counter)
        except ValidationError:
            continue
        sols = solve_two_var_diophantine(w1, w2, snapped, cap1, cap2)
        if sols.count:
            k1, k2 = sols.solution(int(rng.integers(0, sols.count)))
            counts[-2], counts[-1] = k1, k2
            return counts
    raise ValidationError("could not realize a cost target; topology too constrained")


# -- strategy mix and population assembly ------------------------------------------


@dataclass(frozen=True)
class SeedStrategy:
    """One entry of a strategy mix: which generator, how many, with what params."""

    kind: str
    count: int = 1
    params: dict = field(default_factory=dict)

    _KINDS = (
        "fora",
        "tgate",
        "component_only",
        "cross_self_all_blocks",
        "uniform_random",
        "true_random",
        "full_recompute",
        "max_cached",
    )

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValidationError(f"unknown seed strategy {self.kind!r}")
        if self.count < 1:
            raise ValidationError("strategy count must be >= 1")

    def make(self, topology: ModelTopology, rng: np.random.Generator) -> list[CachingSchedule]:
        out = []
        for _ in range(self.count):
            if self.kind == "fora":
                out.append(fora_schedule(topology, **self.params))
            elif self.kind == "tgate":
                out.append(tgate_schedule(topology, **self.params))
            elif self.kind == "component_only":
                out.append(component_only_schedule(topology, **self.params))
            elif self.kind == "cross_self_all_blocks":
                out.append(cross_self_all_blocks_schedule(topology, **self.params))
            elif self.kind == "uniform_random":
                out.append(uniform_random_schedule(topology, rng))
            elif self.kind == "true_random":
                p = self.params.get("p_cached")
                out.append(
                    true_random_schedule(topology, p if p is not None else rng.uniform(0.2, 0.8), rng)
                )
            elif self.kind == "full_recompute":
                out.append(CachingSchedule.new_full_recompute(topology))
            else:
                out.append(max_cached_schedule(topology))
        return out


def load_strategy_mix(path: str | Path) -> list[SeedStrategy]:
    try:
        items = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ScheduleFormatError(f"strategy mix is not valid JSON: {exc}") from exc
    if not isinstance(items, list):
        raise ScheduleFormatError("strategy mix must be a JSON array")
    out = []
    for item in items:
        if not isinstance(item, dict) or "kind" not in item:
            raise ScheduleFormatError(f"bad strategy entry: {item!r}")
        out.append(
            SeedStrategy(
                kind=item["kind"],
                count=int(item.get("count", 1)),
                params=dict(item.get("params", {})),
            )
        )
    return out


def _has_kind(topology: ModelTopology, name: str) -> bool:
    return any(c.name == name for g in topology.block_groups for c in g.components)


def default_strategy_mix(topology: ModelTopology) -> list[SeedStrategy]:
    """Heuristic-heavy mix; strategies needing absent component kinds are skipped."""
    steps = topology.steps
    mix: list[SeedStrategy] = [SeedStrategy("full_recompute"), SeedStrategy("max_cached")]
    for interval in range(2, min(6, steps) + 1):
        mix.append(SeedStrategy("fora", params={"interval": interval}))
    if _has_kind(topology, "self_attn") and _has_kind(topology, "cross_attn"):
        for interval in (2, 3, 4):
            mix.append(SeedStrategy("cross_self_all_blocks", params={"interval": interval}))
        for gate, interval in ((steps // 2, 2), (steps // 2, 5), (3 * steps // 4, 1)):
            if gate >= 2:
                mix.append(SeedStrategy("tgate", params={"gate_step": gate, "interval": interval}))
    kind_names = sorted({c.name for g in topology.block_groups for c in g.components})
    for name in kind_names:
        blocks = len(topology.kind_blocks(name))
        for s, b in ((steps // 2, blocks), (steps - 1, blocks), (steps // 2, max(1, blocks // 2))):
            if s >= 1:
                mix.append(
                    SeedStrategy(
                        "component_only",
                        params={
                            "component_name": name,
                            "steps_cached": s,
                            "blocks_cached": b,
                        },
                    )
                )
    mix.append(SeedStrategy("true_random", count=2))
    mix.append(SeedStrategy("uniform_random", count=4))
    return mix


def build_initial_population(
    topology: ModelTopology,
    mix: Sequence[SeedStrategy] | None,
    n: int,
    rng: np.random.Generator,
) -> list[Candidate]:
    """n seed candidates from the mix (default mix if None), deduplicated by bit
    pattern, padded with uniform-cost samples, and always containing the two
    extremes: full recompute and maximally cached."""
    if n < 2:
        raise ValidationError("population needs at least 2 candidates")
    if mix is None:
        mix = default_strategy_mix(topology)

    schedules: list[CachingSchedule] = []
    seen: set[str] = set()

    def push(s: CachingSchedule) -> None:
        h = s.schedule_hash
        if h not in seen:
            seen.add(h)
            schedules.append(s)

    for strategy in mix:
        for s in strategy.make(topology, rng):
            push(s)
        if len(schedules) >= 4 * n:
            break

    attempts = 0
    while len(schedules) < n and attempts < 20 * n:
        push(uniform_random_schedule(topology, rng))
        attempts += 1
    if len(schedules) < n:
        # tiny topologies can exhaust distinct patterns; allow repeats
        while len(schedules) < n:
            schedules.append(uniform_random_schedule(topology, rng))
    schedules = schedules[:n]

    for required in (CachingSchedule.new_full_recompute(topology), max_cached_schedule(topology)):
        if not any(s.schedule_hash == required.schedule_hash for s in schedules):
            for i in range(n - 1, -1, -1):
                h = schedules[i].schedule_hash
                if not any(
                    h == keep.schedule_hash
                    for keep in (
                        CachingSchedule.new_full_recompute(topology),
                        max_cached_schedule(topology),
                    )
                ):
                    schedules[i] = required
                    break

    for s in schedules:
        s.validate()
    return [Candidate(s, origin="seed") for s in schedules]


def flux_style_population(
    topology: ModelTopology,
    n: int,
    rng: np.random.Generator,
    rounds: int = 3,
) -> list[Candidate]:
    """Interval-recompute seeds diversified by a few rounds of crossover and
    forced mutation, then a uniform random pick of n."""
    params = GaParams(population_size=max(2, n), crossover_prob=0.9, mutation_prob=1.0)
    pool = [Candidate(fora_schedule(topology, i), origin="seed") for i in range(1, 9)]
    for _ in range(rounds):
        pairs = len(pool) // 2
        for _ in range(pairs):
            picks = rng.integers(0, len(pool), size=2)
            child_a, child_b = crossover_k_point(pool[int(picks[0])], pool[int(picks[1])], params, rng)
            for child in (child_a, child_b):
                mask = mutation_draw(params, topology.total_cells, rng)
                if mask is not None:
                    bits = child.schedule.bits ^ mask.astype(np.uint8)
                    child = Candidate(
                        CachingSchedule(topology, bits).enforce_first_step_recompute(),
                        origin="mutation",
                    )
                pool.append(child)
    while len(pool) < n:
        pool.append(Candidate(uniform_random_schedule(topology, rng), origin="seed"))
    picks = rng.choice(len(pool), size=n, replace=False)
    return [Candidate(pool[int(i)].schedule, origin="seed") for i in picks]
