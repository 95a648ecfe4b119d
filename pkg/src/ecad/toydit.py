"""Deterministic toy diffusion-transformer surrogate.

A tiny token-mixing network whose blocks mirror a topology's group structure,
so caching schedules exercise the full engine without a GPU or model weights.
Components cache their most recent output; a cached cell replays that tensor
instead of recomputing. Quality loss is the relative Frobenius drift of the
final state against the full-recompute run of the same model.

All matrix products go through an explicit broadcast-and-sum so reduction
order never depends on BLAS threading; outputs are bit-reproducible for a
given seed on a given platform, which the golden-digest tests rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .canonical import sha256_hex
from .costmodel import schedule_cost
from .errors import TopologyMismatchError, ValidationError
from .nsga2 import ObjectiveVector
from .rng import make_rng
from .schedule import CachingSchedule
from .topology import ModelTopology

COMPONENT_KINDS = ("self_attn", "cross_attn", "ffn")


@dataclass(frozen=True)
class ToyModelConfig:
    seed: int = 0
    tokens: int = 16
    dim: int = 8
    cond_tokens: int = 4
    step_size: float = 0.05
    weight_scale: float = 0.3

    def __post_init__(self):
        if self.tokens < 1 or self.dim < 1 or self.cond_tokens < 1:
            raise ValidationError("tokens, dim, and cond_tokens must be >= 1")
        if not 0 < self.step_size < 1:
            raise ValidationError("step_size must be in (0, 1)")


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # broadcast-and-sum keeps the reduction order fixed (no BLAS dispatch)
    return (a[:, :, None] * b[None, :, :]).sum(axis=1)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def array_digest(arr: np.ndarray) -> str:
    return sha256_hex(np.ascontiguousarray(arr, dtype=np.float64).tobytes())


class ToyDit:
    """Seeded weights over a topology; component names pick the behavior."""

    def __init__(self, topology: ModelTopology, config: ToyModelConfig = ToyModelConfig()):
        for g in topology.block_groups:
            for c in g.components:
                if c.name not in COMPONENT_KINDS:
                    raise ValidationError(
                        f"toy model only implements {COMPONENT_KINDS}, "
                        f"got component {c.name!r} in group {g.name!r}"
                    )
        self.topology = topology
        self.config = config
        rng = make_rng(config.seed)
        scale = config.weight_scale / np.sqrt(config.dim)
        d, hidden = config.dim, 2 * config.dim

        # draw order: every (group, block, component) in cell order, then the
        # condition matrix, then the initial state
        self._params: dict[tuple[int, int, int], tuple[np.ndarray, ...]] = {}
        self._draws: list[np.ndarray] = []

        def draw(*shape: int) -> np.ndarray:
            w = rng.standard_normal(shape) * scale
            self._draws.append(w)
            return w

        for gi, group in enumerate(topology.block_groups):
            for b in range(group.block_count):
                for ci, comp in enumerate(group.components):
                    if comp.name == "ffn":
                        self._params[(gi, b, ci)] = (draw(d, hidden), draw(hidden, d))
                    else:
                        self._params[(gi, b, ci)] = (draw(d, d), draw(d, d), draw(d, d))
        self.cond = rng.standard_normal((config.cond_tokens, d)) * scale
        self._draws.append(self.cond)
        self.init_state = rng.standard_normal((config.tokens, d))
        self._draws.append(self.init_state)

        self._baseline: np.ndarray | None = None

    def weights_digest(self) -> str:
        return sha256_hex(b"".join(w.tobytes() for w in self._draws))

    # -- component forward passes ------------------------------------------

    def component_output(self, gi: int, b: int, ci: int, x: np.ndarray) -> np.ndarray:
        kind = self.topology.block_groups[gi].components[ci].name
        params = self._params[(gi, b, ci)]
        if kind == "ffn":
            w1, w2 = params
            return _mm(np.tanh(_mm(x, w1)), w2)
        wq, wk, wv = params
        q = _mm(x, wq)
        if kind == "self_attn":
            k, v = _mm(x, wk), _mm(x, wv)
        else:  # cross_attn: keys/values from the fixed condition matrix
            k, v = _mm(self.cond, wk), _mm(self.cond, wv)
        attn = _softmax_rows(_mm(q, k.T) / np.sqrt(self.config.dim))
        return _mm(attn, v)

    # -- denoising loop -------------------------------------------------------

    def denoise(self, schedule: CachingSchedule) -> np.ndarray:
        """Run the full denoising trajectory under the schedule.

        Each step passes the state through every block with residual adds;
        cached cells replay the tensor stored at their last recompute. The
        state then moves against the stack output: s <- s - step_size * stack(s).
        """
        if schedule.topology != self.topology:
            raise TopologyMismatchError(
                f"schedule is for {schedule.topology.name!r} "
                f"({schedule.topology.steps} steps), model wants {self.topology.name!r} "
                f"({self.topology.steps} steps)"
            )
        schedule.validate()
        topo = self.topology
        cache: dict[tuple[int, int, int], np.ndarray] = {}
        state = self.init_state.copy()
        for step in range(topo.steps):
            h = state
            for gi, group in enumerate(topo.block_groups):
                for b in range(group.block_count):
                    for ci in range(len(group.components)):
                        if schedule.bits[topo.cell_index(step, gi, b, ci)]:
                            out = self.component_output(gi, b, ci, h)
                            cache[(gi, b, ci)] = out
                        else:
                            out = cache[(gi, b, ci)]
                        h = h + out
            state = state - self.config.step_size * h
        return state

    def baseline_state(self) -> np.ndarray:
        if self._baseline is None:
            self._baseline = self.denoise(CachingSchedule.new_full_recompute(self.topology))
        return self._baseline

    def quality_loss(self, schedule: CachingSchedule) -> float:
        """Relative Frobenius drift against the full-recompute trajectory."""
        baseline = self.baseline_state()
        drift = np.linalg.norm(self.denoise(schedule) - baseline)
        return float(drift / np.linalg.norm(baseline))


class ToyEvaluator:
    """In-process evaluator: exact schedule cost plus toy-model quality loss."""

    def __init__(self, topology: ModelTopology, config: ToyModelConfig = ToyModelConfig()):
        self.model = ToyDit(topology, config)

    def evaluate(self, schedules: Sequence[CachingSchedule]) -> list[ObjectiveVector]:
        return [
            ObjectiveVector(
                cost_tmacs=schedule_cost(s).total_tmacs,
                quality_loss=self.model.quality_loss(s),
            )
            for s in schedules
        ]
