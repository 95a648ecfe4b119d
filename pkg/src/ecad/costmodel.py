"""Analytical compute-cost model for caching schedules.

Costs are accumulated as integer MMACs (GMAC weights x1000) so that every
reported number is exact: flipping one bit changes the total by exactly that
cell's weight. TMAC figures are a derived float view (MMACs / 1e6).

Also provides closed-form MAC counts for transformer components (used to sanity
check config weights against architecture dimensions) and wall-clock latency
normalization across hardware baselines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .schedule import CachingSchedule

MMACS_PER_TMAC = 1_000_000


@dataclass(frozen=True)
class CostBreakdown:
    """Exact integer MMAC totals with per-step and per-component-kind splits."""

    total_mmacs: int
    overhead_mmacs: int
    per_step_mmacs: tuple[int, ...]
    per_kind_mmacs: dict[str, int]

    @property
    def total_tmacs(self) -> float:
        return self.total_mmacs / MMACS_PER_TMAC

    @property
    def per_step_tmacs(self) -> tuple[float, ...]:
        return tuple(m / MMACS_PER_TMAC for m in self.per_step_mmacs)

    @property
    def per_kind_tmacs(self) -> dict[str, float]:
        return {k: m / MMACS_PER_TMAC for k, m in self.per_kind_mmacs.items()}

    def to_dict(self) -> dict:
        return {
            "total_tmacs": self.total_tmacs,
            "overhead_tmacs": self.overhead_mmacs / MMACS_PER_TMAC,
            "per_step_tmacs": list(self.per_step_tmacs),
            "per_kind_tmacs": self.per_kind_tmacs,
        }


def schedule_cost(schedule: CachingSchedule) -> CostBreakdown:
    """Total MACs of one denoising run under the schedule.

    Sum of per-cell weights over recomputed cells plus the per-run non-block
    overhead; cached cells cost nothing.
    """
    topo = schedule.topology
    view = schedule.step_view.astype(np.int64)
    weights = topo.step_weight_mmacs
    per_step = view @ weights
    block_total = int(per_step.sum())

    kind_codes = topo.step_kind_codes
    kind_cells = view.sum(axis=0)  # recompute count per within-step cell
    per_kind = {name: 0 for name in topo.kind_names}
    for code, name in enumerate(topo.kind_names):
        mask = kind_codes == code
        per_kind[name] = int((kind_cells[mask] * weights[mask]).sum())

    return CostBreakdown(
        total_mmacs=topo.overhead_mmacs + block_total,
        overhead_mmacs=topo.overhead_mmacs,
        per_step_mmacs=tuple(int(x) for x in per_step),
        per_kind_mmacs=per_kind,
    )


# -- closed-form transformer MAC counts ------------------------------------------


@dataclass(frozen=True)
class AttentionDims:
    """Architecture dimensions for the analytical MAC formulas.

    ``tokens`` counts query tokens per forward pass (classifier-free guidance
    doubles it); ``context_tokens`` is the cross-attention key/value length.
    """

    tokens: int
    dim: int
    heads: int
    ffn_dim: int
    context_tokens: int = 0

    def self_attention_macs(self) -> int | float:
        return self_attention_macs(self.tokens, self.dim, self.heads)

    def cross_attention_macs(self) -> int | float:
        return cross_attention_macs(self.tokens, self.context_tokens, self.dim, self.heads)

    def ffn_macs(self) -> int | float:
        return ffn_macs(self.tokens, self.ffn_dim)


def _halved(doubled: int) -> int | float:
    return doubled // 2 if doubled % 2 == 0 else doubled / 2


def self_attention_macs(tokens: int, dim: int, heads: int) -> int | float:
    """QKV+output projections, attention matmuls, and softmax-adjacent work."""
    return _halved(8 * tokens * dim * dim + 4 * tokens * tokens * dim + 5 * tokens * tokens * heads)


def cross_attention_macs(tokens: int, context_tokens: int, dim: int, heads: int) -> int | float:
    """Symmetric in (tokens, context_tokens)."""
    return _halved(
        4 * dim * dim * (tokens + context_tokens)
        + 4 * tokens * context_tokens * dim
        + 5 * tokens * context_tokens * heads
    )


def ffn_macs(tokens: int, ffn_dim: int) -> int:
    """Two projections through a 4x hidden expansion plus activation overhead."""
    return 8 * tokens * ffn_dim * ffn_dim + 12 * tokens * ffn_dim


# -- latency normalization ----------------------------------------------------------


def normalized_latency(
    cached_other_ms: float, unaccel_other_ms: float, unaccel_ours_ms: float
) -> float:
    """Project a latency measured on other hardware onto our baseline.

    Scales our unaccelerated wall time by the cached/unaccelerated ratio
    observed elsewhere; invariant under rescaling both other-hardware numbers.
    """
    for name, v in (
        ("cached_other_ms", cached_other_ms),
        ("unaccel_other_ms", unaccel_other_ms),
        ("unaccel_ours_ms", unaccel_ours_ms),
    ):
        if not np.isfinite(v) or v <= 0:
            raise ValidationError(f"{name} must be finite and > 0, got {v}")
    return (cached_other_ms / unaccel_other_ms) * unaccel_ours_ms


def speedup(baseline_ms: float, accelerated_ms: float) -> float:
    if not np.isfinite(baseline_ms) or baseline_ms <= 0:
        raise ValidationError(f"baseline_ms must be finite and > 0, got {baseline_ms}")
    if not np.isfinite(accelerated_ms) or accelerated_ms <= 0:
        raise ValidationError(f"accelerated_ms must be finite and > 0, got {accelerated_ms}")
    return baseline_ms / accelerated_ms
