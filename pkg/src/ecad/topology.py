"""Model topology: the static block/component structure a schedule indexes into.

A topology describes, per denoising run: the number of inference steps, ordered
block groups (each ``block_count`` identical blocks of ordered cacheable
components), and a per-component MAC weight in GMACs. Weights are quantized to
integer MMACs (x1000) at construction so cost arithmetic is exact.

Topologies are loaded from JSON config files; the package ships three under
``ecad/configs`` ("pixart-like", "flux-like", "toy").
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .canonical import dumps, sha256_hex
from .errors import ScheduleFormatError, ValidationError

CONFIG_FORMAT_VERSION = 1

#: Weights are accepted only if they round cleanly to integer MMACs.
_QUANT_TOL = 1e-6


def _quantize_gmacs(weight: float, what: str) -> int:
    if not np.isfinite(weight) or weight < 0:
        raise ValidationError(f"{what}: mac_weight must be finite and >= 0, got {weight}")
    mmacs = round(weight * 1000.0)
    if abs(weight * 1000.0 - mmacs) > _QUANT_TOL:
        raise ValidationError(f"{what}: mac_weight {weight} is not an integer number of MMACs")
    return int(mmacs)


@dataclass(frozen=True)
class ComponentSpec:
    """One cacheable unit inside a block (e.g. self-attention)."""

    name: str
    mac_weight: float  # GMACs per execution

    def __post_init__(self):
        if not self.name:
            raise ValidationError("component name must be non-empty")
        _quantize_gmacs(self.mac_weight, f"component {self.name!r}")

    @property
    def weight_mmacs(self) -> int:
        return _quantize_gmacs(self.mac_weight, f"component {self.name!r}")


@dataclass(frozen=True)
class BlockGroup:
    """A run of identical blocks sharing one component list."""

    name: str
    block_count: int
    components: tuple[ComponentSpec, ...]

    def __post_init__(self):
        if not self.name:
            raise ValidationError("block group name must be non-empty")
        if self.block_count < 1:
            raise ValidationError(f"group {self.name!r}: block_count must be >= 1")
        if not self.components:
            raise ValidationError(f"group {self.name!r}: needs at least one component")
        names = [c.name for c in self.components]
        if len(set(names)) != len(names):
            raise ValidationError(f"group {self.name!r}: duplicate component names {names}")

    @property
    def cells_per_step(self) -> int:
        return self.block_count * len(self.components)


@dataclass(frozen=True)
class ModelTopology:
    name: str
    steps: int
    block_groups: tuple[BlockGroup, ...]
    non_block_overhead_tmacs: float = 0.0

    def __post_init__(self):
        if not self.name:
            raise ValidationError("topology name must be non-empty")
        if self.steps < 1:
            raise ValidationError(f"steps must be >= 1, got {self.steps}")
        if not self.block_groups:
            raise ValidationError("topology needs at least one block group")
        names = [g.name for g in self.block_groups]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate block group names {names}")
        if not np.isfinite(self.non_block_overhead_tmacs) or self.non_block_overhead_tmacs < 0:
            raise ValidationError("non_block_overhead_tmacs must be finite and >= 0")

    # -- cell indexing ----------------------------------------------------

    @cached_property
    def cells_per_step(self) -> int:
        return sum(g.cells_per_step for g in self.block_groups)

    @cached_property
    def total_cells(self) -> int:
        return self.steps * self.cells_per_step

    @cached_property
    def _group_offsets(self) -> tuple[int, ...]:
        offsets = []
        acc = 0
        for g in self.block_groups:
            offsets.append(acc)
            acc += g.cells_per_step
        return tuple(offsets)

    def cell_index(self, step: int, group: int, block: int, component: int) -> int:
        """Flat bit index; step-major, then group, block, component."""
        g = self.block_groups[group]
        if not 0 <= step < self.steps:
            raise IndexError(f"step {step} out of range [0, {self.steps})")
        if not 0 <= block < g.block_count:
            raise IndexError(f"block {block} out of range for group {g.name!r}")
        if not 0 <= component < len(g.components):
            raise IndexError(f"component {component} out of range for group {g.name!r}")
        within = self._group_offsets[group] + block * len(g.components) + component
        return step * self.cells_per_step + within

    def group_index(self, name: str) -> int:
        for i, g in enumerate(self.block_groups):
            if g.name == name:
                return i
        raise ValidationError(f"no block group named {name!r}")

    def kind_sites(self, component_name: str) -> list[tuple[int, int]]:
        """(group_idx, component_idx) pairs whose component has the given name."""
        sites = [
            (gi, ci)
            for gi, g in enumerate(self.block_groups)
            for ci, c in enumerate(g.components)
            if c.name == component_name
        ]
        if not sites:
            raise ValidationError(f"no component named {component_name!r} in topology {self.name!r}")
        return sites

    def kind_blocks(self, component_name: str) -> list[tuple[int, int, int]]:
        """(group_idx, block_idx, component_idx) for every block holding the kind."""
        return [
            (gi, b, ci)
            for gi, ci in self.kind_sites(component_name)
            for b in range(self.block_groups[gi].block_count)
        ]

    # -- weights -----------------------------------------------------------

    @cached_property
    def step_weight_mmacs(self) -> np.ndarray:
        """Per-cell integer MMAC weights for one step (pattern repeats every step)."""
        w = np.empty(self.cells_per_step, dtype=np.int64)
        pos = 0
        for g in self.block_groups:
            comp = np.array([c.weight_mmacs for c in g.components], dtype=np.int64)
            w[pos : pos + g.cells_per_step] = np.tile(comp, g.block_count)
            pos += g.cells_per_step
        w.setflags(write=False)
        return w

    @cached_property
    def full_step_mmacs(self) -> int:
        return int(self.step_weight_mmacs.sum())

    @property
    def overhead_mmacs(self) -> int:
        return round(self.non_block_overhead_tmacs * 1e6)

    @cached_property
    def kind_names(self) -> tuple[str, ...]:
        """Group-qualified component kind names, in cell order."""
        return tuple(f"{g.name}.{c.name}" for g in self.block_groups for c in g.components)

    @cached_property
    def step_kind_codes(self) -> np.ndarray:
        """Per-cell index into kind_names for one step."""
        codes = np.empty(self.cells_per_step, dtype=np.int64)
        pos = 0
        base = 0
        for g in self.block_groups:
            n = len(g.components)
            codes[pos : pos + g.cells_per_step] = np.tile(np.arange(base, base + n), g.block_count)
            pos += g.cells_per_step
            base += n
        codes.setflags(write=False)
        return codes

    # -- structure ops -----------------------------------------------------

    def with_steps(self, steps: int) -> "ModelTopology":
        """Same block structure and weights at a different step count."""
        return replace(self, steps=steps)

    def same_block_structure(self, other: "ModelTopology") -> bool:
        return self.block_groups == other.block_groups

    # -- serialization -----------------------------------------------------

    def to_config_dict(self) -> dict:
        return {
            "format_version": CONFIG_FORMAT_VERSION,
            "name": self.name,
            "steps": self.steps,
            "non_block_overhead_tmacs": self.non_block_overhead_tmacs,
            "groups": [
                {
                    "name": g.name,
                    "blocks": g.block_count,
                    "components": [
                        {"name": c.name, "mac_weight": c.mac_weight} for c in g.components
                    ],
                }
                for g in self.block_groups
            ],
        }

    @classmethod
    def from_config_dict(cls, cfg: dict) -> "ModelTopology":
        try:
            if cfg["format_version"] != CONFIG_FORMAT_VERSION:
                raise ValidationError(
                    f"unsupported topology format_version {cfg['format_version']!r}"
                )
            groups = tuple(
                BlockGroup(
                    name=g["name"],
                    block_count=int(g["blocks"]),
                    components=tuple(
                        ComponentSpec(name=c["name"], mac_weight=float(c["mac_weight"]))
                        for c in g["components"]
                    ),
                )
                for g in cfg["groups"]
            )
            return cls(
                name=cfg["name"],
                steps=int(cfg["steps"]),
                block_groups=groups,
                non_block_overhead_tmacs=float(cfg.get("non_block_overhead_tmacs", 0.0)),
            )
        except (KeyError, TypeError) as exc:
            raise ScheduleFormatError(f"bad topology config: {exc!r}") from exc

    @property
    def topology_hash(self) -> str:
        return sha256_hex(dumps(self.to_config_dict()))


# -- config loading ---------------------------------------------------------

_BUILTIN = ("pixart-like", "flux-like", "toy")


def builtin_topology_names() -> tuple[str, ...]:
    return _BUILTIN


def load_topology(name_or_path: str | Path) -> ModelTopology:
    """Load a topology config by builtin name or JSON file path."""
    name = str(name_or_path)
    if name in _BUILTIN:
        text = resources.files("ecad.configs").joinpath(f"{name}.json").read_text("utf-8")
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise ValidationError(
                f"unknown topology {name!r}: not one of {_BUILTIN} and no such file"
            )
        text = path.read_text("utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScheduleFormatError(f"topology config is not valid JSON: {exc}") from exc
    return ModelTopology.from_config_dict(cfg)
