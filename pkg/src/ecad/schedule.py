"""Caching schedules: binary recompute/reuse decisions over a topology.

A schedule holds one bit per (step, group, block, component) cell, flattened
step-major. Bit 1 means "recompute this component at this step", bit 0 means
"reuse the cached output from the most recent recompute". Step 0 must always
be full recompute: there is nothing in the cache yet.

The on-disk form is canonical JSON with the bit payload packed little-endian
(bit i lands in byte i//8 at position i%8) and base64-encoded with padding.
"""

from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .canonical import dumps, sha256_hex
from .errors import (
    FirstStepViolationError,
    LengthMismatchError,
    ScheduleFormatError,
    TopologyMismatchError,
    ValidationError,
)
from .topology import ModelTopology

SCHEDULE_FORMAT_VERSION = 1


def pack_bits(bits: np.ndarray) -> str:
    """Pack a {0,1} vector little-endian and base64-encode it (standard, padded)."""
    packed = np.packbits(bits.astype(np.uint8), bitorder="little").tobytes()
    return base64.b64encode(packed).decode("ascii")


def unpack_bits(encoded: str, total_cells: int) -> np.ndarray:
    try:
        raw = base64.b64decode(encoded.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise ScheduleFormatError(f"bits payload is not valid base64: {exc}") from exc
    expected_bytes = (total_cells + 7) // 8
    if len(raw) != expected_bytes:
        raise LengthMismatchError(
            f"bits payload holds {len(raw)} bytes, topology needs {expected_bytes}"
        )
    as_bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    if as_bits[total_cells:].any():
        raise ScheduleFormatError("nonzero padding bits in packed payload")
    return as_bits[:total_cells].copy()


@dataclass
class CachingSchedule:
    """Bit vector plus the topology it indexes. Treat instances as immutable."""

    topology: ModelTopology
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1 or bits.shape[0] != self.topology.total_cells:
            raise LengthMismatchError(
                f"expected {self.topology.total_cells} bits, got shape {bits.shape}"
            )
        if not np.isin(bits, (0, 1)).all():
            raise ValidationError("schedule bits must be 0 or 1")
        self.bits = bits.astype(np.uint8)

    # -- constructors -------------------------------------------------------

    @classmethod
    def new_full_recompute(cls, topology: ModelTopology) -> "CachingSchedule":
        return cls(topology, np.ones(topology.total_cells, dtype=np.uint8))

    @classmethod
    def from_bits(cls, topology: ModelTopology, bits: np.ndarray) -> "CachingSchedule":
        return cls(topology, np.array(bits, dtype=np.uint8))

    # -- bit access ----------------------------------------------------------

    def get(self, step: int, group: int, block: int, component: int) -> int:
        return int(self.bits[self.topology.cell_index(step, group, block, component)])

    @property
    def step_view(self) -> np.ndarray:
        """(steps, cells_per_step) read-only view of the flat vector."""
        v = self.bits.reshape(self.topology.steps, self.topology.cells_per_step)
        v.setflags(write=False)
        return v

    # -- invariants -----------------------------------------------------------

    @property
    def first_step_is_full_recompute(self) -> bool:
        return bool(self.bits[: self.topology.cells_per_step].all())

    def enforce_first_step_recompute(self) -> "CachingSchedule":
        """Idempotent repair: force every step-0 cell to recompute."""
        if self.first_step_is_full_recompute:
            return self
        bits = self.bits.copy()
        bits[: self.topology.cells_per_step] = 1
        return CachingSchedule(self.topology, bits)

    def validate(self) -> None:
        if not self.first_step_is_full_recompute:
            raise FirstStepViolationError("step 0 must recompute every component")

    # -- metrics ---------------------------------------------------------------

    @property
    def cached_fraction(self) -> float:
        return float((self.bits == 0).sum()) / self.topology.total_cells

    @property
    def recompute_count(self) -> int:
        return int(self.bits.sum())

    @property
    def schedule_hash(self) -> str:
        packed = np.packbits(self.bits, bitorder="little").tobytes()
        return sha256_hex(packed)

    # -- step rescaling ----------------------------------------------------------

    def upscale_steps(self) -> "CachingSchedule":
        """N -> 2N steps: each source step's decisions are repeated twice."""
        doubled = np.repeat(self.step_view, 2, axis=0).reshape(-1)
        return CachingSchedule(self.topology.with_steps(2 * self.topology.steps), doubled)

    def downscale_steps(self) -> "CachingSchedule":
        """2N -> N steps: a cell recomputes if either source step recomputed it."""
        if self.topology.steps % 2 != 0:
            raise ValidationError(f"cannot halve an odd step count ({self.topology.steps})")
        v = self.step_view
        halved = (v[0::2] | v[1::2]).reshape(-1)
        return CachingSchedule(self.topology.with_steps(self.topology.steps // 2), halved)

    # -- serialization --------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": SCHEDULE_FORMAT_VERSION,
            "topology": self.topology.name,
            "steps": self.topology.steps,
            "groups": [
                {
                    "name": g.name,
                    "blocks": g.block_count,
                    "components": [c.name for c in g.components],
                }
                for g in self.topology.block_groups
            ],
            "bits": pack_bits(self.bits),
        }

    def serialize(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def deserialize(cls, text: str, topology: ModelTopology) -> "CachingSchedule":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScheduleFormatError(f"schedule is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ScheduleFormatError("schedule JSON must be an object")
        try:
            version = obj["format_version"]
            name = obj["topology"]
            steps = obj["steps"]
            groups = obj["groups"]
            encoded = obj["bits"]
        except KeyError as exc:
            raise ScheduleFormatError(f"schedule JSON missing field {exc}") from exc
        if version != SCHEDULE_FORMAT_VERSION:
            raise ScheduleFormatError(f"unsupported schedule format_version {version!r}")

        expected_groups = [
            {
                "name": g.name,
                "blocks": g.block_count,
                "components": [c.name for c in g.components],
            }
            for g in topology.block_groups
        ]
        if name != topology.name or steps != topology.steps or groups != expected_groups:
            raise TopologyMismatchError(
                f"schedule was written for topology {name!r} ({steps} steps), "
                f"not {topology.name!r} ({topology.steps} steps) with matching groups"
            )
        bits = unpack_bits(encoded, topology.total_cells)
        schedule = cls(topology, bits)
        schedule.validate()
        return schedule

    # -- misc -------------------------------------------------------------------------

    def __eq__(self, other) -> bool:
        if not isinstance(other, CachingSchedule):
            return NotImplemented
        return self.topology == other.topology and bool(np.array_equal(self.bits, other.bits))


def structural_topology(schedule_dict: dict) -> ModelTopology:
    """Rebuild a weightless topology from a serialized schedule's own fields.

    Enough structure for deserialization and step rescaling; MAC weights are
    zero, so never feed the result to the cost model.
    """
    try:
        groups = tuple(
            {
                "name": g["name"],
                "blocks": g["blocks"],
                "components": [{"name": c, "mac_weight": 0.0} for c in g["components"]],
            }
            for g in schedule_dict["groups"]
        )
        cfg = {
            "format_version": 1,
            "name": schedule_dict["topology"],
            "steps": schedule_dict["steps"],
            "non_block_overhead_tmacs": 0.0,
            "groups": list(groups),
        }
    except (KeyError, TypeError) as exc:
        raise ScheduleFormatError(f"bad schedule structure: {exc!r}") from exc
    return ModelTopology.from_config_dict(cfg)


# -- population files -----------------------------------------------------------------


def save_population(path: str | Path, schedules: list[CachingSchedule]) -> None:
    """Write a JSON array of schedule objects."""
    body = "[" + ",".join(s.serialize() for s in schedules) + "]"
    Path(path).write_text(body + "\n", "utf-8")


def load_population(path: str | Path, topology: ModelTopology) -> list[CachingSchedule]:
    try:
        arr = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ScheduleFormatError(f"population file is not valid JSON: {exc}") from exc
    if not isinstance(arr, list):
        raise ScheduleFormatError("population file must hold a JSON array")
    return [CachingSchedule.deserialize(dumps(item), topology) for item in arr]
