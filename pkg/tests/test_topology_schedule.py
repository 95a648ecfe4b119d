"""Topology construction, cell indexing, schedule packing and serialization."""

import base64
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecad.canonical import dumps
from ecad.errors import (
    FirstStepViolationError,
    LengthMismatchError,
    ScheduleFormatError,
    TopologyMismatchError,
    ValidationError,
)
from ecad.schedule import (
    CachingSchedule,
    load_population,
    pack_bits,
    save_population,
    structural_topology,
    unpack_bits,
)
from ecad.topology import BlockGroup, ComponentSpec, ModelTopology, load_topology


# -- topology -----------------------------------------------------------------


def test_builtin_topologies_load():
    for name, steps, cells_per_step in [
        ("pixart-like", 20, 28 * 3),
        ("flux-like", 20, 19 * 3 + 38 * 3),
        ("toy", 20, 6 * 3),
    ]:
        topo = load_topology(name)
        assert topo.name == name
        assert topo.steps == steps
        assert topo.cells_per_step == cells_per_step
        assert topo.total_cells == steps * cells_per_step


def test_unknown_topology_rejected():
    with pytest.raises(ValidationError):
        load_topology("no-such-topology")


def test_cell_index_is_step_major(toy_topology):
    topo = toy_topology
    assert topo.cell_index(0, 0, 0, 0) == 0
    assert topo.cell_index(0, 0, 0, 1) == 1
    assert topo.cell_index(0, 0, 1, 0) == 3
    assert topo.cell_index(1, 0, 0, 0) == topo.cells_per_step
    # enumeration order covers every cell exactly once
    seen = set()
    for s in range(topo.steps):
        for gi, g in enumerate(topo.block_groups):
            for b in range(g.block_count):
                for ci in range(len(g.components)):
                    seen.add(topo.cell_index(s, gi, b, ci))
    assert seen == set(range(topo.total_cells))


def test_cell_index_bounds_checked(toy_topology):
    with pytest.raises(IndexError):
        toy_topology.cell_index(toy_topology.steps, 0, 0, 0)
    with pytest.raises(IndexError):
        toy_topology.cell_index(0, 99, 0, 0)


def test_topology_hash_covers_weights():
    base = load_topology("toy").to_config_dict()
    changed = json.loads(dumps(base))
    changed["groups"][0]["components"][0]["mac_weight"] += 0.5
    a = ModelTopology.from_config_dict(base)
    b = ModelTopology.from_config_dict(changed)
    assert a.topology_hash != b.topology_hash


def test_config_round_trip(pixart_topology):
    again = ModelTopology.from_config_dict(pixart_topology.to_config_dict())
    assert again.topology_hash == pixart_topology.topology_hash
    assert again.step_weight_mmacs.tolist() == pixart_topology.step_weight_mmacs.tolist()


def test_with_steps_preserves_structure(toy_topology):
    doubled = toy_topology.with_steps(40)
    assert doubled.steps == 40
    assert doubled.cells_per_step == toy_topology.cells_per_step
    assert doubled.same_block_structure(toy_topology)


def test_mmac_quantization_is_exact():
    # GMAC weights in the configs are millis-precision; MMAC conversion must be lossless
    comp = ComponentSpec("x", 2.72)
    assert comp.weight_mmacs == 2720
    with pytest.raises(ValidationError):
        ComponentSpec("x", 1.2345678e-5)  # below quantization resolution


# -- bit packing --------------------------------------------------------------


def test_pack_unpack_round_trip_small():
    bits = np.array([1, 0, 1, 1, 0, 0, 0, 1, 1, 0], dtype=np.uint8)
    assert np.array_equal(unpack_bits(pack_bits(bits), 10), bits)


def test_pack_is_little_endian_standard_base64():
    bits = np.zeros(8, dtype=np.uint8)
    bits[0] = 1  # lowest bit of the first byte
    assert pack_bits(bits) == base64.b64encode(bytes([0b00000001])).decode()
    bits = np.zeros(8, dtype=np.uint8)
    bits[7] = 1
    assert pack_bits(bits) == base64.b64encode(bytes([0b10000000])).decode()


@settings(max_examples=200)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=600))
def test_pack_unpack_round_trip_property(bits):
    arr = np.array(bits, dtype=np.uint8)
    assert np.array_equal(unpack_bits(pack_bits(arr), len(arr)), arr)


def test_unpack_rejects_bad_base64():
    with pytest.raises(ScheduleFormatError):
        unpack_bits("not@base64!", 8)


def test_unpack_rejects_wrong_length():
    packed = pack_bits(np.ones(16, dtype=np.uint8))
    with pytest.raises(LengthMismatchError):
        unpack_bits(packed, 24)


def test_unpack_rejects_nonzero_padding_bits():
    # 10 cells -> 2 bytes; bits 10..15 must be zero
    packed = base64.b64encode(bytes([0xFF, 0xFF])).decode()
    with pytest.raises(ScheduleFormatError):
        unpack_bits(packed, 10)


# -- schedule semantics --------------------------------------------------------


def test_full_recompute_schedule(toy_topology):
    s = CachingSchedule.new_full_recompute(toy_topology)
    assert s.recompute_count == toy_topology.total_cells
    assert s.cached_fraction == 0.0
    s.validate()


def test_first_step_repair_is_explicit_and_idempotent(toy_topology):
    bits = np.zeros(toy_topology.total_cells, dtype=np.uint8)
    s = CachingSchedule.from_bits(toy_topology, bits)
    assert not s.first_step_is_full_recompute
    repaired = s.enforce_first_step_recompute()
    assert repaired.first_step_is_full_recompute
    assert repaired.step_view[0].all()
    assert repaired.enforce_first_step_recompute() is repaired


def test_validate_flags_first_step_violation(toy_topology):
    s = CachingSchedule.new_full_recompute(toy_topology)
    s.bits[0] = 0  # direct mutation bypasses the operators' enforcement
    with pytest.raises(FirstStepViolationError):
        s.validate()


def test_step_view_shape_and_read_only(toy_topology):
    s = CachingSchedule.new_full_recompute(toy_topology)
    view = s.step_view
    assert view.shape == (toy_topology.steps, toy_topology.cells_per_step)
    with pytest.raises(ValueError):
        view[1, 0] = 0


def test_schedule_hash_tracks_bits(toy_topology):
    a = CachingSchedule.new_full_recompute(toy_topology)
    b = CachingSchedule.new_full_recompute(toy_topology)
    assert a.schedule_hash == b.schedule_hash
    b.bits[toy_topology.cells_per_step] = 0
    assert a.schedule_hash != b.schedule_hash


def test_upscale_then_downscale_is_identity(toy_topology):
    rng = np.random.default_rng(5)
    for _ in range(25):
        bits = (rng.random(toy_topology.total_cells) < 0.5).astype(np.uint8)
        s = CachingSchedule.from_bits(toy_topology, bits)
        back = s.upscale_steps().downscale_steps()
        assert np.array_equal(back.bits, s.bits)
        assert back.topology.steps == s.topology.steps


def test_downscale_ors_step_pairs(toy_topology):
    s = CachingSchedule.new_full_recompute(toy_topology)
    arr = np.zeros((toy_topology.steps, toy_topology.cells_per_step), dtype=np.uint8)
    arr[0] = 1
    arr[2, 5] = 1  # only the first of the pair (2, 3) recomputes cell 5
    s = CachingSchedule.from_bits(toy_topology, arr.reshape(-1))
    down = s.downscale_steps()
    assert down.step_view[1, 5] == 1
    assert down.step_view[1, 6] == 0


def test_downscale_rejects_odd_steps(toy_topology):
    s = CachingSchedule.new_full_recompute(toy_topology.with_steps(5))
    with pytest.raises(ValidationError):
        s.downscale_steps()


# -- serialization --------------------------------------------------------------


def test_serialize_deserialize_round_trip(toy_topology):
    rng = np.random.default_rng(11)
    bits = (rng.random(toy_topology.total_cells) < 0.4).astype(np.uint8)
    s = CachingSchedule.from_bits(toy_topology, bits).enforce_first_step_recompute()
    again = CachingSchedule.deserialize(s.serialize(), toy_topology)
    assert again == s


def test_deserialize_rejects_malformed_json(toy_topology):
    with pytest.raises(ScheduleFormatError):
        CachingSchedule.deserialize("{ nope", toy_topology)


def test_deserialize_rejects_wrong_topology(toy_topology, pixart_topology):
    s = CachingSchedule.new_full_recompute(toy_topology)
    with pytest.raises(TopologyMismatchError):
        CachingSchedule.deserialize(s.serialize(), pixart_topology)


def test_deserialize_rejects_cached_first_step(toy_topology):
    s = CachingSchedule.new_full_recompute(toy_topology)
    obj = s.to_dict()
    bits = np.array(unpack_bits(obj["bits"], toy_topology.total_cells))
    bits[0] = 0
    obj["bits"] = pack_bits(bits)
    with pytest.raises(FirstStepViolationError):
        CachingSchedule.deserialize(dumps(obj), toy_topology)


def test_structural_topology_rebuilds_shape(toy_topology):
    s = CachingSchedule.new_full_recompute(toy_topology)
    rebuilt = structural_topology(s.to_dict())
    assert rebuilt.steps == toy_topology.steps
    assert rebuilt.cells_per_step == toy_topology.cells_per_step
    for got, want in zip(rebuilt.block_groups, toy_topology.block_groups):
        assert got.name == want.name
        assert got.block_count == want.block_count
        assert [c.name for c in got.components] == [c.name for c in want.components]
    # weightless by design
    assert int(rebuilt.step_weight_mmacs.sum()) == 0
    # a schedule serialized against the real topology deserializes against the rebuild
    assert CachingSchedule.deserialize(s.serialize(), rebuilt).schedule_hash == s.schedule_hash


def test_population_file_round_trip(tmp_path, toy_topology):
    rng = np.random.default_rng(3)
    schedules = [
        CachingSchedule.from_bits(
            toy_topology, (rng.random(toy_topology.total_cells) < 0.5).astype(np.uint8)
        ).enforce_first_step_recompute()
        for _ in range(7)
    ]
    path = tmp_path / "pop.json"
    save_population(path, schedules)
    loaded = load_population(path, toy_topology)
    assert loaded == schedules
