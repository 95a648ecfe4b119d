"""Evolutionary search for Pareto-optimal caching schedules in iterative
denoising transformer inference."""

__version__ = "0.1.0"

from .costmodel import (
    AttentionDims,
    CostBreakdown,
    cross_attention_macs,
    ffn_macs,
    normalized_latency,
    schedule_cost,
    self_attention_macs,
    speedup,
)
from .errors import (
    CheckpointError,
    CorruptCheckpointError,
    EcadError,
    EvalTimeoutError,
    EvaluationFailedError,
    FirstStepViolationError,
    HandshakeError,
    LengthMismatchError,
    ManifestMismatchError,
    ProtocolError,
    ScheduleFormatError,
    TopologyMismatchError,
    ValidationError,
)
from .nsga2 import (
    Candidate,
    Evaluator,
    GaParams,
    GenerationResult,
    ObjectiveVector,
    crowding_distance,
    dominates,
    environmental_selection,
    non_dominated_sort,
)
from .orchestrator import (
    FrontierPoint,
    GenerationRecord,
    ParetoFrontier,
    RunManifest,
    export_frontier,
    external_evaluate,
    hypervolume_2d,
    load_history,
    overall_frontier,
    resume_run,
    run_hypervolumes,
    select_by_budget,
    start_run,
)
from .protocol import EvalRequest, EvalResponse, ExternalEvaluator, WorkerPool
from .schedule import CachingSchedule, pack_bits, unpack_bits
from .seeding import SeedStrategy, build_initial_population, load_strategy_mix
from .topology import BlockGroup, ComponentSpec, ModelTopology, load_topology
from .toydit import ToyDit, ToyEvaluator, ToyModelConfig

__all__ = [
    "__version__",
    "AttentionDims",
    "BlockGroup",
    "CachingSchedule",
    "Candidate",
    "CheckpointError",
    "ComponentSpec",
    "CorruptCheckpointError",
    "CostBreakdown",
    "EcadError",
    "EvalRequest",
    "EvalResponse",
    "EvalTimeoutError",
    "EvaluationFailedError",
    "Evaluator",
    "ExternalEvaluator",
    "FirstStepViolationError",
    "FrontierPoint",
    "GaParams",
    "GenerationRecord",
    "GenerationResult",
    "HandshakeError",
    "LengthMismatchError",
    "ManifestMismatchError",
    "ModelTopology",
    "ObjectiveVector",
    "ParetoFrontier",
    "ProtocolError",
    "RunManifest",
    "ScheduleFormatError",
    "SeedStrategy",
    "TopologyMismatchError",
    "ToyDit",
    "ToyEvaluator",
    "ToyModelConfig",
    "ValidationError",
    "WorkerPool",
    "build_initial_population",
    "cross_attention_macs",
    "crowding_distance",
    "dominates",
    "environmental_selection",
    "export_frontier",
    "external_evaluate",
    "ffn_macs",
    "hypervolume_2d",
    "load_history",
    "load_strategy_mix",
    "load_topology",
    "non_dominated_sort",
    "normalized_latency",
    "overall_frontier",
    "pack_bits",
    "resume_run",
    "run_hypervolumes",
    "schedule_cost",
    "select_by_budget",
    "self_attention_macs",
    "speedup",
    "start_run",
    "unpack_bits",
]
