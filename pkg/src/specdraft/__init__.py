"""Retrieval-based draft-tree engine for speculative decoding.

Candidate continuations are retrieved from a suffix-array datastore over
a shared corpus and from a per-request cache of the live sequence, fused
into one bounded draft tree, flattened with a tree-attention mask, and
verified greedily against a pluggable oracle.  A roofline cost model and
a simulation harness size the speculation budget and measure acceptance.
"""

from .datastore import (
    Datastore,
    DatastoreFormatError,
    DatastoreQueryConfig,
    build,
    load,
    read_corpus,
    sample_range,
)
from .draft import (
    AcceptResult,
    FlattenedDraft,
    GenerationSession,
    Oracle,
    flatten,
    mask_debug_json,
    pack_mask,
    unpack_mask,
    verify_greedy,
)
from .fusion import (
    DraftNode,
    DraftTree,
    FusionConfig,
    Source,
    calibrate,
    discount,
    merge,
)
from .harness import (
    SimRecord,
    SimulationReport,
    TeacherForcedOracle,
    bench_retrieval,
    load_dataset,
    simulate,
    sweep,
)
from .input_cache import InputCache
from .perf_model import (
    CostRow,
    CostTable,
    HardwareSpec,
    ModelSpec,
    cost_curve,
    expected_speedup,
    forward_time,
    free_budget,
    op_costs,
    relative_cost,
    slope_breakpoint,
)
from .trees import ContinuationNode, ContinuationTree

__version__ = "0.1.0"

__all__ = [
    "AcceptResult",
    "ContinuationNode",
    "ContinuationTree",
    "CostRow",
    "CostTable",
    "Datastore",
    "DatastoreFormatError",
    "DatastoreQueryConfig",
    "DraftNode",
    "DraftTree",
    "FlattenedDraft",
    "FusionConfig",
    "GenerationSession",
    "HardwareSpec",
    "InputCache",
    "ModelSpec",
    "Oracle",
    "SimRecord",
    "SimulationReport",
    "Source",
    "TeacherForcedOracle",
    "bench_retrieval",
    "build",
    "calibrate",
    "cost_curve",
    "discount",
    "expected_speedup",
    "flatten",
    "forward_time",
    "free_budget",
    "load",
    "load_dataset",
    "mask_debug_json",
    "merge",
    "op_costs",
    "pack_mask",
    "read_corpus",
    "relative_cost",
    "sample_range",
    "simulate",
    "slope_breakpoint",
    "sweep",
    "unpack_mask",
    "verify_greedy",
]
