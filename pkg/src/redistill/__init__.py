"""redistill: synthesis of memory-efficient array redistribution programs.

Redistributes multi-dimensional arrays between two sharding layouts over
a logical device mesh using sequences of MPI-style collectives
(allgather, dynslice, alltoall, allpermute), with a simulator that proves
each plan correct and memory-bounded.
"""

from .core import (
    DistDim,
    DistType,
    Mesh,
    MeshDecomposition,
    decompose_mesh,
    decompose_primes,
    prime_factors,
    validate_type,
    well_formed,
)
from .collectives import (
    AllGather,
    AllPermute,
    AllToAll,
    CollectiveOp,
    DynSlice,
    Plan,
    Step,
    apply_low_level,
    apply_typed,
    apply_weak,
    plan_from_typed,
    typed_steps_of,
)
from .cost import CostReport, count_transfers, plan_cost, step_cost
from .errors import (
    Divergence,
    InvalidRedistribution,
    NonTermination,
    ParseError,
    PatternMismatch,
    PreconditionViolation,
    RedistError,
    SearchError,
    WellFormednessError,
)
from .normalizer import (
    TypedSequence,
    eliminate_peak,
    expand_multi_axis,
    is_normal_form,
    move_edge,
    naive_sequence,
    normalize,
)
from .search import (
    SynthesisOptions,
    SynthesisResult,
    WeakEdge,
    WeakPath,
    lower_weak_path,
    place_final_permute,
    shortest_weak_path,
    successors,
    synthesize,
)
from .semantics import (
    BaseOffsetMap,
    DeviceAssignment,
    DeviceMap,
    assignment_equivalent,
    find_permutation,
    match_offset_maps,
    offset_map_of,
    weak_equal,
)
from .simulator import (
    DeviceState,
    ExecutionTrace,
    VerificationReport,
    execute,
    materialize,
    verify,
)
from .syntax import parse_mesh, parse_type

__version__ = "0.1.0"

__all__ = [
    "AllGather",
    "AllPermute",
    "AllToAll",
    "BaseOffsetMap",
    "CollectiveOp",
    "CostReport",
    "DeviceAssignment",
    "DeviceMap",
    "DeviceState",
    "DistDim",
    "DistType",
    "Divergence",
    "DynSlice",
    "ExecutionTrace",
    "InvalidRedistribution",
    "Mesh",
    "MeshDecomposition",
    "NonTermination",
    "ParseError",
    "PatternMismatch",
    "Plan",
    "PreconditionViolation",
    "RedistError",
    "SearchError",
    "Step",
    "SynthesisOptions",
    "SynthesisResult",
    "TypedSequence",
    "VerificationReport",
    "WeakEdge",
    "WeakPath",
    "WellFormednessError",
    "apply_low_level",
    "apply_typed",
    "apply_weak",
    "assignment_equivalent",
    "count_transfers",
    "decompose_mesh",
    "decompose_primes",
    "eliminate_peak",
    "execute",
    "expand_multi_axis",
    "find_permutation",
    "is_normal_form",
    "lower_weak_path",
    "match_offset_maps",
    "materialize",
    "move_edge",
    "naive_sequence",
    "normalize",
    "offset_map_of",
    "parse_mesh",
    "parse_type",
    "place_final_permute",
    "plan_cost",
    "plan_from_typed",
    "prime_factors",
    "shortest_weak_path",
    "step_cost",
    "successors",
    "synthesize",
    "typed_steps_of",
    "validate_type",
    "verify",
    "weak_equal",
    "well_formed",
]
