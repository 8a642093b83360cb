"""Data-transfer cost model and the element-transfer counts behind it.

Costs are in array elements, normalized to the number of devices:
a permute ships every tile once (source local size), a gather produces
the destination tile on every device, an all-to-all reships the source
tile, and a slice is local and free. ``count_transfers`` gives the
un-normalized totals the model is derived from; the gather count uses the
every-pair-within-a-group convention, which deliberately over-counts what
an optimized implementation sends.
"""

from __future__ import annotations

from dataclasses import dataclass

from .collectives import AllGather, AllPermute, AllToAll, CollectiveOp, DynSlice, Step
from .core import DistType
from .errors import PreconditionViolation


@dataclass(frozen=True)
class CostReport:
    per_step: tuple[int, ...]
    total: int
    height: int

    def to_json_dict(self) -> dict:
        return {
            "perStep": list(self.per_step),
            "total": self.total,
            "height": self.height,
        }


def step_cost(t1: DistType, op: CollectiveOp, t2: DistType) -> int:
    """Normalized elements communicated by one collective transition."""
    if isinstance(op, AllPermute):
        return t1.local_size()
    if isinstance(op, DynSlice):
        return 0
    if isinstance(op, AllGather):
        return t2.local_size()
    if isinstance(op, AllToAll):
        return t1.local_size()
    raise PreconditionViolation(f"unknown collective {op!r}")


def _chain(plan_or_seq):
    """Yield (before_type, op, after_type) from a Plan or TypedSequence."""
    if hasattr(plan_or_seq, "steps"):  # Plan
        first = plan_or_seq.source
        for step in plan_or_seq.steps:
            yield step.before_type, step.op, step.after_type
        return
    types, ops = plan_or_seq.types, plan_or_seq.ops
    for k, op in enumerate(ops):
        yield types[k], op, types[k + 1]


def plan_cost(plan_or_seq) -> CostReport:
    """Per-step and total cost plus the height of the whole chain."""
    if hasattr(plan_or_seq, "steps"):
        source = plan_or_seq.source
    else:
        source = plan_or_seq.types[0]
    per_step = []
    height = source.local_size()
    for before, op, after in _chain(plan_or_seq):
        per_step.append(step_cost(before, op, after))
        height = max(height, before.local_size(), after.local_size())
    return CostReport(tuple(per_step), sum(per_step), height)


def count_transfers(step: Step) -> int:
    """Total elements moved across all devices under the model conventions.

    Equals device count times :func:`step_cost` for every operation kind;
    the simulator reports what actually moves, which is never more.
    """
    delta = step.before.mesh.device_count
    op = step.op
    ls1 = step.before_type.local_size()
    if isinstance(op, AllPermute):
        return delta * ls1
    if isinstance(op, DynSlice):
        return 0
    if isinstance(op, AllGather):
        mesh = step.before.mesh
        n = 1
        for a in op.axes:
            n *= mesh.size_of(a)
        return delta * n * ls1
    if isinstance(op, AllToAll):
        return delta * ls1
    raise PreconditionViolation(f"unknown collective {op!r}")
