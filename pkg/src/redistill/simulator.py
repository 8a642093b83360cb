"""Tile-level execution of plans on a synthetic global array.

Every element of the global array is identified by its global linear
index, so correctness checks are exact: after executing a plan, every
device must hold precisely the block of ids its terminal assignment
claims. The trace also records per-step peak tile sizes (the memory
story) and how many elements actually crossed between distinct devices
(which the cost model's conventions deliberately over-approximate).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .collectives import AllGather, AllPermute, DynSlice, Plan, Step
from .core import DistType, Mesh, require_well_formed
from .cost import count_transfers, step_cost
from .errors import Divergence, PreconditionViolation
from .semantics import BaseOffsetMap, DeviceAssignment, DeviceMap

#: Refuse to simulate global arrays larger than this (override via env).
DEFAULT_MAX_ELEMENTS = 2**24
_ENV_GUARD = "REDISTILL_MAX_SIM_ELEMENTS"


def _max_elements() -> int:
    value = os.environ.get(_ENV_GUARD)
    return int(value) if value else DEFAULT_MAX_ELEMENTS


@dataclass
class DeviceState:
    """Per-device tiles of the synthetic global array."""

    mesh: Mesh
    global_type: tuple[int, ...]
    offsets: list[tuple[int, ...]]  # by device id
    tiles: list[np.ndarray]  # by device id

    def tile_shape(self) -> tuple[int, ...]:
        return self.tiles[0].shape if self.tiles else ()


@dataclass
class ExecutionTrace:
    steps: list[dict] = field(default_factory=list)
    final: DeviceState | None = None

    def measured_height(self, initial_local_size: int) -> int:
        peaks = [s["peak"] for s in self.steps]
        return max([initial_local_size] + peaks)


def _global_array(global_type: tuple[int, ...]) -> np.ndarray:
    total = int(np.prod(global_type, dtype=np.int64)) if global_type else 1
    if total > _max_elements():
        raise PreconditionViolation(
            f"global array of {total} elements exceeds the simulator guard "
            f"({_max_elements()}); set {_ENV_GUARD} to raise it"
        )
    return np.arange(total, dtype=np.int64).reshape(global_type)


def materialize(mesh: Mesh, t: DistType, phi: DeviceMap | None = None) -> DeviceState:
    """Assign every device its tile of the synthetic global array."""
    require_well_formed(mesh, t)
    phi = phi or DeviceMap.identity(mesh)
    data = _global_array(t.global_type())
    beta = BaseOffsetMap.from_type(mesh, t)
    shape = t.local_type()
    offsets = []
    tiles = []
    for d in range(mesh.device_count):
        off = beta.offsets(phi.coord_of_device(d))
        sel = tuple(slice(o, o + c) for o, c in zip(off, shape))
        offsets.append(off)
        tiles.append(data[sel].copy())
    return DeviceState(mesh, t.global_type(), offsets, tiles)


def _step_peak(step: Step) -> int:
    if isinstance(step.op, AllGather):
        return step.after_type.local_size()
    return step.before_type.local_size()


def _apply_step(state: DeviceState, step: Step) -> tuple[DeviceState, int]:
    """Move tile data to realize the step's terminal assignment.

    Destinations pull each aligned cell of their new block from a device
    currently holding it (themselves if possible), so the returned count
    is what an ideal implementation must actually transfer.
    """
    mesh = state.mesh
    delta = mesh.device_count
    src_shape = step.before_type.local_type()
    dst_shape = step.after_type.local_type()
    rank = len(src_shape)

    by_offset: dict[tuple[int, ...], list[int]] = {}
    for d in range(delta):
        by_offset.setdefault(state.offsets[d], []).append(d)

    wanted = step.after.device_offsets()
    new_tiles: list[np.ndarray] = []
    moved = 0
    for d in range(delta):
        off = wanted[d]
        tile = np.empty(dst_shape, dtype=np.int64)
        ranges = [
            range(off[k] // src_shape[k], -(-(off[k] + dst_shape[k]) // src_shape[k]))
            for k in range(rank)
        ]
        own = state.offsets[d]
        import itertools as _it

        for cell in _it.product(*ranges):
            cell_off = tuple(cell[k] * src_shape[k] for k in range(rank))
            holders = by_offset.get(cell_off)
            if not holders:
                raise Divergence(
                    f"device {d}: no device holds the block at offsets {cell_off} "
                    f"needed for {off}"
                )
            src = d if cell_off == own else holders[0]
            lo = tuple(max(off[k], cell_off[k]) for k in range(rank))
            hi = tuple(
                min(off[k] + dst_shape[k], cell_off[k] + src_shape[k])
                for k in range(rank)
            )
            src_sel = tuple(
                slice(lo[k] - cell_off[k], hi[k] - cell_off[k]) for k in range(rank)
            )
            dst_sel = tuple(slice(lo[k] - off[k], hi[k] - off[k]) for k in range(rank))
            block = state.tiles[src][src_sel]
            tile[dst_sel] = block
            if src != d:
                moved += int(block.size)
        new_tiles.append(tile)
    new_state = DeviceState(mesh, state.global_type, list(wanted), new_tiles)
    return new_state, moved


def execute(state: DeviceState, plan: Plan) -> ExecutionTrace:
    """Run a plan step by step, checking contents against the claimed
    assignment after every step."""
    trace = ExecutionTrace()
    data = _global_array(state.global_type)
    current = state
    for idx, step in enumerate(plan.steps):
        before_offsets = step.before.device_offsets()
        if tuple(current.offsets) != before_offsets:
            raise Divergence(f"step {idx}: state does not match the step's input")
        current, moved = _apply_step(current, step)
        shape = step.after_type.local_type()
        for d in range(state.mesh.device_count):
            off = current.offsets[d]
            sel = tuple(slice(o, o + c) for o, c in zip(off, shape))
            if not np.array_equal(current.tiles[d], data[sel]):
                raise Divergence(
                    f"step {idx}: device {d} holds wrong data for offsets {off}"
                )
        trace.steps.append(
            {
                "op": step.op.kind,
                "peak": _step_peak(step),
                "moved": moved,
                "modelCount": count_transfers(step),
                "modelCost": step_cost(step.before_type, step.op, step.after_type),
            }
        )
    trace.final = current
    return trace


@dataclass
class VerificationReport:
    correct: bool
    measured_height: int
    plan_height: int
    height_within_bound: bool
    per_step_moved: list[int]
    model_counts: list[int]
    transfer_slack_ok: bool
    divergence: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "correct": self.correct,
            "measuredHeight": self.measured_height,
            "planHeight": self.plan_height,
            "heightWithinBound": self.height_within_bound,
            "perStepMoved": self.per_step_moved,
            "modelCounts": self.model_counts,
            "transferSlackOk": self.transfer_slack_ok,
            "divergence": self.divergence,
        }


def verify(
    mesh: Mesh,
    t1: DistType,
    t2: DistType,
    plan: Plan,
    bound: int | None = None,
) -> VerificationReport:
    """Execute the plan and compare against the expected final layout.

    Correctness is exact equality of every device's tile with the global
    block at the offsets of the plan's terminal assignment. The measured
    height must equal the plan's analytic height; actual transfers must
    never exceed the model counts.
    """
    if bound is None:
        bound = max(t1.local_size(), t2.local_size())
    state = materialize(mesh, t1, plan.phi0())
    divergence = None
    try:
        trace = execute(state, plan)
    except Divergence as exc:
        return VerificationReport(
            correct=False,
            measured_height=0,
            plan_height=plan.height,
            height_within_bound=False,
            per_step_moved=[],
            model_counts=[],
            transfer_slack_ok=False,
            divergence=str(exc),
        )

    final = trace.final
    terminal = plan.final_assignment()
    expected_beta = BaseOffsetMap.from_type(mesh, t2)
    data = _global_array(t2.global_type())
    shape = t2.local_type()
    correct = True
    for d in range(mesh.device_count):
        expected_off = expected_beta.offsets(terminal.phi.coord_of_device(d))
        sel = tuple(slice(o, o + c) for o, c in zip(expected_off, shape))
        if final.offsets[d] != expected_off or not np.array_equal(
            final.tiles[d], data[sel]
        ):
            correct = False
            divergence = f"device {d}: expected block at {expected_off}"
            break

    measured = trace.measured_height(t1.local_size())
    moved = [s["moved"] for s in trace.steps]
    models = [s["modelCount"] for s in trace.steps]
    slack_ok = all(a <= m for a, m in zip(moved, models))
    return VerificationReport(
        correct=correct,
        measured_height=measured,
        plan_height=plan.height,
        height_within_bound=measured <= bound,
        per_step_moved=moved,
        model_counts=models,
        transfer_slack_ok=slack_ok,
        divergence=divergence,
    )
