"""The four collective operations at both levels.

Typed transitions rewrite distributed types directly and require acted-on
axes to sit in the minor-most prefix of their dimension. Low-level
transitions act on device assignments; gathers and all-to-alls may pick
axes anywhere in a dimension because a zero-cost relabeling of the device
map repositions them first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence, Union

from .core import DistDim, DistType, Mesh, checked_mul, product, require_well_formed
from .errors import PreconditionViolation, WellFormednessError
from .semantics import (
    BaseOffsetMap,
    DeviceAssignment,
    DeviceMap,
    match_offset_maps,
)


@dataclass(frozen=True)
class AllGather:
    """Remove ``axes`` from dimension ``dim``; tile grows by their size product."""

    dim: int
    axes: tuple[str, ...]

    kind = "allGather"

    def __str__(self) -> str:
        return f"allGather({self.dim}, {{{','.join(self.axes)}}})"


@dataclass(frozen=True)
class DynSlice:
    """Introduce ``axes`` minor-most into dimension ``dim``; tile shrinks."""

    dim: int
    axes: tuple[str, ...]

    kind = "dynSlice"

    def __str__(self) -> str:
        return f"dynSlice({self.dim}, {{{','.join(self.axes)}}})"


@dataclass(frozen=True)
class AllToAll:
    """Move ``axes`` from dimension ``from_dim`` to ``to_dim``."""

    from_dim: int
    to_dim: int
    axes: tuple[str, ...]

    kind = "allToAll"

    def __str__(self) -> str:
        return f"allToAll({self.from_dim}->{self.to_dim}, {{{','.join(self.axes)}}})"


@dataclass(frozen=True)
class AllPermute:
    """Bijective reassignment of tiles to devices.

    At the typed level the operation carries the target type (which must
    share the local type). At the low level it instead carries an explicit
    device permutation ``pi``, where ``pi[d]`` is the device whose tile
    lands on device ``d``.
    """

    target: DistType | None = None
    pi: tuple[int, ...] | None = None

    kind = "allPermute"

    def __str__(self) -> str:
        if self.target is not None:
            return f"allPermute(-> {self.target})"
        return "allPermute"


CollectiveOp = Union[AllGather, DynSlice, AllToAll, AllPermute]


def _check_axes(op_name: str, axes: Sequence[str]) -> None:
    if not axes:
        raise PreconditionViolation(f"{op_name}: empty axis list")
    if len(set(axes)) != len(axes):
        raise PreconditionViolation(f"{op_name}: duplicate axes in {tuple(axes)}")


def _dim_index(t: DistType, i: int, op_name: str) -> DistDim:
    if not 0 <= i < t.rank:
        raise PreconditionViolation(f"{op_name}: dimension {i} out of range for {t}")
    return t.dims[i]


def apply_typed(mesh: Mesh, t: DistType, op: CollectiveOp) -> DistType:
    """Apply one typed collective, enforcing its premises exactly.

    Multi-axis operations act on a contiguous minor-most prefix and equal
    the corresponding chain of single-axis steps (for all-to-all, up to a
    permutation of the transplanted run).
    """
    require_well_formed(mesh, t)

    if isinstance(op, AllGather):
        _check_axes("allGather", op.axes)
        d = _dim_index(t, op.dim, "allGather")
        if d.axes[: len(op.axes)] != op.axes:
            raise PreconditionViolation(
                f"allGather: {tuple(op.axes)} is not the minor-most prefix of dim "
                f"{op.dim} with axes {d.axes}"
            )
        n = product(mesh.size_of(a) for a in op.axes)
        out = t.with_dim(
            op.dim, DistDim(checked_mul(d.tile, n), d.axes[len(op.axes) :], d.size)
        )

    elif isinstance(op, DynSlice):
        _check_axes("dynSlice", op.axes)
        d = _dim_index(t, op.dim, "dynSlice")
        used = t.used_axes()
        for a in op.axes:
            if not mesh.has_axis(a):
                raise PreconditionViolation(f"dynSlice: axis {a!r} not in mesh")
            if a in used:
                raise PreconditionViolation(
                    f"dynSlice: axis {a!r} already partitions a dimension of {t}"
                )
        n = product(mesh.size_of(a) for a in op.axes)
        if d.tile % n != 0:
            raise PreconditionViolation(
                f"dynSlice: tile {d.tile} of dim {op.dim} not divisible by {n}"
            )
        out = t.with_dim(op.dim, DistDim(d.tile // n, op.axes + d.axes, d.size))

    elif isinstance(op, AllToAll):
        _check_axes("allToAll", op.axes)
        if op.from_dim == op.to_dim:
            raise PreconditionViolation("allToAll: source and target dims are equal")
        di = _dim_index(t, op.from_dim, "allToAll")
        dj = _dim_index(t, op.to_dim, "allToAll")
        if di.axes[: len(op.axes)] != op.axes:
            raise PreconditionViolation(
                f"allToAll: {tuple(op.axes)} is not the minor-most prefix of dim "
                f"{op.from_dim} with axes {di.axes}"
            )
        n = product(mesh.size_of(a) for a in op.axes)
        if dj.tile % n != 0:
            raise PreconditionViolation(
                f"allToAll: tile {dj.tile} of dim {op.to_dim} not divisible by {n}"
            )
        out = t.with_dim(
            op.from_dim,
            DistDim(checked_mul(di.tile, n), di.axes[len(op.axes) :], di.size),
        )
        out = out.with_dim(
            op.to_dim, DistDim(dj.tile // n, op.axes + dj.axes, dj.size)
        )

    elif isinstance(op, AllPermute):
        if op.target is None:
            raise PreconditionViolation("allPermute: typed form needs a target type")
        require_well_formed(mesh, op.target)
        if op.target.global_type() != t.global_type():
            raise PreconditionViolation(
                f"allPermute: global types differ: {t.global_type()} vs "
                f"{op.target.global_type()}"
            )
        if op.target.local_type() != t.local_type():
            raise PreconditionViolation(
                f"allPermute: local types differ: {t.local_type()} vs "
                f"{op.target.local_type()}"
            )
        out = op.target

    else:  # pragma: no cover - exhaustive
        raise PreconditionViolation(f"unknown collective {op!r}")

    require_well_formed(mesh, out)
    return out


def apply_weak(mesh: Mesh, t: DistType, op: CollectiveOp) -> DistType:
    """Apply a collective up to permutation of tiles on devices.

    Gather and all-to-all may name axes anywhere within the source
    dimension; there is no weak permute. The returned witness is one
    representative of the resulting equivalence class.
    """
    require_well_formed(mesh, t)

    if isinstance(op, AllGather):
        _check_axes("allGather", op.axes)
        d = _dim_index(t, op.dim, "allGather")
        if not set(op.axes) <= set(d.axes):
            raise PreconditionViolation(
                f"allGather: axes {tuple(op.axes)} not all in dim {op.dim} of {t}"
            )
        n = product(mesh.size_of(a) for a in op.axes)
        rest = tuple(a for a in d.axes if a not in set(op.axes))
        return t.with_dim(op.dim, DistDim(checked_mul(d.tile, n), rest, d.size))

    if isinstance(op, DynSlice):
        return apply_typed(mesh, t, op)

    if isinstance(op, AllToAll):
        _check_axes("allToAll", op.axes)
        if op.from_dim == op.to_dim:
            raise PreconditionViolation("allToAll: source and target dims are equal")
        di = _dim_index(t, op.from_dim, "allToAll")
        dj = _dim_index(t, op.to_dim, "allToAll")
        if not set(op.axes) <= set(di.axes):
            raise PreconditionViolation(
                f"allToAll: axes {tuple(op.axes)} not all in dim {op.from_dim} of {t}"
            )
        n = product(mesh.size_of(a) for a in op.axes)
        if dj.tile % n != 0:
            raise PreconditionViolation(
                f"allToAll: tile {dj.tile} of dim {op.to_dim} not divisible by {n}"
            )
        rest = tuple(a for a in di.axes if a not in set(op.axes))
        out = t.with_dim(
            op.from_dim, DistDim(checked_mul(di.tile, n), rest, di.size)
        )
        return out.with_dim(
            op.to_dim, DistDim(dj.tile // n, op.axes + dj.axes, dj.size)
        )

    raise PreconditionViolation(f"no weak interpretation for {op}")


def typed_steps_of(
    mesh: Mesh, t1: DistType, ops: Sequence[CollectiveOp]
) -> list[tuple[DistType, CollectiveOp, DistType]]:
    """Chain typed applications, reporting the first failing step index."""
    trace = []
    current = t1
    for k, op in enumerate(ops):
        try:
            after = apply_typed(mesh, current, op)
        except PreconditionViolation as exc:
            raise PreconditionViolation(f"step {k} ({op}): {exc}") from exc
        trace.append((current, op, after))
        current = after
    return trace


# ---------------------------------------------------------------------------
# Low-level steps on device assignments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Step:
    """One low-level collective with its surrounding assignments and types."""

    op: CollectiveOp
    before: DeviceAssignment
    after: DeviceAssignment
    before_type: DistType
    after_type: DistType


def _relabeled_phi(
    assignment: DeviceAssignment, tau: DistType, tau_front: DistType
) -> DeviceMap:
    """Device map under which the data of ``tau`` reads as ``tau_front``.

    No data moves: the new map is chosen so every device keeps exactly the
    offsets it already holds.
    """
    mesh = assignment.mesh
    beta = BaseOffsetMap.from_type(mesh, tau)
    beta_front = BaseOffsetMap.from_type(mesh, tau_front)
    psi = match_offset_maps(beta_front, beta)
    to_device = [0] * mesh.device_count
    for lin_h, lin_front in enumerate(psi):
        to_device[lin_front] = assignment.phi.to_device[lin_h]
    return DeviceMap(mesh, tuple(to_device))


def _front_type(t: DistType, dim: int, axes: Sequence[str]) -> DistType:
    d = t.dims[dim]
    if not set(axes) <= set(d.axes):
        raise PreconditionViolation(
            f"axes {tuple(axes)} not all present in dim {dim} of {t}"
        )
    rest = tuple(a for a in d.axes if a not in set(axes))
    return t.with_dim(dim, DistDim(d.tile, tuple(axes) + rest, d.size))


def gather_step(
    assignment: DeviceAssignment, tau: DistType, dim: int, axes: Sequence[str]
) -> Step:
    """Low-level all-gather of ``axes`` (any positions) from ``dim``."""
    mesh = assignment.mesh
    _check_axes("allGather", axes)
    op = AllGather(dim, tuple(axes))
    tau_front = _front_type(tau, dim, axes)
    phi2 = _relabeled_phi(assignment, tau, tau_front)
    after_type = apply_typed(mesh, tau_front, op)
    after = DeviceAssignment(phi2, BaseOffsetMap.from_type(mesh, after_type))
    return Step(op, assignment, after, tau, after_type)


def alltoall_step(
    assignment: DeviceAssignment,
    tau: DistType,
    from_dim: int,
    to_dim: int,
    axes: Sequence[str],
) -> Step:
    """Low-level all-to-all moving ``axes`` (any positions) between dims."""
    mesh = assignment.mesh
    _check_axes("allToAll", axes)
    op = AllToAll(from_dim, to_dim, tuple(axes))
    tau_front = _front_type(tau, from_dim, axes)
    phi2 = _relabeled_phi(assignment, tau, tau_front)
    after_type = apply_typed(mesh, tau_front, op)
    after = DeviceAssignment(phi2, BaseOffsetMap.from_type(mesh, after_type))
    return Step(op, assignment, after, tau, after_type)


def slice_step(
    assignment: DeviceAssignment, tau: DistType, dim: int, axes: Sequence[str]
) -> Step:
    """Low-level dynamic slice; purely local, the device map is unchanged."""
    mesh = assignment.mesh
    op = DynSlice(dim, tuple(axes))
    after_type = apply_typed(mesh, tau, op)
    after = DeviceAssignment(assignment.phi, BaseOffsetMap.from_type(mesh, after_type))
    return Step(op, assignment, after, tau, after_type)


def permute_step(
    assignment: DeviceAssignment,
    tau: DistType,
    target: DistType,
    target_phi: DeviceMap | None = None,
) -> Step:
    """Low-level permute onto the assignment (target_phi, target offsets).

    Computes the device permutation ``pi`` that realizes the move: device
    ``d`` receives the tile currently held by ``pi[d]``. Identity ``pi``
    means the step moves nothing (the caller may elide it).
    """
    mesh = assignment.mesh
    if target.local_type() != tau.local_type():
        raise PreconditionViolation(
            f"allPermute: local types differ: {tau.local_type()} vs "
            f"{target.local_type()}"
        )
    if target.global_type() != tau.global_type():
        raise PreconditionViolation("allPermute: global types differ")
    if target_phi is None:
        target_phi = assignment.phi
    after = DeviceAssignment(target_phi, BaseOffsetMap.from_type(mesh, target))
    current = assignment.device_offsets()
    wanted = after.device_offsets()
    buckets: dict[tuple[int, ...], list[int]] = {}
    for d, offs in enumerate(current):
        buckets.setdefault(offs, []).append(d)
    positions = {k: 0 for k in buckets}
    pi = []
    for offs in wanted:
        if offs not in buckets or positions[offs] >= len(buckets[offs]):
            raise PreconditionViolation(
                "allPermute: target offsets are not a permutation of current offsets"
            )
        pi.append(buckets[offs][positions[offs]])
        positions[offs] += 1
    op = AllPermute(target=target, pi=tuple(pi))
    return Step(op, assignment, after, tau, target)


def apply_low_level(
    assignment: DeviceAssignment,
    op: CollectiveOp,
    tau: DistType,
    target_phi: DeviceMap | None = None,
) -> Step:
    """Dispatch one low-level collective given the current type witness."""
    if isinstance(op, AllGather):
        return gather_step(assignment, tau, op.dim, op.axes)
    if isinstance(op, AllToAll):
        return alltoall_step(assignment, tau, op.from_dim, op.to_dim, op.axes)
    if isinstance(op, DynSlice):
        return slice_step(assignment, tau, op.dim, op.axes)
    if isinstance(op, AllPermute):
        if op.target is None:
            raise PreconditionViolation("allPermute: needs a target type witness")
        return permute_step(assignment, tau, op.target, target_phi)
    raise PreconditionViolation(f"unknown collective {op!r}")


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------


@dataclass
class Plan:
    """An executable chain of low-level steps between two distributed types."""

    mesh: Mesh
    source: DistType
    target: DistType
    steps: list[Step]
    cost: int = 0
    height: int = 0
    initial_phi: DeviceMap | None = field(default=None)

    def phi0(self) -> DeviceMap:
        if self.steps:
            return self.steps[0].before.phi
        return self.initial_phi or DeviceMap.identity(self.mesh)

    def final_assignment(self) -> DeviceAssignment:
        if self.steps:
            return self.steps[-1].after
        return DeviceAssignment(
            self.phi0(), BaseOffsetMap.from_type(self.mesh, self.source)
        )

    def permute_count(self) -> int:
        return sum(1 for s in self.steps if isinstance(s.op, AllPermute))

    def validate(self) -> None:
        """Re-derive every step and confirm the chain is self-consistent."""
        if self.steps and self.steps[0].before_type != self.source:
            raise WellFormednessError("plan does not start at its source type")
        if self.steps and self.steps[-1].after_type != self.target:
            raise WellFormednessError("plan does not end at its target type")
        prev: Step | None = None
        for k, step in enumerate(self.steps):
            if prev is not None:
                if step.before != prev.after or step.before_type != prev.after_type:
                    raise WellFormednessError(f"step {k} does not chain onto step {k-1}")
            if isinstance(step.op, AllPermute):
                if step.op.pi is None:
                    raise WellFormednessError(f"step {k}: permute without a device map")
                cur = step.before.device_offsets()
                new = step.after.device_offsets()
                for d, src in enumerate(step.op.pi):
                    if new[d] != cur[src]:
                        raise WellFormednessError(
                            f"step {k}: permutation does not realize the target"
                        )
                if step.after_type.local_type() != step.before_type.local_type():
                    raise WellFormednessError(f"step {k}: permute changes local type")
            else:
                redo = apply_low_level(step.before, step.op, step.before_type)
                if redo.after != step.after or redo.after_type != step.after_type:
                    raise WellFormednessError(f"step {k} is not a valid transition")
            prev = step

    def op_labels(self) -> list[str]:
        return [s.op.kind for s in self.steps]

    def to_json_dict(self, merge_axes=None) -> dict:
        """Stable-order JSON representation; ``merge_axes`` maps axis runs
        back to composite names for display."""
        merge = merge_axes or (lambda axes: tuple(axes))
        steps = []
        for s in self.steps:
            entry: dict = {"kind": s.op.kind}
            if isinstance(s.op, AllGather) or isinstance(s.op, DynSlice):
                entry["dim"] = s.op.dim
                entry["axes"] = list(s.op.axes)
                entry["axesMerged"] = list(merge(s.op.axes))
            elif isinstance(s.op, AllToAll):
                entry["fromDim"] = s.op.from_dim
                entry["toDim"] = s.op.to_dim
                entry["axes"] = list(s.op.axes)
                entry["axesMerged"] = list(merge(s.op.axes))
            else:
                entry["permutation"] = list(s.op.pi or ())
            entry["beforeLocal"] = list(s.before_type.local_type())
            entry["afterLocal"] = list(s.after_type.local_type())
            from .cost import step_cost  # local import to avoid a cycle

            entry["cost"] = step_cost(s.before_type, s.op, s.after_type)
            steps.append(entry)
        return {
            "mesh": str(self.mesh),
            "source": str(self.source),
            "target": str(self.target),
            "steps": steps,
            "totalCost": self.cost,
            "height": self.height,
        }

    def to_json(self, merge_axes=None, indent: int | None = None) -> str:
        return json.dumps(self.to_json_dict(merge_axes), indent=indent)


def plan_from_typed(
    mesh: Mesh,
    types: Sequence[DistType],
    ops: Sequence[CollectiveOp],
    phi0: DeviceMap | None = None,
) -> Plan:
    """Lower a typed sequence to low-level steps with no extra relabeling.

    Typed gathers and all-to-alls already act on minor-most prefixes, so
    the device map only changes at permute steps, which keep the same map
    and move data instead.
    """
    from .cost import plan_cost  # local import to avoid a cycle

    phi = phi0 or DeviceMap.identity(mesh)
    assignment = DeviceAssignment(phi, BaseOffsetMap.from_type(mesh, types[0]))
    steps: list[Step] = []
    current = types[0]
    for k, op in enumerate(ops):
        if isinstance(op, AllPermute):
            step = permute_step(assignment, current, op.target, assignment.phi)
        else:
            step = apply_low_level(assignment, op, current)
        if step.after_type != types[k + 1]:
            raise PreconditionViolation(
                f"step {k}: typed sequence expects {types[k+1]}, got {step.after_type}"
            )
        steps.append(step)
        assignment = step.after
        current = step.after_type
    plan = Plan(mesh, types[0], types[-1], steps, initial_phi=phi)
    report = plan_cost(plan)
    plan.cost = report.total
    plan.height = report.height
    return plan
