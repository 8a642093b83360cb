"""Rewriting collective sequences into normal form.

A sequence is in normal form when its labels match
``dynSlice* {allToAll | allPermute}* allGather*``; such a sequence never
holds more per device than the larger of its endpoint tiles. The driver
repeatedly eliminates peaks (a gather immediately followed by a slice)
and moves rising/falling edges until that shape is reached.

Rewrites exist for the strong relation (exact types, permutes allowed)
and the weak one (types up to tile permutation, no permute labels). All
rewrites assume a prime mesh; composite meshes must be decomposed first.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

from .collectives import (
    AllGather,
    AllPermute,
    AllToAll,
    CollectiveOp,
    DynSlice,
    apply_typed,
    apply_weak,
)
from .core import DistDim, DistType, Mesh, prime_factors
from .cost import plan_cost
from .errors import (
    InvalidRedistribution,
    NonTermination,
    PatternMismatch,
    PreconditionViolation,
)

STRONG = "strong"
WEAK = "weak"

_NF_RE = re.compile(r"S*M*G*")


def _label_class(op: CollectiveOp) -> int:
    if isinstance(op, DynSlice):
        return 0
    if isinstance(op, (AllToAll, AllPermute)):
        return 1
    return 2


_CLASS_LETTER = {0: "S", 1: "M", 2: "G"}


@dataclass
class TypedSequence:
    """A chain of types labeled by the collectives connecting them.

    In strong mode consecutive types are exactly related by the labeled
    typed operation. In weak mode permute labels are forbidden and the
    stored types are representatives: a step is valid when the operation
    applies up to permutation and lands on the next type's local type.
    """

    mesh: Mesh
    types: list[DistType]
    ops: list[CollectiveOp]
    mode: str = STRONG

    def __post_init__(self):
        if self.mode not in (STRONG, WEAK):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.ops and len(self.types) != len(self.ops) + 1:
            raise ValueError("types/ops length mismatch")

    @property
    def source(self) -> DistType:
        return self.types[0]

    @property
    def target(self) -> DistType:
        return self.types[-1]

    def labels(self) -> str:
        return "".join(_CLASS_LETTER[_label_class(op)] for op in self.ops)

    def height(self) -> int:
        return max(t.local_size() for t in self.types)

    def cost(self) -> int:
        return plan_cost(self).total

    def copy(self) -> "TypedSequence":
        return replace(self, types=list(self.types), ops=list(self.ops))

    def validate(self) -> None:
        for k, op in enumerate(self.ops):
            before, after = self.types[k], self.types[k + 1]
            if self.mode == STRONG:
                got = apply_typed(self.mesh, before, op)
                if got != after:
                    raise PreconditionViolation(
                        f"step {k}: expected {after}, operation yields {got}"
                    )
            else:
                if isinstance(op, AllPermute):
                    raise PreconditionViolation(
                        f"step {k}: permute labels cannot occur in weak sequences"
                    )
                _check_weak_step(self.mesh, before, op, after)

    def __str__(self) -> str:
        if not self.ops:
            return str(self.types[0])
        parts = [str(self.types[0])]
        for k, op in enumerate(self.ops):
            parts.append(f"  --{op}-->  {self.types[k + 1]}")
        return "\n".join(parts)


def _factors(n: int) -> Counter:
    return Counter(prime_factors(n)) if n > 1 else Counter()


def _check_weak_step(mesh: Mesh, before: DistType, op, after: DistType) -> None:
    """Size-level applicability: names are advisory under weak semantics."""
    sizes = Counter(mesh.size_of(a) for a in op.axes)
    moved = 1
    for a in op.axes:
        moved *= mesh.size_of(a)
    lt = list(before.local_type())
    if isinstance(op, AllGather):
        if not sizes <= _factors(before.dims[op.dim].size // lt[op.dim]):
            raise PreconditionViolation(
                f"allGather: sizes {dict(sizes)} exceed dim {op.dim} partition factors"
            )
        lt[op.dim] *= moved
    elif isinstance(op, DynSlice):
        mesh_factors = Counter(
            f for _, s in mesh.axes for f in prime_factors(s) if s > 1
        )
        used = Counter(
            f
            for d in before.dims
            for f in prime_factors(d.size // d.tile)
            if d.size > d.tile
        )
        if not sizes <= mesh_factors - used:
            raise PreconditionViolation(
                f"dynSlice: sizes {dict(sizes)} not available unused in the mesh"
            )
        if lt[op.dim] % moved:
            raise PreconditionViolation(
                f"dynSlice: tile {lt[op.dim]} not divisible by {moved}"
            )
        lt[op.dim] //= moved
    elif isinstance(op, AllToAll):
        i, j = op.from_dim, op.to_dim
        if not sizes <= _factors(before.dims[i].size // lt[i]):
            raise PreconditionViolation(
                f"allToAll: sizes {dict(sizes)} exceed dim {i} partition factors"
            )
        if lt[j] % moved:
            raise PreconditionViolation(
                f"allToAll: tile {lt[j]} not divisible by {moved}"
            )
        lt[i] *= moved
        lt[j] //= moved
    else:  # pragma: no cover
        raise PreconditionViolation(f"unexpected weak label {op}")
    if tuple(lt) != after.local_type():
        raise PreconditionViolation(
            f"weak step lands on local type {tuple(lt)}, stored {after.local_type()}"
        )
    if before.global_type() != after.global_type():
        raise PreconditionViolation("weak step changes the global type")


def is_normal_form(seq: TypedSequence) -> bool:
    return _NF_RE.fullmatch(seq.labels()) is not None


# ---------------------------------------------------------------------------
# Construction helpers
# ---------------------------------------------------------------------------


def naive_sequence(mesh: Mesh, t1: DistType, t2: DistType, mode: str = STRONG) -> TypedSequence:
    """Gather every partitioned dimension fully, then slice out the target.

    Correct for any valid problem but memory-maximal: the replicated
    middle type has local size equal to the global size.
    """
    if t1.global_type() != t2.global_type():
        raise InvalidRedistribution(
            f"global types differ: {t1.global_type()} vs {t2.global_type()}"
        )
    if t1 == t2:
        return TypedSequence(mesh, [t1], [], mode)
    ops: list[CollectiveOp] = []
    for i, d in enumerate(t1.dims):
        if d.axes:
            ops.append(AllGather(i, d.axes))
    for i, d in enumerate(t2.dims):
        if d.axes:
            ops.append(DynSlice(i, d.axes))
    types = [t1]
    for op in ops:
        types.append(apply_typed(mesh, types[-1], op))
    assert types[-1] == t2
    return TypedSequence(mesh, types, ops, mode)


def _swap_within(t: DistType, dim: int, pos_a: int, pos_b: int) -> DistType:
    axes = list(t.dims[dim].axes)
    axes[pos_a], axes[pos_b] = axes[pos_b], axes[pos_a]
    return t.with_dim(dim, DistDim(t.dims[dim].tile, tuple(axes), t.dims[dim].size))


def _swap_across(t: DistType, dim_a: int, a: str, dim_b: int, b: str) -> DistType:
    da, db = t.dims[dim_a], t.dims[dim_b]
    axes_a = tuple(b if x == a else x for x in da.axes)
    axes_b = tuple(a if x == b else x for x in db.axes)
    out = t.with_dim(dim_a, DistDim(da.tile, axes_a, da.size))
    return out.with_dim(dim_b, DistDim(db.tile, axes_b, db.size))


def _pick_in_dim(mesh: Mesh, t: DistType, dim: int, size: int, avoid: set[str] = frozenset()) -> str:
    for a in t.dims[dim].axes:
        if mesh.size_of(a) == size and a not in avoid:
            return a
    raise PatternMismatch(
        f"no axis of size {size} available in dim {dim} of {t} (avoiding {avoid})"
    )


def _pick_unused(mesh: Mesh, t: DistType, size: int, prefer: str | None = None) -> str:
    used = t.used_axes()
    if prefer is not None and prefer not in used and mesh.size_of(prefer) == size:
        return prefer
    for name, s in mesh.axes:
        if s == size and name not in used:
            return name
    raise PatternMismatch(f"no unused axis of size {size} for {t} on {mesh}")


def expand_multi_axis(seq: TypedSequence) -> TypedSequence:
    """Rewrite multi-axis labels into chains of single-axis ones.

    Multi-axis all-to-all transplants its run in order, while the chain of
    singles reverses it; in strong mode a permute restores the order so
    the expansion is endpoint-exact.
    """
    mesh = seq.mesh
    ops: list[CollectiveOp] = []
    types: list[DistType] = [seq.types[0]]

    def push(op: CollectiveOp) -> None:
        applier = apply_typed if seq.mode == STRONG else apply_weak
        types.append(applier(mesh, types[-1], op))
        ops.append(op)

    for k, op in enumerate(seq.ops):
        if isinstance(op, AllGather) and len(op.axes) > 1:
            for a in op.axes:
                push(AllGather(op.dim, (a,)))
        elif isinstance(op, DynSlice) and len(op.axes) > 1:
            for a in reversed(op.axes):
                push(DynSlice(op.dim, (a,)))
        elif isinstance(op, AllToAll) and len(op.axes) > 1:
            for a in op.axes:
                push(AllToAll(op.from_dim, op.to_dim, (a,)))
            if seq.mode == STRONG:
                push(AllPermute(target=seq.types[k + 1]))
        else:
            push(op)
        if seq.mode == STRONG:
            assert types[-1] == seq.types[k + 1]
        else:
            types[-1] = seq.types[k + 1]  # pin the stored witness
    return TypedSequence(mesh, types, ops, seq.mode)


# ---------------------------------------------------------------------------
# Rewrites
# ---------------------------------------------------------------------------


def _splice(
    seq: TypedSequence, at: int, new_ops: list[CollectiveOp]
) -> TypedSequence:
    """Replace the two ops at ``at`` (three types) by ``new_ops``.

    Interior types are re-derived from the fragment start; the fragment
    endpoints stay pinned. An empty replacement merges the fragment into a
    single node, keeping the pinned end of the whole sequence.
    """
    mesh = seq.mesh
    t0, t2 = seq.types[at], seq.types[at + 2]
    if not new_ops:
        if at + 2 == len(seq.types) - 1:
            types = seq.types[:at] + seq.types[at + 2 :]
        else:
            types = seq.types[: at + 1] + seq.types[at + 3 :]
        return TypedSequence(mesh, types, seq.ops[:at] + seq.ops[at + 2 :], seq.mode)
    applier = apply_typed if seq.mode == STRONG else apply_weak
    interior = []
    cur = t0
    for op in new_ops:
        cur = applier(mesh, cur, op)
        interior.append(cur)
    if seq.mode == STRONG:
        if interior[-1] != t2:
            raise PatternMismatch(
                f"rewrite does not reconnect: produced {interior[-1]}, needed {t2}"
            )
    else:
        if interior[-1].local_type() != t2.local_type():
            raise PatternMismatch(
                f"rewrite lands on local type {interior[-1].local_type()}, "
                f"needed {t2.local_type()}"
            )
    types = seq.types[: at + 1] + interior[:-1] + seq.types[at + 2 :]
    return TypedSequence(mesh, types, seq.ops[:at] + new_ops + seq.ops[at + 2 :], seq.mode)


def eliminate_peak(seq: TypedSequence, at: int) -> TypedSequence:
    """Rewrite the gather-then-slice peak at ``at`` into a fragment that
    never rises above its endpoints."""
    if at < 0 or at + 1 >= len(seq.ops):
        raise PatternMismatch(f"no two ops at position {at}")
    g, s = seq.ops[at], seq.ops[at + 1]
    if not (isinstance(g, AllGather) and isinstance(s, DynSlice)):
        raise PatternMismatch(f"ops at {at} are {g} ; {s}, not gather ; slice")
    if len(g.axes) != 1 or len(s.axes) != 1:
        raise PatternMismatch("peak elimination needs single-axis operations")
    mesh = seq.mesh
    t0 = seq.types[at]
    y, x = g.axes[0], s.axes[0]
    i, j = g.dim, s.dim
    m, n = mesh.size_of(y), mesh.size_of(x)

    if seq.mode == STRONG:
        if i == j and x == y:
            new_ops: list[CollectiveOp] = []
        elif i == j:
            if m == n:
                new_ops = [AllPermute(target=seq.types[at + 2])]
            else:
                sliced = apply_typed(mesh, t0, DynSlice(i, (x,)))
                swapped = _swap_within(sliced, i, 0, 1)
                new_ops = [
                    DynSlice(i, (x,)),
                    AllPermute(target=swapped),
                    AllGather(i, (y,)),
                ]
        elif x == y:
            new_ops = [AllToAll(i, j, (y,))]
        else:
            new_ops = [DynSlice(j, (x,)), AllGather(i, (y,))]
    else:
        if i == j and m == n:
            new_ops = []
        elif i == j:
            z = _pick_unused(mesh, t0, n, prefer=x)
            sliced = apply_weak(mesh, t0, DynSlice(i, (z,)))
            new_ops = [
                DynSlice(i, (z,)),
                AllGather(i, (_pick_in_dim(mesh, sliced, i, m),)),
            ]
        elif m == n:
            new_ops = [AllToAll(i, j, (_pick_in_dim(mesh, t0, i, m),))]
        else:
            z = _pick_unused(mesh, t0, n, prefer=x)
            new_ops = [DynSlice(j, (z,)), AllGather(i, (_pick_in_dim(mesh, t0, i, m),))]
    return _splice(seq, at, new_ops)


def _move_rising(seq: TypedSequence, at: int) -> TypedSequence:
    mesh = seq.mesh
    g, p = seq.ops[at], seq.ops[at + 1]
    t0 = seq.types[at]
    x, i = g.axes[0], g.dim
    m = mesh.size_of(x)

    if isinstance(p, AllToAll):
        if len(p.axes) != 1:
            raise PatternMismatch("edge motion needs single-axis operations")
        y, k, l = p.axes[0], p.from_dim, p.to_dim
        n = mesh.size_of(y)
        if seq.mode == STRONG:
            if i == k:
                swapped = _swap_within(t0, i, 0, 1)
                new_ops = [
                    AllPermute(target=swapped),
                    AllToAll(i, l, (y,)),
                    AllGather(i, (x,)),
                ]
            elif i == l:
                if m == n:
                    new_ops = [
                        AllPermute(target=_swap_across(t0, i, x, k, y)),
                        AllGather(k, (x,)),
                    ]
                else:
                    moved = apply_typed(mesh, t0, AllToAll(k, i, (y,)))
                    new_ops = [
                        AllToAll(k, i, (y,)),
                        AllPermute(target=_swap_within(moved, i, 0, 1)),
                        AllGather(i, (x,)),
                    ]
            else:
                new_ops = [AllToAll(k, l, (y,)), AllGather(i, (x,))]
        else:
            if i == k:
                a = _pick_in_dim(mesh, t0, i, n)
                b = _pick_in_dim(mesh, t0, i, m, avoid={a})
                new_ops = [AllToAll(i, l, (a,)), AllGather(i, (b,))]
            elif i == l and m == n:
                new_ops = [AllGather(k, (_pick_in_dim(mesh, t0, k, n),))]
            elif i == l:
                a = _pick_in_dim(mesh, t0, k, n)
                moved = apply_weak(mesh, t0, AllToAll(k, i, (a,)))
                new_ops = [
                    AllToAll(k, i, (a,)),
                    AllGather(i, (_pick_in_dim(mesh, moved, i, m),)),
                ]
            else:
                new_ops = [
                    AllToAll(k, l, (_pick_in_dim(mesh, t0, k, n),)),
                    AllGather(i, (_pick_in_dim(mesh, t0, i, m),)),
                ]
        return _splice(seq, at, new_ops)

    if isinstance(p, AllPermute):
        if seq.mode == WEAK:
            raise PatternMismatch("permute labels cannot occur in weak sequences")
        t2 = seq.types[at + 2]
        z = _pick_unused(mesh, t2, m, prefer=x)
        d2 = t2.dims[i]
        lowered = t2.with_dim(i, DistDim(d2.tile // m, (z,) + d2.axes, d2.size))
        new_ops = [AllPermute(target=lowered), AllGather(i, (z,))]
        return _splice(seq, at, new_ops)

    raise PatternMismatch(f"op {p} cannot follow a gather in a rising edge")


def _move_falling(seq: TypedSequence, at: int) -> TypedSequence:
    mesh = seq.mesh
    p, s = seq.ops[at], seq.ops[at + 1]
    t0, t2 = seq.types[at], seq.types[at + 2]
    x, j = s.axes[0], s.dim
    n = mesh.size_of(x)

    if isinstance(p, AllToAll):
        if len(p.axes) != 1:
            raise PatternMismatch("edge motion needs single-axis operations")
        y, k, l = p.axes[0], p.from_dim, p.to_dim
        m = mesh.size_of(y)
        if seq.mode == STRONG:
            if j == l:
                new_ops: list[CollectiveOp] = [
                    DynSlice(l, (x,)),
                    AllToAll(k, l, (y,)),
                    AllPermute(target=t2),
                ]
            elif j == k:
                if m == n:
                    new_ops = [DynSlice(l, (x,)), AllPermute(target=t2)]
                else:
                    sliced = apply_typed(mesh, t0, DynSlice(k, (x,)))
                    new_ops = [
                        DynSlice(k, (x,)),
                        AllPermute(target=_swap_within(sliced, k, 0, 1)),
                        AllToAll(k, l, (y,)),
                    ]
            else:
                new_ops = [DynSlice(j, (x,)), AllToAll(k, l, (y,))]
        else:
            if j == l:
                z = _pick_unused(mesh, t0, n, prefer=x)
                new_ops = [
                    DynSlice(l, (z,)),
                    AllToAll(k, l, (_pick_in_dim(mesh, t0, k, m),)),
                ]
            elif j == k and m == n:
                new_ops = [DynSlice(l, (_pick_unused(mesh, t0, m, prefer=x),))]
            elif j == k:
                z = _pick_unused(mesh, t0, n, prefer=x)
                new_ops = [
                    DynSlice(k, (z,)),
                    AllToAll(k, l, (_pick_in_dim(mesh, t0, k, m),)),
                ]
            else:
                z = _pick_unused(mesh, t0, n, prefer=x)
                new_ops = [
                    DynSlice(j, (z,)),
                    AllToAll(k, l, (_pick_in_dim(mesh, t0, k, m),)),
                ]
        return _splice(seq, at, new_ops)

    if isinstance(p, AllPermute):
        if seq.mode == WEAK:
            raise PatternMismatch("permute labels cannot occur in weak sequences")
        z = _pick_unused(mesh, t0, n, prefer=x)
        new_ops = [DynSlice(j, (z,)), AllPermute(target=t2)]
        return _splice(seq, at, new_ops)

    raise PatternMismatch(f"op {p} cannot precede a slice in a falling edge")


def move_edge(seq: TypedSequence, at: int) -> TypedSequence:
    """Move the rising or falling edge at ``at`` one step toward its end.

    Rising: gather followed by an all-to-all or permute; the gather moves
    right. Falling: an all-to-all or permute followed by a slice; the
    slice moves left. Height and (in weak mode) cost never increase.
    """
    if at < 0 or at + 1 >= len(seq.ops):
        raise PatternMismatch(f"no two ops at position {at}")
    a, b = seq.ops[at], seq.ops[at + 1]
    if isinstance(a, AllGather) and _label_class(b) == 1:
        if len(a.axes) != 1:
            raise PatternMismatch("edge motion needs single-axis operations")
        return _move_rising(seq, at)
    if _label_class(a) == 1 and isinstance(b, DynSlice):
        if len(b.axes) != 1:
            raise PatternMismatch("edge motion needs single-axis operations")
        return _move_falling(seq, at)
    raise PatternMismatch(f"ops at {at} are {a} ; {b}, not a rising or falling edge")


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def _interior_measure(seq: TypedSequence) -> list[int]:
    """Multiset of interior local sizes, descending. Every rewrite strictly
    shrinks this in the multiset order, which is what guarantees the
    driver terminates regardless of scan strategy."""
    return sorted((t.local_size() for t in seq.types[1:-1]), reverse=True)


def normalize(seq: TypedSequence) -> TypedSequence:
    """Drive a sequence to normal form.

    Scans left to right, eliminating peaks before moving edges, until the
    label string matches the normal shape. Endpoints are preserved; the
    result's height is bounded by the larger endpoint tile, and in weak
    mode the result never costs more than the input.
    """
    for _, size in seq.mesh.axes:
        if len(prime_factors(size)) != 1:
            raise PreconditionViolation(
                f"normalize requires a prime mesh; axis size {size} is composite"
            )
    seq.validate()
    seq = expand_multi_axis(seq)
    budget = 10 * max(1, len(seq.ops)) ** 2
    rewrites = 0
    while True:
        classes = [_label_class(op) for op in seq.ops]
        at = next(
            (k for k in range(len(classes) - 1) if classes[k] == 2 and classes[k + 1] == 0),
            None,
        )
        if at is not None:
            before = _interior_measure(seq)
            seq = eliminate_peak(seq, at)
        else:
            at = next(
                (
                    k
                    for k in range(len(classes) - 1)
                    if classes[k] > classes[k + 1]
                ),
                None,
            )
            if at is None:
                break
            before = _interior_measure(seq)
            seq = move_edge(seq, at)
        after = _interior_measure(seq)
        if not after < before:
            raise NonTermination(
                f"rewrite did not decrease the interior measure: {before} -> {after}"
            )
        rewrites += 1
        if rewrites > budget:
            raise NonTermination(f"rewrite budget {budget} exhausted")
    seq.validate()
    assert is_normal_form(seq)
    return seq
