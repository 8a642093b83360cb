"""Shortest-path synthesis of redistribution programs.

Nodes of the search graph are local types (per-dimension tile extents);
with the global type fixed these identify types up to a permutation of
tiles across devices. Edges are multi-axis gather/slice/all-to-all moves
of prime-factor multisets, weighted by the data-transfer cost model.
The found path is lowered to concrete low-level steps, and at most one
permute is appended to land exactly on the requested target assignment.
"""

from __future__ import annotations

import heapq
import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .collectives import (
    AllPermute,
    Plan,
    Step,
    alltoall_step,
    gather_step,
    permute_step,
    slice_step,
)
from .core import (
    DistDim,
    DistType,
    Mesh,
    MeshDecomposition,
    decompose_primes,
    prime_factors,
    product,
    require_well_formed,
)
from .cost import CostReport, plan_cost
from .errors import InvalidRedistribution, PreconditionViolation, SearchError
from .semantics import BaseOffsetMap, DeviceAssignment, DeviceMap

LocalType = tuple[int, ...]


@dataclass(frozen=True)
class WeakEdge:
    """One multi-axis weak collective between two local types."""

    kind: str  # "allGather" | "dynSlice" | "allToAll"
    dim: int
    to_dim: int | None
    factors: tuple[int, ...]  # prime sizes moved, sorted
    weight: int

    def __str__(self) -> str:
        facts = "{" + ",".join(map(str, self.factors)) + "}"
        if self.kind == "allToAll":
            return f"allToAll({self.dim}->{self.to_dim}, {facts})"
        return f"{self.kind}({self.dim}, {facts})"


@dataclass(frozen=True)
class WeakPath:
    nodes: tuple[LocalType, ...]
    edges: tuple[WeakEdge, ...]
    cost: int


@dataclass
class SynthesisOptions:
    memory_bound: int | None = None
    no_over_partition: bool = False
    over_partition_cap: int | None = None
    prefer_permute_elision: bool = False
    equal_cost_path_limit: int = 64


@dataclass
class SynthesisResult:
    """A synthesized plan plus the search artifacts it came from."""

    mesh: Mesh  # original mesh
    source: DistType
    target: DistType
    decomposition: MeshDecomposition
    plan: Plan  # over the decomposed mesh
    weak_path: WeakPath
    cost: CostReport = field(default=None)  # type: ignore[assignment]
    final_permute_index: int | None = None

    def display_steps(self) -> list[str]:
        merge = self.decomposition.merge_axes
        lines = []
        for s in self.plan.steps:
            op = s.op
            if isinstance(op, AllPermute):
                label = "allPermute"
            else:
                axes = ",".join(merge(op.axes))
                if op.kind == "allToAll":
                    label = f"allToAll({op.from_dim}->{op.to_dim}, {{{axes}}})"
                else:
                    label = f"{op.kind}({op.dim}, {{{axes}}})"
            from .cost import step_cost

            c = step_cost(s.before_type, op, s.after_type)
            lines.append(f"{s.before_type}  --{label}-->  {s.after_type}   cost {c}")
        return lines

    def to_json_dict(self) -> dict:
        d = self.plan.to_json_dict(merge_axes=self.decomposition.merge_axes)
        d["originalMesh"] = str(self.mesh)
        d["originalSource"] = str(self.source)
        d["originalTarget"] = str(self.target)
        d["decomposedMesh"] = str(self.decomposition.mesh)
        d["weakPath"] = {
            "nodes": [list(n) for n in self.weak_path.nodes],
            "edges": [str(e) for e in self.weak_path.edges],
            "cost": self.weak_path.cost,
        }
        d["finalPermuteIndex"] = self.final_permute_index
        return d


# ---------------------------------------------------------------------------
# The weak graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Context:
    global_type: tuple[int, ...]
    mesh_factors: tuple[tuple[int, int], ...]  # (prime, multiplicity), sorted
    bound: int
    target_factors: tuple[tuple[tuple[int, int], ...], ...]  # per dim
    no_over_partition: bool
    over_partition_cap: int | None


def _counter(items) -> Counter:
    return Counter(items)


def _factors_of(n: int) -> Counter:
    return Counter(prime_factors(n)) if n > 1 else Counter()


def _submultisets(c: Counter) -> list[Counter]:
    """All nonempty sub-multisets of a prime multiset."""
    primes = sorted(c)
    out = []
    for counts in itertools.product(*(range(c[p] + 1) for p in primes)):
        if not any(counts):
            continue
        out.append(Counter({p: k for p, k in zip(primes, counts) if k}))
    return out


def _mk_context(
    mesh: Mesh, t1: DistType, t2: DistType, bound: int, opts: SynthesisOptions
) -> _Context:
    for _, size in mesh.axes:
        if len(prime_factors(size)) != 1:
            raise PreconditionViolation(
                f"shortest-path search requires a prime mesh; size {size} is composite"
            )
    mesh_factors = _counter(s for _, s in mesh.axes)
    target_factors = tuple(
        tuple(sorted(_factors_of(d.size // d.tile).items())) for d in t2.dims
    )
    return _Context(
        global_type=t1.global_type(),
        mesh_factors=tuple(sorted(mesh_factors.items())),
        bound=bound,
        target_factors=target_factors,
        no_over_partition=opts.no_over_partition,
        over_partition_cap=opts.over_partition_cap,
    )


def successors(node: LocalType, ctx: _Context) -> list[tuple[WeakEdge, LocalType]]:
    """All single weak multi-axis moves from ``node``, bound-pruned.

    Gathers draw factors from a dimension's own partition multiset, slices
    from the mesh factors not used anywhere, and all-to-alls move factors
    between dimensions subject to divisibility of the receiving tile.
    """
    gt = ctx.global_type
    used = [_factors_of(g // lt) for g, lt in zip(gt, node)]
    total_used = Counter()
    for u in used:
        total_used += u
    unused = Counter(dict(ctx.mesh_factors)) - total_used
    ls = product(node)
    out: list[tuple[WeakEdge, LocalType]] = []

    for i, lt in enumerate(node):
        for f in _submultisets(used[i]):
            moved = product(f.elements())
            new_ls = ls * moved
            if new_ls > ctx.bound:
                continue
            nxt = node[:i] + (lt * moved,) + node[i + 1 :]
            factors = tuple(sorted(f.elements()))
            out.append((WeakEdge("allGather", i, None, factors, new_ls), nxt))

        if unused:
            target_need = Counter(dict(ctx.target_factors[i])) - used[i]
            for f in _submultisets(unused):
                moved = product(f.elements())
                if lt % moved:
                    continue
                over = f - target_need
                if ctx.no_over_partition and over:
                    continue
                if ctx.over_partition_cap is not None and sum(over.values()) > ctx.over_partition_cap:
                    continue
                nxt = node[:i] + (lt // moved,) + node[i + 1 :]
                factors = tuple(sorted(f.elements()))
                out.append((WeakEdge("dynSlice", i, None, factors, 0), nxt))

        for j, ltj in enumerate(node):
            if j == i:
                continue
            for f in _submultisets(used[i]):
                moved = product(f.elements())
                if ltj % moved:
                    continue
                nxt = list(node)
                nxt[i] = lt * moved
                nxt[j] = ltj // moved
                factors = tuple(sorted(f.elements()))
                out.append((WeakEdge("allToAll", i, j, factors, ls), tuple(nxt)))

    out.sort(key=lambda en: (en[0].weight, en[0].kind, en[0].dim, en[0].to_dim or -1, en[0].factors))
    return out


def shortest_weak_path(
    mesh: Mesh,
    t1: DistType,
    t2: DistType,
    bound: int | None = None,
    opts: SynthesisOptions | None = None,
) -> WeakPath:
    """Minimum-cost weak path between the two local types.

    Uniform-cost search with deterministic tie-breaking: cost, then number
    of operations, then the lexicographically smallest local-type chain.
    A path always exists when the bound is at least the larger endpoint
    tile, so failure here indicates an internal bug.
    """
    opts = opts or SynthesisOptions()
    if t1.global_type() != t2.global_type():
        raise InvalidRedistribution(
            f"global types differ: {t1.global_type()} vs {t2.global_type()}"
        )
    if bound is None:
        bound = max(t1.local_size(), t2.local_size())
    ctx = _mk_context(mesh, t1, t2, bound, opts)
    start, goal = t1.local_type(), t2.local_type()
    if max(t1.local_size(), t2.local_size()) > bound:
        raise PreconditionViolation(
            f"memory bound {bound} is below an endpoint tile size"
        )
    if start == goal:
        return WeakPath((start,), (), 0)

    heap: list = [(0, 0, (start,), (), start)]
    settled: set[LocalType] = set()
    while heap:
        cost, nops, chain, edges, node = heapq.heappop(heap)
        if node == goal:
            return WeakPath(chain, edges, cost)
        if node in settled:
            continue
        settled.add(node)
        for edge, nxt in successors(node, ctx):
            if nxt in settled:
                continue
            heapq.heappush(
                heap,
                (cost + edge.weight, nops + 1, chain + (nxt,), edges + (edge,), nxt),
            )
    raise SearchError(
        f"no weak path from {start} to {goal} under bound {bound}; "
        "this cannot happen for a valid problem"
    )


def _equal_cost_paths(
    mesh: Mesh,
    t1: DistType,
    t2: DistType,
    bound: int,
    opts: SynthesisOptions,
    best_cost: int,
) -> list[WeakPath]:
    """Enumerate shortest paths (up to a cap) by walking tight edges."""
    ctx = _mk_context(mesh, t1, t2, bound, opts)
    start, goal = t1.local_type(), t2.local_type()

    dist: dict[LocalType, int] = {start: 0}
    heap = [(0, start)]
    adjacency: dict[LocalType, list[tuple[WeakEdge, LocalType]]] = {}
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist.get(node, None if node not in dist else dist[node]):
            continue
        if node not in adjacency:
            adjacency[node] = successors(node, ctx)
        for edge, nxt in adjacency[node]:
            nd = d + edge.weight
            if nd < dist.get(nxt, nd + 1):
                dist[nxt] = nd
                heapq.heappush(heap, (nd, nxt))

    results: list[WeakPath] = []

    def walk(node: LocalType, chain, edges, cost):
        if len(results) >= opts.equal_cost_path_limit:
            return
        if node == goal and cost == best_cost:
            results.append(WeakPath(chain, edges, cost))
            return
        if node not in adjacency:
            adjacency[node] = successors(node, ctx)
        for edge, nxt in adjacency[node]:
            nd = cost + edge.weight
            if nxt in dist and dist[nxt] == nd and nd <= best_cost and nxt not in chain:
                walk(nxt, chain + (nxt,), edges + (edge,), nd)

    walk(start, (start,), (), 0)
    return results


# ---------------------------------------------------------------------------
# Lowering
# ---------------------------------------------------------------------------


def _ordered_pick(
    mesh: Mesh,
    candidates: Sequence[str],
    need: Counter,
    target_axes: Sequence[str],
    current_pos: dict[str, int] | None = None,
) -> list[str]:
    """Choose and order concrete axes realizing a factor multiset.

    Axes that occur in the relevant target dimension are preferred and the
    chosen block mirrors the target's minor-to-major order; axes headed
    elsewhere come first (minor-most) so they are cheap to peel off later.
    """
    tpos = {a: p for p, a in enumerate(target_axes)}
    need = Counter(need)
    chosen: list[str] = []
    by_size: dict[int, list[str]] = {}
    for a in candidates:
        by_size.setdefault(mesh.size_of(a), []).append(a)
    for size in sorted(need):
        pool = by_size.get(size, [])
        # in-target candidates, most major first, are taken preferentially
        pool.sort(
            key=lambda a: (
                0 if a in tpos else 1,
                -tpos.get(a, 0),
                current_pos.get(a, 0) if current_pos else 0,
                a,
            )
        )
        if len(pool) < need[size]:
            raise SearchError(
                f"cannot realize factors {dict(need)}: no axis of size {size} left"
            )
        chosen.extend(pool[: need[size]])
    chosen.sort(key=lambda a: (1 if a in tpos else 0, tpos.get(a, 0), a))
    return chosen


def lower_weak_path(
    mesh: Mesh,
    path: WeakPath,
    t1: DistType,
    t2: DistType,
    phi0: DeviceMap | None = None,
) -> Plan:
    """Concretize a weak path into low-level steps from the identity layout.

    Axis choices are biased toward the target type's placement so that the
    terminal assignment often needs no fix-up; when it does, one permute
    is appended (and elided if it turns out to be the identity).
    """
    phi0 = phi0 or DeviceMap.identity(mesh)
    assignment = DeviceAssignment(phi0, BaseOffsetMap.from_type(mesh, t1))
    tau = t1
    steps: list[Step] = []

    for edge in path.edges:
        need = Counter(edge.factors)
        if edge.kind == "dynSlice":
            used = tau.used_axes()
            candidates = [a for a, _ in mesh.axes if a not in used]
            block = _ordered_pick(mesh, candidates, need, t2.dims[edge.dim].axes)
            step = slice_step(assignment, tau, edge.dim, block)
        elif edge.kind == "allGather":
            d = tau.dims[edge.dim]
            pos = {a: p for p, a in enumerate(d.axes)}
            keep = t2.dims[edge.dim].axes
            # prefer removing axes the target does not want in this dim
            ordered = sorted(
                d.axes, key=lambda a: (1 if a in keep else 0, pos[a])
            )
            block_set = _take_by_sizes(mesh, ordered, need)
            block = sorted(block_set, key=lambda a: pos[a])
            step = gather_step(assignment, tau, edge.dim, block)
        else:  # allToAll
            d = tau.dims[edge.dim]
            pos = {a: p for p, a in enumerate(d.axes)}
            tgt = t2.dims[edge.to_dim].axes
            ordered = sorted(
                d.axes,
                key=lambda a: (0 if a in tgt else 1, pos[a]),
            )
            block_set = _take_by_sizes(mesh, ordered, need)
            block = _ordered_pick(
                mesh, block_set, need, tgt, current_pos=pos
            )
            step = alltoall_step(assignment, tau, edge.dim, edge.to_dim, block)
        steps.append(step)
        assignment = step.after
        tau = step.after_type

    target_assignment = DeviceAssignment(phi0, BaseOffsetMap.from_type(mesh, t2))
    if assignment.device_offsets() != target_assignment.device_offsets():
        fix = permute_step(assignment, tau, t2, phi0)
        if any(d != s for d, s in enumerate(fix.op.pi)):
            steps.append(fix)
        # identity permutation: the assignments already agree device-wise

    plan = Plan(mesh, t1, t2, steps, initial_phi=phi0)
    report = plan_cost(plan)
    plan.cost = report.total
    plan.height = report.height
    return plan


def _take_by_sizes(mesh: Mesh, ordered: Sequence[str], need: Counter) -> list[str]:
    remaining = Counter(need)
    taken = []
    for a in ordered:
        s = mesh.size_of(a)
        if remaining[s] > 0:
            taken.append(a)
            remaining[s] -= 1
    if +remaining:
        raise SearchError(f"cannot take factors {dict(need)} from {list(ordered)}")
    return taken


def place_final_permute(plan: Plan) -> Plan:
    """Commute a trailing permute before the trailing gather run.

    The permute then moves smaller tiles, strictly lowering its cost; the
    gathers are rebuilt to act on minor-most prefixes afterwards so the
    terminal assignment is unchanged. An identity permute is dropped.
    """
    if not plan.steps or not isinstance(plan.steps[-1].op, AllPermute):
        return plan
    k = len(plan.steps) - 1
    j = k
    while j - 1 >= 0 and plan.steps[j - 1].op.kind == "allGather":
        j -= 1
    if j == k:
        return plan

    mesh = plan.mesh
    gathers = plan.steps[j:k]
    final = plan.steps[k]
    target_type = final.after_type
    phi_fin = final.after.phi

    # Slice the gathered factor groups back into the target, minor-most,
    # reusing the original axis names when the target leaves them free.
    tau_b = target_type
    groups: list[tuple[int, tuple[str, ...]]] = []
    for st in reversed(gathers):
        dim = st.op.dim
        chosen = []
        scratch = tau_b
        for a in st.op.axes:
            used = scratch.used_axes() | set(chosen)
            size = mesh.size_of(a)
            if a not in used:
                pick = a
            else:
                pick = next(
                    (nm for nm, s in mesh.axes if s == size and nm not in used),
                    None,
                )
                if pick is None:
                    raise SearchError(
                        f"no unused axis of size {size} to reinsert into {tau_b}"
                    )
            chosen.append(pick)
        d = tau_b.dims[dim]
        n = product(mesh.size_of(a) for a in chosen)
        tau_b = tau_b.with_dim(dim, DistDim(d.tile // n, tuple(chosen) + d.axes, d.size))
        groups.append((dim, tuple(chosen)))

    pre = plan.steps[:j]
    assignment = gathers[0].before
    tau_a = gathers[0].before_type
    new_steps = list(pre)
    moved = permute_step(assignment, tau_a, tau_b, phi_fin)
    if any(d != s for d, s in enumerate(moved.op.pi)):
        new_steps.append(moved)
        assignment = moved.after
    else:
        assignment = DeviceAssignment(phi_fin, BaseOffsetMap.from_type(mesh, tau_b))
        if assignment.device_offsets() != moved.before.device_offsets():
            new_steps.append(moved)
            assignment = moved.after
    tau = tau_b
    for dim, chosen in reversed(groups):
        step = gather_step(assignment, tau, dim, chosen)
        new_steps.append(step)
        assignment = step.after
        tau = step.after_type
    if assignment.device_offsets() != final.after.device_offsets():
        raise SearchError("permute placement changed the terminal assignment")

    out = Plan(mesh, plan.source, plan.target, new_steps, initial_phi=plan.phi0())
    report = plan_cost(out)
    out.cost = report.total
    out.height = report.height
    return out


# ---------------------------------------------------------------------------
# End-to-end synthesis
# ---------------------------------------------------------------------------


def synthesize(
    mesh: Mesh,
    t1: DistType,
    t2: DistType,
    options: SynthesisOptions | None = None,
) -> SynthesisResult:
    """Synthesize a memory-bounded, near-cost-optimal redistribution plan.

    Pipeline: decompose the mesh to prime axes, search the weak graph for
    a cheapest path under the memory bound, lower it to low-level steps,
    and move the fix-up permute (if any) before trailing gathers. The plan
    contains at most one permute and its height never exceeds the bound.
    """
    options = options or SynthesisOptions()
    require_well_formed(mesh, t1)
    require_well_formed(mesh, t2)
    if t1.global_type() != t2.global_type():
        raise InvalidRedistribution(
            f"global types differ: {t1.global_type()} vs {t2.global_type()}"
        )
    dmesh, dt1, dt2, decomp = decompose_primes(mesh, t1, t2)
    default_bound = max(dt1.local_size(), dt2.local_size())
    bound = options.memory_bound if options.memory_bound is not None else default_bound
    if bound < default_bound:
        raise PreconditionViolation(
            f"memory bound {bound} is below the required minimum {default_bound}"
        )

    path = shortest_weak_path(dmesh, dt1, dt2, bound, options)
    phi0 = DeviceMap.identity(dmesh)
    plan = lower_weak_path(dmesh, path, dt1, dt2, phi0)

    if options.prefer_permute_elision and plan.permute_count() > 0:
        for alt in _equal_cost_paths(dmesh, dt1, dt2, bound, options, path.cost):
            alt_plan = lower_weak_path(dmesh, alt, dt1, dt2, phi0)
            if alt_plan.permute_count() == 0:
                path, plan = alt, alt_plan
                break

    plan = place_final_permute(plan)
    report = plan_cost(plan)
    plan.cost = report.total
    plan.height = report.height

    permute_index = next(
        (i for i, s in enumerate(plan.steps) if isinstance(s.op, AllPermute)), None
    )
    return SynthesisResult(
        mesh=mesh,
        source=t1,
        target=t2,
        decomposition=decomp,
        plan=plan,
        weak_path=path,
        cost=report,
        final_permute_index=permute_index,
    )
