"""Device meshes, distributed dimensions and types, and prime-factor mesh decomposition.

A mesh declares named axes with integer sizes; it spans a logical space of
device coordinates. A distributed type assigns every array dimension a
``tile{axes}global`` partitioning over mesh axes, the listed axes being
minor-to-major (fastest-changing first). All sizes are array elements.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

from .errors import WellFormednessError

Coord = tuple[int, ...]

#: All sizes and offsets must stay representable in a signed 64-bit integer.
MAX_SIZE = 2**63 - 1


def checked_mul(a: int, b: int) -> int:
    """Multiply two sizes, rejecting products beyond the 64-bit range."""
    result = a * b
    if result > MAX_SIZE:
        raise OverflowError(f"size product {a} * {b} exceeds 2**63 - 1")
    return result


def product(values: Iterable[int]) -> int:
    result = 1
    for v in values:
        result = checked_mul(result, v)
    return result


def prime_factors(n: int) -> list[int]:
    """Prime factorization of ``n`` in nondecreasing order.

    Trial division; mesh axis sizes are device counts, so small in practice.
    """
    if n < 1:
        raise ValueError(f"cannot factor {n}")
    factors: list[int] = []
    p = 2
    while p * p <= n:
        while n % p == 0:
            factors.append(p)
            n //= p
        p += 1 if p == 2 else 2
    if n > 1:
        factors.append(n)
    return factors


@dataclass(frozen=True)
class Mesh:
    """Named, sized axes spanning a logical device-coordinate space.

    Coordinates are tuples in axis declaration order and enumerate
    row-major, last declared axis fastest. The linear position of a
    coordinate in that enumeration doubles as the default device id.
    """

    axes: tuple[tuple[str, int], ...]

    def __post_init__(self):
        names = [a for a, _ in self.axes]
        if len(set(names)) != len(names):
            raise WellFormednessError(f"duplicate axis names in mesh {names}")
        for name, size in self.axes:
            if not isinstance(size, int) or size < 1:
                raise WellFormednessError(f"axis {name!r} has invalid size {size!r}")
        product(size for _, size in self.axes)  # overflow check

    @classmethod
    def of(cls, pairs: Iterable[tuple[str, int]]) -> "Mesh":
        return cls(tuple((str(n), int(s)) for n, s in pairs))

    @cached_property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.axes)

    @cached_property
    def sizes(self) -> dict[str, int]:
        return dict(self.axes)

    @cached_property
    def index(self) -> dict[str, int]:
        return {name: i for i, (name, _) in enumerate(self.axes)}

    @cached_property
    def device_count(self) -> int:
        return product(size for _, size in self.axes)

    def size_of(self, name: str) -> int:
        try:
            return self.sizes[name]
        except KeyError:
            raise WellFormednessError(f"axis {name!r} not declared in mesh {self}") from None

    def has_axis(self, name: str) -> bool:
        return name in self.sizes

    def coords(self) -> Iterator[Coord]:
        """All coordinates in lexicographic (row-major) order."""
        return itertools.product(*(range(size) for _, size in self.axes))

    @cached_property
    def _linear_strides(self) -> tuple[int, ...]:
        strides = [0] * len(self.axes)
        acc = 1
        for i in range(len(self.axes) - 1, -1, -1):
            strides[i] = acc
            acc *= self.axes[i][1]
        return tuple(strides)

    def linear(self, coord: Coord) -> int:
        return sum(c * s for c, s in zip(coord, self._linear_strides))

    def coord_of_linear(self, idx: int) -> Coord:
        coord = []
        for stride in self._linear_strides:
            coord.append(idx // stride)
            idx %= stride
        return tuple(coord)

    def is_prime(self) -> bool:
        """True when every axis size is prime."""
        return all(len(prime_factors(size)) == 1 for _, size in self.axes)

    def __str__(self) -> str:
        inner = ", ".join(f"{name}:{size}" for name, size in self.axes)
        return "{" + inner + "}"


@dataclass(frozen=True)
class DistDim:
    """One array dimension of a distributed type: ``tile{axes}size``.

    ``tile`` is the local extent held per device, ``size`` the global
    extent, and ``axes`` the partitioning mesh axes minor-to-major. A
    dimension with no axes is unpartitioned and requires tile == size.
    """

    tile: int
    axes: tuple[str, ...]
    size: int

    def __post_init__(self):
        if self.tile < 1 or self.size < 1:
            raise WellFormednessError(f"non-positive extent in dimension {self}")

    @classmethod
    def replicated(cls, size: int) -> "DistDim":
        return cls(size, (), size)

    def is_partitioned(self) -> bool:
        return bool(self.axes)

    def __str__(self) -> str:
        if not self.axes:
            if self.tile == self.size:
                return str(self.size)
            return f"{self.tile}{{}}{self.size}"
        return f"{self.tile}{{{','.join(self.axes)}}}{self.size}"


@dataclass(frozen=True)
class DistType:
    """A distributed array type: one DistDim per array dimension."""

    dims: tuple[DistDim, ...]

    @classmethod
    def of(cls, dims: Iterable[DistDim]) -> "DistType":
        return cls(tuple(dims))

    @classmethod
    def replicated(cls, global_type: Sequence[int]) -> "DistType":
        return cls(tuple(DistDim.replicated(s) for s in global_type))

    @property
    def rank(self) -> int:
        return len(self.dims)

    def axis_names(self) -> tuple[str, ...]:
        """All partitioning axes, in dimension order then minor-to-major."""
        return tuple(a for d in self.dims for a in d.axes)

    def used_axes(self) -> frozenset[str]:
        return frozenset(self.axis_names())

    def global_type(self) -> tuple[int, ...]:
        return tuple(d.size for d in self.dims)

    def global_size(self) -> int:
        return product(d.size for d in self.dims)

    def local_type(self) -> tuple[int, ...]:
        return tuple(d.tile for d in self.dims)

    def local_size(self) -> int:
        return product(d.tile for d in self.dims)

    def meta(self) -> dict:
        """All meta-functions of the type in one record."""
        return {
            "rank": self.rank,
            "axes": self.axis_names(),
            "globaltype": self.global_type(),
            "globalsize": self.global_size(),
            "localtype": self.local_type(),
            "localsize": self.local_size(),
        }

    def with_dim(self, i: int, dim: DistDim) -> "DistType":
        dims = list(self.dims)
        dims[i] = dim
        return DistType(tuple(dims))

    def __str__(self) -> str:
        return "[" + ", ".join(str(d) for d in self.dims) + "]"


def validate_dim(mesh: Mesh, dim: DistDim, where: str = "dimension") -> list[str]:
    """Check one dimension against its mesh; returns failure messages."""
    problems = []
    seen = set()
    for a in dim.axes:
        if a in seen:
            problems.append(f"{where}: axis {a!r} repeated within the dimension")
        seen.add(a)
        if not mesh.has_axis(a):
            problems.append(f"{where}: axis {a!r} not declared in mesh")
    if not problems:
        expected = checked_mul(dim.tile, product(mesh.size_of(a) for a in dim.axes))
        if expected != dim.size:
            problems.append(
                f"{where}: tile {dim.tile} times axis sizes "
                f"{[mesh.size_of(a) for a in dim.axes]} is {expected}, not {dim.size}"
            )
    return problems


def validate_type(mesh: Mesh, t: DistType) -> list[str]:
    """Check every dimension and the pairwise disjointness of their axes."""
    problems = []
    for i, d in enumerate(t.dims):
        problems.extend(validate_dim(mesh, d, where=f"dim {i}"))
    seen: dict[str, int] = {}
    for i, d in enumerate(t.dims):
        for a in d.axes:
            if a in seen and seen[a] != i:
                problems.append(f"axis {a!r} used by both dim {seen[a]} and dim {i}")
            seen.setdefault(a, i)
    return problems


def well_formed(mesh: Mesh, t: DistType) -> bool:
    return not validate_type(mesh, t)


def require_well_formed(mesh: Mesh, t: DistType) -> None:
    problems = validate_type(mesh, t)
    if problems:
        raise WellFormednessError(f"{t} on mesh {mesh}: " + "; ".join(problems))


# ---------------------------------------------------------------------------
# Prime-factor mesh decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeshDecomposition:
    """Correspondence between a mesh and its prime-factor refinement.

    ``split`` maps every original axis to its replacement run of prime
    axes, minor-to-major, first factor minor-most. Size-1 axes map to an
    empty run (they carry no coordinates and are dropped).
    """

    original: Mesh
    mesh: Mesh
    split: tuple[tuple[str, tuple[str, ...]], ...]

    @cached_property
    def split_map(self) -> dict[str, tuple[str, ...]]:
        return dict(self.split)

    def apply_type(self, t: DistType) -> DistType:
        dims = []
        for d in t.dims:
            axes: list[str] = []
            for a in d.axes:
                axes.extend(self.split_map[a])
            dims.append(DistDim(d.tile, tuple(axes), d.size))
        return DistType(tuple(dims))

    def original_coord(self, coord: Coord) -> Coord:
        """Digit-wise image of a refined coordinate in the original mesh."""
        pos = self.mesh.index
        out = []
        for name, _size in self.original.axes:
            value = 0
            stride = 1
            for part in self.split_map[name]:
                value += coord[pos[part]] * stride
                stride *= self.mesh.size_of(part)
            out.append(value)
        return tuple(out)

    def merge_axes(self, axes: Sequence[str]) -> tuple[str, ...]:
        """Collapse any contiguous full split run back to its original name.

        Used only for display; ops always carry refined axes.
        """
        runs = {parts: name for name, parts in self.split if len(parts) > 1}
        out: list[str] = []
        i = 0
        axes = list(axes)
        while i < len(axes):
            merged = False
            for parts, name in runs.items():
                k = len(parts)
                if tuple(axes[i : i + k]) == parts:
                    out.append(name)
                    i += k
                    merged = True
                    break
            if not merged:
                out.append(axes[i])
                i += 1
        return tuple(out)


def _fresh_names(base: str, count: int, taken: set[str]) -> list[str]:
    sep = ""
    while True:
        candidates = [f"{base}{sep}{i}" for i in range(count)]
        if not any(c in taken for c in candidates):
            return candidates
        sep += "."


def decompose_mesh(mesh: Mesh) -> MeshDecomposition:
    """Refine every composite axis into prime axes; drop size-1 axes."""
    taken = set(mesh.names)
    new_axes: list[tuple[str, int]] = []
    split: list[tuple[str, tuple[str, ...]]] = []
    for name, size in mesh.axes:
        if size == 1:
            split.append((name, ()))
            continue
        factors = prime_factors(size)
        if len(factors) == 1:
            new_axes.append((name, size))
            split.append((name, (name,)))
            continue
        parts = _fresh_names(name, len(factors), taken)
        taken.update(parts)
        new_axes.extend(zip(parts, factors))
        split.append((name, tuple(parts)))
    return MeshDecomposition(mesh, Mesh(tuple(new_axes)), tuple(split))


def decompose_primes(
    mesh: Mesh, t1: DistType, t2: DistType
) -> tuple[Mesh, DistType, DistType, MeshDecomposition]:
    """Restate a redistribution problem over the prime-factor mesh.

    Both types keep their global and local extents; every composite axis
    occurrence is replaced in place by its minor-to-major prime run.
    """
    require_well_formed(mesh, t1)
    require_well_formed(mesh, t2)
    decomp = decompose_mesh(mesh)
    return decomp.mesh, decomp.apply_type(t1), decomp.apply_type(t2), decomp
