"""Base offset maps, device maps/assignments, and the equivalences between them.

The meaning of a distributed type is its base offset map: for every mesh
coordinate, the lexicographically lowest global index of the tile that
coordinate holds, one offset per array dimension. Everything downstream
(collectives, search, simulation) is verified against this layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterator

from .core import Coord, DistType, Mesh, checked_mul, require_well_formed
from .errors import PreconditionViolation, WellFormednessError


@dataclass(frozen=True)
class BaseOffsetMap:
    """Closed-form per-dimension offset evaluation for a distributed type.

    ``strides`` holds, per array dimension, (mesh axis position, stride)
    pairs: the offset contribution of an axis is its coordinate times the
    tile extent accumulated over the axes minor to it. An unpartitioned
    dimension contributes offset 0. An explicit table is available for
    tests via :meth:`table`.
    """

    mesh: Mesh
    strides: tuple[tuple[tuple[int, int], ...], ...]

    @classmethod
    def from_type(cls, mesh: Mesh, t: DistType) -> "BaseOffsetMap":
        require_well_formed(mesh, t)
        per_dim = []
        for d in t.dims:
            acc = d.tile
            pairs = []
            for a in d.axes:
                pairs.append((mesh.index[a], acc))
                acc = checked_mul(acc, mesh.size_of(a))
            per_dim.append(tuple(pairs))
        return cls(mesh, tuple(per_dim))

    @property
    def rank(self) -> int:
        return len(self.strides)

    def offsets(self, coord: Coord) -> tuple[int, ...]:
        return tuple(
            sum(coord[axis] * stride for axis, stride in dim) for dim in self.strides
        )

    def enumerate(self) -> Iterator[tuple[Coord, tuple[int, ...]]]:
        for coord in self.mesh.coords():
            yield coord, self.offsets(coord)

    def table(self) -> dict[Coord, tuple[int, ...]]:
        """Materialized coordinate-to-offsets map (enumeration mode)."""
        return dict(self.enumerate())

    def image(self) -> set[tuple[int, ...]]:
        return {offs for _, offs in self.enumerate()}

    @cached_property
    def _by_offset(self) -> dict[tuple[int, ...], list[int]]:
        buckets: dict[tuple[int, ...], list[int]] = {}
        for idx, coord in enumerate(self.mesh.coords()):
            buckets.setdefault(self.offsets(coord), []).append(idx)
        return buckets

    def is_injective(self) -> bool:
        """A map is injective exactly when the type uses every mesh axis."""
        return all(len(v) == 1 for v in self._by_offset.values())


def offset_map_of(mesh: Mesh, t: DistType) -> BaseOffsetMap:
    return BaseOffsetMap.from_type(mesh, t)


@dataclass(frozen=True)
class DeviceMap:
    """Bijection between mesh coordinates and physical device ids.

    Stored densely: ``to_device[i]`` is the device at the coordinate with
    linear index ``i`` (row-major coordinate order).
    """

    mesh: Mesh
    to_device: tuple[int, ...]

    def __post_init__(self):
        n = self.mesh.device_count
        if len(self.to_device) != n or sorted(self.to_device) != list(range(n)):
            raise WellFormednessError("device map is not a bijection onto 0..n-1")

    @classmethod
    def identity(cls, mesh: Mesh) -> "DeviceMap":
        return cls(mesh, tuple(range(mesh.device_count)))

    @cached_property
    def from_device(self) -> tuple[int, ...]:
        inverse = [0] * len(self.to_device)
        for lin, dev in enumerate(self.to_device):
            inverse[dev] = lin
        return tuple(inverse)

    def device_of(self, coord: Coord) -> int:
        return self.to_device[self.mesh.linear(coord)]

    def coord_of_device(self, device: int) -> Coord:
        return self.mesh.coord_of_linear(self.from_device[device])


@dataclass(frozen=True)
class DeviceAssignment:
    """A device map paired with a base offset map over the same mesh."""

    phi: DeviceMap
    beta: BaseOffsetMap

    def __post_init__(self):
        if self.phi.mesh != self.beta.mesh:
            raise WellFormednessError("device map and offset map use different meshes")

    @property
    def mesh(self) -> Mesh:
        return self.phi.mesh

    def device_offsets(self) -> tuple[tuple[int, ...], ...]:
        """Offsets by device id: the physically meaningful composite map."""
        coords = list(self.mesh.coords())
        return tuple(
            self.beta.offsets(coords[lin]) for lin in self.phi.from_device
        )


def assignment_equivalent(a1: DeviceAssignment, a2: DeviceAssignment) -> bool:
    """True when both assignments give every device the same tile offsets."""
    return a1.device_offsets() == a2.device_offsets()


def weak_equal(mesh: Mesh, t1: DistType, t2: DistType) -> bool:
    """Same global and local type: the offset maps differ by a permutation."""
    require_well_formed(mesh, t1)
    require_well_formed(mesh, t2)
    return t1.global_type() == t2.global_type() and t1.local_type() == t2.local_type()


def match_offset_maps(
    beta_from: BaseOffsetMap, beta_to: BaseOffsetMap
) -> tuple[int, ...]:
    """A coordinate permutation ``psi`` with ``beta_to = beta_from o psi``.

    Returned as linear indices: ``psi[i]`` is the linear coordinate whose
    ``beta_from`` offsets equal ``beta_to``'s at linear coordinate ``i``.
    Coordinates are matched in lexicographic order, ties resolved toward
    the lowest unused source coordinate, so the result is deterministic
    even for non-injective maps (types leaving mesh axes unused).
    """
    if beta_from.strides == beta_to.strides:
        return tuple(range(beta_from.mesh.device_count))
    if beta_from.mesh != beta_to.mesh:
        raise PreconditionViolation("offset maps live on different meshes")
    buckets = {k: list(v) for k, v in beta_from._by_offset.items()}
    positions = {k: 0 for k in buckets}
    psi = []
    for coord in beta_to.mesh.coords():
        key = beta_to.offsets(coord)
        if key not in buckets or positions[key] >= len(buckets[key]):
            raise PreconditionViolation(
                f"offset maps are not related by a permutation (at offsets {key})"
            )
        psi.append(buckets[key][positions[key]])
        positions[key] += 1
    return tuple(psi)


def find_permutation(mesh: Mesh, t1: DistType, t2: DistType) -> tuple[int, ...]:
    """A mesh permutation ``pi`` with ``offsets(t2) = offsets(t1) o pi``.

    Requires the two types to be weakly equal; linear-index encoding as in
    :func:`match_offset_maps`.
    """
    if not weak_equal(mesh, t1, t2):
        raise PreconditionViolation(
            f"no permutation relates {t1} and {t2}: global or local types differ"
        )
    return match_offset_maps(
        BaseOffsetMap.from_type(mesh, t1), BaseOffsetMap.from_type(mesh, t2)
    )
