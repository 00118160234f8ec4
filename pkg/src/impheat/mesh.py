"""Structured interval/rectangle meshes and node regions."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation, DegenerateRegionError


class DomainKind(str, Enum):
    INTERVAL = "interval"
    RECTANGLE = "rectangle"


@dataclass(frozen=True)
class DomainSpec:
    kind: DomainKind
    extents: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        try:
            kind = DomainKind(self.kind)
        except ValueError:
            raise ConfigurationError(f"unknown domain kind {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        extents = tuple(float(e) for e in np.atleast_1d(self.extents))
        resolution = tuple(int(r) for r in np.atleast_1d(self.resolution))
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "resolution", resolution)
        axes = 1 if kind is DomainKind.INTERVAL else 2
        if len(extents) != axes or len(resolution) != axes:
            raise ConfigurationError(
                f"{kind.value} domain needs {axes} extent(s) and resolution(s), "
                f"got {len(extents)} and {len(resolution)}"
            )
        if any(not np.isfinite(e) or e <= 0 for e in extents):
            raise ConfigurationError(f"extents must be positive, got {extents}")
        if any(r < 2 for r in resolution):
            raise ConfigurationError(f"resolution must be >= 2 per axis, got {resolution}")

    @classmethod
    def interval(cls, length: float = 1.0, n: int = 100) -> "DomainSpec":
        return cls(DomainKind.INTERVAL, (length,), (n,))

    @classmethod
    def rectangle(cls, lx: float = 1.0, ly: float = 1.0, nx: int = 16, ny: int = 16) -> "DomainSpec":
        return cls(DomainKind.RECTANGLE, (lx, ly), (nx, ny))

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @property
    def boundary_measure(self) -> float:
        """|Γ|: 2 for an interval (counting measure), the perimeter for a rectangle."""
        if self.kind is DomainKind.INTERVAL:
            return 2.0
        return 2.0 * sum(self.extents)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "extents": list(self.extents), "resolution": list(self.resolution)}


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform tensor grid. Nodes are ordered with the first axis varying fastest."""

    spec: DomainSpec
    nodes: np.ndarray  # (n_nodes, dim)
    elements: np.ndarray  # (n_elem, dim + 1), P1 simplices
    boundary_nodes: np.ndarray  # sorted indices
    boundary_segments: np.ndarray  # (n_seg, 2); empty in 1D

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    def element_volumes(self) -> np.ndarray:
        pts = self.nodes[self.elements]
        if self.dim == 1:
            return pts[:, 1, 0] - pts[:, 0, 0]
        e1 = pts[:, 1] - pts[:, 0]
        e2 = pts[:, 2] - pts[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def to_dict(self) -> dict:
        return {
            "domain": self.spec.to_dict(),
            "n_nodes": self.n_nodes,
            "n_elements": len(self.elements),
            "n_boundary_nodes": len(self.boundary_nodes),
        }


def build_mesh(spec: DomainSpec) -> Mesh:
    if spec.kind is DomainKind.INTERVAL:
        (n,) = spec.resolution
        x = np.linspace(0.0, spec.extents[0], n + 1)
        elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
        return Mesh(
            spec=spec,
            nodes=x[:, None],
            elements=elements,
            boundary_nodes=np.array([0, n]),
            boundary_segments=np.empty((0, 2), dtype=int),
        )

    nx, ny = spec.resolution
    x = np.linspace(0.0, spec.extents[0], nx + 1)
    y = np.linspace(0.0, spec.extents[1], ny + 1)
    X, Y = np.meshgrid(x, y)  # row j holds y[j]; flattening makes x fastest
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def idx(i, j):
        return j * (nx + 1) + i

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    n00, n10, n01, n11 = idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1)
    elements = np.concatenate(
        [np.column_stack([n00, n10, n11]), np.column_stack([n00, n11, n01])]
    )

    # counter-clockwise walk around the perimeter
    bottom = [idx(a, 0) for a in range(nx + 1)]
    right = [idx(nx, b) for b in range(1, ny + 1)]
    top = [idx(a, ny) for a in range(nx - 1, -1, -1)]
    left = [idx(0, b) for b in range(ny - 1, -1, -1)]
    loop = bottom + right + top + left  # closes back on node 0
    segments = np.column_stack([loop[:-1], loop[1:]])
    return Mesh(
        spec=spec,
        nodes=nodes,
        elements=elements,
        boundary_nodes=np.unique(loop),
        boundary_segments=segments,
    )


class RegionKind(str, Enum):
    NODE_SET = "node_set"
    BALL = "ball"


@dataclass(frozen=True)
class Region:
    kind: RegionKind
    node_indices: tuple[int, ...] = ()
    center: tuple[float, ...] = ()
    radius: float = 0.0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", RegionKind(self.kind))
        if self.kind is RegionKind.BALL:
            if not self.radius > 0:
                raise ConfigurationError(f"ball radius must be positive, got {self.radius}")
            object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        else:
            object.__setattr__(self, "node_indices", tuple(int(i) for i in self.node_indices))

    @classmethod
    def ball(cls, center: Sequence[float] | float, radius: float, label: str = "") -> "Region":
        return cls(RegionKind.BALL, center=tuple(np.atleast_1d(center)), radius=float(radius), label=label)

    @classmethod
    def interval(cls, a: float, b: float, label: str = "") -> "Region":
        """The 1D window [a, b] expressed as a ball."""
        if not b > a:
            raise ConfigurationError(f"interval needs a < b, got ({a}, {b})")
        return cls.ball((0.5 * (a + b),), 0.5 * (b - a), label=label)

    @classmethod
    def nodes(cls, indices: Sequence[int], label: str = "") -> "Region":
        return cls(RegionKind.NODE_SET, node_indices=tuple(indices), label=label)

    def to_dict(self) -> dict:
        if self.kind is RegionKind.BALL:
            return {"kind": "ball", "center": list(self.center), "radius": self.radius}
        return {"kind": "node_set", "node_indices": list(self.node_indices)}


def region_nodes(mesh: Mesh, region: Region, control: bool = False) -> np.ndarray:
    """Sorted node indices covered by ``region``; an empty result is an error.

    With ``control=True`` the region stands for ω and may hold no boundary node.
    """
    if region.kind is RegionKind.BALL:
        if len(region.center) != mesh.dim:
            raise ContractViolation(
                f"ball center has {len(region.center)} coordinates, mesh is {mesh.dim}D"
            )
        dist = np.linalg.norm(mesh.nodes - np.asarray(region.center), axis=1)
        # slack absorbs the rounding of linspace grids
        idx = np.flatnonzero(dist <= region.radius * (1 + 1e-12) + 1e-14)
    else:
        idx = np.unique(np.asarray(region.node_indices, dtype=int))
        if idx.size and (idx.min() < 0 or idx.max() >= mesh.n_nodes):
            raise ContractViolation("node set holds indices outside the mesh")

    if idx.size == 0:
        raise DegenerateRegionError(f"region {region.to_dict()} contains no mesh node")
    if control:
        if np.intersect1d(idx, mesh.boundary_nodes).size:
            raise DegenerateRegionError("control region must lie strictly inside the domain")
    return idx
