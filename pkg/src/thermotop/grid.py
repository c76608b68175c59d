"""Voxel design domain, material, boundary conditions and design state.

Index conventions
-----------------
Node ``(i, j, k)`` has index ``i + (nx+1) * (j + (ny+1) * k)``; element
``(i, j, k)`` has index ``i + nx * (j + ny * k)``.  Structural DOF ``3*n + c``
is component ``c`` (0=x, 1=y, 2=z) of node ``n``.  Local element nodes follow
the usual hexahedron ordering::

    0:(0,0,0) 1:(1,0,0) 2:(1,1,0) 3:(0,1,0)
    4:(0,0,1) 5:(1,0,1) 6:(1,1,1) 7:(0,1,1)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

AXES = "xyz"

LOCAL_NODE_OFFSETS = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [1, 1, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
        [0, 1, 1],
    ]
)


@dataclass(frozen=True)
class VoxelGrid:
    """Regular axis-aligned grid of ``nx * ny * nz`` hexahedral elements."""

    nx: int
    ny: int
    nz: int
    hx: float
    hy: float
    hz: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("hx", "hy", "hz"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.hx, self.hy, self.hz)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1) * (self.nz + 1)

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_nodes

    @property
    def element_volume(self) -> float:
        return self.hx * self.hy * self.hz

    @property
    def dims(self) -> tuple[float, float, float]:
        return (self.nx * self.hx, self.ny * self.hy, self.nz * self.hz)

    def node_index(self, i, j, k):
        return i + (self.nx + 1) * (j + (self.ny + 1) * k)

    def element_index(self, i, j, k):
        return i + self.nx * (j + self.ny * k)

    @cached_property
    def element_ijk(self) -> np.ndarray:
        """(N, 3) integer grid position of every element."""
        e = np.arange(self.n_elements)
        i = e % self.nx
        j = (e // self.nx) % self.ny
        k = e // (self.nx * self.ny)
        return np.stack([i, j, k], axis=1)

    @cached_property
    def node_ijk(self) -> np.ndarray:
        n = np.arange(self.n_nodes)
        i = n % (self.nx + 1)
        j = (n // (self.nx + 1)) % (self.ny + 1)
        k = n // ((self.nx + 1) * (self.ny + 1))
        return np.stack([i, j, k], axis=1)

    @cached_property
    def node_coords(self) -> np.ndarray:
        return np.asarray(self.origin) + self.node_ijk * np.array(self.spacing)

    @cached_property
    def element_centroids(self) -> np.ndarray:
        return np.asarray(self.origin) + (self.element_ijk + 0.5) * np.array(self.spacing)

    @cached_property
    def element_nodes(self) -> np.ndarray:
        """(N, 8) node indices of every element in local node order."""
        ijk = self.element_ijk[:, None, :] + LOCAL_NODE_OFFSETS[None, :, :]
        return self.node_index(ijk[..., 0], ijk[..., 1], ijk[..., 2])

    @cached_property
    def element_dofs(self) -> np.ndarray:
        """(N, 24) structural DOFs, node-major (x, y, z per local node)."""
        nodes = self.element_nodes
        return (3 * nodes[:, :, None] + np.arange(3)[None, None, :]).reshape(-1, 24)

    @cached_property
    def node_elements(self) -> list[np.ndarray]:
        """For each node, the sorted indices of elements containing it."""
        nodes = self.element_nodes.ravel()
        elems = np.repeat(np.arange(self.n_elements), 8)
        order = np.argsort(nodes, kind="stable")
        counts = np.bincount(nodes, minlength=self.n_nodes)
        return np.split(elems[order], np.cumsum(counts)[:-1])

    def elements_touching(self, nodes) -> np.ndarray:
        """Boolean element mask: elements having at least one of ``nodes``."""
        node_mask = np.zeros(self.n_nodes, dtype=bool)
        node_mask[np.asarray(nodes, dtype=int)] = True
        return node_mask[self.element_nodes].any(axis=1)

    @cached_property
    def neighbors(self) -> np.ndarray:
        """(N, 26) node-sharing neighbours of each element, -1 where outside."""
        return self._offset_table([d for d in _OFFSETS_26])

    @cached_property
    def face_neighbors(self) -> np.ndarray:
        """(N, 6) face-sharing neighbours of each element, -1 where outside."""
        return self._offset_table(
            [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
        )

    def _offset_table(self, offsets) -> np.ndarray:
        ijk = self.element_ijk
        out = np.full((self.n_elements, len(offsets)), -1, dtype=np.int64)
        lim = np.array(self.shape)
        for c, off in enumerate(offsets):
            q = ijk + np.asarray(off)
            ok = np.all((q >= 0) & (q < lim), axis=1)
            out[ok, c] = self.element_index(q[ok, 0], q[ok, 1], q[ok, 2])
        return out

    def plane_index(self, axis: int, coord: float) -> int:
        """Nearest grid-plane index for ``coord`` along ``axis``."""
        h = self.spacing[axis]
        n = self.shape[axis]
        idx = int(round((coord - self.origin[axis]) / h))
        if idx < 0 or idx > n:
            raise ValueError(
                f"{AXES[axis]}={coord} lies outside the domain "
                f"[{self.origin[axis]}, {self.origin[axis] + n * h}]"
            )
        return idx

    def select_nodes(self, where: dict[int, float]) -> np.ndarray:
        """Nodes lying on every grid plane in ``where`` ({axis: coordinate})."""
        mask = np.ones(self.n_nodes, dtype=bool)
        for axis, coord in where.items():
            mask &= self.node_ijk[:, axis] == self.plane_index(axis, coord)
        return np.flatnonzero(mask)


_OFFSETS_26 = [
    (di, dj, dk)
    for dk in (-1, 0, 1)
    for dj in (-1, 0, 1)
    for di in (-1, 0, 1)
    if (di, dj, dk) != (0, 0, 0)
]


def build_grid(dims: Sequence[float], resolution: Sequence[int], origin=(0.0, 0.0, 0.0)) -> VoxelGrid:
    """Voxelize a box of size ``dims`` (m) into ``resolution`` elements per axis."""
    if len(dims) != 3 or len(resolution) != 3:
        raise ValueError("dims and resolution must both have three entries")
    for axis, (length, n) in enumerate(zip(dims, resolution)):
        if not float(length) > 0:
            raise ValueError(f"domain length along {AXES[axis]} must be positive, got {length}")
        if int(n) != n or int(n) < 1:
            raise ValueError(f"element count along {AXES[axis]} must be a positive integer, got {n}")
    nx, ny, nz = (int(n) for n in resolution)
    return VoxelGrid(
        nx, ny, nz,
        float(dims[0]) / nx, float(dims[1]) / ny, float(dims[2]) / nz,
        tuple(float(o) for o in origin),
    )


@dataclass(frozen=True)
class MaterialModel:
    """Isotropic linear thermo-elastic material.

    Defaults are structural steel; ``k`` only matters for conduction with
    non-uniform material and is 1 W/m/C unless stated otherwise.
    """

    E: float = 2.0e11
    nu: float = 0.3
    alpha: float = 1.2e-5
    k: float = 1.0
    t0: float = 23.0

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"elastic modulus must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {self.nu}")
        if not self.k > 0:
            raise ValueError(f"thermal conductivity must be positive, got {self.k}")
        if not np.isfinite(self.alpha):
            raise ValueError("thermal expansion coefficient must be finite")


@dataclass(frozen=True)
class FacePressure:
    """Uniform pressure on a boundary plane, acting along ``direction``."""

    axis: int
    index: int
    pressure: float
    direction: tuple[float, float, float]


@dataclass(frozen=True)
class UniformDelta:
    """Prescribed uniform temperature change; no thermal solve."""

    dt: float


@dataclass(frozen=True)
class Dirichlet:
    """Prescribed nodal temperatures (absolute, C) with optional nodal heat flux (W)."""

    nodes: np.ndarray
    values: np.ndarray
    flux: np.ndarray | None = None

    def __post_init__(self):
        if len(self.nodes) == 0:
            raise ValueError("dirichlet thermal mode needs at least one prescribed node")
        if len(self.nodes) != len(self.values):
            raise ValueError("prescribed nodes and values differ in length")


@dataclass
class BoundaryConditions:
    fixed_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    point_loads: list[tuple[int, np.ndarray]] = field(default_factory=list)
    face_pressures: list[FacePressure] = field(default_factory=list)
    thermal: UniformDelta | Dirichlet = field(default_factory=lambda: UniformDelta(0.0))

    def __post_init__(self):
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))

    @property
    def is_uniform(self) -> bool:
        return isinstance(self.thermal, UniformDelta)

    def structural_load(self, grid: VoxelGrid) -> np.ndarray:
        """Nodal force vector from point loads and face pressures.

        Pressure on each element face is lumped in equal quarters onto the
        face's four nodes.
        """
        f = np.zeros(grid.n_dofs)
        for node, force in self.point_loads:
            f[3 * node : 3 * node + 3] += force
        for fp in self.face_pressures:
            f += _pressure_load(grid, fp)
        return f

    def loaded_nodes(self, grid: VoxelGrid) -> np.ndarray:
        nodes = [n for n, _ in self.point_loads]
        for fp in self.face_pressures:
            nodes.extend(np.flatnonzero(grid.node_ijk[:, fp.axis] == fp.index))
        return np.unique(np.asarray(nodes, dtype=np.int64))

    def anchor_nodes(self) -> np.ndarray:
        return np.unique(self.fixed_dofs // 3)


def _pressure_load(grid: VoxelGrid, fp: FacePressure) -> np.ndarray:
    n_axis = grid.shape[fp.axis]
    if fp.index not in (0, n_axis):
        raise ValueError("face pressure must act on a boundary plane of the domain")
    other = [a for a in range(3) if a != fp.axis]
    area = grid.spacing[other[0]] * grid.spacing[other[1]]
    layer = 0 if fp.index == 0 else n_axis - 1
    elems = np.flatnonzero(grid.element_ijk[:, fp.axis] == layer)
    local = np.flatnonzero(LOCAL_NODE_OFFSETS[:, fp.axis] == (0 if fp.index == 0 else 1))
    nodes = grid.element_nodes[elems][:, local].ravel()
    direction = np.asarray(fp.direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    f = np.zeros(grid.n_dofs)
    share = fp.pressure * area / 4.0
    for c in range(3):
        if direction[c] != 0.0:
            np.add.at(f, 3 * nodes + c, share * direction[c])
    return f


@dataclass
class DesignState:
    """Solid/void indicator over the elements; protected elements stay solid."""

    solid: np.ndarray
    protected: np.ndarray

    def __post_init__(self):
        self.solid = np.asarray(self.solid, dtype=bool).copy()
        self.protected = np.asarray(self.protected, dtype=bool)
        if self.solid.shape != self.protected.shape:
            raise ValueError("solid and protected masks differ in shape")
        self.solid[self.protected] = True

    @property
    def n_elements(self) -> int:
        return self.solid.size

    @property
    def n_solid(self) -> int:
        return int(np.count_nonzero(self.solid))

    @property
    def volume_fraction(self) -> float:
        return self.n_solid / self.n_elements

    def with_solid(self, solid) -> DesignState:
        return DesignState(solid, self.protected)

    def copy(self) -> DesignState:
        return DesignState(self.solid.copy(), self.protected)

    def __eq__(self, other):
        if not isinstance(other, DesignState):
            return NotImplemented
        return np.array_equal(self.solid, other.solid) and np.array_equal(self.protected, other.protected)


def mark_protected(grid: VoxelGrid, bc: BoundaryConditions, design: DesignState | None = None) -> DesignState:
    """Protect elements touching fixed, loaded or temperature-prescribed nodes.

    Returns a fully solid design (or ``design``'s topology if given) carrying
    the protection mask.
    """
    loaded = bc.loaded_nodes(grid)
    if len(bc.fixed_dofs) == 0 and len(loaded) == 0:
        raise ValueError("problem declares neither supports nor loads; nothing to solve")
    if len(bc.fixed_dofs) == 0:
        raise ValueError("structural solve requires at least one fixed DOF")
    nodes = [bc.anchor_nodes(), loaded]
    if isinstance(bc.thermal, Dirichlet):
        nodes.append(np.asarray(bc.thermal.nodes, dtype=np.int64))
        if bc.thermal.flux is not None:
            nodes.append(np.flatnonzero(bc.thermal.flux))
    protected = grid.elements_touching(np.concatenate(nodes))
    solid = np.ones(grid.n_elements, dtype=bool) if design is None else design.solid
    return DesignState(solid, protected)
