"""Structured triangulations of rectangles with tagged boundary facets."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class Diagonal(enum.Enum):
    """Direction of the diagonal splitting each grid square.

    RIGHT runs from the lower-left to the upper-right corner, LEFT from the
    upper-left to the lower-right corner.
    """

    LEFT = "left"
    RIGHT = "right"


class BoundaryKind(enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


@dataclass(frozen=True)
class Tag:
    kind: BoundaryKind
    id: int = 0

    def __lt__(self, other: "Tag") -> bool:
        return (self.kind.value, self.id) < (other.kind.value, other.id)

    def __str__(self) -> str:
        return f"{self.kind.name}({self.id})"


def DIRICHLET(id: int = 0) -> Tag:
    return Tag(BoundaryKind.DIRICHLET, id)


def NEUMANN(id: int = 0) -> Tag:
    return Tag(BoundaryKind.NEUMANN, id)


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class TriMesh:
    """Conforming triangulation with counter-clockwise cells.

    ``boundary_facets`` is an (F, 2) array of vertex pairs oriented so that
    the domain lies to the left; ``facet_tags`` holds one :class:`Tag` per
    facet, or ``None`` while the mesh is untagged.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray
    facet_tags: tuple | None = None
    bounds: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_boundary_facets(self) -> int:
        return len(self.boundary_facets)

    def cell_coordinates(self) -> np.ndarray:
        """(K, 3, 2) vertex coordinates of every cell."""
        return self.vertices[self.cells]

    def jacobians(self) -> np.ndarray:
        """(K, 2, 2) Jacobians of the affine maps from the reference triangle."""
        if "jac" not in self._cache:
            xy = self.cell_coordinates()
            jac = np.empty((self.n_cells, 2, 2))
            jac[:, :, 0] = xy[:, 1] - xy[:, 0]
            jac[:, :, 1] = xy[:, 2] - xy[:, 0]
            self._cache["jac"] = jac
        return self._cache["jac"]

    def signed_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.det(self.jacobians())

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique edges and the (K, 3) cell-to-edge map.

        Local edge ``e`` of a cell is the one opposite local vertex ``e``.
        """
        if "edges" not in self._cache:
            local = np.array([[1, 2], [2, 0], [0, 1]])
            all_edges = np.sort(self.cells[:, local], axis=2).reshape(-1, 2)
            uniq, inverse = np.unique(all_edges, axis=0, return_inverse=True)
            self._cache["edges"] = (uniq, inverse.reshape(self.n_cells, 3))
        return self._cache["edges"]

    def boundary_facet_cells(self) -> tuple[np.ndarray, np.ndarray]:
        """Owning cell and local edge index of every boundary facet."""
        if "bcells" not in self._cache:
            uniq, cell_edges = self.edges()
            lookup = {tuple(e): i for i, e in enumerate(uniq)}
            owner = {}
            for k in range(self.n_cells):
                for e in range(3):
                    owner.setdefault(cell_edges[k, e], []).append((k, e))
            cells = np.empty(self.n_boundary_facets, dtype=int)
            local = np.empty(self.n_boundary_facets, dtype=int)
            for f, (a, b) in enumerate(self.boundary_facets):
                (k, e), = owner[lookup[(min(a, b), max(a, b))]]
                cells[f], local[f] = k, e
            self._cache["bcells"] = (cells, local)
        return self._cache["bcells"]

    def facet_midpoints(self) -> np.ndarray:
        return self.vertices[self.boundary_facets].mean(axis=1)

    def facet_normals(self) -> np.ndarray:
        """Outward unit normals of the boundary facets."""
        p = self.vertices[self.boundary_facets]
        t = p[:, 1] - p[:, 0]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def facets_with(self, tag: Tag) -> np.ndarray:
        if self.facet_tags is None:
            raise MeshError("mesh has no boundary tags")
        return np.array([i for i, t in enumerate(self.facet_tags) if t == tag], dtype=int)

    def tags(self) -> list[Tag]:
        if self.facet_tags is None:
            return []
        return sorted(set(self.facet_tags))


def build_rectangle(
    nx: int,
    ny: int,
    bounds: Sequence[float] = (0.0, 1.0, 0.0, 1.0),
    diag: Diagonal = Diagonal.RIGHT,
) -> TriMesh:
    """Split an ``nx`` by ``ny`` grid of rectangles into 2*nx*ny triangles."""
    if int(nx) < 1 or int(ny) < 1:
        raise MeshError(f"grid dimensions must be positive, got {nx}x{ny}")
    nx, ny = int(nx), int(ny)
    x0, x1, y0, y1 = map(float, bounds)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v00 = (j * (nx + 1) + i).ravel()
    v10, v01 = v00 + 1, v00 + nx + 1
    v11 = v01 + 1
    if diag is Diagonal.RIGHT:
        tri = [np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])]
    else:
        tri = [np.column_stack([v00, v10, v01]), np.column_stack([v10, v11, v01])]
    cells = np.stack(tri, axis=1).reshape(-1, 3)

    # counter-clockwise walk around the boundary
    bottom = [(i, i + 1) for i in range(nx)]
    right = [(j * (nx + 1) + nx, (j + 1) * (nx + 1) + nx) for j in range(ny)]
    top = [(ny * (nx + 1) + i + 1, ny * (nx + 1) + i) for i in reversed(range(nx))]
    left = [((j + 1) * (nx + 1), j * (nx + 1)) for j in reversed(range(ny))]
    facets = np.array(bottom + right + top + left, dtype=int)
    return TriMesh(vertices, cells, facets, None, (x0, x1, y0, y1))


def build_unit_square(N: int, diag: Diagonal = Diagonal.RIGHT) -> TriMesh:
    """Structured N x N triangulation of [0, 1]^2."""
    if int(N) < 1:
        raise MeshError(f"N must be a positive integer, got {N}")
    return build_rectangle(N, N, (0.0, 1.0, 0.0, 1.0), diag)


Predicate = Callable[[np.ndarray], bool]


def tag_boundary(mesh: TriMesh, predicate_map: Sequence[tuple[Predicate, Tag]]) -> TriMesh:
    """Tag boundary facets by testing their midpoints; first match wins.

    Each predicate receives the facet midpoint as a length-2 array.
    """
    tags = []
    for f, mid in enumerate(mesh.facet_midpoints()):
        for pred, tag in predicate_map:
            if pred(mid):
                tags.append(tag)
                break
        else:
            raise MeshError(f"boundary facet {f} with midpoint {tuple(mid)} matches no predicate")
    return TriMesh(mesh.vertices, mesh.cells, mesh.boundary_facets, tuple(tags), mesh.bounds)


def mesh_diameter(mesh: TriMesh) -> float:
    """Longest edge length over all cells."""
    xy = mesh.cell_coordinates()
    lengths = np.linalg.norm(xy[:, [1, 2, 0]] - xy, axis=2)
    return float(lengths.max())


def on_left(mesh: TriMesh, tol: float = 1e-12) -> Predicate:
    x0 = mesh.bounds[0]
    return lambda p: abs(p[0] - x0) < tol


def on_right(mesh: TriMesh, tol: float = 1e-12) -> Predicate:
    x1 = mesh.bounds[1]
    return lambda p: abs(p[0] - x1) < tol


def on_bottom(mesh: TriMesh, tol: float = 1e-12) -> Predicate:
    y0 = mesh.bounds[2]
    return lambda p: abs(p[1] - y0) < tol


def on_top(mesh: TriMesh, tol: float = 1e-12) -> Predicate:
    y1 = mesh.bounds[3]
    return lambda p: abs(p[1] - y1) < tol


def everywhere(p: np.ndarray) -> bool:
    return True
