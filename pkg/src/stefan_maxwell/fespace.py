"""Lagrange finite element spaces on triangles.

Two families are provided: continuous scalar P^m (concentrations) and
discontinuous vector P^(m-1) (velocities).  Because the gradient of a
continuous P^m function is a cellwise P^(m-1) vector field, the gradient of
every concentration field is exactly representable in the velocity space.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .mesh import BoundaryKind, Tag, TriMesh
from .quadrature import Quadrature, interval_rule, triangle_rule

SUPPORTED_ORDERS = (1, 2)


class SpaceError(ValueError):
    pass


class SpaceKind(enum.Enum):
    CG_SCALAR = "cg_scalar"
    DG_VECTOR = "dg_vector"


# ---------------------------------------------------------------------------
# reference element


def _monomials(degree: int) -> list[tuple[int, int]]:
    return [(a, t - a) for t in range(degree + 1) for a in range(t, -1, -1)]


@functools.lru_cache(maxsize=None)
def reference_nodes(degree: int) -> np.ndarray:
    """Lagrange nodes (reference Cartesian coordinates) for P^degree.

    Vertices come first; for degree 2 the edge midpoints follow, ordered so
    that local edge ``e`` is the one opposite local vertex ``e``.
    """
    if degree == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    if degree == 1:
        return verts
    if degree == 2:
        mids = np.array([[0.5, 0.5], [0.0, 0.5], [0.5, 0.0]])
        return np.vstack([verts, mids])
    raise SpaceError(f"Lagrange degree {degree} not supported")


@functools.lru_cache(maxsize=None)
def _basis_coefficients(degree: int) -> np.ndarray:
    nodes = reference_nodes(degree)
    V = np.array([[x**a * y**b for a, b in _monomials(degree)] for x, y in nodes])
    return np.linalg.inv(V)


def basis_values(degree: int, ref_points: np.ndarray) -> np.ndarray:
    """(nq, nloc) nodal basis values at reference points."""
    pts = np.atleast_2d(ref_points)
    x, y = pts[:, 0], pts[:, 1]
    mono = np.stack([x**a * y**b for a, b in _monomials(degree)], axis=1)
    return mono @ _basis_coefficients(degree)


def basis_gradients(degree: int, ref_points: np.ndarray) -> np.ndarray:
    """(nq, nloc, 2) reference gradients of the nodal basis."""
    pts = np.atleast_2d(ref_points)
    x, y = pts[:, 0], pts[:, 1]
    dx, dy = [], []
    for a, b in _monomials(degree):
        dx.append(a * x ** max(a - 1, 0) * y**b if a else np.zeros_like(x))
        dy.append(b * x**a * y ** max(b - 1, 0) if b else np.zeros_like(x))
    C = _basis_coefficients(degree)
    return np.stack([np.stack(dx, 1) @ C, np.stack(dy, 1) @ C], axis=2)


# ---------------------------------------------------------------------------
# spaces


@dataclass(eq=False)
class FiniteSpace:
    """Global DOF layout of one scalar CG or vector DG Lagrange space.

    For CG spaces ``cell_dofs`` has shape (K, nloc); for DG vector spaces it
    has shape (K, nloc, 2) with the component index last.
    """

    kind: SpaceKind
    degree: int
    mesh: TriMesh
    ndofs: int
    cell_dofs: np.ndarray
    nodes: np.ndarray
    boundary_dofs: dict[Tag, np.ndarray] = field(default_factory=dict)

    @property
    def nloc(self) -> int:
        return self.cell_dofs.shape[1]

    @property
    def is_vector(self) -> bool:
        return self.kind is SpaceKind.DG_VECTOR

    def dirichlet_dofs(self) -> np.ndarray:
        """Union of the boundary DOFs of every DIRICHLET region."""
        parts = [d for t, d in self.boundary_dofs.items() if t.kind is BoundaryKind.DIRICHLET]
        if not parts:
            return np.zeros(0, dtype=int)
        return np.unique(np.concatenate(parts))

    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.ndofs, dtype=bool)
        mask[self.dirichlet_dofs()] = False
        return np.flatnonzero(mask)

    def __repr__(self) -> str:
        return f"FiniteSpace({self.kind.name}, degree={self.degree}, ndofs={self.ndofs})"


def cg_space(mesh: TriMesh, m: int) -> FiniteSpace:
    """Continuous scalar P^m space."""
    if m not in SUPPORTED_ORDERS:
        raise SpaceError(f"order m={m} not in {SUPPORTED_ORDERS}")
    nv = mesh.n_vertices
    if m == 1:
        cell_dofs = mesh.cells.copy()
        nodes = mesh.vertices.copy()
        ndofs = nv
    else:
        edges, cell_edges = mesh.edges()
        cell_dofs = np.hstack([mesh.cells, nv + cell_edges])
        nodes = np.vstack([mesh.vertices, mesh.vertices[edges].mean(axis=1)])
        ndofs = nv + len(edges)

    boundary: dict[Tag, np.ndarray] = {}
    if mesh.facet_tags is not None:
        fcells, flocal = mesh.boundary_facet_cells()
        for tag in mesh.tags():
            idx = mesh.facets_with(tag)
            dofs = [mesh.boundary_facets[idx].ravel()]
            if m == 2:
                dofs.append(nv + mesh.edges()[1][fcells[idx], flocal[idx]])
            boundary[tag] = np.unique(np.concatenate(dofs))
    return FiniteSpace(SpaceKind.CG_SCALAR, m, mesh, ndofs, cell_dofs, nodes, boundary)


def dg_vector_space(mesh: TriMesh, degree: int) -> FiniteSpace:
    """Discontinuous vector P^degree space, cell-local DOFs."""
    if degree not in (0, 1):
        raise SpaceError(f"DG degree {degree} not supported")
    ref = reference_nodes(degree)
    nloc = len(ref)
    K = mesh.n_cells
    cell_dofs = np.arange(K * nloc * 2).reshape(K, nloc, 2)
    xy = mesh.cell_coordinates()
    jac = mesh.jacobians()
    nodes = xy[:, None, 0, :] + np.einsum("kij,qj->kqi", jac, ref)
    return FiniteSpace(SpaceKind.DG_VECTOR, degree, mesh, K * nloc * 2, cell_dofs, nodes.reshape(-1, 2))


def mixed_spaces(mesh: TriMesh, m: int) -> tuple[FiniteSpace, FiniteSpace]:
    """(X_h, Q_h): CG P^m concentrations and DG P^(m-1) vector velocities."""
    return cg_space(mesh, m), dg_vector_space(mesh, m - 1)


@dataclass(eq=False)
class Field:
    space: FiniteSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.ndofs,):
            raise SpaceError(
                f"coefficient vector has shape {self.coefficients.shape}, expected ({self.space.ndofs},)"
            )

    def cell_coefficients(self) -> np.ndarray:
        return self.coefficients[self.space.cell_dofs]

    def values_at(self, ref_points: np.ndarray) -> np.ndarray:
        """Values at reference points in every cell: (K, nq) or (K, nq, 2)."""
        phi = basis_values(self.space.degree, ref_points)
        cc = self.cell_coefficients()
        if self.space.is_vector:
            return np.einsum("qa,kac->kqc", phi, cc)
        return cc @ phi.T

    def gradients_at(self, ref_points: np.ndarray) -> np.ndarray:
        """(K, nq, 2) physical gradients of a scalar field."""
        if self.space.is_vector:
            raise SpaceError("gradients_at is defined for scalar fields only")
        dphi = physical_gradients(self.space.mesh, self.space.degree, ref_points)
        return np.einsum("kqai,ka->kqi", dphi, self.cell_coefficients())

    def __add__(self, other: "Field") -> "Field":
        _check_same(self.space, other.space)
        return Field(self.space, self.coefficients + other.coefficients)

    def __sub__(self, other: "Field") -> "Field":
        _check_same(self.space, other.space)
        return Field(self.space, self.coefficients - other.coefficients)

    def __mul__(self, alpha: float) -> "Field":
        return Field(self.space, alpha * self.coefficients)

    __rmul__ = __mul__


def _check_same(a: FiniteSpace, b: FiniteSpace) -> None:
    if a is not b:
        raise SpaceError("fields live on different spaces")


def physical_gradients(mesh: TriMesh, degree: int, ref_points: np.ndarray) -> np.ndarray:
    """(K, nq, nloc, 2) basis gradients mapped to every cell."""
    dref = basis_gradients(degree, ref_points)
    inv = np.linalg.inv(mesh.jacobians())
    return np.einsum("kji,qaj->kqai", inv, dref)


def physical_points(mesh: TriMesh, ref_points: np.ndarray) -> np.ndarray:
    """(K, nq, 2) images of reference points in every cell."""
    xy = mesh.cell_coordinates()
    return xy[:, None, 0, :] + np.einsum("kij,qj->kqi", mesh.jacobians(), np.atleast_2d(ref_points))


def cell_weights(mesh: TriMesh, quad: Quadrature) -> np.ndarray:
    """(K, nq) quadrature weights scaled by |det J|."""
    return np.abs(np.linalg.det(mesh.jacobians()))[:, None] * quad.weights[None, :]


# ---------------------------------------------------------------------------
# operations


def interpolate(space: FiniteSpace, f: Callable) -> Field:
    """Nodal interpolant of ``f(x, y)``.

    For vector spaces ``f`` returns a sequence of two components, each
    broadcastable against ``x``.
    """
    x, y = space.nodes[:, 0], space.nodes[:, 1]
    if space.is_vector:
        fx, fy = f(x, y)
        vals = np.column_stack([np.broadcast_to(fx, x.shape), np.broadcast_to(fy, x.shape)]).astype(float)
        coeffs = vals.reshape(-1)
    else:
        coeffs = np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape).copy()
    if not np.all(np.isfinite(coeffs)):
        bad = np.flatnonzero(~np.isfinite(coeffs))[0]
        raise SpaceError(f"non-finite function value at DOF {bad}")
    return Field(space, coeffs)


def constant_field(space: FiniteSpace, value: float) -> Field:
    if space.is_vector:
        raise SpaceError("constant_field expects a scalar space")
    return Field(space, np.full(space.ndofs, float(value)))


def gradient_field(c: Field, target: FiniteSpace | None = None) -> Field:
    """Exact DG P^(m-1) representation of the gradient of a CG P^m field."""
    src = c.space
    if src.kind is not SpaceKind.CG_SCALAR:
        raise SpaceError("gradient_field needs a continuous scalar field")
    if target is None:
        target = dg_vector_space(src.mesh, src.degree - 1)
    if target.kind is not SpaceKind.DG_VECTOR or target.degree != src.degree - 1 or target.mesh is not src.mesh:
        raise SpaceError("target space must be the DG vector P^(m-1) space on the same mesh")
    grads = c.gradients_at(reference_nodes(target.degree))
    return Field(target, grads.reshape(-1))


def l2_error(field_h: Field, exact: Callable | None, degree: int) -> float:
    """||exact - field_h||_{L2}; ``exact=None`` measures the field itself."""
    quad = triangle_rule(degree)
    vals = field_h.values_at(quad.ref_points)
    if exact is not None:
        pts = physical_points(field_h.space.mesh, quad.ref_points)
        ex = _evaluate_like(exact, pts, field_h.space.is_vector)
        vals = vals - ex
    w = cell_weights(field_h.space.mesh, quad)
    sq = vals**2 if vals.ndim == 2 else (vals**2).sum(axis=2)
    return float(np.sqrt(np.sum(w * sq)))


def h1_seminorm_error(field_h: Field, exact_grad: Callable | None, degree: int) -> float:
    """||grad(exact) - grad(field_h)||_{L2}."""
    quad = triangle_rule(degree)
    g = field_h.gradients_at(quad.ref_points)
    if exact_grad is not None:
        pts = physical_points(field_h.space.mesh, quad.ref_points)
        g = g - _evaluate_like(exact_grad, pts, True)
    w = cell_weights(field_h.space.mesh, quad)
    return float(np.sqrt(np.sum(w * (g**2).sum(axis=2))))


def _evaluate_like(f: Callable, pts: np.ndarray, vector: bool) -> np.ndarray:
    x, y = pts[..., 0], pts[..., 1]
    if vector:
        fx, fy = f(x, y)
        return np.stack([np.broadcast_to(fx, x.shape), np.broadcast_to(fy, x.shape)], axis=-1).astype(float)
    return np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape)


def default_norm_degree(m: int) -> int:
    return 2 * m + 5


def norms(
    c_h: Sequence[Field],
    v_h: Sequence[Field],
    c_exact: Sequence[Callable],
    grad_c_exact: Sequence[Callable],
    v_exact: Sequence[Callable],
    degree: int | None = None,
) -> tuple[float, float, float]:
    """(E1, E2, E3): species-summed L2 errors of c, grad c and v."""
    if degree is None:
        degree = default_norm_degree(c_h[0].space.degree)
    e1 = sum(l2_error(c, f, degree) ** 2 for c, f in zip(c_h, c_exact))
    e2 = sum(h1_seminorm_error(c, g, degree) ** 2 for c, g in zip(c_h, grad_c_exact))
    e3 = sum(l2_error(v, f, degree) ** 2 for v, f in zip(v_h, v_exact))
    out = (float(np.sqrt(e1)), float(np.sqrt(e2)), float(np.sqrt(e3)))
    if not all(np.isfinite(out)):
        raise SpaceError("non-finite error norm")
    return out


def mass_flux_error(
    c_h: Sequence[Field],
    v_h: Sequence[Field],
    molar_masses: Sequence[float],
    u: Callable,
    degree: int | None = None,
) -> float:
    """|| sum_j M_j c_j v_j - u ||_{L2}."""
    if degree is None:
        degree = default_norm_degree(c_h[0].space.degree)
    quad = triangle_rule(degree)
    mesh = c_h[0].space.mesh
    flux = sum(
        Mj * c.values_at(quad.ref_points)[..., None] * v.values_at(quad.ref_points)
        for Mj, c, v in zip(molar_masses, c_h, v_h)
    )
    pts = physical_points(mesh, quad.ref_points)
    diff = flux - _evaluate_like(u, pts, True)
    w = cell_weights(mesh, quad)
    return float(np.sqrt(np.sum(w * (diff**2).sum(axis=2))))


# ---------------------------------------------------------------------------
# matrices used for discrete norms


def cg_mass_stiffness(space: FiniteSpace) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Mass and stiffness matrices of a scalar CG space."""
    quad = triangle_rule(2 * space.degree)
    phi = basis_values(space.degree, quad.ref_points)
    dphi = physical_gradients(space.mesh, space.degree, quad.ref_points)
    w = cell_weights(space.mesh, quad)
    Me = np.einsum("kq,qa,qb->kab", w, phi, phi)
    Ke = np.einsum("kq,kqai,kqbi->kab", w, dphi, dphi)
    rows = np.repeat(space.cell_dofs, space.nloc, axis=1).ravel()
    cols = np.tile(space.cell_dofs, (1, space.nloc)).ravel()
    M = sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(space.ndofs,) * 2).tocsr()
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(space.ndofs,) * 2).tocsr()
    return M, K


def dg_mass(space: FiniteSpace) -> sp.csr_matrix:
    """Block-diagonal mass matrix of a DG vector space."""
    quad = triangle_rule(2 * space.degree)
    phi = basis_values(space.degree, quad.ref_points)
    w = cell_weights(space.mesh, quad)
    Me = np.einsum("kq,qa,qb->kab", w, phi, phi)
    nloc = space.nloc
    K = space.mesh.n_cells
    blocks = np.zeros((K, nloc, 2, nloc, 2))
    blocks[:, :, 0, :, 0] = Me
    blocks[:, :, 1, :, 1] = Me
    blocks = blocks.reshape(K, 2 * nloc, 2 * nloc)
    return block_diagonal(blocks, space.cell_dofs.reshape(K, -1), space.ndofs)


def block_diagonal(blocks: np.ndarray, dofs: np.ndarray, n: int) -> sp.csr_matrix:
    """Scatter (K, b, b) element blocks onto the (K, b) DOF lists."""
    b = dofs.shape[1]
    rows = np.repeat(dofs, b, axis=1).ravel()
    cols = np.tile(dofs, (1, b)).ravel()
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def facet_quadrature(mesh: TriMesh, facets: np.ndarray, degree: int):
    """Physical points (F, nq, 2) and weights (F, nq) on boundary facets.

    Also returns the reference coordinates of the points inside the owning
    cells, shape (F, nq, 2), and the owning cell indices.
    """
    s, w = interval_rule(degree)
    p = mesh.vertices[mesh.boundary_facets[facets]]
    pts = p[:, None, 0, :] + s[None, :, None] * (p[:, None, 1, :] - p[:, None, 0, :])
    length = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    weights = length[:, None] * w[None, :]
    fcells, _ = mesh.boundary_facet_cells()
    cells = fcells[facets]
    xy0 = mesh.vertices[mesh.cells[cells, 0]]
    inv = np.linalg.inv(mesh.jacobians()[cells])
    ref = np.einsum("fij,fqj->fqi", inv, pts - xy0[:, None, :])
    return pts, weights, ref, cells
