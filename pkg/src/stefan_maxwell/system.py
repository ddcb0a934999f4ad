"""Assembly of the linearised (Picard) saddle-point system.

Unknowns are ordered species-major: all velocity DOFs of species 0, then
species 1, ...; likewise for concentrations.  Block row 1 tests the
augmented Stefan-Maxwell relation with velocities, block row 2 tests the
steady continuity equation with concentration test functions that vanish on
the Dirichlet boundary:

    a(v, tau) + RT b(tau, c0_hat) = l(tau) - RT b(tau, c0)
    b_ck(v, w)                    = -(r, w) + (g, w)_{Gamma_N}
"""

from __future__ import annotations

import logging
import warnings
from pathlib import Path
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .fespace import (
    Field,
    FiniteSpace,
    basis_values,
    cell_weights,
    facet_quadrature,
    physical_gradients,
    physical_points,
)
from .mesh import BoundaryKind, Tag, TriMesh
from .quadrature import triangle_rule
from .transport import PositivityError, TransportCoefficients, augmented_matrix

log = logging.getLogger(__name__)

Scalar = Callable[[np.ndarray, np.ndarray], np.ndarray]
Vector = Callable[[np.ndarray, np.ndarray], tuple]


class ConsistencyError(ValueError):
    pass


class ConsistencyWarning(UserWarning):
    pass


def _zero(x, y):
    return np.zeros_like(np.asarray(x, dtype=float))


def _zero_vec(x, y):
    z = np.zeros_like(np.asarray(x, dtype=float))
    return z, z


def _as_array(f: Callable, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.asarray(f(x, y), dtype=float), np.shape(x))


def _as_vector(f: Callable, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    fx, fy = f(x, y)
    shape = np.shape(x)
    return np.stack([np.broadcast_to(fx, shape), np.broadcast_to(fy, shape)], axis=-1).astype(float)


@dataclass
class ProblemData:
    """Coefficients, boundary data, reactions and mass flux of one problem.

    ``dirichlet`` and ``neumann`` map a boundary tag to one callable per
    species.  Missing Neumann regions default to zero flux and missing
    reactions to zero.  ``div_u`` is used by the consistency check; without
    it the divergence of ``mass_flux`` is taken by central differences.
    """

    coeffs: TransportCoefficients
    C_T: float
    dirichlet: dict[Tag, Sequence[Scalar]] = field(default_factory=dict)
    neumann: dict[Tag, Sequence[Scalar]] = field(default_factory=dict)
    reactions: Sequence[Scalar] | None = None
    mass_flux: Vector = _zero_vec
    div_u: Scalar | None = None

    @property
    def n(self) -> int:
        return self.coeffs.n

    def reaction(self, i: int) -> Scalar:
        return _zero if self.reactions is None else self.reactions[i]

    def neumann_data(self, tag: Tag) -> Sequence[Scalar]:
        return self.neumann.get(tag, [_zero] * self.n)

    def divergence_u(self, x, y, h: float = 1e-5):
        if self.div_u is not None:
            return _as_array(self.div_u, x, y)
        ux_p = _as_vector(self.mass_flux, x + h, y)[..., 0]
        ux_m = _as_vector(self.mass_flux, x - h, y)[..., 0]
        uy_p = _as_vector(self.mass_flux, x, y + h)[..., 1]
        uy_m = _as_vector(self.mass_flux, x, y - h)[..., 1]
        return (ux_p - ux_m + uy_p - uy_m) / (2 * h)

    def check_consistency(self, mesh: TriMesh, degree: int = 4, strict: bool = True) -> list[str]:
        """Check data compatibility at quadrature points.

        Dirichlet data must sum to C_T and Neumann fluxes must satisfy
        sum_i M_i g_i = u.n on their regions (both to 1e-12 relative), and
        sum_i M_i r_i = div u in the interior (to 1e-10).  Returns the list of
        problems found; raises on any when ``strict``.
        """
        problems = []
        Mm = self.coeffs.molar_masses
        scale = max(1.0, abs(self.C_T))
        normals = mesh.facet_normals()
        if mesh.facet_tags is None:
            problems.append("mesh boundary is untagged")
        for tag in mesh.tags():
            facets = mesh.facets_with(tag)
            pts, _, _, _ = facet_quadrature(mesh, facets, degree)
            x, y = pts[..., 0], pts[..., 1]
            if tag.kind is BoundaryKind.DIRICHLET:
                if tag not in self.dirichlet:
                    problems.append(f"no Dirichlet data for region {tag}")
                    continue
                total = sum(_as_array(f, x, y) for f in self.dirichlet[tag])
                dev = np.max(np.abs(total - self.C_T))
                if dev > 1e-12 * scale:
                    problems.append(f"Dirichlet data on {tag} sums to C_T only within {dev:.3e}")
                low = min(np.min(_as_array(f, x, y)) for f in self.dirichlet[tag])
                if low <= 0:
                    problems.append(f"Dirichlet data on {tag} not strictly positive (min {low:.3e})")
            else:
                g = self.neumann_data(tag)
                total = sum(Mi * _as_array(gi, x, y) for Mi, gi in zip(Mm, g))
                un = np.einsum("fqi,fi->fq", _as_vector(self.mass_flux, x, y), normals[facets])
                dev = np.max(np.abs(total - un))
                uscale = max(1.0, np.max(np.abs(un)))
                if dev > 1e-12 * uscale:
                    problems.append(f"Neumann data on {tag} violates sum M_i g_i = u.n by {dev:.3e}")
        quad = triangle_rule(degree)
        pts = physical_points(mesh, quad.ref_points)
        x, y = pts[..., 0], pts[..., 1]
        total = sum(Mi * _as_array(self.reaction(i), x, y) for i, Mi in enumerate(Mm))
        dev = np.max(np.abs(total - self.divergence_u(x, y)))
        if dev > 1e-10 * max(1.0, np.max(np.abs(total))):
            problems.append(f"reactions violate sum M_i r_i = div u by {dev:.3e}")
        for msg in problems:
            if strict:
                raise ConsistencyError(msg)
            warnings.warn(msg, ConsistencyWarning, stacklevel=2)
        return problems


# ---------------------------------------------------------------------------
# Dirichlet lifting


def apply_dirichlet_lifting(data: ProblemData, space: FiniteSpace) -> list[Field]:
    """Per-species fields carrying the Dirichlet data, summing to C_T everywhere.

    Dirichlet DOFs take the nodal values of the data (regions are visited in
    sorted tag order, a later region overwriting shared corner DOFs).  Every
    other DOF takes the species' mean over the Dirichlet DOFs, so the sum
    over species equals C_T at each DOF.
    """
    n = data.n
    coeffs = np.zeros((n, space.ndofs))
    mask = np.zeros(space.ndofs, dtype=bool)
    for tag, dofs in sorted(space.boundary_dofs.items()):
        if tag.kind is not BoundaryKind.DIRICHLET:
            continue
        if tag not in data.dirichlet:
            raise ConsistencyError(f"no Dirichlet data for region {tag}")
        x, y = space.nodes[dofs, 0], space.nodes[dofs, 1]
        for i, f in enumerate(data.dirichlet[tag]):
            coeffs[i, dofs] = _as_array(f, x, y)
        mask[dofs] = True
    if not mask.any():
        raise ConsistencyError("lifting needs at least one Dirichlet region")
    total = coeffs[:, mask].sum(axis=0)
    dev = np.abs(total - data.C_T)
    tol = 1e-12 * max(1.0, abs(data.C_T))
    if np.any(dev > tol):
        bad = np.flatnonzero(mask)[np.argmax(dev)]
        raise ConsistencyError(
            f"Dirichlet data sum {total[np.argmax(dev)]:.15g} != C_T={data.C_T} at DOF {bad}"
        )
    mean = coeffs[:, mask].mean(axis=1)
    coeffs[:, ~mask] = mean[:, None]
    return [Field(space, coeffs[i]) for i in range(n)]


# ---------------------------------------------------------------------------
# assembly


def default_assembly_degree(m: int) -> int:
    return 3 * m + 2


@dataclass
class SaddleSystem:
    """Assembled blocks of one Picard step.

    ``A`` acts on all velocity DOFs, ``B`` maps concentration DOFs (all of
    them) into velocity tests and realises b(tau, w); ``Bc`` maps velocities
    into concentration tests and realises b_ck(v, w).  ``free`` indexes the
    non-Dirichlet concentration DOFs in the species-major numbering.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    Bc: sp.csr_matrix
    l: np.ndarray
    rhs_continuity: np.ndarray
    lifting: list[Field]
    free: np.ndarray
    RT: float
    X: FiniteSpace
    Q: FiniteSpace
    n: int
    # element blocks of A, one per cell (shared by both components), and
    # their global DOFs per component: (K, n*nloc, n*nloc) and (K, 2, n*nloc)
    A_blocks: np.ndarray | None = None
    A_block_dofs: np.ndarray | None = None

    @property
    def lifting_vector(self) -> np.ndarray:
        return np.concatenate([f.coefficients for f in self.lifting])

    def matrix(self) -> sp.csc_matrix:
        Bf = self.RT * self.B[:, self.free]
        Bcf = self.Bc[self.free, :]
        return sp.bmat([[self.A, Bf], [Bcf, None]], format="csc")

    def rhs(self) -> np.ndarray:
        row1 = self.l - self.RT * (self.B @ self.lifting_vector)
        return np.concatenate([row1, self.rhs_continuity[self.free]])

    def split(self, x: np.ndarray) -> tuple[list[Field], list[Field]]:
        """Velocity fields and full concentration fields from a solution vector."""
        nQ, nX = self.Q.ndofs, self.X.ndofs
        v = x[: self.n * nQ]
        c = self.lifting_vector.copy()
        c[self.free] += x[self.n * nQ :]
        vel = [Field(self.Q, v[i * nQ : (i + 1) * nQ]) for i in range(self.n)]
        con = [Field(self.X, c[i * nX : (i + 1) * nX]) for i in range(self.n)]
        return vel, con

    def pack(self, v: Sequence[Field], c: Sequence[Field]) -> np.ndarray:
        """Inverse of :meth:`split` (the lifting is subtracted)."""
        cv = np.concatenate([f.coefficients for f in c]) - self.lifting_vector
        return np.concatenate([np.concatenate([f.coefficients for f in v]), cv[self.free]])


def _species_offsets(n: int, size: int) -> np.ndarray:
    return np.arange(n) * size


def assemble(
    mesh: TriMesh,
    spaces: tuple[FiniteSpace, FiniteSpace],
    data: ProblemData,
    c_k: Sequence[Field],
    c0_h: Sequence[Field],
    quad_degree: int | None = None,
) -> SaddleSystem:
    """Assemble the Picard system frozen at the concentration iterate ``c_k``."""
    X, Q = spaces
    n = data.n
    coeffs = data.coeffs
    if len(c_k) != n or len(c0_h) != n:
        raise ValueError(f"expected {n} concentration fields")
    m = X.degree
    quad = triangle_rule(default_assembly_degree(m) if quad_degree is None else quad_degree)
    ref = quad.ref_points
    w = cell_weights(mesh, quad)  # (K, nq)
    K = mesh.n_cells

    ck = np.stack([c.values_at(ref) for c in c_k], axis=-1)  # (K, nq, n)
    try:
        Mg = augmented_matrix(ck, coeffs)  # (K, nq, n, n)
    except PositivityError as err:
        cell, qp = err.index
        raise PositivityError(
            f"iterate concentration of species {err.species} is {err.value:.6g} "
            f"at quadrature point {qp} of cell {cell}",
            err.species,
            err.value,
            err.index,
        ) from None

    phi = basis_values(Q.degree, ref)  # (nq, a)
    dpsi = physical_gradients(mesh, m, ref)  # (K, nq, b, 2)
    nlq, nlx = Q.nloc, X.nloc
    nQ, nX = Q.ndofs, X.ndofs
    qoff = _species_offsets(n, nQ)
    xoff = _species_offsets(n, nX)

    # A: sum_q w M_ij phi_a phi_b, identical for both components
    Ae = np.einsum("kq,kqij,qa,qb->kiajb", w, Mg, phi, phi)
    rows, cols, vals, block_dofs = [], [], [], []
    for comp in range(2):
        dofs = qoff[:, None, None] + Q.cell_dofs[None, :, :, comp]  # (n, K, a)
        dofs = dofs.transpose(1, 0, 2).reshape(K, n * nlq)
        block_dofs.append(dofs)
        rows.append(np.repeat(dofs, n * nlq, axis=1).ravel())
        cols.append(np.tile(dofs, (1, n * nlq)).ravel())
        vals.append(Ae.reshape(K, -1))
    A = sp.coo_matrix(
        (np.concatenate([v.ravel() for v in vals]), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * nQ, n * nQ),
    ).tocsr()

    # B and Bc share the pattern (velocity test a, comp) x (concentration b)
    Be = np.einsum("kq,qa,kqbc->kacb", w, phi, dpsi)  # (K, a, c, b)
    Bce = np.einsum("kq,kqi,qa,kqbc->kiacb", w, ck, phi, dpsi)  # (K, n, a, c, b)
    vdofs = qoff[:, None, None, None] + Q.cell_dofs[None]  # (n, K, a, c)
    cdofs = xoff[:, None, None] + X.cell_dofs[None]  # (n, K, b)
    r = np.broadcast_to(vdofs[..., None], (n, K, nlq, 2, nlx))
    c = np.broadcast_to(cdofs[:, :, None, None, :], (n, K, nlq, 2, nlx))
    Bvals = np.broadcast_to(Be[None], (n, K, nlq, 2, nlx))
    B = sp.coo_matrix((Bvals.ravel(), (r.ravel(), c.ravel())), shape=(n * nQ, n * nX)).tocsr()
    Bcvals = Bce.transpose(1, 0, 2, 3, 4)
    Bc = sp.coo_matrix((Bcvals.ravel(), (c.ravel(), r.ravel())), shape=(n * nX, n * nQ)).tocsr()

    # l(tau) = gamma RT sum_i (M_i c_i / rho) u . tau_i
    pts = physical_points(mesh, ref)
    u = _as_vector(data.mass_flux, pts[..., 0], pts[..., 1])  # (K, nq, 2)
    rho = ck @ coeffs.molar_masses
    frac = coeffs.molar_masses * ck / rho[..., None]  # (K, nq, n)
    le = coeffs.gamma * coeffs.RT * np.einsum("kq,kqi,kqc,qa->ikac", w, frac, u, phi)
    l = np.zeros(n * nQ)
    np.add.at(l, vdofs.ravel(), le.ravel())

    # continuity right-hand side: -(r_i, w) + (g_i, w)_{Gamma_N}
    rhs2 = np.zeros(n * nX)
    psi = basis_values(m, ref)
    for i in range(n):
        ri = _as_array(data.reaction(i), pts[..., 0], pts[..., 1])
        re = -np.einsum("kq,kq,qb->kb", w, ri, psi)
        np.add.at(rhs2, xoff[i] + X.cell_dofs, re)
    for tag in mesh.tags():
        if tag.kind is not BoundaryKind.NEUMANN:
            continue
        facets = mesh.facets_with(tag)
        fpts, fw, fref, fcells = facet_quadrature(mesh, facets, 2 * m + 2)
        fpsi = basis_values(m, fref.reshape(-1, 2)).reshape(len(facets), -1, nlx)
        for i, gi in enumerate(data.neumann_data(tag)):
            g = _as_array(gi, fpts[..., 0], fpts[..., 1])
            ge = np.einsum("fq,fq,fqb->fb", fw, g, fpsi)
            np.add.at(rhs2, xoff[i] + X.cell_dofs[fcells], ge)

    free_x = X.free_dofs()
    free = (xoff[:, None] + free_x[None, :]).ravel()
    blocks = Ae.reshape(K, n * nlq, n * nlq)
    return SaddleSystem(
        A, B, Bc, l, rhs2, list(c0_h), free, coeffs.RT, X, Q, n, blocks, np.stack(block_dofs, axis=1)
    )


def export_matrix_market(system: SaddleSystem, directory, prefix: str = "") -> list:
    """Write A, B, Bc and the full block matrix in Matrix Market coordinate format."""
    import scipy.io

    from .io import atomic_path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, mat in [("A", system.A), ("B", system.B), ("Bc", system.Bc), ("K", system.matrix())]:
        target = directory / f"{prefix}{name}.mtx"
        with atomic_path(target) as tmp, open(tmp, "wb") as fh:
            scipy.io.mmwrite(fh, sp.coo_matrix(mat), field="real", symmetry="general")
        written.append(target)
    return written
