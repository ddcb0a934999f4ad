"""Sparse direct solves and the outer Picard iteration."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fespace import Field, FiniteSpace, block_diagonal, cg_mass_stiffness, dg_mass, h1_seminorm_error
from .mesh import TriMesh
from .system import ProblemData, SaddleSystem, apply_dirichlet_lifting, assemble
from .transport import DEFAULT_KAPPA_MIN, PositivityError

log = logging.getLogger(__name__)

# smallest |U_ii| / max |U_ii| accepted from the LU factors
PIVOT_RATIO_FLOOR = 1e-13


class SolveError(RuntimeError):
    """Linear or nonlinear solve failure; ``report`` holds the trace so far."""

    def __init__(self, message: str, report: "SolveReport | None" = None, **diagnostics):
        super().__init__(message)
        self.report = report
        self.diagnostics = diagnostics


class FactorizationError(SolveError):
    pass


class ConvergenceError(SolveError):
    pass


@dataclass
class PicardSettings:
    epsilon: float = 1e-13
    max_iterations: int = 50
    gamma: float = 1.0
    kappa_min: float = DEFAULT_KAPPA_MIN
    strict_consistency: bool = True
    project_positivity: bool = False
    quad_degree: int | None = None
    linear_solver: str = "monolithic"
    refine: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.linear_solver not in ("condensed", "monolithic"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class SolveReport:
    """Trace of one Picard solve.

    ``increments`` holds ||c^{k+1}-c^k||_X + ||v^{k+1}-v^k||_Q for every
    iteration, with the full H1 norm on X.  ``gibbs_duhem`` holds
    ||grad c_T,h||_L2 after every iteration.
    """

    iterations: int = 0
    increments: list[float] = field(default_factory=list)
    gibbs_duhem: list[float] = field(default_factory=list)
    gibbs_duhem_l2: float = float("nan")
    residual: float = float("nan")
    wall_time_s: float = 0.0
    converged: bool = False
    increment_norm: str = "H1 (full) on concentrations + L2 on velocities"
    message: str = ""

    def to_json(self) -> dict:
        d = asdict(self)
        return {
            "iterations": d["iterations"],
            "increments": d["increments"],
            "gibbs_duhem_l2": d["gibbs_duhem_l2"],
            "residual": d["residual"],
            "wall_time_s": d["wall_time_s"],
            "converged": d["converged"],
            "gibbs_duhem_per_iteration": d["gibbs_duhem"],
            "increment_norm": d["increment_norm"],
            "message": d["message"],
        }


def _factorize(K: sp.csc_matrix):
    try:
        lu = spla.splu(K, permc_spec="COLAMD")
    except RuntimeError as err:
        raise FactorizationError(f"sparse LU failed: {err}", size=K.shape[0]) from None
    piv = np.abs(lu.U.diagonal())
    ratio = piv.min() / piv.max() if piv.size and piv.max() > 0 else 0.0
    if not np.isfinite(ratio) or ratio < PIVOT_RATIO_FLOOR:
        raise FactorizationError(
            f"matrix numerically singular: min/max pivot ratio {ratio:.3e} "
            f"(smallest pivot {piv.min():.3e} at position {int(np.argmin(piv))}); "
            "the concentration iterate may have lost positivity or gamma is zero",
            pivot_ratio=float(ratio),
            min_pivot=float(piv.min()),
        )
    return lu


def solve_linear(system: SaddleSystem, method: str = "monolithic") -> tuple[list[Field], list[Field]]:
    """Solve one assembled saddle system by a sparse direct method.

    Returns velocity fields and full concentration fields (lifting plus the
    computed correction).  ``method`` is "monolithic" (sparse LU of the
    whole block matrix) or "condensed" (eliminate the cell-local velocity
    blocks, then sparse LU on the concentration Schur complement; several
    times faster on fine meshes).
    """
    K = system.matrix()
    x = solve_system(system, K, system.rhs(), method)
    return system.split(x)


def solve_system(
    system: SaddleSystem, K: sp.csc_matrix, b: np.ndarray, method: str = "monolithic", refine: int = 1
) -> np.ndarray:
    """Solve K x = b where K is ``system.matrix()``; checks the residual.

    ``refine`` steps of iterative refinement reuse the factorization.
    """
    if method == "monolithic" or system.A_blocks is None:
        apply = _factorize(K).solve
    elif method == "condensed":
        apply = _condensed_solver(system)
    else:
        raise ValueError(f"unknown linear solve method {method!r}")
    x = apply(b)
    for _ in range(refine):
        if not np.all(np.isfinite(x)):
            break
        x = x + apply(b - K @ x)
    _check_residual(K, x, b)
    return x


def solve_sparse(K: sp.csc_matrix, b: np.ndarray, refine: int = 1) -> np.ndarray:
    lu = _factorize(K)
    x = lu.solve(b)
    for _ in range(refine):
        x = x + lu.solve(b - K @ x)
    _check_residual(K, x, b)
    return x


def _check_residual(K, x: np.ndarray, b: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise FactorizationError("solution contains non-finite values")
    res = np.linalg.norm(K @ x - b)
    bound = 1e-10 * (sp.linalg.norm(K) * np.linalg.norm(x) + np.linalg.norm(b))
    if res > bound:
        raise FactorizationError(f"linear residual {res:.3e} exceeds {bound:.3e}", residual=float(res))


def _invert_blocks(system: SaddleSystem) -> sp.csr_matrix:
    blocks = system.A_blocks
    lam, V = np.linalg.eigh(blocks)
    top = np.abs(lam).max(axis=1)
    ratio = np.where(top > 0, lam[:, 0] / np.where(top > 0, top, 1.0), 0.0)
    worst = int(np.argmin(ratio))
    if not ratio[worst] >= PIVOT_RATIO_FLOOR:
        raise FactorizationError(
            f"velocity block of cell {worst} is singular or indefinite "
            f"(eigenvalue ratio {ratio[worst]:.3e}); gamma may be zero",
            pivot_ratio=float(ratio[worst]),
            cell=worst,
        )
    inv = np.einsum("kab,kb,kcb->kac", V, 1.0 / lam, V)
    n = system.n * system.Q.ndofs
    K, nb = blocks.shape[:2]
    dofs = system.A_block_dofs.reshape(-1, nb)
    return block_diagonal(np.repeat(inv, 2, axis=0), dofs, n)


def _condensed_solver(system: SaddleSystem):
    # A v + RT B c = f1, Bc v = f2  =>  (RT Bc A^-1 B) c = Bc A^-1 f1 - f2
    Ainv = _invert_blocks(system)
    Bf = (system.RT * system.B[:, system.free]).tocsc()
    Bcf = system.Bc[system.free, :].tocsr()
    nv = system.n * system.Q.ndofs
    lu = _factorize((Bcf @ (Ainv @ Bf)).tocsc())

    def apply(b: np.ndarray) -> np.ndarray:
        f1, f2 = b[:nv], b[nv:]
        c = lu.solve(Bcf @ (Ainv @ f1) - f2)
        v = Ainv @ (f1 - Bf @ c)
        return np.concatenate([v, c])

    return apply


class DiscreteNorms:
    """Species-summed ||.||_X (full H1), ||.||_Q (L2) and |.|_{H1} on a mesh."""

    def __init__(self, X: FiniteSpace, Q: FiniteSpace):
        self.X, self.Q = X, Q
        M, K = cg_mass_stiffness(X)
        self.H1 = (M + K).tocsr()
        self.stiff = K
        self.MQ = dg_mass(Q)

    @staticmethod
    def _quad(A, vecs) -> float:
        return float(sum(max(v @ (A @ v), 0.0) for v in vecs))

    def x_norm(self, fields: Sequence[Field]) -> float:
        return np.sqrt(self._quad(self.H1, [f.coefficients for f in fields]))

    def q_norm(self, fields: Sequence[Field]) -> float:
        return np.sqrt(self._quad(self.MQ, [f.coefficients for f in fields]))


def gibbs_duhem_deviation(c: Sequence[Field]) -> float:
    """||grad(sum_i c_i)||_L2 by quadrature."""
    total = Field(c[0].space, sum(f.coefficients for f in c))
    return h1_seminorm_error(total, None, 2 * c[0].space.degree)


def nonlinear_residual(
    mesh: TriMesh,
    spaces: tuple[FiniteSpace, FiniteSpace],
    data: ProblemData,
    v: Sequence[Field],
    c: Sequence[Field],
    lifting: Sequence[Field],
    quad_degree: int | None = None,
) -> tuple[float, float]:
    """Euclidean norms of both block residuals with forms frozen at ``c`` itself."""
    system = assemble(mesh, spaces, data, c, lifting, quad_degree)
    x = system.pack(v, c)
    r = system.matrix() @ x - system.rhs()
    nv = data.n * spaces[1].ndofs
    return float(np.linalg.norm(r[:nv])), float(np.linalg.norm(r[nv:]))


def _check_initial_guess(data: ProblemData, X: FiniteSpace, guess: Sequence[Field], kappa_min: float):
    if len(guess) != data.n:
        raise ValueError(f"initial guess needs {data.n} fields")
    for f in guess:
        if f.space is not X:
            raise ValueError("initial guess must live on the concentration space")
    total = sum(f.coefficients for f in guess)
    dev = np.max(np.abs(total - data.C_T))
    if dev > 1e-12 * max(1.0, abs(data.C_T)):
        raise ValueError(f"initial guess does not sum to C_T (deviation {dev:.3e})")
    expected = apply_dirichlet_lifting(data, X)
    dofs = X.dirichlet_dofs()
    for i, (f, e) in enumerate(zip(guess, expected)):
        dev = np.max(np.abs(f.coefficients[dofs] - e.coefficients[dofs]), initial=0.0)
        if dev > 1e-12 * max(1.0, abs(data.C_T)):
            raise ValueError(f"initial guess of species {i} misses the Dirichlet data by {dev:.3e}")
    for i, f in enumerate(guess):
        if f.coefficients.min() < kappa_min:
            raise PositivityError(f"initial guess of species {i} not positive", i, float(f.coefficients.min()))


def picard_iterate(
    mesh: TriMesh,
    spaces: tuple[FiniteSpace, FiniteSpace],
    data: ProblemData,
    initial_guess: Sequence[Field],
    settings: PicardSettings | None = None,
    initial_velocities: Sequence[Field] | None = None,
) -> tuple[list[Field], list[Field], SolveReport]:
    """Picard iteration freezing concentrations wherever they multiply velocities.

    The initial guess doubles as the Dirichlet lifting: every iterate is the
    guess plus a correction vanishing on the Dirichlet boundary.  Only the
    concentrations enter the frozen forms, so ``initial_velocities``
    (default zero) affects nothing but the first increment.  Raises
    :class:`ConvergenceError` (with the report attached) if the increment
    does not fall below ``settings.epsilon`` within ``max_iterations``.
    """
    settings = settings or PicardSettings()
    X, Q = spaces
    coeffs = data.coeffs
    if coeffs.gamma != settings.gamma or coeffs.kappa_min != settings.kappa_min:
        coeffs = dataclasses.replace(coeffs, gamma=settings.gamma, kappa_min=settings.kappa_min)
        data = dataclasses.replace(data, coeffs=coeffs)
    data.check_consistency(mesh, strict=settings.strict_consistency)
    _check_initial_guess(data, X, initial_guess, settings.kappa_min)

    norms = DiscreteNorms(X, Q)
    lifting = list(initial_guess)
    c_k = list(initial_guess)
    if initial_velocities is None:
        v_k = [Field(Q, np.zeros(Q.ndofs)) for _ in range(data.n)]
    else:
        if len(initial_velocities) != data.n or any(f.space is not Q for f in initial_velocities):
            raise ValueError(f"initial velocities must be {data.n} fields on the velocity space")
        v_k = list(initial_velocities)
    report = SolveReport()
    t0 = time.perf_counter()

    def finish(msg: str, converged: bool):
        report.converged = converged
        report.message = msg
        report.wall_time_s = time.perf_counter() - t0

    for k in range(settings.max_iterations):
        try:
            system = assemble(mesh, spaces, data, c_k, lifting, settings.quad_degree)
            # correction form: solve for the step, so its rounding error is
            # relative to the step and not to the solution
            K = system.matrix()
            x0 = system.pack(v_k, c_k)
            dx = solve_system(system, K, system.rhs() - K @ x0, settings.linear_solver, settings.refine)
        except PositivityError as err:
            finish(f"positivity lost at iterate {k}: {err}", False)
            raise SolveError(str(err), report, iterate=k, species=err.species) from err
        except SolveError as err:
            err.report = report
            finish(f"linear solve failed at iterate {k}: {err}", False)
            raise
        dv, dc = _step_fields(system, dx)
        v_new, c_new = system.split(x0 + dx)
        inc = norms.x_norm(dc) + norms.q_norm(dv)
        report.iterations = k + 1
        report.increments.append(float(inc))
        report.gibbs_duhem.append(gibbs_duhem_deviation(c_new))
        log.info("picard %d: increment %.3e, |grad c_T| %.3e", k + 1, inc, report.gibbs_duhem[-1])
        c_k, v_k = c_new, v_new
        if settings.project_positivity:
            c_k = _project(c_k, settings.kappa_min)
        if not np.isfinite(inc):
            finish(f"non-finite increment at iterate {k + 1}", False)
            raise ConvergenceError(report.message, report)
        if inc <= settings.epsilon:
            break
    else:
        report.gibbs_duhem_l2 = report.gibbs_duhem[-1]
        finish(f"no convergence within {settings.max_iterations} iterations", False)
        raise ConvergenceError(report.message, report, last_increment=report.increments[-1])

    report.gibbs_duhem_l2 = report.gibbs_duhem[-1]
    try:
        r1, r2 = nonlinear_residual(mesh, spaces, data, v_k, c_k, lifting, settings.quad_degree)
        report.residual = float(np.hypot(r1, r2))
    except PositivityError:
        report.residual = float("nan")
    finish("converged", True)
    return v_k, c_k, report


def _step_fields(system: SaddleSystem, dx: np.ndarray) -> tuple[list[Field], list[Field]]:
    nQ, nX = system.Q.ndofs, system.X.ndofs
    nv = system.n * nQ
    full = np.zeros(system.n * nX)
    full[system.free] = dx[nv:]
    dv = [Field(system.Q, dx[i * nQ : (i + 1) * nQ]) for i in range(system.n)]
    dc = [Field(system.X, full[i * nX : (i + 1) * nX]) for i in range(system.n)]
    return dv, dc


def _project(c: Sequence[Field], floor: float) -> list[Field]:
    out = []
    for i, f in enumerate(c):
        if f.coefficients.min() < floor:
            log.warning("projecting species %d onto [%g, inf): min was %.3e", i, floor, f.coefficients.min())
            out.append(Field(f.space, np.maximum(f.coefficients, floor)))
        else:
            out.append(f)
    return out
