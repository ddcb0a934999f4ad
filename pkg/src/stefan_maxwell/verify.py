"""Manufactured solutions, convergence studies and the mixed-boundary demo."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fespace import Field, interpolate, mass_flux_error, mixed_spaces, norms
from .mesh import (
    DIRICHLET,
    NEUMANN,
    Diagonal,
    build_rectangle,
    build_unit_square,
    everywhere,
    mesh_diameter,
    on_left,
    on_right,
    tag_boundary,
)
from .solver import PicardSettings, SolveError, SolveReport, picard_iterate
from .system import ProblemData, apply_dirichlet_lifting
from .transport import TransportCoefficients, onsager_matrix

log = logging.getLogger(__name__)

CSV_HEADER = ("N", "h", "E1", "E2", "E3", "E4", "iterations", "gibbs_duhem_l2", "wall_time_s")


class OracleError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# finite differences


def fd_derivative(f: Callable, x: np.ndarray, y: np.ndarray, axis: int, h: float, lo: float, hi: float):
    """Fourth-order first derivative of ``f(x, y)`` along ``axis``.

    Central where the stencil fits inside [lo, hi], otherwise the one-sided
    fourth-order stencil pointing into the domain.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    t = x if axis == 0 else y

    def at(s):
        return np.asarray(f(x + s, y) if axis == 0 else f(x, y + s), dtype=float)

    central = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h)
    fwd = (-25 * at(0) + 48 * at(h) - 36 * at(2 * h) + 16 * at(3 * h) - 3 * at(4 * h)) / (12 * h)
    bwd = (25 * at(0) - 48 * at(-h) + 36 * at(-2 * h) - 16 * at(-3 * h) + 3 * at(-4 * h)) / (12 * h)
    out = np.where(t - 2 * h < lo, fwd, central)
    return np.where(t + 2 * h > hi, bwd, out)


def fd_divergence(F: Callable, x, y, h: float, bounds=(0.0, 1.0, 0.0, 1.0)):
    """Divergence of a vector field ``F(x, y) -> (Fx, Fy)`` by fourth-order differences."""
    x0, x1, y0, y1 = bounds
    dx = fd_derivative(lambda a, b: F(a, b)[0], x, y, 0, h * (x1 - x0), x0, x1)
    dy = fd_derivative(lambda a, b: F(a, b)[1], x, y, 1, h * (y1 - y0), y0, y1)
    return dx + dy


# ---------------------------------------------------------------------------
# manufactured solutions


@dataclass(frozen=True)
class Reading:
    """One way of reading the printed velocity formulas.

    ``inverse_bracket``: the diffusivity bracket divides (True) or multiplies
    (False) the gradient term.  ``convect_partner``: the partner species
    (2 and 4) use only the diffusive part of the leading species' velocity
    (True) or its full velocity including the convective term (False).
    """

    inverse_bracket: bool
    convect_partner: bool

    def __str__(self) -> str:
        a = "inverse bracket" if self.inverse_bracket else "printed bracket"
        b = "diffusive partner" if self.convect_partner else "full-velocity partner"
        return f"{a}, {b}"


READINGS = tuple(Reading(a, b) for a in (False, True) for b in (False, True))


@dataclass
class ScalarFunction:
    """A scalar function with optional closed-form gradient and Laplacian."""

    f: Callable
    grad: Callable | None = None
    lap: Callable | None = None
    h: float = 1e-5

    def __call__(self, x, y):
        return self.f(x, y)

    def gradient(self, x, y):
        if self.grad is not None:
            return self.grad(x, y)
        return (
            fd_derivative(self.f, x, y, 0, self.h, -np.inf, np.inf),
            fd_derivative(self.f, x, y, 1, self.h, -np.inf, np.inf),
        )


@dataclass
class ManufacturedCase:
    """Four-species family with c1 + c2 = 2 K1 and c3 + c4 = 2 K2.

    Requires D13 = D14 = D23 = D24 and unit molar masses.  The velocity
    coefficients follow from the Stefan-Maxwell relation:

        v1 = -(c_T / 2RT) (K1/D12 + K2/D13)^{-1} grad ln c1 + u/c_T
        v2 = -(c1/c2) (v1 - u/c_T) + u/c_T

    and symmetrically for species 3, 4.  ``reading`` selects one of the
    alternative readings used by :func:`resolve_reading`.
    """

    k1: ScalarFunction
    k2: ScalarFunction
    K1: float
    K2: float
    coeffs: TransportCoefficients
    u: Callable = lambda x, y: (0.0 * x, 0.0 * x)
    div_u: Callable | None = None
    reading: Reading = Reading(True, True)
    bounds: tuple = (0.0, 1.0, 0.0, 1.0)
    fd_step: float = 1e-5

    def __post_init__(self):
        D = self.coeffs.D
        if self.coeffs.n != 4:
            raise ValueError("manufactured family needs four species")
        cross = [D[0, 2], D[0, 3], D[1, 2], D[1, 3]]
        if not np.allclose(cross, cross[0], rtol=0, atol=0):
            raise ValueError("need D13 = D14 = D23 = D24")
        if not np.all(self.coeffs.molar_masses == 1.0):
            raise ValueError("manufactured family needs unit molar masses")

    @property
    def c_T(self) -> float:
        return 2 * self.K1 + 2 * self.K2

    def _coefficient(self, own: float, other: float, D_pair: float) -> float:
        D_cross = self.coeffs.D[0, 2]
        RT = self.coeffs.RT
        if self.reading.inverse_bracket:
            return self.c_T / (2 * RT) / (own / D_pair + other / D_cross)
        # the printed form: (2/RT)(K_own/D_pair + K_own/D_cross)
        return 2 / RT * (own / D_pair + own / D_cross)

    @property
    def a1(self) -> float:
        return self._coefficient(self.K1, self.K2, self.coeffs.D[0, 1])

    @property
    def a3(self) -> float:
        return self._coefficient(self.K2, self.K1, self.coeffs.D[2, 3])

    def concentrations(self) -> list[Callable]:
        k1, k2, K1, K2 = self.k1, self.k2, self.K1, self.K2
        return [
            lambda x, y: K1 + k1(x, y),
            lambda x, y: K1 - k1(x, y),
            lambda x, y: K2 + k2(x, y),
            lambda x, y: K2 - k2(x, y),
        ]

    def concentration_gradients(self) -> list[Callable]:
        def sign(k, s):
            def g(x, y):
                gx, gy = k.gradient(x, y)
                return s * np.asarray(gx), s * np.asarray(gy)

            return g

        return [sign(self.k1, 1.0), sign(self.k1, -1.0), sign(self.k2, 1.0), sign(self.k2, -1.0)]

    def _u(self, x, y):
        ux, uy = self.u(x, y)
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        return np.broadcast_to(ux, shape).astype(float), np.broadcast_to(uy, shape).astype(float)

    def fluxes(self) -> list[Callable]:
        """Molar fluxes N_i = c_i v_i."""
        c = self.concentrations()
        v = self.velocities()

        def flux(i):
            def N(x, y):
                vx, vy = v[i](x, y)
                ci = c[i](x, y)
                return ci * vx, ci * vy

            return N

        return [flux(i) for i in range(4)]

    def velocities(self) -> list[Callable]:
        c = self.concentrations()
        gc = self.concentration_gradients()
        cT = self.c_T
        partner = self.reading.convect_partner

        def lead(i, a):
            def v(x, y):
                gx, gy = gc[i](x, y)
                ci = c[i](x, y)
                ux, uy = self._u(x, y)
                return -a * gx / ci + ux / cT, -a * gy / ci + uy / cT

            return v

        def follow(i, a):
            lead_v = lead(i - 1, a)

            def v(x, y):
                vx, vy = lead_v(x, y)
                ux, uy = self._u(x, y)
                if partner:
                    vx, vy = vx - ux / cT, vy - uy / cT
                r = c[i - 1](x, y) / c[i](x, y)
                return -r * vx + ux / cT, -r * vy + uy / cT

            return v

        return [lead(0, self.a1), follow(1, self.a1), lead(2, self.a3), follow(3, self.a3)]

    def reaction_rates(self) -> list[Callable]:
        return reaction_rates(self)

    def stefan_maxwell_residual(self, x, y) -> np.ndarray:
        """max_i |d_i - sum_j M_ij v_j| at each point, d_i = -RT grad c_i."""
        x, y = np.atleast_1d(x), np.atleast_1d(y)
        c = np.stack([f(x, y) for f in self.concentrations()], axis=-1)
        g = np.stack([np.stack(gf(x, y), -1) for gf in self.concentration_gradients()], axis=1)
        v = np.stack([np.stack(vf(x, y), -1) for vf in self.velocities()], axis=1)  # (P, n, 2)
        M = onsager_matrix(c, self.coeffs)
        res = -self.coeffs.RT * g - np.einsum("pij,pjd->pid", M, v)
        return np.abs(res).max(axis=(1, 2))

    def mass_flux_residual(self, x, y) -> np.ndarray:
        x, y = np.atleast_1d(x), np.atleast_1d(y)
        total = sum(
            Mi * np.stack(N(x, y), -1) for Mi, N in zip(self.coeffs.molar_masses, self.fluxes())
        )
        return np.abs(total - np.stack(self._u(x, y), -1)).max(axis=1)

    def check_oracles(self, npoints: int = 50, seed: int = 42, tol_sm: float = 1e-9, tol_flux: float = 1e-10):
        """Pointwise residuals at random interior points; raises on failure."""
        x0, x1, y0, y1 = self.bounds
        rng = np.random.default_rng(seed)
        x = rng.uniform(x0, x1, npoints)
        y = rng.uniform(y0, y1, npoints)
        sm = float(self.stefan_maxwell_residual(x, y).max())
        fl = float(self.mass_flux_residual(x, y).max())
        c = np.stack([f(x, y) for f in self.concentrations()])
        if c.min() <= 0:
            raise OracleError(f"exact concentration not positive (min {c.min():.3e})")
        if sm > tol_sm or fl > tol_flux:
            raise OracleError(
                f"reading '{self.reading}' fails: Stefan-Maxwell residual {sm:.3e}, mass-flux residual {fl:.3e}"
            )
        return sm, fl

    def problem_data(self) -> ProblemData:
        """Dirichlet data on the whole boundary taken from the exact traces."""
        return ProblemData(
            coeffs=self.coeffs,
            C_T=self.c_T,
            dirichlet={DIRICHLET(0): self.concentrations()},
            reactions=self.reaction_rates(),
            mass_flux=self._u,
            div_u=self.div_u,
        )


def resolve_reading(case: ManufacturedCase, **oracle_kw) -> ManufacturedCase:
    """Return ``case`` with the unique reading passing the pointwise oracles."""
    passing = []
    for reading in READINGS:
        trial = dataclasses.replace(case, reading=reading)
        try:
            trial.check_oracles(**oracle_kw)
        except OracleError as err:
            log.debug("rejected: %s", err)
            continue
        passing.append(trial)
    if len(passing) != 1:
        raise OracleError(f"{len(passing)} readings pass the residual oracles; expected exactly one")
    return passing[0]


def reaction_rates(case: ManufacturedCase) -> list[Callable]:
    """r_i = div(c_i v_i).

    Closed form when both k-functions carry Laplacians and ``div_u`` is
    known; fourth-order finite differences of the fluxes otherwise.
    """
    k1, k2 = case.k1, case.k2
    analytic = k1.lap is not None and k2.lap is not None and k1.grad is not None and k2.grad is not None
    if analytic and case.reading == Reading(True, True) and (case.div_u is not None or _constant_u(case)):
        cT = case.c_T
        conc = case.concentrations()

        def divu(x, y):
            if case.div_u is None:
                return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
            return np.asarray(case.div_u(x, y), dtype=float)

        def rate(i, k, a, s):
            def r(x, y):
                gx, gy = k.grad(x, y)
                ux, uy = case._u(x, y)
                return s * (-a * k.lap(x, y) + (gx * ux + gy * uy) / cT) + conc[i](x, y) * divu(x, y) / cT

            return r

        return [
            rate(0, k1, case.a1, 1.0),
            rate(1, k1, case.a1, -1.0),
            rate(2, k2, case.a3, 1.0),
            rate(3, k2, case.a3, -1.0),
        ]

    def fd(N):
        return lambda x, y: fd_divergence(N, x, y, case.fd_step, case.bounds)

    return [fd(N) for N in case.fluxes()]


def _constant_u(case: ManufacturedCase) -> bool:
    rng = np.random.default_rng(0)
    x, y = rng.uniform(size=8), rng.uniform(size=8)
    ux, uy = case._u(x, y)
    return bool(np.ptp(ux) == 0 and np.ptp(uy) == 0)


def manufactured_k1() -> ScalarFunction:
    """k1 = exp(8 x y (1-x)(1-y)) / 2 with closed-form derivatives."""

    def p(x, y):
        return 8 * x * y * (1 - x) * (1 - y)

    def f(x, y):
        return 0.5 * np.exp(p(x, y))

    def grad(x, y):
        k = f(x, y)
        return k * 8 * y * (1 - y) * (1 - 2 * x), k * 8 * x * (1 - x) * (1 - 2 * y)

    def lap(x, y):
        px = 8 * y * (1 - y) * (1 - 2 * x)
        py = 8 * x * (1 - x) * (1 - 2 * y)
        pxx = -16 * y * (1 - y)
        pyy = -16 * x * (1 - x)
        return f(x, y) * (px**2 + py**2 + pxx + pyy)

    return ScalarFunction(f, grad, lap)


def manufactured_k2() -> ScalarFunction:
    """k2 = sin(pi x) sin(pi y) / 2."""

    def f(x, y):
        return 0.5 * np.sin(np.pi * x) * np.sin(np.pi * y)

    def grad(x, y):
        return (
            0.5 * np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
            0.5 * np.pi * np.sin(np.pi * x) * np.cos(np.pi * y),
        )

    def lap(x, y):
        return -2 * np.pi**2 * f(x, y)

    return ScalarFunction(f, grad, lap)


def manufactured_coefficients(gamma: float = 1.0) -> TransportCoefficients:
    pairs = {(0, 1): 2.0, (2, 3): 3.0, (0, 2): 1.0, (0, 3): 1.0, (1, 2): 1.0, (1, 3): 1.0}
    return TransportCoefficients.from_pairs(4, pairs, [1.0] * 4, RT=1.0, gamma=gamma)


def build_manufactured_case(gamma: float = 1.0, resolve: bool = True) -> ManufacturedCase:
    """The four-species test on the unit square with u = (0, 1)."""
    case = ManufacturedCase(
        k1=manufactured_k1(),
        k2=manufactured_k2(),
        K1=1.0,
        K2=1.0,
        coeffs=manufactured_coefficients(gamma),
        u=lambda x, y: (0.0, 1.0),
        div_u=lambda x, y: np.zeros(np.shape(x)),
    )
    return resolve_reading(case) if resolve else case


# ---------------------------------------------------------------------------
# convergence study


@dataclass
class LevelResult:
    N: int
    h: float
    E1: float
    E2: float
    E3: float
    E4: float
    iterations: int
    gibbs_duhem_l2: float
    wall_time_s: float
    gibbs_duhem_max: float = float("nan")
    report: SolveReport | None = None

    def row(self) -> tuple:
        return (self.N, self.h, self.E1, self.E2, self.E3, self.E4, self.iterations, self.gibbs_duhem_l2, self.wall_time_s)


@dataclass
class StudyResult:
    m: int
    levels: list[LevelResult] = field(default_factory=list)
    failed: str | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(lv, name) for lv in self.levels], dtype=float)

    def slopes(self) -> dict[str, float]:
        """Least-squares slopes of log E_j against log h."""
        h = np.log(self.column("h"))
        out = {}
        for name in ("E1", "E2", "E3", "E4"):
            out[name] = float(np.polyfit(h, np.log(self.column(name)), 1)[0])
        return out

    def pairwise_ratios(self) -> dict[str, list[float]]:
        out = {}
        for name in ("E1", "E2", "E3", "E4"):
            e = self.column(name)
            out[name] = (e[:-1] / e[1:]).tolist()
        return out

    def rows(self) -> list[tuple]:
        return [lv.row() for lv in self.levels]


class StudyError(RuntimeError):
    def __init__(self, message: str, partial: StudyResult):
        super().__init__(message)
        self.partial = partial


def solve_case(
    case: ManufacturedCase,
    N: int,
    m: int = 1,
    settings: PicardSettings | None = None,
    diag: Diagonal = Diagonal.RIGHT,
):
    """Solve the manufactured case on an N x N mesh; returns (mesh, spaces, v, c, report)."""
    settings = settings or PicardSettings()
    mesh = tag_boundary(build_unit_square(N, diag), [(everywhere, DIRICHLET(0))])
    spaces = mixed_spaces(mesh, m)
    data = case.problem_data()
    guess = apply_dirichlet_lifting(data, spaces[0])
    v, c, report = picard_iterate(mesh, spaces, data, guess, settings)
    return mesh, spaces, v, c, report


def level_errors(case: ManufacturedCase, v: Sequence[Field], c: Sequence[Field]) -> tuple[float, ...]:
    e1, e2, e3 = norms(c, v, case.concentrations(), case.concentration_gradients(), case.velocities())
    e4 = mass_flux_error(c, v, case.coeffs.molar_masses, case._u)
    return e1, e2, e3, e4


def convergence_study(
    case: ManufacturedCase,
    meshes: Sequence[int],
    m: int = 1,
    settings: PicardSettings | None = None,
    diag: Diagonal = Diagonal.RIGHT,
) -> StudyResult:
    """Run the manufactured case on each N x N mesh and tabulate the errors."""
    if len(meshes) < 3:
        raise ValueError("a convergence study needs at least three mesh levels")
    case.check_oracles()
    settings = settings or PicardSettings()
    result = StudyResult(m)
    for N in meshes:
        t0 = time.perf_counter()
        try:
            mesh, _, v, c, report = solve_case(case, N, m, settings, diag)
        except SolveError as err:
            result.failed = f"N={N}: {err}"
            raise StudyError(result.failed, result) from err
        e1, e2, e3, e4 = level_errors(case, v, c)
        result.levels.append(
            LevelResult(
                N,
                mesh_diameter(mesh),
                e1,
                e2,
                e3,
                e4,
                report.iterations,
                report.gibbs_duhem_l2,
                time.perf_counter() - t0,
                max(report.gibbs_duhem),
                report,
            )
        )
        log.info("N=%d: E=(%.3e, %.3e, %.3e, %.3e), %d iterations", N, e1, e2, e3, e4, report.iterations)
    return result


# ---------------------------------------------------------------------------
# mixed Dirichlet/Neumann demo


SPECIES = ("N2", "O2", "CO2", "H2O")
# kg/mol; with diffusivities in mm^2/s this keeps gamma L comparable to M
MOLAR_MASSES = (0.028014, 0.031998, 0.044009, 0.018015)

# binary diffusivities in mm^2/s, upper triangle
DIFFUSIVITIES = {
    ("N2", "O2"): 21.87,
    ("N2", "CO2"): 16.63,
    ("N2", "H2O"): 23.15,
    ("O2", "CO2"): 16.40,
    ("O2", "H2O"): 22.85,
    ("CO2", "H2O"): 16.02,
}

# mole fractions of humidified air (inlet) and alveolar air (outlet)
INLET = (0.7409, 0.1967, 0.0004, 0.0620)
OUTLET = (0.7490, 0.1360, 0.0530, 0.0620)


def demo_coefficients(gamma: float = 1.0, RT: float = 1.0) -> TransportCoefficients:
    idx = {s: i for i, s in enumerate(SPECIES)}
    pairs = {(idx[a], idx[b]): v for (a, b), v in DIFFUSIVITIES.items()}
    return TransportCoefficients.from_pairs(4, pairs, MOLAR_MASSES, RT=RT, gamma=gamma, names=SPECIES)


@dataclass
class DemoConfig:
    N: int = 32
    length: float = 1.0
    height: float = 0.25
    inlet: Sequence[float] = INLET
    outlet: Sequence[float] = OUTLET
    m: int = 1
    settings: PicardSettings = field(default_factory=lambda: PicardSettings(epsilon=1e-11, max_iterations=20))
    coeffs: TransportCoefficients | None = None
    diag: Diagonal = Diagonal.RIGHT


@dataclass
class DemoResult:
    mesh: object
    spaces: tuple
    velocities: list[Field]
    concentrations: list[Field]
    report: SolveReport
    diagnostics: dict


def mixed_bc_demo(config: DemoConfig | None = None) -> DemoResult:
    """Four-gas diffusion between two Dirichlet edges of a rectangle.

    Left edge DIRICHLET(1) carries the inlet composition, right edge
    DIRICHLET(2) the outlet composition, top and bottom are no-flux
    NEUMANN(0).  Zero mass flux and no reactions; total concentration 1.
    """
    cfg = config or DemoConfig()
    ny = max(1, round(cfg.N * cfg.height / cfg.length))
    mesh = build_rectangle(cfg.N, ny, (0.0, cfg.length, 0.0, cfg.height), cfg.diag)
    mesh = tag_boundary(
        mesh,
        [(on_left(mesh), DIRICHLET(1)), (on_right(mesh), DIRICHLET(2)), (everywhere, NEUMANN(0))],
    )
    coeffs = cfg.coeffs or demo_coefficients(cfg.settings.gamma)
    const = lambda v: (lambda x, y: np.full(np.shape(x), float(v)))  # noqa: E731
    data = ProblemData(
        coeffs=coeffs,
        C_T=1.0,
        dirichlet={DIRICHLET(1): [const(v) for v in cfg.inlet], DIRICHLET(2): [const(v) for v in cfg.outlet]},
    )
    spaces = mixed_spaces(mesh, cfg.m)
    guess = apply_dirichlet_lifting(data, spaces[0])
    v, c, report = picard_iterate(mesh, spaces, data, guess, cfg.settings)
    return DemoResult(mesh, spaces, v, c, report, demo_diagnostics(c, v))


def demo_diagnostics(c: Sequence[Field], v: Sequence[Field], species: int = 3) -> dict:
    """Bounds of the solution and the water-vapour flow direction at the inlet.

    Uphill diffusion means the velocity points along, not against, the
    mole-fraction gradient.
    """
    X, Q = c[0].space, v[0].space
    mesh = X.mesh
    coeffs = np.stack([f.coefficients for f in c])
    total = coeffs.sum(axis=0)
    centroid = mesh.cell_coordinates().mean(axis=1)
    x0 = mesh.bounds[0]
    width = mesh.bounds[1] - x0
    near = centroid[:, 0] - x0 <= width / max(8, 1) * 0.5
    vel = v[species].cell_coefficients().mean(axis=1)
    grad = c[species].gradients_at(np.array([[1 / 3, 1 / 3]]))[:, 0, :]
    vx = float(vel[near, 0].mean())
    gx = float(grad[near, 0].mean())
    return {
        "min_fraction": float(coeffs.min()),
        "max_fraction": float(coeffs.max()),
        "sum_deviation": float(np.abs(total - 1.0).max()),
        "h2o_vx_near_inlet": vx,
        "h2o_dydx_near_inlet": gx,
        "h2o_vx_sign": int(np.sign(vx)),
        "uphill": bool(vx * gx > 0),
    }
