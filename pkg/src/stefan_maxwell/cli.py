"""Command-line entry point.

    stefan-maxwell convergence --config convergence_m1.json --out results/
    stefan-maxwell demo --config demo.json --out demo/
    stefan-maxwell solve --config my_problem.json --out run/
    stefan-maxwell spectrum --config spectrum.json --out spec/

Configurations are JSON documents checked against ``configs/schema.json``.
A bare file name that does not exist on disk is looked up among the bundled
configurations.  Exit codes: 0 success, 2 invalid configuration, 3 solver
failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import io
from .fespace import mixed_spaces
from .mesh import (
    DIRICHLET,
    NEUMANN,
    Diagonal,
    build_rectangle,
    everywhere,
    on_bottom,
    on_left,
    on_right,
    on_top,
    tag_boundary,
)
from .solver import PicardSettings, SolveError, picard_iterate
from .system import ConsistencyError, ProblemData, apply_dirichlet_lifting
from .transport import (
    TransportCoefficients,
    TransportError,
    coercivity_bound,
    gamma_rho_lambda2,
    spectral_report,
)
from .verify import (
    CSV_HEADER,
    DemoConfig,
    ManufacturedCase,
    OracleError,
    StudyError,
    convergence_study,
    mixed_bc_demo,
    manufactured_k1,
    manufactured_k2,
    resolve_reading,
)

log = logging.getLogger("stefan_maxwell")

EXIT_CONFIG = 2
EXIT_SOLVE = 3


class ConfigError(ValueError):
    def __init__(self, message: str, missing=(), problems=()):
        super().__init__(message)
        self.missing = sorted(set(missing))
        self.problems = list(problems)

    def to_json(self) -> dict:
        return {"error": "invalid configuration", "message": str(self), "missing": self.missing, "problems": self.problems}


# ---------------------------------------------------------------------------
# configuration


def bundled_configs() -> list[str]:
    root = resources.files("stefan_maxwell") / "configs"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json") and p.name != "schema.json")


def _schema() -> dict:
    return json.loads((resources.files("stefan_maxwell") / "configs" / "schema.json").read_text())


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        bundled = resources.files("stefan_maxwell") / "configs" / p.name
        if p.parent == Path(".") and bundled.is_file():
            text = bundled.read_text()
        else:
            raise ConfigError(f"configuration file not found: {path}")
    else:
        text = p.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"configuration is not valid JSON: {err}") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg) -> None:
    """Schema check; every missing key and violation is reported at once."""
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a JSON object")
    missing, problems = [], []
    for err in Draft202012Validator(_schema()).iter_errors(cfg):
        if err.validator == "required":
            prefix = "/".join(str(p) for p in err.absolute_path)
            for key in err.validator_value:
                if key not in err.instance:
                    missing.append(f"{prefix}/{key}" if prefix else key)
        else:
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            problems.append(f"{where}: {err.message}")
    if missing or problems:
        parts = []
        if missing:
            parts.append("missing keys: " + ", ".join(sorted(set(missing))))
        if problems:
            parts.append("; ".join(problems))
        raise ConfigError("; ".join(parts), missing, problems)
    sp = cfg.get("species")
    if sp is not None:
        n = sp["n"]
        if len(sp["molar_masses"]) != n:
            raise ConfigError(f"species.molar_masses has {len(sp['molar_masses'])} entries, expected {n}")
        if "names" in sp and len(sp["names"]) != n:
            raise ConfigError(f"species.names has {len(sp['names'])} entries, expected {n}")
        for b in cfg.get("boundary", []):
            if len(b["values"]) != n:
                raise ConfigError(f"boundary block on {b['region']} has {len(b['values'])} values, expected {n}")


def coefficients_from_config(cfg: dict) -> TransportCoefficients:
    sp = cfg["species"]
    names = sp.get("names")
    index = {nm: k for k, nm in enumerate(names)} if names else {}

    def idx(s):
        if isinstance(s, str):
            if s not in index:
                raise ConfigError(f"unknown species name {s!r}")
            return index[s]
        return s

    pairs = [(idx(d["i"]), idx(d["j"]), d["value"]) for d in sp["diffusivities"]]
    try:
        return TransportCoefficients.from_pairs(
            sp["n"], pairs, sp["molar_masses"], RT=sp["RT"], gamma=cfg["gamma"], names=names
        )
    except (TransportError, IndexError) as err:
        raise ConfigError(f"species block: {err}") from None


def settings_from_config(cfg: dict, strict: bool) -> PicardSettings:
    return PicardSettings(
        epsilon=cfg["epsilon"],
        max_iterations=cfg["max_iterations"],
        gamma=cfg["gamma"],
        strict_consistency=strict or cfg.get("strict", True),
        linear_solver=cfg.get("linear_solver", "monolithic"),
    )


def _diagonal(cfg: dict) -> Diagonal:
    return Diagonal(cfg["mesh"].get("diagonal", "right"))


def _mesh_sizes(cfg: dict) -> list[int]:
    N = cfg["mesh"]["N"]
    return list(N) if isinstance(N, list) else [N]


def _constant(v: float):
    return lambda x, y: np.full(np.shape(x), float(v))


# ---------------------------------------------------------------------------
# experiments


def run_convergence(cfg: dict, out: Path, strict: bool) -> int:
    coeffs = coefficients_from_config(cfg)
    man = cfg.get("manufactured", {})
    ux, uy = man.get("u", [0.0, 1.0])
    try:
        case = resolve_reading(
            ManufacturedCase(
                k1=manufactured_k1(),
                k2=manufactured_k2(),
                K1=man.get("K1", 1.0),
                K2=man.get("K2", 1.0),
                coeffs=coeffs,
                u=lambda x, y: (ux, uy),
                div_u=lambda x, y: np.zeros(np.shape(x)),
            )
        )
    except (ValueError, OracleError) as err:
        raise ConfigError(f"manufactured case: {err}") from None
    meshes = _mesh_sizes(cfg)
    settings = settings_from_config(cfg, strict)
    try:
        study = convergence_study(case, meshes, cfg["order"], settings, _diagonal(cfg))
        failed = None
    except StudyError as err:
        study, failed = err.partial, str(err)
    io.write_csv(out / "results.csv", CSV_HEADER, study.rows())
    reports = {str(lv.N): lv.report.to_json() for lv in study.levels}
    summary = {
        "experiment": "convergence",
        "order": cfg["order"],
        "reading": str(case.reading),
        "levels": reports,
        "max_gibbs_duhem_any_iterate": max((lv.gibbs_duhem_max for lv in study.levels), default=None),
        "failed": failed,
    }
    io.write_json(out / "report.json", summary)
    if len(study.levels) >= 2:
        io.write_json(
            out / "slopes.json",
            {"order": cfg["order"], "slopes": study.slopes(), "pairwise_ratios": study.pairwise_ratios()},
        )
    if cfg.get("write_vtk"):
        log.info("VTK output is written by 'solve' and 'demo'; skipping for the study")
    for lv in study.levels:
        print(f"N={lv.N:4d} h={lv.h:.4e} E1={lv.E1:.4e} E2={lv.E2:.4e} E3={lv.E3:.4e} E4={lv.E4:.4e} its={lv.iterations}")
    if len(study.levels) >= 2:
        print("slopes:", json.dumps({k: round(v, 4) for k, v in study.slopes().items()}))
    return EXIT_SOLVE if failed else 0


def _demo_edges(cfg: dict):
    inlet = outlet = None
    for b in cfg["boundary"]:
        if b["kind"] == "dirichlet" and b["region"] == "left":
            inlet = b["values"]
        elif b["kind"] == "dirichlet" and b["region"] == "right":
            outlet = b["values"]
        elif b["kind"] == "neumann" and any(v != 0 for v in b["values"]):
            raise ConfigError("the demo uses no-flux Neumann data only")
    if inlet is None or outlet is None:
        raise ConfigError("demo needs dirichlet blocks on the left and right edges")
    return inlet, outlet


def run_demo(cfg: dict, out: Path, strict: bool) -> int:
    inlet, outlet = _demo_edges(cfg)
    x0, x1, y0, y1 = cfg.get("domain", [0.0, 1.0, 0.0, 0.25])
    if x0 != 0 or y0 != 0:
        raise ConfigError("demo domain must start at the origin")
    coeffs = coefficients_from_config(cfg)
    rows, reports = [], {}
    for N in _mesh_sizes(cfg):
        dc = DemoConfig(
            N=N,
            length=x1,
            height=y1,
            inlet=inlet,
            outlet=outlet,
            m=cfg["order"],
            settings=settings_from_config(cfg, strict),
            coeffs=coeffs,
            diag=_diagonal(cfg),
        )
        try:
            res = mixed_bc_demo(dc)
        except SolveError as err:
            reports[str(N)] = {"failed": str(err), **(err.report.to_json() if err.report else {})}
            io.write_json(out / "report.json", {"experiment": "demo", "levels": reports})
            return EXIT_SOLVE
        d = res.diagnostics
        reports[str(N)] = {**res.report.to_json(), "diagnostics": d}
        rows.append((N, res.report.iterations, d["min_fraction"], d["max_fraction"], d["sum_deviation"], d["h2o_vx_near_inlet"], d["uphill"]))
        print(f"N={N}: {res.report.iterations} iterations, sum deviation {d['sum_deviation']:.2e}, uphill={d['uphill']}")
        if cfg.get("write_vtk"):
            io.write_solution_vtk(out / f"demo_N{N}.vtk", res.concentrations, res.velocities, coeffs.names)
    header = ("N", "iterations", "min_fraction", "max_fraction", "sum_deviation", "h2o_vx_near_inlet", "uphill")
    io.write_csv(out / "results.csv", header, rows)
    io.write_json(out / "report.json", {"experiment": "demo", "levels": reports})
    return 0


_REGIONS = {"left": on_left, "right": on_right, "bottom": on_bottom, "top": on_top}


def problem_from_config(cfg: dict, mesh):
    """Tagged mesh and problem data with constant boundary values."""
    coeffs = coefficients_from_config(cfg)
    preds, dirichlet, neumann = [], {}, {}
    for k, b in enumerate(cfg["boundary"]):
        pred = everywhere if b["region"] == "all" else _REGIONS[b["region"]](mesh)
        make = DIRICHLET if b["kind"] == "dirichlet" else NEUMANN
        tag = make(b.get("id", k))
        if tag in dirichlet or tag in neumann:
            raise ConfigError(f"boundary tag {tag} used twice")
        preds.append((pred, tag))
        (dirichlet if b["kind"] == "dirichlet" else neumann)[tag] = [_constant(v) for v in b["values"]]
    try:
        mesh = tag_boundary(mesh, preds)
    except ValueError as err:
        raise ConfigError(f"boundary blocks: {err}") from None
    ux, uy = cfg.get("mass_flux", [0.0, 0.0])
    data = ProblemData(
        coeffs=coeffs,
        C_T=cfg["total_concentration"],
        dirichlet=dirichlet,
        neumann=neumann,
        mass_flux=lambda x, y: (np.full(np.shape(x), ux), np.full(np.shape(x), uy)),
        div_u=lambda x, y: np.zeros(np.shape(x)),
    )
    return mesh, data


def run_solve(cfg: dict, out: Path, strict: bool) -> int:
    x0, x1, y0, y1 = cfg.get("domain", [0.0, 1.0, 0.0, 1.0])
    rows, reports = [], {}
    status = 0
    for N in _mesh_sizes(cfg):
        ny = max(1, round(N * (y1 - y0) / (x1 - x0)))
        mesh = build_rectangle(N, ny, (x0, x1, y0, y1), _diagonal(cfg))
        mesh, data = problem_from_config(cfg, mesh)
        if not data.dirichlet:
            raise ConfigError("at least one dirichlet boundary block is required")
        spaces = mixed_spaces(mesh, cfg["order"])
        try:
            guess = apply_dirichlet_lifting(data, spaces[0])
            v, c, rep = picard_iterate(mesh, spaces, data, guess, settings_from_config(cfg, strict))
        except ConsistencyError as err:
            raise ConfigError(str(err)) from None
        except SolveError as err:
            reports[str(N)] = {"failed": str(err), **(err.report.to_json() if err.report else {})}
            status = EXIT_SOLVE
            break
        total = sum(f.coefficients for f in c)
        reports[str(N)] = rep.to_json()
        rows.append((N, rep.iterations, rep.gibbs_duhem_l2, rep.residual, float(np.abs(total - data.C_T).max()), rep.wall_time_s))
        print(f"N={N}: {rep.iterations} iterations, |grad c_T| = {rep.gibbs_duhem_l2:.2e}")
        if cfg.get("write_vtk"):
            io.write_solution_vtk(out / f"solve_N{N}.vtk", c, v, data.coeffs.names)
    io.write_csv(
        out / "results.csv", ("N", "iterations", "gibbs_duhem_l2", "residual", "sum_deviation", "wall_time_s"), rows
    )
    io.write_json(out / "report.json", {"experiment": "solve", "levels": reports})
    return status


def run_spectrum(cfg: dict, out: Path, strict: bool) -> int:
    coeffs = coefficients_from_config(cfg)
    if "states" in cfg:
        states = np.asarray(cfg["states"], dtype=float)
        if states.ndim != 2 or states.shape[1] != coeffs.n:
            raise ConfigError(f"states must be a list of {coeffs.n}-vectors")
    else:
        rng = np.random.default_rng(cfg.get("seed", 42))
        states = rng.uniform(0.05, 2.0, size=(cfg.get("samples", 200), coeffs.n))
    if np.any(states <= 0):
        raise ConfigError("states must be strictly positive")
    header = ["state"] + [f"c{i}" for i in range(coeffs.n)] + [f"lambda{i}_M" for i in range(coeffs.n)]
    header += ["min_eig_Mgamma", "coercivity_bound", "min_gamma_rho_lambda2"]
    rows = []
    for k, c in enumerate(states):
        lam, mg = spectral_report(c, coeffs)
        rows.append([k, *c.tolist(), *lam.tolist(), mg, float(coercivity_bound(c, coeffs)), float(gamma_rho_lambda2(c, coeffs))])
    io.write_csv(out / "results.csv", header, rows)
    arr = np.array([r[-3:] for r in rows])
    summary = {
        "experiment": "spectrum",
        "states": len(rows),
        "min_eig_Mgamma_min": float(arr[:, 0].min()),
        "coercivity_bound_holds": bool(np.all(arr[:, 0] >= arr[:, 1] * (1 - 1e-12))),
        "gamma_rho_lambda2_holds": bool(np.all(arr[:, 0] >= arr[:, 2] * (1 - 1e-12))),
    }
    io.write_json(out / "report.json", summary)
    print(json.dumps(summary))
    return 0


RUNNERS = {"convergence": run_convergence, "demo": run_demo, "solve": run_solve, "spectrum": run_spectrum}


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stefan-maxwell", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="JSON configuration (path or bundled name)")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--threads", type=int, default=None, help="limit BLAS threads")
        p.add_argument("--strict", action="store_true", help="treat data inconsistencies as errors")
    sub.add_parser("configs", help="list bundled configurations")
    return parser


def _thread_limit(k):
    if k is None:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("threadpoolctl not installed; --threads ignored")
        return contextlib.nullcontext()
    return threadpool_limits(limits=k)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "configs":
        print("\n".join(bundled_configs()))
        return 0
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if cfg["experiment"] != args.command:
            raise ConfigError(f"configuration is for '{cfg['experiment']}', not '{args.command}'")
        with _thread_limit(args.threads):
            status = RUNNERS[args.command](cfg, out, args.strict)
    except ConfigError as err:
        print(json.dumps(err.to_json()), file=sys.stderr)
        return EXIT_CONFIG
    except ConsistencyError as err:
        print(json.dumps({"error": "inconsistent data", "message": str(err)}), file=sys.stderr)
        return EXIT_CONFIG
    log.info("finished in %.1f s", time.perf_counter() - t0)
    return status


if __name__ == "__main__":
    sys.exit(main())
