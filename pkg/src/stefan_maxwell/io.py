"""File output: atomic writes, legacy VTK, CSV and JSON helpers."""

from __future__ import annotations

import contextlib
import csv
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fespace import Field
from .mesh import TriMesh

VTK_TRIANGLE = 5


@contextlib.contextmanager
def atomic_path(target):
    """Yield a temporary path next to ``target``; rename onto it on success."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, target)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text_atomic(target, text: str) -> Path:
    with atomic_path(target) as tmp:
        Path(tmp).write_text(text)
    return Path(target)


def write_json(target, obj) -> Path:
    return write_text_atomic(target, json.dumps(obj, indent=2, sort_keys=False) + "\n")


def write_csv(target, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with atomic_path(target) as tmp:
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    return Path(target)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_vtk(
    target,
    mesh: TriMesh,
    point_data: Mapping[str, np.ndarray] | None = None,
    cell_data: Mapping[str, np.ndarray] | None = None,
    title: str = "stefan_maxwell",
) -> Path:
    """Legacy ASCII VTK (version 2.0) unstructured grid of triangles.

    Arrays of shape (N,) are written as SCALARS, shape (N, 2) as VECTORS with
    a zero third component.
    """
    nv, nc = mesh.n_vertices, mesh.n_cells
    lines = ["# vtk DataFile Version 2.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {nv} double")
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices.tolist()]
    lines.append(f"CELLS {nc} {4 * nc}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.cells.tolist()]
    lines.append(f"CELL_TYPES {nc}")
    lines += [str(VTK_TRIANGLE)] * nc
    for header, count, data in (("POINT_DATA", nv, point_data), ("CELL_DATA", nc, cell_data)):
        if not data:
            continue
        lines.append(f"{header} {count}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape[0] != count:
                raise ValueError(f"{name}: expected {count} values, got {arr.shape[0]}")
            key = name.replace(" ", "_")
            if arr.ndim == 1:
                lines.append(f"SCALARS {key} double 1")
                lines.append("LOOKUP_TABLE default")
                lines += [repr(v) for v in arr.tolist()]
            else:
                lines.append(f"VECTORS {key} double")
                lines += [f"{a!r} {b!r} 0.0" for a, b in arr.tolist()]
    return write_text_atomic(target, "\n".join(lines) + "\n")


def field_point_values(f: Field) -> np.ndarray:
    """Vertex values of a CG field (the first n_vertices DOFs)."""
    return f.coefficients[: f.space.mesh.n_vertices]


def field_cell_values(f: Field) -> np.ndarray:
    """Cell averages of a DG vector field, shape (K, 2)."""
    return f.cell_coefficients().mean(axis=1)


def write_solution_vtk(target, concentrations: Sequence[Field], velocities: Sequence[Field], names=None) -> Path:
    mesh = concentrations[0].space.mesh
    names = names or [f"species{i}" for i in range(len(concentrations))]
    pdata = {f"c_{nm}": field_point_values(c) for nm, c in zip(names, concentrations)}
    pdata["c_total"] = sum(pdata.values())
    cdata = {f"v_{nm}": field_cell_values(v) for nm, v in zip(names, velocities)}
    return write_vtk(target, mesh, pdata, cdata)
