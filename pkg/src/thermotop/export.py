"""Result export: legacy ASCII VTK and CSV run logs.

Files are written to a temporary sibling and renamed into place, so a reader
never sees a half-written file.  Numbers carry 9 significant digits, which
makes re-exports of the same state byte-identical.

VTK layout: every grid element is a ``VTK_HEXAHEDRON`` cell.  Cell data
``solid`` (1/0) and ``von_mises`` (Pa, zero on void cells); point data
``displacement`` (m) and ``temperature`` (C).
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path

import numpy as np

from .fea import Fields
from .grid import DesignState, VoxelGrid
from .qoi import von_mises

VTK_HEXAHEDRON = 12


def _fmt(values: np.ndarray) -> str:
    return "\n".join(" ".join(f"{v:.9g}" for v in row) for row in np.atleast_2d(values))


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def vtk_text(grid: VoxelGrid, design: DesignState, fields: Fields, title: str = "thermotop result") -> str:
    n_pts, n_cells = grid.n_nodes, grid.n_elements
    solid = design.solid
    vm = np.where(solid, von_mises(fields.stress), 0.0)
    cells = np.hstack([np.full((n_cells, 1), 8), grid.element_nodes])
    parts = [
        "# vtk DataFile Version 3.0",
        title.splitlines()[0][:255] if title else "thermotop result",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n_pts} double",
        _fmt(grid.node_coords),
        f"CELLS {n_cells} {9 * n_cells}",
        "\n".join(" ".join(map(str, row)) for row in cells),
        f"CELL_TYPES {n_cells}",
        "\n".join([str(VTK_HEXAHEDRON)] * n_cells),
        f"CELL_DATA {n_cells}",
        "SCALARS solid int 1",
        "LOOKUP_TABLE default",
        "\n".join("1" if s else "0" for s in solid),
        "SCALARS von_mises double 1",
        "LOOKUP_TABLE default",
        _fmt(vm[:, None]),
        f"POINT_DATA {n_pts}",
        "VECTORS displacement double",
        _fmt(fields.d.reshape(-1, 3)),
        "SCALARS temperature double 1",
        "LOOKUP_TABLE default",
        _fmt(fields.t[:, None]),
    ]
    return "\n".join(parts) + "\n"


def export_vtk(grid: VoxelGrid, design: DesignState, fields: Fields, path, title: str = "thermotop result") -> Path:
    """Write the design and its solved fields as a legacy VTK file."""
    if design.n_elements != grid.n_elements or fields.d.size != grid.n_dofs or fields.t.size != grid.n_nodes:
        raise ValueError("grid, design and fields are inconsistent")
    path = Path(path)
    if not path.parent.exists():
        raise OSError(f"directory {str(path.parent)!r} does not exist")
    _atomic_write(path, vtk_text(grid, design, fields, title))
    return path


def write_run_log(record, path) -> Path:
    """CSV of the accepted volume steps of a run (one row per step)."""
    buf = io.StringIO()
    cols = record.columns()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in record.rows:
        w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in r.items()})
    _atomic_write(path, buf.getvalue())
    return Path(path)
