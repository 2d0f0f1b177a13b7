"""Legacy ASCII VTK writers (unstructured grids and point clouds)."""
from __future__ import annotations

import numpy as np

from .mesh import Mesh

_CELL_TYPE = {"tri3": 5, "tet4": 10}


def _num(x) -> str:
    return repr(float(x))


def _data_block(fields: dict, n: int) -> list[str]:
    out = []
    for name, values in fields.items():
        a = np.asarray(values, dtype=float)
        if a.shape == (n,):
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [_num(v) for v in a]
        elif a.shape == (n, 3):
            out.append(f"VECTORS {name} double")
            out += [" ".join(_num(v) for v in row) for row in a]
        else:
            raise ValueError(f"field {name!r} has shape {a.shape}, expected ({n},) or ({n}, 3)")
    return out


def format_vtk(mesh: Mesh, point_data: dict | None = None, cell_data: dict | None = None, title: str = "weakfind") -> str:
    k = mesh.nodes_per_element
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines += [" ".join(_num(v) for v in p) for p in mesh.nodes]
    lines.append(f"CELLS {mesh.n_elements} {mesh.n_elements * (k + 1)}")
    lines += [f"{k} " + " ".join(str(n) for n in cell) for cell in mesh.elements.tolist()]
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines += [str(_CELL_TYPE[mesh.kind])] * mesh.n_elements
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        lines += _data_block(point_data, mesh.n_nodes)
    if cell_data:
        lines.append(f"CELL_DATA {mesh.n_elements}")
        lines += _data_block(cell_data, mesh.n_elements)
    return "\n".join(lines) + "\n"


def format_vtk_points(points, point_data: dict | None = None, title: str = "weakfind sensors") -> str:
    """Point cloud as VTK_VERTEX cells, e.g. sensor locations with misfits."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {n} double")
    lines += [" ".join(_num(v) for v in p) for p in pts]
    lines.append(f"CELLS {n} {2 * n}")
    lines += [f"1 {i}" for i in range(n)]
    lines.append(f"CELL_TYPES {n}")
    lines += ["1"] * n
    if point_data:
        lines.append(f"POINT_DATA {n}")
        lines += _data_block(point_data, n)
    return "\n".join(lines) + "\n"


def write_vtk(path, mesh: Mesh, point_data=None, cell_data=None, title: str = "weakfind") -> None:
    with open(path, "w") as fh:
        fh.write(format_vtk(mesh, point_data, cell_data, title))
