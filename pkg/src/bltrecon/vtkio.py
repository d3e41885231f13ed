"""Legacy VTK ASCII export for meshes and nodal fields."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh

__all__ = ["write_vtk"]


def write_vtk(path, mesh: TriMesh, point_data: dict | None = None,
              cell_data: dict | None = None, title: str = "bltrecon") -> None:
    """Write mesh (and optional per-vertex / per-element scalars) as legacy VTK.

    Triangle cells in an UNSTRUCTURED_GRID; each entry of ``point_data`` /
    ``cell_data`` maps a field name to a flat array of the right length.
    """
    nv = mesh.vertex_count
    ne = mesh.element_count
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    for x, y in mesh.vertices:
        lines.append(f"{x:.12g} {y:.12g} 0")
    lines.append(f"CELLS {ne} {4 * ne}")
    for a, b, c in mesh.elements:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {ne}")
    lines.extend(["5"] * ne)

    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, arr in point_data.items():
            arr = np.asarray(arr, dtype=float).ravel()
            if arr.size != nv:
                raise ValueError(f"point data '{name}' has size {arr.size}, expected {nv}")
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.12g}" for v in arr)
    if cell_data:
        lines.append(f"CELL_DATA {ne}")
        for name, arr in cell_data.items():
            arr = np.asarray(arr, dtype=float).ravel()
            if arr.size != ne:
                raise ValueError(f"cell data '{name}' has size {arr.size}, expected {ne}")
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.12g}" for v in arr)

    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
