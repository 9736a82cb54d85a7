"""Writers for solution snapshots (legacy ASCII VTK) and tables (CSV)."""

from __future__ import annotations

import csv
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from .reference import ReferenceElement


@lru_cache(maxsize=None)
def _subtriangles(n: int, ref_nodes_key: bytes) -> np.ndarray:
    nodes = np.frombuffer(ref_nodes_key).reshape(-1, 2)
    tri = Delaunay(nodes).simplices
    a, b, c = (nodes[tri[:, k]] for k in range(3))
    area = (b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0]
    tri = tri[area > 1e-14]
    flip = area[area > 1e-14] < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    return tri


def reference_subtriangulation(ref: ReferenceElement) -> np.ndarray:
    """Counter-clockwise triangulation of the reference nodes."""
    return _subtriangles(ref.n, np.ascontiguousarray(ref.nodes, dtype=float).tobytes())


def write_vtk(path, node_coords, ref: ReferenceElement, fields: dict, title: str = "thps solution"):
    """Write element point clouds and their subdivision as an unstructured grid.

    *node_coords* has shape ``(T, N, 3)``; each entry of *fields* is a
    nodal array ``(T, N)``.
    """
    node_coords = np.asarray(node_coords, dtype=float)
    t, npts, _ = node_coords.shape
    sub = reference_subtriangulation(ref)
    cells = (sub[None, :, :] + npts * np.arange(t)[:, None, None]).reshape(-1, 3)
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {t * npts} double\n")
        np.savetxt(fh, node_coords.reshape(-1, 3), fmt="%.17g")
        fh.write(f"CELLS {len(cells)} {4 * len(cells)}\n")
        np.savetxt(fh, np.column_stack([np.full(len(cells), 3), cells]), fmt="%d")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        np.savetxt(fh, np.full(len(cells), 5), fmt="%d")
        fh.write(f"POINT_DATA {t * npts}\n")
        for name, values in fields.items():
            values = np.asarray(values, dtype=float).reshape(-1)
            if values.size != t * npts:
                raise ValueError(f"field {name!r} has {values.size} values, expected {t * npts}")
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, values, fmt="%.17g")
    return path


def read_vtk_points(path) -> tuple[np.ndarray, dict]:
    """Read back points and scalar fields of a file written by :func:`write_vtk`."""
    lines = Path(path).read_text().splitlines()
    i = 0
    pts = None
    out = {}
    while i < len(lines):
        words = lines[i].split()
        if words and words[0] == "POINTS":
            m = int(words[1])
            pts = np.loadtxt(lines[i + 1 : i + 1 + m]).reshape(m, 3)
            i += m
        elif words and words[0] == "SCALARS":
            m = len(pts)
            out[words[1]] = np.loadtxt(lines[i + 2 : i + 2 + m]).reshape(m)
            i += m + 1
        i += 1
    return pts, out


def write_csv(path, rows, columns):
    """Write dict rows with a fixed column order; floats keep full precision."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value
