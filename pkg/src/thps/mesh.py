"""Flat triangle meshes: file readers, builtin generators and validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(eq=False)
class FlatMesh:
    """Piecewise-flat triangulation with edge adjacency.

    Attributes
    ----------
    vertices : (V, 3) float array
    triangles : (T, 3) int array
    edges : (E, 2) int array, each row sorted ascending
    tri_edges : (T, 3) int array
        ``tri_edges[t, k]`` is the edge from local vertex ``k`` to ``k + 1``.
    edge_tris : list of lists
        For each edge the incident ``(triangle, local_edge)`` pairs.
    boundary_edges : int array of edges with a single incident triangle
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(init=False)
    tri_edges: np.ndarray = field(init=False)
    edge_tris: list = field(init=False)
    boundary_edges: np.ndarray = field(init=False)
    name: str = ""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be an (T, 3) index array")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise MeshError("triangle references a vertex index out of range")
        for t, tri in enumerate(self.triangles):
            if len(set(tri.tolist())) != 3:
                raise MeshError(f"triangle {t} has repeated vertices {tri.tolist()}")
        self._build_adjacency()

    def _build_adjacency(self):
        tris = self.triangles
        directed = np.stack(
            [tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=1
        ).reshape(-1, 2)
        keys = np.sort(directed, axis=1)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        self.edges = edges
        self.tri_edges = inverse.reshape(-1, 3)

        edge_tris = [[] for _ in range(len(edges))]
        for flat, e in enumerate(inverse):
            edge_tris[e].append((flat // 3, flat % 3))
        self.edge_tris = edge_tris

        counts = np.array([len(x) for x in edge_tris])
        if (counts > 2).any():
            e = int(np.flatnonzero(counts > 2)[0])
            raise MeshError(
                f"non-manifold edge {edges[e].tolist()} shared by {counts[e]} triangles"
            )
        for e in np.flatnonzero(counts == 2):
            (t1, k1), (t2, k2) = edge_tris[e]
            d1 = directed[3 * t1 + k1]
            d2 = directed[3 * t2 + k2]
            if d1[0] == d2[0]:
                raise MeshError(
                    f"inconsistent orientation across edge {edges[e].tolist()} "
                    f"(triangles {t1} and {t2})"
                )
        self.boundary_edges = np.flatnonzero(counts == 1)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def is_closed(self) -> bool:
        return len(self.boundary_edges) == 0

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges])

    def neighbors(self) -> list[list[int]]:
        """Edge-adjacent triangles of every triangle."""
        nbrs = [[] for _ in range(self.num_triangles)]
        for pairs in self.edge_tris:
            if len(pairs) == 2:
                (a, _), (b, _) = pairs
                nbrs[a].append(b)
                nbrs[b].append(a)
        return nbrs

    def connected_components(self) -> list[np.ndarray]:
        nbrs = self.neighbors()
        label = -np.ones(self.num_triangles, dtype=int)
        comps = []
        for seed in range(self.num_triangles):
            if label[seed] >= 0:
                continue
            stack = [seed]
            label[seed] = len(comps)
            members = []
            while stack:
                t = stack.pop()
                members.append(t)
                for u in nbrs[t]:
                    if label[u] < 0:
                        label[u] = len(comps)
                        stack.append(u)
            comps.append(np.sort(members))
        return comps

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)


# {{{ file readers

def _data_lines(text):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def read_off(path) -> FlatMesh:
    lines = _data_lines(Path(path).read_text())
    header = next(lines)
    if header.startswith("OFF"):
        rest = header[3:].split()
        counts = rest if rest else next(lines).split()
    else:
        raise MeshError(f"{path}: missing OFF header")
    nv, nf = int(counts[0]), int(counts[1])
    verts = [list(map(float, next(lines).split()[:3])) for _ in range(nv)]
    faces = []
    for _ in range(nf):
        tok = next(lines).split()
        k = int(tok[0])
        if k != 3:
            raise MeshError(f"{path}: face with {k} vertices; only triangles supported")
        faces.append([int(t) for t in tok[1:4]])
    return FlatMesh(np.array(verts), np.array(faces), name=Path(path).name)


def read_obj(path) -> FlatMesh:
    verts, faces = [], []
    for line in _data_lines(Path(path).read_text()):
        tok = line.split()
        if tok[0] == "v":
            verts.append([float(t) for t in tok[1:4]])
        elif tok[0] == "f":
            idx = [int(t.split("/")[0]) for t in tok[1:]]
            if len(idx) != 3:
                raise MeshError(f"{path}: face with {len(idx)} vertices; only triangles supported")
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return FlatMesh(np.array(verts), np.array(faces), name=Path(path).name)


def write_off(mesh: FlatMesh, path):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(mesh.vertices)} {len(mesh.triangles)} 0\n")
        for v in mesh.vertices:
            fh.write(" ".join(repr(float(c)) for c in v[:3]) + "\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")

# }}}


# {{{ builtin generators

def _subdivide(verts, tris, project):
    verts = [np.asarray(v, dtype=float) for v in verts]
    cache = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in cache:
            verts.append(project(0.5 * (verts[a] + verts[b])))
            cache[key] = len(verts) - 1
        return cache[key]

    out = []
    for a, b, c in tris:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    return np.array(verts), out


def icosphere(subdivisions: int = 0, radius: float = 1.0) -> FlatMesh:
    """Subdivided icosahedron with vertices on the sphere of *radius*."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    tris = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]

    def project(v):
        return radius * v / np.linalg.norm(v)

    verts = np.array([project(v) for v in verts])
    for _ in range(subdivisions):
        verts, tris = _subdivide(verts, tris, project)
    return FlatMesh(verts, np.array(tris), name=f"icosphere:{subdivisions}:{radius:g}")


def hemisphere(subdivisions: int = 0, radius: float = 1.0) -> FlatMesh:
    """Upper half of a subdivided octahedron; the boundary is the equator."""
    verts = np.array(
        [[1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0], [0, 0, 1]], dtype=float
    )
    tris = [(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)]

    def project(v):
        return radius * v / np.linalg.norm(v)

    verts = radius * verts
    for _ in range(subdivisions):
        verts, tris = _subdivide(verts, tris, project)
    return FlatMesh(verts, np.array(tris), name=f"hemisphere:{subdivisions}")


def flat_patch(kind: str = "square") -> FlatMesh:
    """Small flat test meshes in the plane ``z = 0``."""
    if kind == "triangle":
        return FlatMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], name="triangle")
    if kind == "square":
        return FlatMesh(
            [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]],
            [[0, 1, 2], [0, 2, 3]],
            name="square",
        )
    if kind == "fan":
        # four triangles around an interior vertex
        return FlatMesh(
            [[0, 0, 0], [1, 0, 0], [0.1, 1, 0], [-1, 0.1, 0], [0, -1, 0]],
            [[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]],
            name="fan",
        )
    if kind == "strip":
        # 2x2 square split into 8 triangles, one interior vertex of degree 8
        v = np.array([[x, y, 0.0] for y in range(3) for x in range(3)]) * 0.5
        tris = []
        for j in range(2):
            for i in range(2):
                a = 3 * j + i
                b, c, d = a + 1, a + 4, a + 3
                if (i + j) % 2 == 0:
                    tris += [(a, b, c), (a, c, d)]
                else:
                    tris += [(a, b, d), (b, c, d)]
        return FlatMesh(v, np.array(tris), name="strip")
    raise MeshError(f"unknown flat patch {kind!r}")


def implicit_mesh(name: str, resolution: int = 24) -> FlatMesh:
    """Triangulate a catalogue implicit surface by marching cubes.

    Vertices are projected onto the zero set afterwards so the flat mesh
    interpolates the exact surface at its corners.
    """
    from skimage.measure import marching_cubes

    from .surfaces import IMPLICIT_CATALOGUE, SurfaceDef, closest_point_project

    surf = SurfaceDef.implicit(name)
    lo, hi = IMPLICIT_CATALOGUE[name][1]
    g = np.linspace(lo, hi, resolution)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    vol = surf.value(np.stack([X, Y, Z], axis=-1))
    spacing = (g[1] - g[0],) * 3
    verts, faces, _, _ = marching_cubes(vol, 0.0, spacing=spacing, allow_degenerate=False)
    verts = verts + lo
    verts, faces = _weld(verts, faces)
    verts = closest_point_project(surf, verts)
    return FlatMesh(verts, faces, name=f"implicit:{name}")


def _weld(verts, faces, tol=1e-9):
    key = np.round(verts / tol).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    faces = inverse.reshape(-1)[faces]
    good = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces = faces[good]
    used, faces = np.unique(faces, return_inverse=True)
    return verts[first][used], faces.reshape(-1, 3)

# }}}


def load_mesh(source: str) -> FlatMesh:
    """Load a mesh from an OFF/OBJ file or a builtin generator spec.

    Builtin specs: ``icosphere:<subdiv>[:<radius>]``, ``hemisphere:<subdiv>``,
    ``implicit:<name>[:<resolution>]`` and ``flat:<square|triangle|fan|strip>``.
    """
    parts = str(source).split(":")
    kind = parts[0]
    try:
        if kind == "icosphere":
            sub = int(parts[1]) if len(parts) > 1 else 0
            radius = float(parts[2]) if len(parts) > 2 else 1.0
            return icosphere(sub, radius)
        if kind == "hemisphere":
            return hemisphere(int(parts[1]) if len(parts) > 1 else 0)
        if kind == "implicit":
            res = int(parts[2]) if len(parts) > 2 else 24
            return implicit_mesh(parts[1], res)
        if kind == "flat":
            return flat_patch(parts[1] if len(parts) > 1 else "square")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"cannot parse mesh spec {source!r}: {exc}") from None

    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {source}")
    suffix = path.suffix.lower()
    if suffix == ".off":
        return read_off(path)
    if suffix == ".obj":
        return read_obj(path)
    raise MeshError(f"unsupported mesh format {suffix!r} (expected .off or .obj)")
