"""Order-n lifting of flat triangles onto the exact surface.

Each flat triangle is mapped affinely onto the reference element, its
nodes are pushed onto the surface by closest-point projection, and the
resulting isoparametric map supplies the metric, the volume element and
the tangential differentiation matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import FlatMesh
from .reference import REF_EDGE_DIRECTIONS, REF_EDGE_NORMALS, ReferenceElement
from .surfaces import SurfaceDef, closest_point_project


class GeometryError(RuntimeError):
    pass


class ConformityError(GeometryError):
    pass


@dataclass(eq=False)
class SurfaceElement:
    """Lifted geometry of one element.

    Attributes
    ----------
    node_coords : (N, 3)
        Lifted nodes on the surface.
    jacobian : (N, 3, 2)
        Columns are the ``xi`` and ``eta`` derivatives of the interpolated map.
    metric : (N, 2, 2)
        First fundamental form ``J^T J``.
    volume_element : (N,)
        ``sqrt(det g)``.
    dref_dx : (N, 2, 3)
        Rows ``d(xi)/dx`` and ``d(eta)/dx``, i.e. ``g^{-1} J^T``.
    normals : (N, 3)
        Unit normals of the interpolated surface.
    binormals : (3n, 3)
        Outward binormals at the boundary nodes, in boundary-loop order.
        At the three vertex nodes this is the sum of the two adjacent
        edges' unit binormals.
    """

    element_id: int
    ref: ReferenceElement
    node_coords: np.ndarray
    jacobian: np.ndarray
    metric: np.ndarray
    volume_element: np.ndarray
    dref_dx: np.ndarray
    normals: np.ndarray
    binormals: np.ndarray
    edge_binormals: np.ndarray = field(repr=False)

    @property
    def degree(self) -> int:
        return self.ref.n

    @property
    def surf_deriv(self):
        """Tangential differentiation matrices ``(Dx, Dy, Dz)``."""
        return surface_derivative_matrices(self.ref, self.dref_dx)

    def boundary_coords(self) -> np.ndarray:
        return self.node_coords[self.ref.boundary]

    def flux_matrix(self, surf_deriv=None) -> np.ndarray:
        """Boundary rows of the binormal derivative, shape ``(3n, N)``."""
        dx, dy, dz = self.surf_deriv if surf_deriv is None else surf_deriv
        b = self.ref.boundary
        nb = self.binormals
        return nb[:, 0:1] * dx[b] + nb[:, 1:2] * dy[b] + nb[:, 2:3] * dz[b]


def surface_derivative_matrices(ref: ReferenceElement, dref_dx):
    """``D_j = diag(dxi/dx_j) D_xi + diag(deta/dx_j) D_eta`` for ``j = x, y, z``."""
    return tuple(
        dref_dx[:, 0, j, None] * ref.d_xi + dref_dx[:, 1, j, None] * ref.d_eta
        for j in range(3)
    )


def affine_nodes(ref: ReferenceElement, mesh: FlatMesh, elements=None) -> np.ndarray:
    """Images of the reference nodes under the affine maps, shape ``(T, N, 3)``."""
    tris = mesh.triangles if elements is None else mesh.triangles[elements]
    corners = mesh.vertices[tris]  # (T, 3, 3)
    return np.einsum("nv,tvc->tnc", ref.barycentric, corners)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def lift_elements(ref: ReferenceElement, mesh: FlatMesh, surf: SurfaceDef, elements=None):
    """Lift several elements at once; returns a list of :class:`SurfaceElement`."""
    ids = np.arange(mesh.num_triangles) if elements is None else np.asarray(elements)
    flat = affine_nodes(ref, mesh, ids)
    t, npts, _ = flat.shape
    coords = closest_point_project(surf, flat.reshape(-1, 3)).reshape(t, npts, 3)

    # columns d/dxi and d/deta of each coordinate function
    jac = np.stack(
        [
            np.einsum("ij,tjc->tic", ref.d_xi, coords),
            np.einsum("ij,tjc->tic", ref.d_eta, coords),
        ],
        axis=-1,
    )
    metric = np.einsum("tnci,tncj->tnij", jac, jac)
    det = metric[..., 0, 0] * metric[..., 1, 1] - metric[..., 0, 1] ** 2
    if (det < 1e-20).any():
        e, node = np.argwhere(det < 1e-20)[0]
        raise GeometryError(
            f"degenerate Jacobian on element {ids[e]} at node {node} (det g = {det[e, node]:.3e})"
        )
    ginv = np.empty_like(metric)
    ginv[..., 0, 0] = metric[..., 1, 1] / det
    ginv[..., 1, 1] = metric[..., 0, 0] / det
    ginv[..., 0, 1] = ginv[..., 1, 0] = -metric[..., 0, 1] / det
    dref_dx = np.einsum("tnij,tncj->tnic", ginv, jac)
    normals = _unit(np.cross(jac[..., 0], jac[..., 1]))

    # binormals along each reference edge at the boundary nodes
    b = ref.boundary
    jb = jac[:, b]  # (T, 3n, 3, 2)
    nb_normals = normals[:, b]
    edge_bn = np.empty((t, 3, len(b), 3))
    for e in range(3):
        tangent = np.einsum("tpcj,j->tpc", jb, REF_EDGE_DIRECTIONS[e])
        bn = _unit(np.cross(tangent, nb_normals))
        outward = np.einsum("tpcj,j->tpc", jb, REF_EDGE_NORMALS[e])
        flip = np.einsum("tpc,tpc->tp", bn, outward) < 0
        edge_bn[:, e] = np.where(flip[..., None], -bn, bn)

    n = ref.n
    pos = np.arange(len(b))
    binormals = edge_bn[:, ref.boundary_edge, pos]
    for k in range(3):
        # vertex k ends edge k-1 and starts edge k
        binormals[:, k * n] = edge_bn[:, k, k * n] + edge_bn[:, (k - 1) % 3, k * n]

    return [
        SurfaceElement(
            element_id=int(ids[e]),
            ref=ref,
            node_coords=coords[e],
            jacobian=jac[e],
            metric=metric[e],
            volume_element=np.sqrt(det[e]),
            dref_dx=dref_dx[e],
            normals=normals[e],
            binormals=binormals[e],
            edge_binormals=edge_bn[e],
        )
        for e in range(t)
    ]


def lift_element(ref: ReferenceElement, mesh: FlatMesh, surf: SurfaceDef, k: int) -> SurfaceElement:
    if not 0 <= k < mesh.num_triangles:
        raise IndexError(f"element id {k} out of range for mesh with {mesh.num_triangles} triangles")
    return lift_elements(ref, mesh, surf, [k])[0]


# {{{ connectivity of lifted nodes

def shared_edge(mesh: FlatMesh, t1: int, t2: int):
    """Local edge numbers ``(k1, k2)`` of the edge shared by two triangles."""
    common = set(mesh.tri_edges[t1].tolist()) & set(mesh.tri_edges[t2].tolist())
    if not common:
        raise ValueError(f"triangles {t1} and {t2} do not share an edge")
    e = common.pop()
    k1 = int(np.flatnonzero(mesh.tri_edges[t1] == e)[0])
    k2 = int(np.flatnonzero(mesh.tri_edges[t2] == e)[0])
    return k1, k2


def edge_positions(n: int, k: int) -> np.ndarray:
    """Boundary-loop positions of the ``n + 1`` nodes on local edge *k*."""
    return (k * n + np.arange(n + 1)) % (3 * n)


def interface_node_map(e1: SurfaceElement, e2: SurfaceElement, mesh: FlatMesh, tol=1e-8):
    """Pair the boundary nodes of two elements along their shared edge.

    Returns an ``(n + 1, 2)`` array of boundary-loop positions; row ``r``
    holds matching positions in ``e1`` and ``e2``.
    """
    n = e1.degree
    k1, k2 = shared_edge(mesh, e1.element_id, e2.element_id)
    p1 = edge_positions(n, k1)
    p2 = edge_positions(n, k2)
    a = mesh.triangles[e1.element_id]
    b = mesh.triangles[e2.element_id]
    if a[k1] == b[k2]:
        pairs = np.stack([p1, p2], axis=1)
    else:
        pairs = np.stack([p1, p2[::-1]], axis=1)
    x1 = e1.boundary_coords()[pairs[:, 0]]
    x2 = e2.boundary_coords()[pairs[:, 1]]
    dist = np.linalg.norm(x1 - x2, axis=1)
    if dist.max() > tol:
        raise ConformityError(
            f"elements {e1.element_id} and {e2.element_id} do not conform on their shared edge "
            f"(max node distance {dist.max():.3e})"
        )
    return pairs


@dataclass(eq=False)
class NodeNumbering:
    """Global numbering of physical nodes.

    ``ids[t, m]`` is the physical point carried by node ``m`` of element
    ``t``.  Points ``0 .. num_boundary_points-1`` lie on element
    boundaries (vertices first, then edge nodes); the rest are element
    interiors.
    """

    ids: np.ndarray
    boundary_ids: np.ndarray
    num_points: int
    num_boundary_points: int
    on_mesh_boundary: np.ndarray
    multiplicity: np.ndarray


def number_nodes(mesh: FlatMesh, ref: ReferenceElement) -> NodeNumbering:
    n = ref.n
    nv = len(mesh.vertices)
    ne = len(mesh.edges)
    tris = mesh.triangles
    t = len(tris)

    bids = np.empty((t, 3 * n), dtype=np.int64)
    for k in range(3):
        a = tris[:, k]
        b = tris[:, (k + 1) % 3]
        bids[:, k * n] = a
        e = mesh.tri_edges[:, k]
        forward = a < b
        for s in range(1, n):
            sp = np.where(forward, s, n - s)
            bids[:, k * n + s] = nv + e * (n - 1) + (sp - 1)
    nb = nv + ne * (n - 1)

    ids = np.empty((t, ref.num_nodes), dtype=np.int64)
    ids[:, ref.boundary] = bids
    nint = len(ref.interior)
    ids[:, ref.interior] = nb + np.arange(t * nint).reshape(t, nint)

    on_bnd = np.zeros(nb, dtype=bool)
    if len(mesh.boundary_edges):
        on_bnd[mesh.boundary_vertices()] = True
        for e in mesh.boundary_edges:
            on_bnd[nv + e * (n - 1) + np.arange(n - 1)] = True
    mult = np.bincount(bids.ravel(), minlength=nb)
    return NodeNumbering(
        ids=ids,
        boundary_ids=bids,
        num_points=nb + t * nint,
        num_boundary_points=nb,
        on_mesh_boundary=on_bnd,
        multiplicity=mult,
    )


def check_conformity(elements, numbering: NodeNumbering, tol=1e-8) -> float:
    """Max distance between element nodes carrying the same global id."""
    coords = np.concatenate([el.boundary_coords() for el in elements])
    ids = numbering.boundary_ids.ravel()
    ref_pts = np.zeros((numbering.num_boundary_points, 3))
    ref_pts[ids] = coords
    dist = np.linalg.norm(coords - ref_pts[ids], axis=1).max()
    if dist > tol:
        raise ConformityError(f"lifted nodes of adjacent elements disagree by {dist:.3e}")
    return float(dist)

# }}}


# {{{ measures

def quadrature_weights(ref: ReferenceElement) -> np.ndarray:
    """Nodal weights integrating the degree-n interpolant over the reference triangle."""
    # only Phi_00 = sqrt(2) has a nonzero integral (1/sqrt(2))
    e0 = np.zeros(ref.num_nodes)
    e0[0] = 1.0 / np.sqrt(2.0)
    return ref.to_modal(np.eye(ref.num_nodes)).T @ e0


def surface_integral(elements, values) -> float:
    """Integrate per-element nodal *values* over the lifted surface."""
    w = quadrature_weights(elements[0].ref)
    return float(
        sum(w @ (np.asarray(v) * el.volume_element) for el, v in zip(elements, values))
    )


def mesh_size(elements) -> float:
    """Longest chord between lifted element vertices."""
    ref = elements[0].ref
    vpos = ref.boundary[ref.vertex_positions]
    h = 0.0
    for el in elements:
        c = el.node_coords[vpos]
        d = np.linalg.norm(c - np.roll(c, 1, axis=0), axis=1).max()
        h = max(h, d)
    return float(h)

# }}}
