"""Hierarchical merging of element DtN maps into a direct solver.

Clusters of elements are glued pairwise along a binary tree.  Each
cluster is described by its exterior points (unique physical nodes on
the cluster boundary), a Dirichlet-to-Neumann map on those points and the
particular flux of the current forcing.  Merging two clusters eliminates
the points that become enclosed, enforcing that the summed element rows
vanish there: outward binormal fluxes along edges, scaled PDE residuals at
mesh vertices (see :func:`thps.leaf.build_leaf`).  A point touched by
several elements of one cluster carries the sum of their rows.
"""

from __future__ import annotations

import heapq
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .geometry import (
    NodeNumbering,
    check_conformity,
    lift_elements,
    number_nodes,
    quadrature_weights,
)
from .leaf import PdeCoefficients, assemble_operator, build_leaf, sample_forcing
from .mesh import FlatMesh, MeshError
from .reference import ReferenceElement, build_reference_element
from .surfaces import SurfaceDef


class MergeError(np.linalg.LinAlgError):
    pass


REGULARIZATIONS = ("auto", "none", "mean-zero", "pin-node")


# {{{ plan

@dataclass(eq=False)
class PlanNode:
    index: int
    elements: np.ndarray
    points: np.ndarray
    counts: np.ndarray
    children: tuple | None = None
    interface: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    child_maps: tuple = ()
    height: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def element(self) -> int:
        return int(self.elements[0])


@dataclass(eq=False)
class MergePlan:
    """Binary merge tree; ``nodes`` are stored children-before-parents."""

    nodes: list
    numbering: NodeNumbering
    leaf_of_element: np.ndarray

    @property
    def root(self) -> PlanNode:
        return self.nodes[-1]

    @property
    def depth(self) -> int:
        return self.root.height

    def levels(self):
        """Node indices grouped by height (leaves first)."""
        out = [[] for _ in range(self.depth + 1)]
        for node in self.nodes:
            out[node.height].append(node.index)
        return out

    def check(self):
        """Verify the bookkeeping invariants of every merge node."""
        for node in self.nodes:
            if node.is_leaf:
                continue
            ne, ns = len(node.points), len(node.interface)
            covered = np.zeros(ne + ns, dtype=int)
            for cmap in node.child_maps:
                covered[cmap] += 1
            if (covered == 0).any():
                raise AssertionError(f"node {node.index}: merged point not fed by any child")
            if (covered[ne:] != 2).any():
                raise AssertionError(f"node {node.index}: interface point not shared by both children")
            if np.intersect1d(node.points, node.interface).size:
                raise AssertionError(f"node {node.index}: interface and exterior overlap")


def _split(cluster, centroids, nbrs):
    """Split a connected cluster into two connected halves."""
    members = set(cluster.tolist())
    pts = centroids[cluster]
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axis = vt[0]
    proj = dict(zip(cluster.tolist(), (centered @ axis).tolist()))

    seed = min(cluster.tolist(), key=lambda t: (proj[t], t))
    target = len(cluster) // 2
    side_a = {seed}
    heap = []
    for u in nbrs[seed]:
        if u in members:
            heapq.heappush(heap, (proj[u], u))
    while len(side_a) < target and heap:
        _, t = heapq.heappop(heap)
        if t in side_a:
            continue
        side_a.add(t)
        for u in nbrs[t]:
            if u in members and u not in side_a:
                heapq.heappush(heap, (proj[u], u))

    side_b = members - side_a
    comps = _components(side_b, nbrs)
    if len(comps) > 1:
        comps.sort(key=lambda c: (-len(c), min(c)))
        for extra in comps[1:]:
            side_a |= extra
        side_b = comps[0]
    return np.array(sorted(side_a)), np.array(sorted(side_b))


def _components(subset, nbrs):
    left = set(subset)
    comps = []
    while left:
        start = min(left)
        stack, comp = [start], {start}
        left.discard(start)
        while stack:
            t = stack.pop()
            for u in nbrs[t]:
                if u in left:
                    left.discard(u)
                    comp.add(u)
                    stack.append(u)
        comps.append(comp)
    return comps


def build_merge_plan(mesh: FlatMesh, ref: ReferenceElement, numbering: NodeNumbering | None = None) -> MergePlan:
    """Balanced binary tree of edge-adjacent clusters with interface bookkeeping."""
    comps = mesh.connected_components()
    if len(comps) > 1:
        desc = "; ".join(f"{len(c)} elements starting at {int(c[0])}" for c in comps)
        raise MeshError(f"mesh is disconnected into {len(comps)} components: {desc}")
    if numbering is None:
        numbering = number_nodes(mesh, ref)
    nbrs = mesh.neighbors()
    centroids = mesh.centroids()
    mult = numbering.multiplicity
    on_bnd = numbering.on_mesh_boundary

    nodes: list[PlanNode] = []
    leaf_of = np.empty(mesh.num_triangles, dtype=np.int64)

    def merge(a: PlanNode, b: PlanNode) -> PlanNode:
        allp = np.concatenate([a.points, b.points])
        uniq, first, inv = np.unique(allp, return_index=True, return_inverse=True)
        cnt = np.bincount(inv, weights=np.concatenate([a.counts, b.counts])).astype(np.int64)
        enclosed = (cnt == mult[uniq]) & ~on_bnd[uniq]
        order = np.argsort(first, kind="stable")
        ext = order[~enclosed[order]]
        itf = order[enclosed[order]]
        pos = np.empty(len(uniq), dtype=np.int64)
        pos[ext] = np.arange(len(ext))
        pos[itf] = len(ext) + np.arange(len(itf))
        na = len(a.points)
        return PlanNode(
            index=len(nodes),
            elements=np.concatenate([a.elements, b.elements]),
            points=uniq[ext],
            counts=cnt[ext],
            children=(a.index, b.index),
            interface=uniq[itf],
            child_maps=(pos[inv[:na]], pos[inv[na:]]),
            height=max(a.height, b.height) + 1,
        )

    def build(cluster) -> PlanNode:
        if len(cluster) == 1:
            t = int(cluster[0])
            node = PlanNode(
                index=len(nodes),
                elements=cluster.copy(),
                points=numbering.boundary_ids[t].copy(),
                counts=np.ones(numbering.boundary_ids.shape[1], dtype=np.int64),
            )
            leaf_of[t] = node.index
            nodes.append(node)
            return node
        a_ids, b_ids = _split(cluster, centroids, nbrs)
        a = build(a_ids)
        b = build(b_ids)
        node = merge(a, b)
        nodes.append(node)
        return node

    build(np.arange(mesh.num_triangles))
    return MergePlan(nodes=nodes, numbering=numbering, leaf_of_element=leaf_of)

# }}}


# {{{ discretization

@dataclass(eq=False)
class Discretization:
    """Mesh, lifted elements, global numbering and merge plan for one degree."""

    mesh: FlatMesh
    surf: SurfaceDef
    ref: ReferenceElement
    elements: list
    numbering: NodeNumbering
    plan: MergePlan
    conformity: float

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    @property
    def degree(self) -> int:
        return self.ref.n

    @property
    def dof(self) -> int:
        return self.numbering.num_points

    def node_coords(self) -> np.ndarray:
        return np.stack([el.node_coords for el in self.elements])

    def sample(self, func) -> np.ndarray:
        """Nodal values ``(T, N)`` of a callable, scalar or array."""
        if callable(func):
            return np.asarray(func(self.node_coords().reshape(-1, 3)), dtype=float).reshape(
                self.num_elements, -1
            )
        return np.broadcast_to(np.asarray(func, dtype=float), (self.num_elements, self.ref.num_nodes)).copy()

    def integrate(self, nodal) -> float:
        w = quadrature_weights(self.ref)
        vol = np.stack([el.volume_element for el in self.elements])
        return float(np.einsum("n,tn,tn->", w, vol, np.asarray(nodal)))

    def area(self) -> float:
        return self.integrate(np.ones((self.num_elements, self.ref.num_nodes)))

    def root_boundary_coords(self) -> np.ndarray:
        """Coordinates of the exterior points of the whole mesh, in solve order."""
        pts = self.plan.root.points
        return self.point_coords()[pts]

    def point_coords(self) -> np.ndarray:
        """Coordinates of every global point id."""
        out = np.empty((self.numbering.num_points, 3))
        out[self.numbering.ids.ravel()] = self.node_coords().reshape(-1, 3)
        return out


def discretize(mesh: FlatMesh, surf: SurfaceDef, n: int) -> Discretization:
    ref = build_reference_element(n)
    elements = lift_elements(ref, mesh, surf)
    numbering = number_nodes(mesh, ref)
    conf = check_conformity(elements, numbering)
    plan = build_merge_plan(mesh, ref, numbering)
    return Discretization(mesh, surf, ref, elements, numbering, plan, conf)

# }}}


# {{{ merge algebra

@dataclass(eq=False)
class MergeNode:
    """Operators of one interior tree node.

    ``S_glue`` maps exterior values to interface values, ``dtn`` is the
    merged DtN map (dropped once the parent is built unless kept), and
    ``K_es`` is the exterior-interface coupling needed to refresh the
    particular flux.
    """

    plan: PlanNode
    S_glue: np.ndarray
    lu: tuple | None
    K_es: np.ndarray
    dtn: np.ndarray | None
    v_glue: np.ndarray
    v_flux: np.ndarray
    K_ss: np.ndarray | None = None
    K_se: np.ndarray | None = None
    K_ee: np.ndarray | None = None


def _assemble(plan_node: PlanNode, dtns, fluxes):
    ne, ns = len(plan_node.points), len(plan_node.interface)
    K = np.zeros((ne + ns, ne + ns))
    g = np.zeros(ne + ns)
    for cmap, dtn, vf in zip(plan_node.child_maps, dtns, fluxes):
        K[np.ix_(cmap, cmap)] += dtn
        g[cmap] += vf
    return K, g


def merge_pair(dtn1, vflux1, dtn2, vflux2, plan_node: PlanNode, keep_blocks=False) -> MergeNode:
    """Glue two clusters.

    With ``K`` the scatter-added child DtN maps on ``[exterior; interface]``
    and ``g`` the scattered particular fluxes, flux balance on the interface
    gives ``u_s = S_glue h + v_glue`` with ``S_glue = -K_ss^{-1} K_se`` and
    ``v_glue = -K_ss^{-1} g_s``; the merged DtN is ``K_ee + K_es S_glue``.
    """
    K, g = _assemble(plan_node, (dtn1, dtn2), (vflux1, vflux2))
    ne = len(plan_node.points)
    K_ss, K_se = K[ne:, ne:], K[ne:, :ne]
    K_es, K_ee = K[:ne, ne:], K[:ne, :ne]
    if len(plan_node.interface):
        lu = la.lu_factor(K_ss, check_finite=False)
        rcond = _rcond(lu, K_ss)
        if not rcond > np.finfo(float).eps:
            raise MergeError(
                f"interface system singular at merge node {plan_node.index} (rcond={rcond:.2e})"
            )
        S_glue = -la.lu_solve(lu, K_se)
        v_glue = -la.lu_solve(lu, g[ne:])
    else:
        lu = None
        S_glue = np.zeros((0, ne))
        v_glue = np.zeros(0)
    dtn = K_ee + K_es @ S_glue
    v_flux = g[:ne] + K_es @ v_glue
    node = MergeNode(plan_node, S_glue, lu, K_es, dtn, v_glue, v_flux)
    if keep_blocks:
        node.K_ss, node.K_se, node.K_ee = K_ss, K_se, K_ee
    return node


def _rcond(lu, A):
    from scipy.linalg import lapack

    anorm = np.abs(A).sum(axis=0).max()
    rcond, _ = lapack.dgecon(lu[0], anorm)
    return rcond

# }}}


# {{{ root of a closed surface

@dataclass(eq=False)
class ClosedRoot:
    plan: PlanNode
    K: np.ndarray
    mode: str
    lu: tuple
    rank_deficiency: int

    def solve(self, g_s):
        ns = len(self.plan.interface)
        rhs = -np.asarray(g_s, dtype=float)
        if self.mode == "mean-zero":
            sol = la.lu_solve(self.lu, np.append(rhs, 0.0))
            return sol[:ns]
        if self.mode == "pin-node":
            rhs = rhs.copy()
            rhs[0] = 0.0
        return la.lu_solve(self.lu, rhs)


def solve_closed_root(plan_node: PlanNode, K, regularization: str) -> ClosedRoot:
    """Factor the final interface system of a closed surface.

    ``mean-zero`` borders the system with a constant column and a sum
    constraint (the solution mean is removed after the downward pass),
    ``pin-node`` fixes the first interface value to zero and ``none``
    factors the system as is.
    """
    ns = len(plan_node.interface)
    if regularization == "none":
        lu = la.lu_factor(K, check_finite=False)
        rcond = _rcond(lu, K)
        if not rcond > 1e3 * np.finfo(float).eps:
            raise MergeError(
                f"closed-surface root system is singular (rcond={rcond:.2e}); "
                "use regularization 'mean-zero' or 'pin-node'"
            )
        return ClosedRoot(plan_node, K, "none", lu, 0)

    sv = la.svdvals(K)
    deficiency = int(np.sum(sv < 1e-9 * sv[0]))
    if deficiency > 1:
        raise MergeError(f"closed-surface root system has rank deficiency {deficiency} > 1")
    if regularization == "mean-zero":
        A = np.zeros((ns + 1, ns + 1))
        A[:ns, :ns] = K
        A[:ns, ns] = 1.0
        A[ns, :ns] = 1.0
    elif regularization == "pin-node":
        A = K.copy()
        A[0, :] = 0.0
        A[0, 0] = 1.0
    else:
        raise ValueError(f"unknown regularization {regularization!r}; choose from {REGULARIZATIONS}")
    lu = la.lu_factor(A, check_finite=False)
    return ClosedRoot(plan_node, K, regularization, lu, deficiency)

# }}}


# {{{ solver handle

@dataclass(eq=False)
class SolverHandle:
    """Factorized THPS solver for one operator on one discretization."""

    disc: Discretization
    coeffs: PdeCoefficients
    leaves: list
    merges: list
    root: ClosedRoot | None
    regularization: str
    factorizations: int
    timings: dict
    forcing: np.ndarray
    _S: np.ndarray = field(repr=False)
    _Linv: np.ndarray = field(repr=False)
    _PF: np.ndarray = field(repr=False)
    _FW: np.ndarray | None = field(repr=False)
    _v_int: np.ndarray = field(repr=False)
    _v_flux: np.ndarray = field(repr=False)

    @property
    def plan(self) -> MergePlan:
        return self.disc.plan

    @property
    def is_closed(self) -> bool:
        return len(self.plan.root.points) == 0

    def update_forcing(self, f):
        """Refresh all particular data for a new right-hand side.

        Only stored factorizations are reused; no matrix is factored.
        """
        t0 = time.perf_counter()
        fn = self.disc.sample(f) if not isinstance(f, np.ndarray) or f.ndim != 2 else np.asarray(f, float)
        self.forcing = fn
        self._check_compatibility()
        ref = self.disc.ref
        ii = ref.interior
        self._v_int = np.einsum("tij,tj->ti", self._Linv, fn[:, ii])
        self._v_flux = np.einsum("tij,tj->ti", self._PF, fn[:, ii])
        if self._FW is not None:
            self._v_flux += self._FW * fn[:, ref.boundary]
        self._upward_particular()
        self.timings["refresh"] = time.perf_counter() - t0

    def _upward_particular(self):
        plan = self.plan
        vflux = [None] * len(plan.nodes)
        for node in plan.nodes:
            if node.is_leaf:
                vflux[node.index] = self._v_flux[node.element]
                continue
            m = self.merges[node.index]
            c1, c2 = node.children
            ne = len(node.points)
            g = np.zeros(ne + len(node.interface))
            g[node.child_maps[0]] += vflux[c1]
            g[node.child_maps[1]] += vflux[c2]
            vflux[c1] = vflux[c2] = None
            if node is plan.root and self.root is not None:
                m.v_glue = self.root.solve(g[ne:])
            elif m.lu is not None:
                m.v_glue = -la.lu_solve(m.lu, g[ne:])
            m.v_flux = g[:ne] + m.K_es @ m.v_glue
            vflux[node.index] = m.v_flux

    def _check_compatibility(self):
        if self.root is None or self.root.mode == "none":
            return
        total = self.disc.integrate(self.forcing)
        scale = self.disc.integrate(np.abs(self.forcing))
        if scale > 0 and abs(total) > 1e-4 * scale:
            warnings.warn(
                f"forcing integrates to {total:.3e} on a closed surface; the singular "
                "problem is incompatible and the regularized solve absorbs the mismatch",
                stacklevel=3,
            )

    def solve(self, h=None) -> np.ndarray:
        """Downward pass; returns per-element nodal values ``(T, N)``.

        *h* is Dirichlet data on the exterior boundary of the mesh (a
        callable of points, or values in :meth:`Discretization.root_boundary_coords`
        order); it must be omitted for closed surfaces.
        """
        t0 = time.perf_counter()
        plan = self.plan
        root = plan.root
        ne_root = len(root.points)
        if h is None:
            if ne_root:
                raise ValueError(f"Dirichlet data required on {ne_root} boundary points")
            h = np.zeros(0)
        elif callable(h):
            h = np.asarray(h(self.disc.root_boundary_coords()), dtype=float)
        h = np.asarray(h, dtype=float).reshape(-1)
        if h.shape != (ne_root,):
            raise ValueError(f"Dirichlet data has {h.size} entries, expected {ne_root}")

        ref = self.disc.ref
        t = self.disc.num_elements
        hb = np.empty((t, len(ref.boundary)))
        stack = [(root.index, h)]
        while stack:
            idx, hext = stack.pop()
            node = plan.nodes[idx]
            if node.is_leaf:
                hb[node.element] = hext
                continue
            m = self.merges[idx]
            us = m.S_glue @ hext + m.v_glue if len(node.interface) else np.zeros(0)
            full = np.concatenate([hext, us])
            c1, c2 = node.children
            stack.append((c1, full[node.child_maps[0]]))
            stack.append((c2, full[node.child_maps[1]]))

        u = np.empty((t, ref.num_nodes))
        u[:, ref.boundary] = hb
        if len(ref.interior):
            u[:, ref.interior] = self._v_int + np.einsum("tij,tj->ti", self._S, hb)
        if self.root is not None and self.root.mode == "mean-zero":
            u -= self.disc.integrate(u) / self.disc.area()
        self.timings["solve"] = time.perf_counter() - t0
        return u


def _resolve_regularization(regularization, closed, coeffs):
    if regularization not in REGULARIZATIONS:
        raise ValueError(f"unknown regularization {regularization!r}; choose from {REGULARIZATIONS}")
    if not closed:
        return "none"
    if regularization == "auto":
        singular = not (coeffs.has_zeroth_order or coeffs.has_first_order)
        return "mean-zero" if singular else "none"
    return regularization


def factorize_discretization(
    disc: Discretization,
    coeffs: PdeCoefficients,
    f=None,
    regularization: str = "auto",
    keep_dtn: bool = False,
    vertex_rule: str = "residual",
) -> SolverHandle:
    """Build every leaf and merge the tree bottom-up.

    *regularization* applies to closed surfaces only (see
    :func:`solve_closed_root`); ``"auto"`` picks ``"mean-zero"`` for operators
    without lower-order terms and ``"none"`` otherwise.  *keep_dtn* retains
    the merged DtN maps of every tree node, which is otherwise freed once
    the parent is formed.
    """
    plan = disc.plan
    closed = len(plan.root.points) == 0
    mode = _resolve_regularization(regularization, closed, coeffs)

    t0 = time.perf_counter()
    fn = disc.sample(0.0 if f is None else f)
    leaves = []
    nfact = 0
    for el in disc.elements:
        L = assemble_operator(el, coeffs)
        leaves.append(build_leaf(el, coeffs, fn[el.element_id], L=L, vertex_rule=vertex_rule))
        nfact += len(disc.ref.interior) > 0
    t_build = time.perf_counter() - t0

    t0 = time.perf_counter()
    merges = [None] * len(plan.nodes)
    dtn = [None] * len(plan.nodes)
    vfl = [None] * len(plan.nodes)
    root_solver = None
    for node in plan.nodes:
        if node.is_leaf:
            lf = leaves[node.element]
            dtn[node.index], vfl[node.index] = lf.dtn, lf.v_flux
            continue
        c1, c2 = node.children
        is_root = node is plan.root
        if is_root and closed:
            K, g = _assemble(node, (dtn[c1], dtn[c2]), (vfl[c1], vfl[c2]))
            root_solver = solve_closed_root(node, K, mode)
            v_glue = root_solver.solve(g)
            m = MergeNode(node, np.zeros((len(node.interface), 0)), None,
                          np.zeros((0, len(node.interface))), np.zeros((0, 0)), v_glue, np.zeros(0))
        else:
            m = merge_pair(dtn[c1], vfl[c1], dtn[c2], vfl[c2], node)
        nfact += len(node.interface) > 0
        merges[node.index] = m
        dtn[node.index], vfl[node.index] = m.dtn, m.v_flux
        if not keep_dtn:
            for c in (c1, c2):
                dtn[c] = None
                if merges[c] is not None:
                    merges[c].dtn = None
    t_merge = time.perf_counter() - t0

    ii = disc.ref.interior
    S = np.stack([lf.S for lf in leaves])
    if len(ii):
        Linv = np.stack([lf.interior_inverse() for lf in leaves])
        PF = np.einsum("tbi,tij->tbj", np.stack([lf.flux[:, ii] for lf in leaves]), Linv)
    else:
        Linv = np.zeros((len(leaves), 0, 0))
        PF = np.zeros((len(leaves), len(disc.ref.boundary), 0))
    FW = None if leaves[0].forcing_weight is None else np.stack([lf.forcing_weight for lf in leaves])
    handle = SolverHandle(
        disc=disc,
        coeffs=coeffs,
        leaves=leaves,
        merges=merges,
        root=root_solver,
        regularization=mode,
        factorizations=int(nfact),
        timings={"build": t_build, "merge": t_merge},
        forcing=fn,
        _S=S,
        _Linv=Linv,
        _PF=PF,
        _FW=FW,
        _v_int=np.stack([lf.v_interior for lf in leaves]),
        _v_flux=np.stack([lf.v_flux for lf in leaves]),
    )
    handle._check_compatibility()
    return handle


def factorize(mesh: FlatMesh, surf: SurfaceDef, coeffs: PdeCoefficients, f=None, n: int = 6, **kw) -> SolverHandle:
    """Discretize *mesh* at degree *n* and factorize the operator."""
    return factorize_discretization(discretize(mesh, surf, n), coeffs, f, **kw)


def solve(handle: SolverHandle, h=None) -> np.ndarray:
    return handle.solve(h)

# }}}
