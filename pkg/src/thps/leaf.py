"""Element-level collocation: operator assembly, solution operator and DtN map."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.linalg import lapack

from .geometry import SurfaceElement


class LeafError(np.linalg.LinAlgError):
    pass


def _field(value, pts, shape):
    """Sample a constant or callable coefficient at *pts* -> ``(npts, *shape)``."""
    if callable(value):
        out = np.asarray(value(pts), dtype=float)
    else:
        out = np.asarray(value, dtype=float)
    return np.broadcast_to(out, (len(pts),) + shape)


@dataclass
class PdeCoefficients:
    """Coefficients of ``sum a_ij d_i d_j u + sum b_i d_i u + c u``.

    Each entry is a constant or a callable taking ``(npts, 3)`` points and
    returning values of shape ``(npts, 3, 3)``, ``(npts, 3)`` and
    ``(npts,)`` respectively.  ``a`` is the full symmetric tensor; the
    assembler folds ``a_ij + a_ji`` onto the ``i < j`` cross terms.
    """

    a: object = 0.0
    b: object = 0.0
    c: object = 0.0

    @classmethod
    def laplace_beltrami(cls, scale=1.0, shift=0.0):
        """``scale * Delta_Gamma + shift``."""
        return cls(a=scale * np.eye(3), b=0.0, c=shift)

    @property
    def has_zeroth_order(self) -> bool:
        return callable(self.c) or np.any(np.asarray(self.c) != 0)

    @property
    def has_first_order(self) -> bool:
        return callable(self.b) or np.any(np.asarray(self.b) != 0)

    def sample(self, pts):
        a = self.a * np.eye(3) if np.isscalar(self.a) else self.a
        a = _field(a, pts, (3, 3))
        if not np.allclose(a, np.swapaxes(a, 1, 2), atol=1e-13):
            raise ValueError("second-order coefficient tensor must be symmetric")
        b = _field(self.b, pts, (3,))
        c = _field(self.c, pts, ())
        return a, b, c


def assemble_operator(elem: SurfaceElement, coeffs: PdeCoefficients, surf_deriv=None):
    """Dense collocation matrix of the surface operator on one element."""
    d = elem.surf_deriv if surf_deriv is None else surf_deriv
    a, b, c = coeffs.sample(elem.node_coords)
    npts = len(elem.node_coords)
    L = np.zeros((npts, npts))
    for i in range(3):
        for j in range(i, 3):
            aij = a[:, i, j] if i == j else a[:, i, j] + a[:, j, i]
            if np.any(aij != 0):
                L += aij[:, None] * (d[i] @ d[j])
        if np.any(b[:, i] != 0):
            L += b[:, i, None] * d[i]
    L[np.diag_indices(npts)] += c
    return L


def sample_forcing(f, elem: SurfaceElement):
    if f is None:
        return np.zeros(len(elem.node_coords))
    if callable(f):
        return np.asarray(f(elem.node_coords), dtype=float)
    f = np.asarray(f, dtype=float)
    return np.broadcast_to(f, (len(elem.node_coords),)).copy()


@dataclass(eq=False)
class LeafOperators:
    """Factorized element operators.

    ``S`` maps the ``3n`` boundary values to the interior nodes, ``dtn``
    maps boundary values to outward binormal fluxes, and ``flux`` is the
    boundary flux extractor acting on full nodal vectors.  The
    ``v_interior``/``v_flux`` pair is the particular solution with zero
    boundary data for the current forcing.

    With ``vertex_rule="residual"`` the three vertex rows of ``flux`` hold
    the scaled PDE residual ``w (L u - f)`` at the vertex instead of a
    binormal derivative; ``forcing_weight`` carries the ``-w`` that
    multiplies the forcing in those rows.
    """

    element_id: int
    interior: np.ndarray
    boundary: np.ndarray
    L: np.ndarray
    lu_ii: tuple
    S: np.ndarray
    dtn: np.ndarray
    flux: np.ndarray
    v_interior: np.ndarray
    v_flux: np.ndarray
    forcing_weight: np.ndarray | None = None

    @property
    def L_ii(self):
        return self.L[np.ix_(self.interior, self.interior)]

    @property
    def L_ib(self):
        return self.L[np.ix_(self.interior, self.boundary)]

    @property
    def L_bi(self):
        return self.L[np.ix_(self.boundary, self.interior)]

    @property
    def L_bb(self):
        return self.L[np.ix_(self.boundary, self.boundary)]

    @property
    def num_nodes(self) -> int:
        return len(self.interior) + len(self.boundary)

    def update_forcing(self, f_nodal):
        """Recompute the particular solution, reusing the interior factorization."""
        f_nodal = np.asarray(f_nodal, dtype=float)
        if len(self.interior):
            self.v_interior = la.lu_solve(self.lu_ii, f_nodal[self.interior])
        else:
            self.v_interior = np.zeros(0)
        self.v_flux = self.flux[:, self.interior] @ self.v_interior
        if self.forcing_weight is not None:
            self.v_flux = self.v_flux + self.forcing_weight * f_nodal[self.boundary]

    def interior_inverse(self):
        return la.lu_solve(self.lu_ii, np.eye(len(self.interior)))


VERTEX_RULES = ("residual", "binormal")


def build_leaf(elem: SurfaceElement, coeffs: PdeCoefficients, f=None, L=None,
               vertex_rule: str = "residual") -> LeafOperators:
    """Build S, the DtN map and the particular solution for one element.

    *vertex_rule* selects the coupling row at the three vertices:
    ``"binormal"`` uses the derivative along the sum of the two edge
    binormals, ``"residual"`` the PDE residual scaled by ``h / n**2``.
    Both vanish for the exact solution when summed over the elements
    around a vertex, but the binormal rows of a flat element are linearly
    dependent for every ``n`` and nearly so on curved elements, which
    makes the merged interface systems nearly singular.
    """
    if vertex_rule not in VERTEX_RULES:
        raise ValueError(f"vertex_rule must be one of {VERTEX_RULES}, got {vertex_rule!r}")
    ref = elem.ref
    d = elem.surf_deriv
    if L is None:
        L = assemble_operator(elem, coeffs, d)
    ii, bb = ref.interior, ref.boundary
    flux = elem.flux_matrix(d)
    fweight = None
    if vertex_rule == "residual":
        # residual rows scale like n^4/h^2; bring them to the n^2/h of flux rows
        w = np.sqrt(elem.volume_element.mean()) / ref.n**2
        rows = np.arange(3) * ref.n
        flux[rows] = w * L[bb[rows]]
        fweight = np.zeros(len(bb))
        fweight[rows] = -w

    if len(ii):
        lii = L[np.ix_(ii, ii)]
        lu = la.lu_factor(lii, check_finite=False)
        anorm = np.abs(lii).sum(axis=0).max()
        rcond, _ = lapack.dgecon(lu[0], anorm)
        if not rcond > np.finfo(float).eps:
            raise LeafError(
                f"interior block singular on element {elem.element_id} (rcond={rcond:.2e})"
            )
        S = -la.lu_solve(lu, L[np.ix_(ii, bb)])
    else:
        lu = (np.zeros((0, 0)), np.zeros(0, dtype=np.int32))
        S = np.zeros((0, len(bb)))

    dtn = flux[:, ii] @ S + flux[:, bb]
    leaf = LeafOperators(
        element_id=elem.element_id,
        interior=ii,
        boundary=bb,
        L=L,
        lu_ii=lu,
        S=S,
        dtn=dtn,
        flux=flux,
        v_interior=np.zeros(len(ii)),
        v_flux=np.zeros(len(bb)),
        forcing_weight=fweight,
    )
    fn = sample_forcing(f, elem)
    if np.any(fn[bb] != 0) and not np.any(fn[ii] != 0) and len(ii):
        warnings.warn(
            f"forcing on element {elem.element_id} is nonzero only at boundary nodes, "
            "which the interior elimination ignores",
            stacklevel=2,
        )
    leaf.update_forcing(fn)
    return leaf


def apply_leaf_solve(leaf: LeafOperators, h_b):
    """Full nodal solution from boundary values ``h_b``."""
    h_b = np.asarray(h_b, dtype=float)
    if h_b.shape != (len(leaf.boundary),):
        raise ValueError(
            f"boundary data has shape {h_b.shape}, expected ({len(leaf.boundary)},)"
        )
    u = np.empty(leaf.num_nodes)
    u[leaf.boundary] = h_b
    u[leaf.interior] = leaf.v_interior + leaf.S @ h_b
    return u
