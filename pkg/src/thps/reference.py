"""Nodal spectral machinery on the reference triangle.

The reference simplex is ``{(xi, eta): xi >= 0, eta >= 0, xi + eta <= 1}``
with vertices ``(0, 0)``, ``(1, 0)`` and ``(0, 1)``.  Functions are stored
as nodal values at a recursive Chebyshev-Lobatto node set and converted to
an orthonormal Dubiner (PKDO) expansion through the generalized Vandermonde
matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np
import scipy.linalg as la

MAX_DEGREE = 20

# vertices of the reference triangle, counter-clockwise
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
# outward unit normals of the three reference edges
# edge 0: v0 -> v1, edge 1: v1 -> v2, edge 2: v2 -> v0
REF_EDGE_NORMALS = np.array(
    [[0.0, -1.0], [1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)], [-1.0, 0.0]]
)
REF_EDGE_DIRECTIONS = np.array([[1.0, 0.0], [-1.0, 1.0], [0.0, -1.0]])


class VandermondeError(np.linalg.LinAlgError):
    """Raised when the generalized Vandermonde matrix is numerically singular."""


# {{{ jacobi polynomials

def jacobi_eval(m: int, alpha: float, beta: float, x):
    """Evaluate the Jacobi polynomial :math:`P_m^{(\\alpha,\\beta)}` at *x*.

    Uses the classical three-term recurrence with the standard
    normalization ``P_m(1) = binom(m + alpha, m)``.
    """
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    if m == 0:
        return p_prev
    p = 0.5 * (alpha - beta + (alpha + beta + 2.0) * x)
    for k in range(1, m):
        # computes P_{k+1} from P_k and P_{k-1}
        s = 2.0 * k + alpha + beta
        a1 = 2.0 * (k + 1) * (k + alpha + beta + 1) * s
        a2 = (s + 1) * (alpha * alpha - beta * beta)
        a3 = s * (s + 1) * (s + 2)
        a4 = 2.0 * (k + alpha) * (k + beta) * (s + 2)
        p, p_prev = ((a2 + a3 * x) * p - a4 * p_prev) / a1, p
    return p


def jacobi_deriv(m: int, alpha: float, beta: float, x):
    """Derivative of :math:`P_m^{(\\alpha,\\beta)}` via the shifted-parameter identity."""
    x = np.asarray(x, dtype=float)
    if m == 0:
        return np.zeros_like(x)
    return 0.5 * (m + alpha + beta + 1) * jacobi_eval(m - 1, alpha + 1, beta + 1, x)


def jacobi_value_at_one(m: int, alpha: int) -> float:
    return float(comb(m + alpha, m))

# }}}


# {{{ index map

@dataclass(frozen=True)
class DegreeIndexMap:
    """Graded lexicographic bijection between ``(i, j)`` and a linear index.

    Pairs are ordered by total degree ``i + j`` and then by ``i``, so the
    modes of degree at most ``k`` always form a leading block.
    """

    n: int
    pairs: tuple = field(init=False)

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"degree must be non-negative, got {self.n}")
        pairs = tuple((i, d - i) for d in range(self.n + 1) for i in range(d + 1))
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "_lookup", {p: m for m, p in enumerate(pairs)})

    def __len__(self):
        return len(self.pairs)

    def index(self, i: int, j: int) -> int:
        return self._lookup[(i, j)]

    def pair(self, m: int) -> tuple[int, int]:
        return self.pairs[m]

# }}}


# {{{ dubiner basis

def _scaled_legendre(nmax, s, q):
    """Return ``q**k * P_k(s / q)`` for ``k = 0..nmax`` with derivatives.

    Evaluated through the homogenized Legendre recurrence, so no division
    by ``q`` happens and the collapsed vertex ``q = 0`` is an ordinary
    polynomial evaluation.  Derivatives are with respect to ``xi`` and
    ``eta`` where ``s = 2 xi - 1 + eta`` and ``q = 1 - eta``.
    """
    vals = [np.ones_like(s), s.copy()]
    dxi = [np.zeros_like(s), np.full_like(s, 2.0)]
    deta = [np.zeros_like(s), np.ones_like(s)]
    q2 = q * q
    for k in range(1, nmax):
        vals.append(((2 * k + 1) * s * vals[k] - k * q2 * vals[k - 1]) / (k + 1))
        dxi.append(
            ((2 * k + 1) * (2.0 * vals[k] + s * dxi[k]) - k * q2 * dxi[k - 1]) / (k + 1)
        )
        deta.append(
            (
                (2 * k + 1) * (vals[k] + s * deta[k])
                - k * (-2.0 * q * vals[k - 1] + q2 * deta[k - 1])
            )
            / (k + 1)
        )
    return vals[: nmax + 1], dxi[: nmax + 1], deta[: nmax + 1]


def dubiner_normalization(i: int, j: int) -> float:
    return np.sqrt(2.0 * (2 * i + 1) * (i + j + 1))


def dubiner_eval(dim: DegreeIndexMap, points, derivatives=False):
    """Evaluate all orthonormal Dubiner functions at *points*.

    Parameters
    ----------
    dim : DegreeIndexMap
    points : array_like, shape (npts, 2) or (2,)
    derivatives : bool
        Also return the ``xi`` and ``eta`` partial derivatives.

    Returns
    -------
    vals : ndarray, shape (npts, N)
        ``vals[p, m]`` is the ``m``-th basis function at point ``p``.
        For a single point the leading axis is dropped.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    xi, eta = pts[:, 0], pts[:, 1]
    s = 2.0 * xi - 1.0 + eta
    q = 1.0 - eta
    r = 2.0 * eta - 1.0

    n = dim.n
    a, a_xi, a_eta = _scaled_legendre(max(n, 1), s, q)

    npts = len(xi)
    vals = np.empty((npts, len(dim)))
    dvx = np.empty_like(vals)
    dve = np.empty_like(vals)
    for m, (i, j) in enumerate(dim.pairs):
        c = dubiner_normalization(i, j)
        b = jacobi_eval(j, 2 * i + 1, 0, r)
        vals[:, m] = c * a[i] * b
        if derivatives:
            db = 2.0 * jacobi_deriv(j, 2 * i + 1, 0, r)
            dvx[:, m] = c * a_xi[i] * b
            dve[:, m] = c * (a_eta[i] * b + a[i] * db)

    if single:
        vals, dvx, dve = vals[0], dvx[0], dve[0]
    if derivatives:
        return vals, dvx, dve
    return vals

# }}}


# {{{ nodes

def chebyshev_lobatto_unit(n: int) -> np.ndarray:
    """Second-kind Chebyshev points on ``[0, 1]``, exactly symmetric."""
    if n == 0:
        return np.array([0.5])
    k = np.arange(n + 1)
    x = 0.5 * (1.0 - np.cos(np.pi * k / n))
    half = (n + 1) // 2
    x[n - np.arange(half)] = 1.0 - x[:half]
    if n % 2 == 0:
        x[n // 2] = 0.5
    return x


def _recursive_barycentric(d, n, alpha, seeds):
    """Barycentric coordinates of the recursive node for multi-index *alpha*.

    Each facet node set (one dimension lower) is blended with weight
    ``x_n[n - alpha_i]``, the 1D seed evaluated at the facet degree.
    """
    xn = seeds[n]
    b = np.zeros(d + 1)
    if d == 1:
        b[0] = xn[alpha[0]]
        b[1] = xn[alpha[1]]
        return b
    weight = 0.0
    for i in range(d + 1):
        alpha_noti = alpha[:i] + alpha[i + 1:]
        n_noti = n - alpha[i]
        w = xn[n_noti]
        if w == 0.0:
            continue
        br = _recursive_barycentric(d - 1, n_noti, alpha_noti, seeds)
        b[:i] += w * br[:i]
        b[i + 1:] += w * br[i:]
        weight += w
    return b / weight


def recursive_nodes(n: int) -> np.ndarray:
    """Triangle nodes of degree *n*, as barycentric triples ``(b0, b1, b2)``.

    Ordered by ``alpha_2`` (rows in ``eta``) and then ``alpha_1``.  Nodes on
    an edge are reset to the exact 1D seed coordinates so that neighbouring
    elements see bitwise-identical edge parameters.
    """
    seeds = [chebyshev_lobatto_unit(k) for k in range(n + 1)]
    out = []
    for a2 in range(n + 1):
        for a1 in range(n + 1 - a2):
            a0 = n - a1 - a2
            alpha = (a0, a1, a2)
            if min(alpha) == 0:
                b = np.zeros(3)
                for idx in range(3):
                    b[idx] = seeds[n][alpha[idx]] if alpha[idx] > 0 else 0.0
                # the two nonzero entries of an edge node sum exactly to 1
                nz = [k for k in range(3) if alpha[k] > 0]
                if len(nz) == 2:
                    b[nz[1]] = 1.0 - b[nz[0]]
            else:
                b = _recursive_barycentric(2, n, alpha, seeds)
            out.append(b)
    return np.array(out)

# }}}


# {{{ reference element

@dataclass(frozen=True, eq=False)
class ReferenceElement:
    """Nodes, Vandermonde and differentiation matrices for degree *n*.

    Attributes
    ----------
    nodes : ndarray (N, 2)
    vandermonde : ndarray (N, N)
        ``V[j, m] = Phi_m(node_j)``.
    d_xi, d_eta : ndarray (N, N)
    interior : ndarray of int
    edges : tuple of three int arrays
        Nodes of each reference edge in traversal order, ``n + 1`` each,
        endpoints included.
    boundary : ndarray of int
        The ``3n`` boundary nodes as a counter-clockwise loop starting at
        vertex 0; ``boundary[k*n]`` is vertex ``k``.
    """

    n: int
    index_map: DegreeIndexMap
    nodes: np.ndarray
    barycentric: np.ndarray
    vandermonde: np.ndarray
    v_xi: np.ndarray
    v_eta: np.ndarray
    d_xi: np.ndarray
    d_eta: np.ndarray
    interior: np.ndarray
    edges: tuple
    boundary: np.ndarray
    boundary_edge: np.ndarray
    _lu: tuple = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def vertex_positions(self) -> np.ndarray:
        """Positions of the three vertex nodes within :attr:`boundary`."""
        return np.arange(3) * self.n

    def to_modal(self, nodal):
        return la.lu_solve(self._lu, np.asarray(nodal, dtype=float))

    def to_nodal(self, modal):
        return self.vandermonde @ modal

    def interpolation_matrix(self, points) -> np.ndarray:
        """Matrix mapping nodal values to values at *points*."""
        phi = np.atleast_2d(dubiner_eval(self.index_map, points))
        # I = Phi(points) V^{-1}  <=>  V^T I^T = Phi^T
        return la.lu_solve(self._lu, phi.T, trans=1).T


def _edge_order(bary, n, tol=1e-12):
    on_edge = [bary[:, 2] < tol, bary[:, 0] < tol, bary[:, 1] < tol]
    # parameter increasing along edge k from vertex k to vertex k+1
    param = [bary[:, 1], bary[:, 2], bary[:, 0]]
    edges = []
    for k in range(3):
        idx = np.flatnonzero(on_edge[k])
        idx = idx[np.argsort(param[k][idx], kind="stable")]
        if len(idx) != n + 1:
            raise RuntimeError(f"edge {k} carries {len(idx)} nodes, expected {n + 1}")
        edges.append(idx)
    return edges


@lru_cache(maxsize=None)
def build_reference_element(n: int) -> ReferenceElement:
    """Construct (and cache) the reference element of degree *n*."""
    n = int(n)
    if not 1 <= n <= MAX_DEGREE:
        raise ValueError(f"polynomial degree must lie in [1, {MAX_DEGREE}], got {n}")

    bary = recursive_nodes(n)
    nodes = bary[:, 1:].copy()
    dim = DegreeIndexMap(n)
    v, vx, ve = dubiner_eval(dim, nodes, derivatives=True)

    lu = la.lu_factor(v)
    rcond = 1.0 / np.linalg.cond(v)
    if rcond < np.finfo(float).eps:
        raise VandermondeError(f"Vandermonde matrix singular for n={n} (rcond={rcond:.2e})")

    # D V = V_x  <=>  V^T D^T = V_x^T
    d_xi = la.lu_solve(lu, vx.T, trans=1).T
    d_eta = la.lu_solve(lu, ve.T, trans=1).T

    edges = _edge_order(bary, n)
    boundary = np.concatenate([e[:-1] for e in edges])
    boundary_edge = np.repeat(np.arange(3), n)
    interior = np.setdiff1d(np.arange(len(nodes)), boundary)

    return ReferenceElement(
        n=n,
        index_map=dim,
        nodes=nodes,
        barycentric=bary,
        vandermonde=v,
        v_xi=vx,
        v_eta=ve,
        d_xi=d_xi,
        d_eta=d_eta,
        interior=interior,
        edges=tuple(edges),
        boundary=boundary,
        boundary_edge=boundary_edge,
        _lu=lu,
    )


def interpolate(ref: ReferenceElement, nodal, point):
    """Evaluate the degree-*n* interpolant of *nodal* at *point* (or points)."""
    coeffs = ref.to_modal(nodal)
    phi = dubiner_eval(ref.index_map, point)
    return phi @ coeffs

# }}}
