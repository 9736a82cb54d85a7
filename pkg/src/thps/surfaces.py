"""Exact surfaces and closest-point projection onto them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ProjectionError(RuntimeError):
    pass


class Poly3:
    """Sparse polynomial in ``x, y, z`` stored as ``{(i, j, k): coeff}``."""

    def __init__(self, terms=None):
        self.terms = {}
        for key, c in (terms or {}).items():
            if c != 0:
                self.terms[tuple(key)] = self.terms.get(tuple(key), 0.0) + float(c)

    @classmethod
    def var(cls, axis):
        key = [0, 0, 0]
        key[axis] = 1
        return cls({tuple(key): 1.0})

    @classmethod
    def const(cls, c):
        return cls({(0, 0, 0): c})

    def __add__(self, other):
        if not isinstance(other, Poly3):
            other = Poly3.const(other)
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out.get(k, 0.0) + c
        return Poly3(out)

    __radd__ = __add__

    def __neg__(self):
        return Poly3({k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other if isinstance(other, Poly3) else -float(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Poly3):
            return Poly3({k: c * other for k, c in self.terms.items()})
        out = {}
        for k1, c1 in self.terms.items():
            for k2, c2 in other.terms.items():
                k = (k1[0] + k2[0], k1[1] + k2[1], k1[2] + k2[2])
                out[k] = out.get(k, 0.0) + c1 * c2
        return Poly3(out)

    __rmul__ = __mul__

    def __pow__(self, p: int):
        out = Poly3.const(1.0)
        for _ in range(p):
            out = out * self
        return out

    def deriv(self, axis):
        out = {}
        for k, c in self.terms.items():
            if k[axis] > 0:
                kk = list(k)
                kk[axis] -= 1
                out[tuple(kk)] = out.get(tuple(kk), 0.0) + c * k[axis]
        return Poly3(out)

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
        val = np.zeros(pts.shape[:-1])
        for (i, j, k), c in self.terms.items():
            val = val + c * x**i * y**j * z**k
        return val


def swiss_cheese() -> Poly3:
    x, y, z = (Poly3.var(a) for a in range(3))
    return (
        (x**2 + y**2 - 4) ** 2
        + (z**2 - 1) ** 2
        + (y**2 + z**2 - 4) ** 2
        + (x**2 - 1) ** 2
        + (z**2 + x**2 - 4) ** 2
        + (y**2 - 1) ** 2
        - 15
    )


def asymmetric_torus(a=2.0, b=1.9, d=1.0) -> Poly3:
    x, y, z = (Poly3.var(k) for k in range(3))
    c2 = a * a - b * b
    return (
        (x**2 + y**2 + z**2 - d * d + b * b) ** 2
        - 4 * (a * x + c2 * d) ** 2
        - 4 * b * b * y**2
    )


def sphere_poly(r=1.0) -> Poly3:
    x, y, z = (Poly3.var(k) for k in range(3))
    return x**2 + y**2 + z**2 - r * r


IMPLICIT_CATALOGUE = {
    "swiss_cheese": (swiss_cheese, (-2.6, 2.6)),
    "asymmetric_torus": (asymmetric_torus, (-4.5, 4.5)),
}


@dataclass
class SurfaceDef:
    """Exact surface used to place high-order nodes.

    ``kind`` is ``"sphere"`` (radius ``radius`` about the origin),
    ``"implicit"`` (zero set of ``poly``) or ``"identity"`` (no projection,
    for flat meshes).
    """

    kind: str
    radius: float = 1.0
    poly: Poly3 | None = None
    name: str = ""
    tolerance: float = 1e-12
    max_iter: int = 50
    _grad: tuple = field(default=None, repr=False)
    _hess: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sphere", "implicit", "identity"):
            raise ValueError(f"unknown surface kind {self.kind!r}")
        if self.kind == "implicit":
            if self.poly is None:
                raise ValueError("implicit surface requires a polynomial")
            self._grad = tuple(self.poly.deriv(a) for a in range(3))
            self._hess = tuple(
                tuple(g.deriv(b) for b in range(3)) for g in self._grad
            )

    @classmethod
    def sphere(cls, radius=1.0):
        return cls("sphere", radius=float(radius), name=f"sphere:{radius:g}")

    @classmethod
    def identity(cls):
        return cls("identity", name="identity")

    @classmethod
    def implicit(cls, name_or_poly, **kw):
        if isinstance(name_or_poly, Poly3):
            return cls("implicit", poly=name_or_poly, name="implicit", **kw)
        try:
            make, _ = IMPLICIT_CATALOGUE[name_or_poly]
        except KeyError:
            raise ValueError(
                f"unknown implicit surface {name_or_poly!r}; "
                f"known: {sorted(IMPLICIT_CATALOGUE)}"
            ) from None
        return cls("implicit", poly=make(), name=f"implicit:{name_or_poly}", **kw)

    @classmethod
    def from_spec(cls, spec: str):
        """Parse ``sphere[:r]``, ``identity`` or ``implicit:<name>``."""
        parts = spec.split(":")
        if parts[0] == "sphere":
            return cls.sphere(float(parts[1]) if len(parts) > 1 else 1.0)
        if parts[0] in ("identity", "flat"):
            return cls.identity()
        if parts[0] == "implicit" and len(parts) == 2:
            return cls.implicit(parts[1])
        raise ValueError(f"cannot parse surface spec {spec!r}")

    # implicit function helpers

    def value(self, pts):
        return self.poly(pts)

    def gradient(self, pts):
        return np.stack([g(pts) for g in self._grad], axis=-1)

    def hessian(self, pts):
        return np.stack(
            [np.stack([h(pts) for h in row], axis=-1) for row in self._hess], axis=-2
        )

    def normal(self, pts):
        """Unit outward normal of the exact surface at (projected) points."""
        pts = np.asarray(pts, dtype=float)
        if self.kind == "sphere":
            return pts / np.linalg.norm(pts, axis=-1, keepdims=True)
        if self.kind == "implicit":
            g = self.gradient(pts)
            return g / np.linalg.norm(g, axis=-1, keepdims=True)
        return np.broadcast_to(np.array([0.0, 0.0, 1.0]), pts.shape).copy()


def closest_point_project(surf: SurfaceDef, x):
    """Project point(s) *x* onto the surface.

    Implicit surfaces use a damped Newton iteration on the optimality
    system ``p - x + lam * grad f(p) = 0, f(p) = 0``, started from a few
    normal-direction corrections that land on the zero set.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)

    if surf.kind == "identity":
        out = pts.copy()
    elif surf.kind == "sphere":
        nrm = np.linalg.norm(pts, axis=1, keepdims=True)
        if np.any(nrm == 0.0):
            bad = pts[np.flatnonzero(nrm[:, 0] == 0.0)[0]]
            raise ProjectionError(f"radial projection undefined at {bad}")
        out = surf.radius * pts / nrm
    else:
        out = _project_implicit(surf, pts)
    return out[0] if single else out


def _project_implicit(surf, x):
    tol = surf.tolerance
    p = x.copy()
    # move onto the zero set along the gradient
    for _ in range(8):
        f = surf.value(p)
        g = surf.gradient(p)
        p = p - (f / np.einsum("ij,ij->i", g, g))[:, None] * g

    g = surf.gradient(p)
    lam = np.einsum("ij,ij->i", x - p, g) / np.einsum("ij,ij->i", g, g)

    def residual(p, lam, xs):
        g = surf.gradient(p)
        r = np.empty((len(p), 4))
        r[:, :3] = p - xs + lam[:, None] * g
        r[:, 3] = surf.value(p)
        return r

    res = residual(p, lam, x)
    scale = 1.0 + np.linalg.norm(x, axis=1)
    for _ in range(surf.max_iter):
        gnorm = np.linalg.norm(surf.gradient(p), axis=1)
        done = (np.abs(res[:, 3]) < tol * np.maximum(gnorm, 1.0)) & (
            np.linalg.norm(res[:, :3], axis=1) < tol * scale
        )
        if done.all():
            break
        act = ~done
        pa, la_, ra = p[act], lam[act], res[act]
        g = surf.gradient(pa)
        h = surf.hessian(pa)
        jac = np.zeros((len(pa), 4, 4))
        jac[:, :3, :3] = np.eye(3) + la_[:, None, None] * h
        jac[:, :3, 3] = g
        jac[:, 3, :3] = g
        step = np.linalg.solve(jac, -ra[..., None])[..., 0]
        # backtracking on the residual norm
        t = np.ones(len(pa))
        base = np.linalg.norm(ra, axis=1)
        for _ in range(12):
            pn = pa + t[:, None] * step[:, :3]
            ln = la_ + t * step[:, 3]
            rn = residual(pn, ln, x[act])
            worse = np.linalg.norm(rn, axis=1) > base
            if not worse.any():
                break
            t = np.where(worse, 0.5 * t, t)
        p[act], lam[act], res[act] = pn, ln, rn
    else:
        gnorm = np.linalg.norm(surf.gradient(p), axis=1)
        bad = np.abs(res[:, 3]) >= tol * np.maximum(gnorm, 1.0)
        if bad.any():
            raise ProjectionError(
                f"closest-point projection did not converge for point {x[np.flatnonzero(bad)[0]]}"
            )
    return p
