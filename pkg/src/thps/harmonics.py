"""Real spherical harmonics evaluated at Cartesian points."""

from __future__ import annotations

import numpy as np


def normalized_legendre(lmax: int, m: int, x):
    """Orthonormal associated Legendre functions ``Pbar_l^m(x)`` for ``l = m..lmax``.

    Includes the ``1/sqrt(4 pi)`` factor, no Condon-Shortley phase.
    Returns an array of shape ``(lmax - m + 1,) + x.shape``.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    pmm = np.full_like(x, 1.0 / np.sqrt(4.0 * np.pi))
    for k in range(1, m + 1):
        pmm = np.sqrt((2 * k + 1) / (2.0 * k)) * s * pmm
    out = [pmm]
    if lmax == m:
        return np.array(out)
    out.append(np.sqrt(2 * m + 3.0) * x * pmm)
    for l in range(m + 2, lmax + 1):
        a = np.sqrt((4.0 * l * l - 1) / (l * l - m * m))
        b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1) ** 2 - 1))
        out.append(a * (x * out[-1] - b * out[-2]))
    return np.array(out)


def real_sph_harm(l: int, m: int, pts):
    """Real orthonormal ``Y_l^m`` at the directions of *pts* (shape ``(..., 3)``).

    ``m > 0`` uses ``cos(m phi)``, ``m < 0`` uses ``sin(|m| phi)``.
    """
    if abs(m) > l:
        raise ValueError(f"|m| must not exceed l (got l={l}, m={m})")
    pts = np.asarray(pts, dtype=float)
    r = np.linalg.norm(pts, axis=-1)
    z = pts[..., 2] / r
    phi = np.arctan2(pts[..., 1], pts[..., 0])
    am = abs(m)
    p = normalized_legendre(l, am, z)[-1]
    if m == 0:
        return p
    if m > 0:
        return np.sqrt(2.0) * p * np.cos(am * phi)
    return np.sqrt(2.0) * p * np.sin(am * phi)


class SphericalHarmonic:
    """Callable exact solution ``Y_l^m`` with its Laplace-Beltrami eigenvalue."""

    def __init__(self, l: int, m: int, radius: float = 1.0):
        self.l, self.m, self.radius = l, m, radius

    @property
    def eigenvalue(self) -> float:
        """``Delta_Gamma Y = eigenvalue * Y`` on the sphere of this radius."""
        return -self.l * (self.l + 1) / self.radius**2

    def __call__(self, pts):
        return real_sph_harm(self.l, self.m, pts)

    def __repr__(self):
        return f"SphericalHarmonic(l={self.l}, m={self.m})"


def parse_exact(name: str, radius: float = 1.0) -> SphericalHarmonic:
    """Parse names such as ``Y3_2`` or ``Y20_10`` (``Y1_-1`` for negative m)."""
    if not name.startswith("Y") or "_" not in name:
        raise ValueError(f"unknown exact solution {name!r}; expected e.g. 'Y3_2'")
    l, m = name[1:].split("_", 1)
    return SphericalHarmonic(int(l), int(m), radius)
