"""Quadrature rules on the reference triangle and the unit segment.

Triangle rules are built by collapsing a tensor Gauss-Legendre grid on the
unit square onto the reference triangle {x, y >= 0, x + y <= 1} (Duffy map).
This costs a few more points than optimal symmetric rules but is exact by
construction for any requested degree, which the assembly correctness of
every bilinear/trilinear form in this package leans on.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["Quadrature", "triangle_rule", "segment_rule"]


@dataclass(frozen=True)
class Quadrature:
    """Points (npts, dim) and weights (npts,) exact up to `degree`."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def npoints(self) -> int:
        return len(self.weights)


def segment_rule(degree: int) -> Quadrature:
    """Gauss-Legendre rule on [0, 1] exact for polynomials up to `degree`."""
    m = max(1, (degree + 2) // 2)  # 2m-1 >= degree
    x, w = np.polynomial.legendre.leggauss(m)
    pts = 0.5 * (x + 1.0)
    return Quadrature(pts.reshape(-1, 1), 0.5 * w, 2 * m - 1)


def triangle_rule(degree: int) -> Quadrature:
    """Rule on the reference triangle (0,0)-(1,0)-(0,1), exact up to `degree`.

    Duffy map (u, v) -> (u, v(1-u)) with Jacobian (1-u); a polynomial of
    total degree d becomes degree d+1 in u, so m Gauss points per direction
    give exactness while 2m-1 >= d+1.
    """
    m = max(1, (degree + 3) // 2)  # 2m-1 >= degree+1
    x, w = np.polynomial.legendre.leggauss(m)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    px = U.ravel()
    py = (V * (1.0 - U)).ravel()
    wts = (WU * WV * (1.0 - U)).ravel()
    return Quadrature(np.column_stack([px, py]), wts, degree)
