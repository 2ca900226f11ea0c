"""Gauss quadrature on the reference triangle and on segments.

The reference triangle has vertices (0,0), (1,0), (0,1).  Triangle rules
are built by collapsing a tensor Gauss-Legendre grid on the unit square
through the Duffy map (x, y) = (u, v*(1-u)); the Jacobian (1-u) is folded
into the weights.  A rule requested for polynomial degree p integrates
every bivariate polynomial of total degree <= p exactly, for any p.

Weights sum to 1/2 (the reference area), so for an affine element T:

    integral over T of f  =  2*|T| * sum_i w_i f(F_T(x_i))
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def triangle_rule(degree: int):
    """Points (n, 2) in reference coordinates and weights (n,), exact for
    polynomials of total degree <= degree."""
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    # Degree p monomials become degree p+1 in u after the Duffy collapse
    # (Jacobian included), so n Gauss points need 2n-1 >= p+1.
    n = (degree + 2) // 2 + 1
    g, gw = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (g + 1.0)
    wu = 0.5 * gw
    uu, vv = np.meshgrid(u, u, indexing="ij")
    ww = np.outer(wu, wu) * (1.0 - uu)
    x = uu
    y = vv * (1.0 - uu)
    pts = np.column_stack([x.ravel(), y.ravel()])
    pts.setflags(write=False)
    w = ww.ravel()
    w.setflags(write=False)
    return pts, w


@lru_cache(maxsize=None)
def segment_rule(degree: int):
    """Gauss-Legendre points and weights on [0, 1], exact through degree."""
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    n = degree // 2 + 1
    g, gw = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (g + 1.0)
    w = 0.5 * gw
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def map_to_element(points, coords):
    """Map reference points (n, 2) to a physical triangle.

    coords is (3, 2) with the element's vertex coordinates; reference
    vertex 0 maps to coords[0] etc.  Returns (n, 2) physical points.
    """
    lam0 = 1.0 - points[:, 0] - points[:, 1]
    return (
        lam0[:, None] * coords[0]
        + points[:, [0]] * coords[1]
        + points[:, [1]] * coords[2]
    )
