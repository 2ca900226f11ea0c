"""Bivariate polynomial arithmetic on dense coefficient grids.

A polynomial p(x, y) = sum_ij c[i, j] x^i y^j is stored as the 2D array
``c``.  Degrees stay small (coefficients of the PDE, local finite element
polynomials), so dense grids and double loops in the product are fine.
Exact coefficient arithmetic is what makes strong-form residuals exact:
derivatives are index shifts, never numerical differencing.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import polynomial as npoly


class Poly2:
    """Polynomial in two variables with float64 coefficients."""

    __slots__ = ("c",)

    def __init__(self, c):
        c = np.atleast_2d(np.asarray(c, dtype=float))
        self.c = c

    @staticmethod
    def zero() -> "Poly2":
        return Poly2([[0.0]])

    @staticmethod
    def const(value: float) -> "Poly2":
        return Poly2([[float(value)]])

    @staticmethod
    def affine(c0: float, cx: float, cy: float) -> "Poly2":
        """c0 + cx*x + cy*y."""
        return Poly2([[c0, cy], [cx, 0.0]])

    @staticmethod
    def from_monomials(terms) -> "Poly2":
        """Build from an iterable of (i, j, coeff) monomial triples."""
        terms = list(terms)
        if not terms:
            return Poly2.zero()
        ni = max(t[0] for t in terms) + 1
        nj = max(t[1] for t in terms) + 1
        c = np.zeros((ni, nj))
        for i, j, a in terms:
            c[i, j] += a
        return Poly2(c)

    @property
    def degree(self) -> int:
        nz = np.nonzero(self.c)
        if len(nz[0]) == 0:
            return 0
        return int(max(i + j for i, j in zip(*nz)))

    def is_zero(self) -> bool:
        return not np.any(self.c)

    def __call__(self, x, y):
        return npoly.polyval2d(x, y, self.c)

    def __add__(self, other: "Poly2") -> "Poly2":
        a, b = self.c, other.c
        ni = max(a.shape[0], b.shape[0])
        nj = max(a.shape[1], b.shape[1])
        c = np.zeros((ni, nj))
        c[: a.shape[0], : a.shape[1]] += a
        c[: b.shape[0], : b.shape[1]] += b
        return Poly2(c)

    def __sub__(self, other: "Poly2") -> "Poly2":
        return self + (-other)

    def __neg__(self) -> "Poly2":
        return Poly2(-self.c)

    def __mul__(self, other):
        if np.isscalar(other):
            return Poly2(self.c * other)
        a, b = self.c, other.c
        c = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1))
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                if a[i, j] != 0.0:
                    c[i : i + b.shape[0], j : j + b.shape[1]] += a[i, j] * b
        return Poly2(c)

    __rmul__ = __mul__

    def dx(self) -> "Poly2":
        if self.c.shape[0] == 1:
            return Poly2.zero()
        c = self.c[1:, :] * np.arange(1, self.c.shape[0])[:, None]
        return Poly2(c)

    def dy(self) -> "Poly2":
        if self.c.shape[1] == 1:
            return Poly2.zero()
        c = self.c[:, 1:] * np.arange(1, self.c.shape[1])[None, :]
        return Poly2(c)

    def restrict_to_segment(self, p0, p1) -> np.polynomial.Polynomial:
        """Restriction to the segment p0 + t*(p1-p0), t in [0, 1].

        Returns a univariate numpy Polynomial in t.  Exact: x(t)^i y(t)^j
        expands via 1D convolutions of the affine factors.
        """
        x0, y0 = float(p0[0]), float(p0[1])
        dx_, dy_ = float(p1[0]) - x0, float(p1[1]) - y0
        ni, nj = self.c.shape
        # Powers of (x0 + dx*t) and (y0 + dy*t) as 1D coefficient arrays.
        xp = [np.array([1.0])]
        for _ in range(1, ni):
            xp.append(np.convolve(xp[-1], [x0, dx_]))
        yp = [np.array([1.0])]
        for _ in range(1, nj):
            yp.append(np.convolve(yp[-1], [y0, dy_]))
        out = np.zeros(ni + nj - 1)
        for i in range(ni):
            for j in range(nj):
                if self.c[i, j] != 0.0:
                    term = np.convolve(xp[i], yp[j]) * self.c[i, j]
                    out[: len(term)] += term
        return np.polynomial.Polynomial(out)

    def __repr__(self) -> str:
        return f"Poly2(degree={self.degree})"
