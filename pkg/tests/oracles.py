"""Independent oracles used by the tests.

The dense re-assembly oracle rebuilds element matrices from scratch:
nodal basis polynomials through a Vandermonde solve in scaled local
coordinates, and every integral evaluated analytically (affine map to
the reference triangle plus the exact monomial formula), with a plain
Python-loop scatter into a dense matrix.  No quadrature rule, no shape
function table, no einsum is shared with the production assembly path.
"""

import math

import numpy as np

from afemeig.poly import Poly2


def compose_affine(p: Poly2, x_of: Poly2, y_of: Poly2) -> Poly2:
    """p(x_of(s, t), y_of(s, t)) for affine substitutions."""
    ni, nj = p.c.shape
    xpow = [Poly2.const(1.0)]
    for _ in range(1, ni):
        xpow.append(xpow[-1] * x_of)
    ypow = [Poly2.const(1.0)]
    for _ in range(1, nj):
        ypow.append(ypow[-1] * y_of)
    out = Poly2.zero()
    for i in range(ni):
        for j in range(nj):
            if p.c[i, j] != 0.0:
                out = out + p.c[i, j] * (xpow[i] * ypow[j])
    return out


def integral_reference(p: Poly2) -> float:
    """Exact integral over the reference triangle (0,0),(1,0),(0,1)."""
    total = 0.0
    for i in range(p.c.shape[0]):
        for j in range(p.c.shape[1]):
            if p.c[i, j] != 0.0:
                total += (p.c[i, j] * math.factorial(i) * math.factorial(j)
                          / math.factorial(i + j + 2))
    return total


def integral_on_triangle(p: Poly2, coords) -> float:
    """Exact integral of p over the (physical-coordinate) triangle."""
    (x0, y0), (x1, y1), (x2, y2) = coords
    x_of = Poly2.affine(x0, x1 - x0, x2 - x0)
    y_of = Poly2.affine(y0, y1 - y0, y2 - y0)
    det = abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
    return det * integral_reference(compose_affine(p, x_of, y_of))


def _local_nodes(degree):
    """Barycentric Lagrange node layout: vertices, degree-1 nodes per
    edge i walking (i+1)%3 -> (i+2)%3, centroid for cubics."""
    nodes = [np.eye(3)[i] for i in range(3)]
    if degree >= 2:
        for i in range(3):
            a, b = (i + 1) % 3, (i + 2) % 3
            for s in range(1, degree):
                lam = np.zeros(3)
                lam[a] = 1.0 - s / degree
                lam[b] = s / degree
                nodes.append(lam)
    if degree == 3:
        nodes.append(np.full(3, 1.0 / 3.0))
    return np.array(nodes)


def _monomials(degree):
    return [(i, d - i) for d in range(degree + 1) for i in range(d, -1, -1)]


def reference_basis(degree):
    """Nodal basis polynomials in reference coordinates (xi, eta), built
    by a Vandermonde solve at the reference nodes (geometry-free, so the
    conditioning is uniform over all elements)."""
    mono = _monomials(degree)
    nloc = len(mono)
    nodes = _local_nodes(degree)[:, 1:]  # (xi, eta) = (lam1, lam2)
    V = np.array([[x ** i * y ** j for i, j in mono] for x, y in nodes])
    C = np.linalg.solve(V, np.eye(nloc))  # column k: coefficients of b_k
    return [Poly2.from_monomials(
            [(i, j, C[col, k]) for col, (i, j) in enumerate(mono)])
            for k in range(nloc)]


def dense_assemble(tri, dofmap, coeffs):
    """Dense (K, M) over the interior dofs, fully independent of the
    production quadrature/shape-function/scatter machinery.

    Everything runs on the reference element: coefficients are pulled
    back through the affine map, gradients through the inverse Jacobian,
    and every entry is an exact polynomial integral.
    """
    degree = dofmap.degree
    basis = reference_basis(degree)
    nloc = len(basis)
    gxi = [p.dx() for p in basis]
    geta = [p.dy() for p in basis]
    n = dofmap.num_interior
    K = np.zeros((n, n))
    M = np.zeros((n, n))
    for e in range(tri.num_elements):
        pts = tri.element_coords([e])[0]
        J = np.array([[pts[1, 0] - pts[0, 0], pts[2, 0] - pts[0, 0]],
                      [pts[1, 1] - pts[0, 1], pts[2, 1] - pts[0, 1]]])
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        Jinv = np.array([[J[1, 1], -J[0, 1]], [-J[1, 0], J[0, 0]]]) / det
        reg = coeffs.region(int(tri.elem_region[e]))
        x_of = Poly2.affine(pts[0, 0], J[0, 0], J[0, 1])
        y_of = Poly2.affine(pts[0, 1], J[1, 0], J[1, 1])
        a = [[compose_affine(reg.a00, x_of, y_of),
              compose_affine(reg.a01, x_of, y_of)], [None, None]]
        a[1][0] = a[0][1]
        a[1][1] = compose_affine(reg.a11, x_of, y_of)
        bb = compose_affine(reg.b, x_of, y_of)
        # pulled-back diffusion: G = Jinv A Jinv^T (entrywise Poly2)
        G = [[Poly2.zero(), Poly2.zero()], [Poly2.zero(), Poly2.zero()]]
        for i in range(2):
            for j in range(2):
                for p in range(2):
                    for q in range(2):
                        G[i][j] = G[i][j] + (Jinv[i, p] * Jinv[j, q]) * a[p][q]
        gi = dofmap.interior_index[dofmap.elem_dofs[e]]
        for r in range(nloc):
            if gi[r] < 0:
                continue
            for s in range(nloc):
                if gi[s] < 0:
                    continue
                kint = (G[0][0] * (gxi[r] * gxi[s])
                        + G[0][1] * (gxi[r] * geta[s])
                        + G[1][0] * (geta[r] * gxi[s])
                        + G[1][1] * (geta[r] * geta[s]))
                K[gi[r], gi[s]] += abs(det) * integral_reference(kint)
                mint = bb * (basis[r] * basis[s])
                M[gi[r], gi[s]] += abs(det) * integral_reference(mint)
    return K, M
