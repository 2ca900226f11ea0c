"""Lagrange finite element spaces and assembly of the bilinear forms.

Degrees 1 to 3 on triangles, homogeneous Dirichlet conditions handled by
eliminating boundary degrees of freedom.  Quadrature degrees are chosen
from the polynomial degree and the coefficient degree so every assembled
entry is exact up to roundoff.

Global dof numbering: vertex dofs first (one per mesh vertex), then
side dofs (degree-1 per side, ordered from the side's lower vertex id),
then one interior dof per element for cubics.  Shared dofs therefore
agree between neighboring elements and the numbering is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Triangulation
from .poly import Poly2
from .quadrature import triangle_rule


class AssemblyError(Exception):
    pass


# reference barycentric gradients of (lam0, lam1, lam2)
_LAM_GRAD = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def local_node_count(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


def reference_nodes(degree: int) -> np.ndarray:
    """Barycentric coordinates of the local Lagrange nodes, shape (nloc, 3).

    Order: vertices, then (degree-1) nodes per local edge walking from
    vertex (i+1)%3 to (i+2)%3, then the centroid for cubics.
    """
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


def shape_values(degree: int, bary) -> np.ndarray:
    """Nodal basis values at barycentric points, shape (npts, nloc)."""
    lam = np.atleast_2d(np.asarray(bary, dtype=float))
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    if degree == 1:
        return np.column_stack([l0, l1, l2])
    if degree == 2:
        cols = [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1)]
        for i in range(3):
            a, b = (i + 1) % 3, (i + 2) % 3
            cols.append(4 * lam[:, a] * lam[:, b])
        return np.column_stack(cols)
    if degree == 3:
        cols = [0.5 * l * (3 * l - 1) * (3 * l - 2) for l in (l0, l1, l2)]
        for i in range(3):
            a, b = (i + 1) % 3, (i + 2) % 3
            la, lb = lam[:, a], lam[:, b]
            cols.append(4.5 * la * lb * (3 * la - 1))
            cols.append(4.5 * la * lb * (3 * lb - 1))
        cols.append(27 * l0 * l1 * l2)
        return np.column_stack(cols)
    raise AssemblyError(f"unsupported degree {degree}")


def shape_gradients(degree: int, bary) -> np.ndarray:
    """Reference-coordinate gradients of the nodal basis, (npts, nloc, 2)."""
    lam = np.atleast_2d(np.asarray(bary, dtype=float))
    npts = lam.shape[0]
    g = _LAM_GRAD

    def dl(i):
        return np.broadcast_to(g[i], (npts, 2))

    grads = []
    if degree == 1:
        grads = [dl(0), dl(1), dl(2)]
    elif degree == 2:
        for i in range(3):
            grads.append((4 * lam[:, [i]] - 1) * dl(i))
        for i in range(3):
            a, b = (i + 1) % 3, (i + 2) % 3
            grads.append(4 * (lam[:, [a]] * dl(b) + lam[:, [b]] * dl(a)))
    elif degree == 3:
        for i in range(3):
            li = lam[:, [i]]
            grads.append(0.5 * (27 * li * li - 18 * li + 2) * dl(i))
        for i in range(3):
            a, b = (i + 1) % 3, (i + 2) % 3
            la, lb = lam[:, [a]], lam[:, [b]]
            grads.append(4.5 * ((6 * la - 1) * lb * dl(a) + la * (3 * la - 1) * dl(b)))
            grads.append(4.5 * ((6 * lb - 1) * la * dl(b) + lb * (3 * lb - 1) * dl(a)))
        l0, l1, l2 = lam[:, [0]], lam[:, [1]], lam[:, [2]]
        grads.append(27 * (l1 * l2 * dl(0) + l0 * l2 * dl(1) + l0 * l1 * dl(2)))
    else:
        raise AssemblyError(f"unsupported degree {degree}")
    return np.stack(grads, axis=1)


def shape_hessians(degree: int, bary) -> np.ndarray:
    """Reference-coordinate second derivatives, (npts, nloc, 2, 2)."""
    lam = np.atleast_2d(np.asarray(bary, dtype=float))
    npts = lam.shape[0]
    g = _LAM_GRAD

    def outer(i, j):
        return np.broadcast_to(np.outer(g[i], g[j]) + np.outer(g[j], g[i]),
                               (npts, 2, 2))

    hess = []
    if degree == 1:
        hess = [np.zeros((npts, 2, 2))] * 3
    elif degree == 2:
        for i in range(3):
            hess.append(2.0 * outer(i, i))
        for i in range(3):
            a, b = (i + 1) % 3, (i + 2) % 3
            hess.append(4.0 * outer(a, b))
    elif degree == 3:
        for i in range(3):
            li = lam[:, [i], None]
            hess.append(0.5 * (27 * li - 9) * outer(i, i))
        for i in range(3):
            a, b = (i + 1) % 3, (i + 2) % 3
            la, lb = lam[:, [a], None], lam[:, [b], None]
            hess.append(4.5 * (3 * lb * outer(a, a)
                               + (6 * la - 1) * outer(a, b)))
            hess.append(4.5 * (3 * la * outer(b, b)
                               + (6 * lb - 1) * outer(a, b)))
        l0, l1, l2 = lam[:, [0], None], lam[:, [1], None], lam[:, [2], None]
        hess.append(27 * (l2 * outer(0, 1) + l1 * outer(0, 2)
                          + l0 * outer(1, 2)))
    else:
        raise AssemblyError(f"unsupported degree {degree}")
    return np.stack(hess, axis=1)


@dataclass
class DofMap:
    """Global numbering of the Lagrange nodes of one triangulation."""
    degree: int
    num_dofs: int
    elem_dofs: np.ndarray        # (ne, nloc) global dof per local node
    boundary_mask: np.ndarray    # (num_dofs,) True on Dirichlet dofs
    interior_index: np.ndarray   # (num_dofs,) index into interior dofs or -1
    interior_dofs: np.ndarray    # (num_interior,) global ids

    @property
    def num_interior(self) -> int:
        return self.interior_dofs.shape[0]


def build_dofmap(tri: Triangulation, degree: int) -> DofMap:
    """Lay out the Lagrange nodes of degree 1, 2 or 3 over the mesh."""
    if degree not in (1, 2, 3):
        raise AssemblyError(f"degree must be 1, 2 or 3, got {degree}")
    ne = tri.num_elements
    nv = tri.num_vertices
    ns = tri.num_sides
    per_side = degree - 1
    nloc = local_node_count(degree)
    num_dofs = nv + ns * per_side + (ne if degree == 3 else 0)

    elem_dofs = np.empty((ne, nloc), dtype=np.int64)
    elem_dofs[:, :3] = tri.elem_vertices
    if per_side:
        ev = tri.elem_vertices
        for i in range(3):
            a, b = (i + 1) % 3, (i + 2) % 3
            sides = tri.elem_sides[:, i]
            forward = ev[:, a] < ev[:, b]
            for s in range(per_side):
                slot = np.where(forward, s, per_side - 1 - s)
                elem_dofs[:, 3 + i * per_side + s] = nv + sides * per_side + slot
    if degree == 3:
        elem_dofs[:, -1] = nv + ns * per_side + np.arange(ne)

    boundary = np.zeros(num_dofs, dtype=bool)
    boundary[:nv] = tri.boundary_vertex_mask()
    if per_side:
        bsides = np.nonzero(tri.boundary_sides)[0]
        for s in range(per_side):
            boundary[nv + bsides * per_side + s] = True

    interior_dofs = np.nonzero(~boundary)[0]
    interior_index = np.full(num_dofs, -1, dtype=np.int64)
    interior_index[interior_dofs] = np.arange(interior_dofs.shape[0])
    return DofMap(degree, num_dofs, elem_dofs, boundary, interior_index,
                  interior_dofs)


def dof_coordinates(tri: Triangulation, dofmap: DofMap) -> np.ndarray:
    """Physical coordinates of every global dof, shape (num_dofs, 2)."""
    coords = np.empty((dofmap.num_dofs, 2))
    nodes = reference_nodes(dofmap.degree)
    xy = tri.element_coords()
    pts = np.einsum("la,nad->nld", nodes, xy)  # (ne, nloc, 2)
    coords[dofmap.elem_dofs.ravel()] = pts.reshape(-1, 2)
    return coords


@dataclass
class DiscreteFunction:
    """Coefficients over the interior dofs; boundary values are zero."""
    dofmap: DofMap
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.dofmap.num_interior,):
            raise AssemblyError(
                f"coefficient vector has length {self.coeffs.shape}, expected "
                f"({self.dofmap.num_interior},)")

    def full_values(self) -> np.ndarray:
        full = np.zeros(self.dofmap.num_dofs)
        full[self.dofmap.interior_dofs] = self.coeffs
        return full


@dataclass
class AssembledForms:
    """Sparse stiffness and mass matrices over the interior dofs."""
    K: sp.csr_matrix
    M: sp.csr_matrix
    dofmap: DofMap


def _element_geometry(tri):
    xy = tri.element_coords()
    J = np.empty((tri.num_elements, 2, 2))
    J[:, :, 0] = xy[:, 1] - xy[:, 0]
    J[:, :, 1] = xy[:, 2] - xy[:, 0]
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1]
    Jinv[:, 0, 1] = -J[:, 0, 1]
    Jinv[:, 1, 0] = -J[:, 1, 0]
    Jinv[:, 1, 1] = J[:, 0, 0]
    Jinv /= detJ[:, None, None]
    return xy, J, detJ, Jinv


def _scatter_symmetric(loc, gi, n):
    nloc = gi.shape[1]
    rows = np.repeat(gi[:, :, None], nloc, axis=2).ravel()
    cols = np.repeat(gi[:, None, :], nloc, axis=1).ravel()
    vals = loc.ravel()
    keep = (rows >= 0) & (cols >= 0)
    mat = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n))
    return mat.tocsr()


def assemble(tri: Triangulation, dofmap: DofMap, coeffs) -> AssembledForms:
    """Stiffness (A-weighted gradients) and mass (B-weighted) matrices.

    Quadrature is exact for the polynomial integrands; Dirichlet rows and
    columns are eliminated.  Raises AssemblyError when no interior dofs
    remain.
    """
    if dofmap.num_interior == 0:
        raise AssemblyError("empty discrete space - refine the initial mesh")
    degree = dofmap.degree
    q = coeffs.max_degree
    pts, w = triangle_rule(2 * degree + q)
    bary = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    phi = shape_values(degree, bary)              # (nq, nloc)
    gref = shape_gradients(degree, bary)          # (nq, nloc, 2)
    xy, J, detJ, Jinv = _element_geometry(tri)
    X = np.einsum("ql,eld->eqd", bary, xy)        # physical quadrature points
    grad = np.einsum("qli,eij->eqlj", gref, Jinv)  # (ne, nq, nloc, 2)

    ne, nq = X.shape[0], X.shape[1]
    Aq = np.empty((ne, nq, 2, 2))
    Bq = np.empty((ne, nq))
    for rid in np.unique(tri.elem_region):
        m = tri.elem_region == rid
        Aq[m] = coeffs.eval_A(int(rid), X[m, :, 0], X[m, :, 1])
        Bq[m] = coeffs.eval_B(int(rid), X[m, :, 0], X[m, :, 1])

    wdet = w[None, :] * detJ[:, None]
    kloc = np.einsum("eqai,eqij,eqbj,eq->eab", grad, Aq, grad, wdet,
                     optimize=True)
    mloc = np.einsum("qa,qb,eq,eq->eab", phi, phi, Bq, wdet, optimize=True)
    kloc = 0.5 * (kloc + kloc.transpose(0, 2, 1))
    mloc = 0.5 * (mloc + mloc.transpose(0, 2, 1))

    gi = dofmap.interior_index[dofmap.elem_dofs]
    n = dofmap.num_interior
    return AssembledForms(_scatter_symmetric(kloc, gi, n),
                          _scatter_symmetric(mloc, gi, n), dofmap)


class _UnitCoefficients:
    """Identity A, unit B, any region id."""
    max_degree = 0

    def eval_A(self, region_id, x, y):
        out = np.zeros(np.shape(np.asarray(x)) + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        return out

    def eval_B(self, region_id, x, y):
        return np.ones(np.shape(np.asarray(x)))

    def eval_divA(self, region_id, x, y):
        return np.zeros(np.shape(np.asarray(x)) + (2,))


def assemble_unit(tri: Triangulation, dofmap: DofMap) -> AssembledForms:
    """Plain Laplace stiffness and L2 mass matrices (A = I, B = 1)."""
    return assemble(tri, dofmap, _UnitCoefficients())


def norms(u: DiscreteFunction, forms: AssembledForms,
          unit_forms: AssembledForms | None = None, tri=None):
    """Energy, weighted-L2, and full H1 norms of a discrete function.

    The H1 norm needs the unit forms; pass them or the triangulation so
    they can be assembled on demand.
    """
    x = u.coeffs
    a = float(np.sqrt(x @ (forms.K @ x)))
    b = float(np.sqrt(x @ (forms.M @ x)))
    if unit_forms is None:
        if tri is None:
            raise AssemblyError("norms: need unit_forms or tri for the H1 norm")
        unit_forms = assemble_unit(tri, u.dofmap)
    h1 = float(np.sqrt(x @ (unit_forms.K @ x) + x @ (unit_forms.M @ x)))
    return a, b, h1


# -- evaluation ---------------------------------------------------------------


def eval_function(u: DiscreteFunction, tri: Triangulation, elem: int, bary):
    """Value(s) of u at barycentric point(s) of one element."""
    vals = u.full_values()[u.dofmap.elem_dofs[elem]]
    phi = shape_values(u.dofmap.degree, bary)
    out = phi @ vals
    return float(out[0]) if out.shape == (1,) else out


def eval_gradient(u: DiscreteFunction, tri: Triangulation, elem: int, bary):
    """Physical gradient(s) of u at barycentric point(s) of one element."""
    vals = u.full_values()[u.dofmap.elem_dofs[elem]]
    gref = shape_gradients(u.dofmap.degree, bary)
    _, _, _, Jinv = _element_geometry(tri)
    g = np.einsum("qli,ij->qlj", gref, Jinv[elem])
    out = np.einsum("qlj,l->qj", g, vals)
    return out[0] if out.shape[0] == 1 else out


def barycentric_polynomials(tri: Triangulation, elem: int):
    """The three barycentric coordinates of an element as affine Poly2."""
    p = tri.element_coords([elem])[0]
    out = []
    twoA = ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1])
            - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1]))
    for i in range(3):
        xa, ya = p[(i + 1) % 3]
        xb, yb = p[(i + 2) % 3]
        c0 = (xa * yb - xb * ya) / twoA
        cx = (ya - yb) / twoA
        cy = (xb - xa) / twoA
        out.append(Poly2.affine(c0, cx, cy))
    return out


def basis_polynomials(tri: Triangulation, elem: int, degree: int):
    """Nodal basis functions of one element as physical-coordinate Poly2."""
    l0, l1, l2 = barycentric_polynomials(tri, elem)
    lam = [l0, l1, l2]
    one = Poly2.const(1.0)
    if degree == 1:
        return lam
    if degree == 2:
        out = [l * (2.0 * l - one) for l in lam]
        for i in range(3):
            out.append(4.0 * (lam[(i + 1) % 3] * lam[(i + 2) % 3]))
        return out
    if degree == 3:
        out = [0.5 * (l * ((3.0 * l - one) * (3.0 * l - 2.0 * one)))
               for l in lam]
        for i in range(3):
            la, lb = lam[(i + 1) % 3], lam[(i + 2) % 3]
            out.append(4.5 * (la * lb * (3.0 * la - one)))
            out.append(4.5 * (la * lb * (3.0 * lb - one)))
        out.append(27.0 * (l0 * l1 * l2))
        return out
    raise AssemblyError(f"unsupported degree {degree}")


def local_polynomial(u: DiscreteFunction, tri: Triangulation,
                     elem: int) -> Poly2:
    """The restriction of u to one element as an exact Poly2."""
    vals = u.full_values()[u.dofmap.elem_dofs[elem]]
    out = Poly2.zero()
    for c, p in zip(vals, basis_polynomials(tri, elem, u.dofmap.degree)):
        if c != 0.0:
            out = out + c * p
    return out


def interpolate(tri: Triangulation, dofmap: DofMap, func) -> DiscreteFunction:
    """Nodal interpolant of a callable f(x, y); boundary nodes are zeroed."""
    pts = dof_coordinates(tri, dofmap)[dofmap.interior_dofs]
    vals = np.asarray(func(pts[:, 0], pts[:, 1]), dtype=float)
    return DiscreteFunction(dofmap, vals)


def prolong(u: DiscreteFunction, tri_coarse: Triangulation,
            tri_fine: Triangulation, dofmap_fine: DofMap,
            ancestors=None) -> DiscreteFunction:
    """Represent a coarse function exactly in the space of a refinement.

    ``ancestors`` maps fine elements to coarse elements and defaults to
    ``tri_fine.parent_elements`` (valid when tri_fine came from a single
    refine/refine_times call on tri_coarse).
    """
    if ancestors is None:
        ancestors = tri_fine.parent_elements
    ancestors = np.asarray(ancestors, dtype=np.int64)
    deg = u.dofmap.degree
    if deg != dofmap_fine.degree:
        raise AssemblyError("prolongation requires matching degrees")
    nodes = reference_nodes(deg)                       # (nloc, 3)
    fine_xy = tri_fine.element_coords()                # (nef, 3, 2)
    pts = np.einsum("la,ead->eld", nodes, fine_xy)     # fine node coords
    coarse_xy = tri_coarse.element_coords(ancestors)   # (nef, 3, 2)
    # barycentric coordinates of the fine nodes in the coarse ancestors
    d1 = coarse_xy[:, 1] - coarse_xy[:, 0]
    d2 = coarse_xy[:, 2] - coarse_xy[:, 0]
    det = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])[:, None]
    rx = pts[:, :, 0] - coarse_xy[:, None, 0, 0]
    ry = pts[:, :, 1] - coarse_xy[:, None, 0, 1]
    s = (rx * d2[:, None, 1] - ry * d2[:, None, 0]) / det
    t = (ry * d1[:, None, 0] - rx * d1[:, None, 1]) / det
    bary = np.stack([1.0 - s - t, s, t], axis=-1)      # (nef, nloc, 3)
    phi = shape_values(deg, bary.reshape(-1, 3))       # (nef*nloc, nloc)
    coarse_vals = u.full_values()[u.dofmap.elem_dofs[ancestors]]  # (nef, nloc)
    vals = np.einsum("pa,pa->p", phi,
                     np.repeat(coarse_vals, nodes.shape[0], axis=0))
    full = np.zeros(dofmap_fine.num_dofs)
    full[dofmap_fine.elem_dofs.ravel()] = vals
    return DiscreteFunction(dofmap_fine, full[dofmap_fine.interior_dofs])


# -- matrix export -------------------------------------------------------------


def export_matrix(mat, path):
    """Write a sparse matrix as 'row col value' lines for cross-checks."""
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"afem-matrix {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")


def import_matrix(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "afem-matrix":
            raise AssemblyError(f"{path}: not an afem-matrix file")
        rows, cols, nnz = (int(v) for v in header[1:])
        r = np.empty(nnz, dtype=np.int64)
        c = np.empty(nnz, dtype=np.int64)
        v = np.empty(nnz)
        for i in range(nnz):
            parts = fh.readline().split()
            r[i], c[i], v[i] = int(parts[0]), int(parts[1]), float(parts[2])
    return sp.coo_matrix((v, (r, c)), shape=(rows, cols)).tocsr()
