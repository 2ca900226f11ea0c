"""Residual a-posteriori error estimation.

The element residual -div(A grad v) - mu B v is formed as an exact
bivariate polynomial per element (coefficients and the local finite
element function are polynomials), the jump residual as the mismatch of
the conormal flux A grad v . n across interior sides.  All norms are
computed with quadrature exact for the integrand degree.

Local estimator: eta_T^2 = h_T^2 ||R||_T^2 + h_T ||J||_{dT}^2 with
h_T = sqrt(|T|).  Each interior side contributes its full ||J||_S^2 to
both adjacent elements, matching the per-element boundary integral
literally; the global estimator consequently counts every interior side
twice, consistently throughout all diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import DiscreteFunction, DofMap, basis_polynomials
from .mesh import Triangulation
from .poly import Poly2
from .quadrature import map_to_element, segment_rule, triangle_rule


@dataclass(frozen=True)
class LocalEstimator:
    """Estimator parts of one element (weighted as in the module doc)."""
    element: int
    eta: float
    part_residual: float   # h_T^2 ||R||_T^2
    part_jump: float       # h_T ||J||_{dT}^2
    osc_residual: float    # h_T ||R - Rbar||_T, 0 until oscillation() ran
    osc_jump: float        # h_T^(1/2) ||J - Jbar||_{dT}


@dataclass
class EstimatorField:
    """Per-element estimators for one (mu, v) pair on one mesh."""
    tri: Triangulation
    mu: float
    v: DiscreteFunction
    eta: np.ndarray
    part_residual: np.ndarray
    part_jump: np.ndarray
    eta_global: float
    osc_residual: np.ndarray | None = None
    osc_jump: np.ndarray | None = None

    def local(self, t: int) -> LocalEstimator:
        osc_r = 0.0 if self.osc_residual is None else float(self.osc_residual[t])
        osc_j = 0.0 if self.osc_jump is None else float(self.osc_jump[t])
        return LocalEstimator(int(t), float(self.eta[t]),
                              float(self.part_residual[t]),
                              float(self.part_jump[t]), osc_r, osc_j)


def _local_poly(tri, degree, elem, values) -> Poly2:
    out = Poly2.zero()
    for c, p in zip(values, basis_polynomials(tri, elem, degree)):
        if c != 0.0:
            out = out + c * p
    return out


def _region_polys(coeffs, rid):
    r = coeffs.region(rid)
    return r.a00, r.a01, r.a11, r.b


def _flux_and_residual(tri, coeffs, elem, vloc: Poly2, mu: float):
    """(flux0, flux1, R) on one element, all exact Poly2."""
    a00, a01, a11, b = _region_polys(coeffs, int(tri.elem_region[elem]))
    vx, vy = vloc.dx(), vloc.dy()
    f0 = a00 * vx + a01 * vy
    f1 = a01 * vx + a11 * vy
    R = -(f0.dx() + f1.dy()) - mu * (b * vloc)
    return f0, f1, R


def element_residual(tri: Triangulation, dofmap: DofMap, coeffs,
                     elem: int, mu: float, v: DiscreteFunction) -> Poly2:
    """Strong-form residual -div(A grad v) - mu B v on one element."""
    vals = v.full_values()[dofmap.elem_dofs[elem]]
    vloc = _local_poly(tri, dofmap.degree, elem, vals)
    _, _, R = _flux_and_residual(tri, coeffs, elem, vloc, mu)
    return R


def _side_normal(tri, side):
    """Unit normal of a side, outward with respect to side_elems[side, 0]."""
    a, b = tri.side_vertices[side]
    pa, pb = tri.vertex_coords[a], tri.vertex_coords[b]
    t = pb - pa
    n = np.array([t[1], -t[0]]) / np.linalg.norm(t)
    e0 = int(tri.side_elems[side, 0])
    opp = [v for v in tri.elem_vertices[e0] if v != a and v != b][0]
    mid = 0.5 * (pa + pb)
    if n @ (tri.vertex_coords[opp] - mid) > 0:
        n = -n
    return n


def jump_residual(tri: Triangulation, dofmap: DofMap, coeffs, side: int,
                  v: DiscreteFunction) -> np.polynomial.Polynomial:
    """Conormal-flux jump across one side as a polynomial in the side
    parameter t in [0, 1] (running from the lower to the higher vertex
    id).  Boundary sides return the zero polynomial."""
    if tri.side_elems[side, 1] < 0:
        return np.polynomial.Polynomial([0.0])
    full = v.full_values()
    e1, e2 = (int(e) for e in tri.side_elems[side])
    n1 = _side_normal(tri, side)
    pa = tri.vertex_coords[tri.side_vertices[side, 0]]
    pb = tri.vertex_coords[tri.side_vertices[side, 1]]
    out = None
    for e, n in ((e1, n1), (e2, -n1)):
        vloc = _local_poly(tri, dofmap.degree, e, full[dofmap.elem_dofs[e]])
        f0, f1, _ = _flux_and_residual(tri, coeffs, e, vloc, 0.0)
        conormal = n[0] * f0 + n[1] * f1
        seg = conormal.restrict_to_segment(pa, pb)
        out = seg if out is None else out + seg
    return out


def _residual_values(tri, dofmap, coeffs, mu, elem_vals, X, bary):
    """R = -div(A grad v) - mu B v at points X (ne, nq, 2) with
    barycentric coordinates bary (ne, nq, 3) per element."""
    from .fem import (shape_values, shape_gradients, shape_hessians,
                      _element_geometry)

    degree = dofmap.degree
    ne, nq = X.shape[:2]
    flat = bary.reshape(-1, 3)
    phi = shape_values(degree, flat).reshape(ne, nq, -1)
    gref = shape_gradients(degree, flat).reshape(ne, nq, -1, 2)
    href = shape_hessians(degree, flat).reshape(ne, nq, -1, 2, 2)
    _, _, _, Jinv = _element_geometry(tri)
    grad = np.einsum("eqli,eij->eqlj", gref, Jinv)
    hess = np.einsum("eai,eqlab,ebj->eqlij", Jinv, href, Jinv)
    vq = np.einsum("eql,el->eq", phi, elem_vals)
    gv = np.einsum("eqli,el->eqi", grad, elem_vals)
    hv = np.einsum("eqlij,el->eqij", hess, elem_vals)

    R = np.empty((ne, nq))
    for rid in np.unique(tri.elem_region):
        m = tri.elem_region == rid
        A = coeffs.eval_A(int(rid), X[m, :, 0], X[m, :, 1])
        dA = coeffs.eval_divA(int(rid), X[m, :, 0], X[m, :, 1])
        B = coeffs.eval_B(int(rid), X[m, :, 0], X[m, :, 1])
        div_flux = (np.einsum("eqi,eqi->eq", dA, gv[m])
                    + np.einsum("eqij,eqij->eq", A, hv[m]))
        R[m] = -div_flux - mu * B * vq[m]
    return R


def estimate(tri: Triangulation, dofmap: DofMap, coeffs, mu: float,
             v: DiscreteFunction) -> EstimatorField:
    """Local and global residual estimators for the pair (mu, v).

    Vectorized over elements and sides; agrees with the per-element
    polynomial path (element_residual / jump_residual) to roundoff.
    """
    from .fem import shape_gradients, _element_geometry

    ne = tri.num_elements
    degree = dofmap.degree
    q = coeffs.max_degree
    h2 = tri.areas()
    h = np.sqrt(h2)
    elem_vals = v.full_values()[dofmap.elem_dofs]
    xy = tri.element_coords()

    # element residual part
    rpts, rw = triangle_rule(2 * (q + degree))
    rbary = np.column_stack([1.0 - rpts[:, 0] - rpts[:, 1],
                             rpts[:, 0], rpts[:, 1]])
    X = np.einsum("ql,eld->eqd", rbary, xy)
    bary = np.broadcast_to(rbary[None], (ne,) + rbary.shape)
    R = _residual_values(tri, dofmap, coeffs, mu, elem_vals, X, bary)
    part_res = h2 * 2.0 * h2 * ((R * R) @ rw)

    # jump part, per interior side evaluated from both adjacent elements
    st, sw = segment_rule(2 * (q + degree))
    part_jump = np.zeros(ne)
    sides = np.nonzero(~tri.boundary_sides)[0]
    if sides.size:
        pa = tri.vertex_coords[tri.side_vertices[sides, 0]]
        pb = tri.vertex_coords[tri.side_vertices[sides, 1]]
        tang = pb - pa
        lengths = np.linalg.norm(tang, axis=1)
        normal = np.column_stack([tang[:, 1], -tang[:, 0]]) / lengths[:, None]
        pts = pa[:, None, :] + st[None, :, None] * tang[:, None, :]

        _, _, _, Jinv = _element_geometry(tri)
        flux_dot_n = []
        for side_col in (0, 1):
            es = tri.side_elems[sides, side_col]
            p0 = xy[es, 0]
            d1 = xy[es, 1] - p0
            d2 = xy[es, 2] - p0
            det = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])[:, None]
            rx = pts[:, :, 0] - p0[:, None, 0]
            ry = pts[:, :, 1] - p0[:, None, 1]
            s = (rx * d2[:, None, 1] - ry * d2[:, None, 0]) / det
            t = (ry * d1[:, None, 0] - rx * d1[:, None, 1]) / det
            sbary = np.stack([1.0 - s - t, s, t], axis=-1)
            gref = shape_gradients(degree, sbary.reshape(-1, 3)).reshape(
                sides.size, st.size, -1, 2)
            grad = np.einsum("sqli,sij->sqlj", gref, Jinv[es])
            gv = np.einsum("sqli,sl->sqi", grad, elem_vals[es])
            flux = np.empty_like(gv)
            for rid in np.unique(tri.elem_region[es]):
                m = tri.elem_region[es] == rid
                A = coeffs.eval_A(int(rid), pts[m, :, 0], pts[m, :, 1])
                flux[m] = np.einsum("sqij,sqj->sqi", A, gv[m])
            flux_dot_n.append(np.einsum("sqi,si->sq", flux, normal))
        J = flux_dot_n[0] - flux_dot_n[1]
        norm2 = lengths * ((J * J) @ sw)
        e1 = tri.side_elems[sides, 0]
        e2 = tri.side_elems[sides, 1]
        np.add.at(part_jump, e1, h[e1] * norm2)
        np.add.at(part_jump, e2, h[e2] * norm2)

    eta = np.sqrt(part_res + part_jump)
    return EstimatorField(tri, float(mu), v, eta, part_res, part_jump,
                          float(np.sqrt(np.sum(eta * eta))))


@dataclass
class OscillationField:
    """Oscillation parts: weighted per-element values plus the raw norms
    needed to aggregate over neighbor patches."""
    osc_residual: np.ndarray    # h_T ||R - Rbar||_T
    osc_jump: np.ndarray        # h_T^(1/2) ||J - Jbar||_{dT}
    residual_norms: np.ndarray  # ||R - Rbar||_T
    jump_norms: np.ndarray      # ||J - Jbar||_{dT}


def _monomial_basis(max_degree):
    return [(i, j) for d in range(max_degree + 1)
            for i in range(d, -1, -1) for j in (d - i,) ]


def oscillation(tri: Triangulation, dofmap: DofMap, coeffs, mu: float,
                v: DiscreteFunction) -> OscillationField:
    """Distance of R and J to elementwise/sidewise polynomials of degree
    ell-1, the data-oscillation part of the lower bound."""
    ne = tri.num_elements
    degree = dofmap.degree
    q = coeffs.max_degree
    h2 = tri.areas()
    h = np.sqrt(h2)
    full = v.full_values()
    xy = tri.element_coords()

    rdeg = 2 * (q + degree)
    rpts, rw = triangle_rule(rdeg)
    mono = _monomial_basis(degree - 1)
    res_norm = np.empty(ne)
    for e in range(ne):
        vloc = _local_poly(tri, degree, e, full[dofmap.elem_dofs[e]])
        _, _, R = _flux_and_residual(tri, coeffs, e, vloc, mu)
        if R.is_zero():
            res_norm[e] = 0.0
            continue
        phys = map_to_element(rpts, xy[e])
        rvals = R(phys[:, 0], phys[:, 1])
        # L2 projection onto P_(degree-1) in scaled local coordinates
        cx, cy = phys.mean(axis=0)
        sx = (phys[:, 0] - cx) / h[e]
        sy = (phys[:, 1] - cy) / h[e]
        V = np.column_stack([sx ** i * sy ** j for i, j in mono])
        G = (V * rw[:, None]).T @ V
        rhs = (V * rw[:, None]).T @ rvals
        c = np.linalg.solve(G, rhs)
        diff = rvals - V @ c
        res_norm[e] = np.sqrt(2.0 * h2[e] * float(rw @ (diff * diff)))

    sdeg = 2 * (q + degree)
    st, sw = segment_rule(sdeg)
    nleg = degree  # projection onto P_(degree-1): degree modes 0..degree-1
    leg = np.column_stack([
        np.polynomial.legendre.legval(2.0 * st - 1.0, np.eye(nleg)[k])
        for k in range(nleg)])
    jump_norm2 = np.zeros(ne)
    for s in np.nonzero(~tri.boundary_sides)[0]:
        e1, e2 = (int(e) for e in tri.side_elems[s])
        J = jump_residual(tri, dofmap, coeffs, int(s), v)
        jvals = J(st)
        coef = (2.0 * np.arange(nleg) + 1.0) * (sw @ (jvals[:, None] * leg))
        diff = jvals - leg @ coef
        pa = tri.vertex_coords[tri.side_vertices[s, 0]]
        pb = tri.vertex_coords[tri.side_vertices[s, 1]]
        norm2 = float(np.linalg.norm(pb - pa)) * float(sw @ (diff * diff))
        jump_norm2[e1] += norm2
        jump_norm2[e2] += norm2
    jump_norm = np.sqrt(jump_norm2)
    return OscillationField(h * res_norm, np.sqrt(h) * jump_norm,
                            res_norm, jump_norm)
