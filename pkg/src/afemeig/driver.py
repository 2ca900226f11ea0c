"""The adaptive loop and its diagnostics.

One iteration solves the discrete eigenproblem on the current mesh,
evaluates the residual estimator at the computed pair, marks, and
refines.  Every iteration is logged; stop rules are disjunctive.  Runs
with the same configuration and seed reproduce bit-for-bit, which is why
wall-clock times stay out of the CSV log unless explicitly requested.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import eigsolve, estimator, fem, marking
from . import mesh as _mesh
from .problem import ProblemDef

CSV_HEADER = "k,nelem,dofs,lambda,eta,eta_max,marked,hmax,dist_h1,lambda_err,wall_ms"


class ConfigError(Exception):
    pass


@dataclass
class AdaptConfig:
    """Everything one adaptive run needs."""
    problem: ProblemDef
    mark: marking.MarkConfig = field(default_factory=marking.MarkConfig)
    max_iterations: int = 100
    max_dofs: int = 50_000
    eta_tol: float = 0.0
    seed: int = 0
    solver_method: str = "auto"
    compute_distance: bool = True
    record_walltime: bool = False

    def __post_init__(self):
        have_rule = (self.max_iterations is not None
                     or self.max_dofs is not None or self.eta_tol > 0.0)
        if not have_rule:
            raise ConfigError("at least one stop rule must be set")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if self.max_dofs is not None and self.max_dofs < 1:
            raise ConfigError("max_dofs must be >= 1")


@dataclass
class IterationRecord:
    k: int
    nelem: int
    dofs: int
    lam: float
    eta: float
    eta_max: float
    marked: int
    hmax: float
    dist_h1: float | None = None
    lambda_err: float | None = None
    wall_ms: float | None = None

    def to_csv_row(self) -> str:
        def f(v):
            return "" if v is None else repr(float(v))

        return (f"{self.k},{self.nelem},{self.dofs},{f(self.lam)},{f(self.eta)},"
                f"{f(self.eta_max)},{self.marked},{f(self.hmax)},"
                f"{f(self.dist_h1)},{f(self.lambda_err)},{f(self.wall_ms)}")

    @staticmethod
    def from_csv_row(row: str) -> "IterationRecord":
        parts = row.split(",")
        if len(parts) != 11:
            raise ConfigError(f"bad log row {row!r}")

        def g(s):
            return None if s == "" else float(s)

        return IterationRecord(int(parts[0]), int(parts[1]), int(parts[2]),
                               float(parts[3]), float(parts[4]), float(parts[5]),
                               int(parts[6]), float(parts[7]), g(parts[8]),
                               g(parts[9]), g(parts[10]))


@dataclass
class RunLog:
    """Full record of one adaptive (or uniform) run."""
    records: list
    final_tri: _mesh.Triangulation
    final_pair: eigsolve.EigenPair
    final_field: estimator.EstimatorField
    final_spectrum: eigsolve.SpectrumSlice
    decomposition: list          # (k, n_fully_refined, n_remainder, n_never)
    problem_name: str
    eig_index: int
    reached_index: int | None = None

    def to_csv(self) -> str:
        rows = [CSV_HEADER] + [r.to_csv_row() for r in self.records]
        return "\n".join(rows) + "\n"

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    @staticmethod
    def records_from_csv(text: str):
        lines = [ln for ln in text.strip().split("\n") if ln]
        if not lines or lines[0] != CSV_HEADER:
            raise ConfigError("missing or wrong CSV header")
        return [IterationRecord.from_csv_row(ln) for ln in lines[1:]]

    def validate(self, lam_tol: float = 1e-9):
        """Check the logged invariants: positive eigenvalues, nonnegative
        estimators, nondecreasing dof counts, nonincreasing eigenvalues
        within the solver tolerance."""
        for r in self.records:
            if r.lam <= 0.0:
                raise ConfigError(f"iteration {r.k}: nonpositive eigenvalue")
            if r.eta < 0.0:
                raise ConfigError(f"iteration {r.k}: negative estimator")
        for a, b in zip(self.records, self.records[1:]):
            if b.dofs < a.dofs:
                raise ConfigError(f"iteration {b.k}: dof count decreased")
            if b.lam > a.lam * (1.0 + lam_tol):
                raise ConfigError(
                    f"iteration {b.k}: eigenvalue increased "
                    f"{a.lam} -> {b.lam}")

    def summary(self) -> str:
        last = self.records[-1]
        lines = [
            f"problem: {self.problem_name} (eigenvalue index {self.eig_index})",
            f"iterations: {last.k + 1}",
            f"final mesh: {last.nelem} elements, {last.dofs} interior dofs, "
            f"h_max {last.hmax:.6g}",
            f"final eigenvalue: {last.lam!r}",
            f"final estimator: {last.eta:.6g}",
        ]
        if last.lambda_err is not None:
            lines.append(f"eigenvalue error vs reference: {last.lambda_err:.6g}")
        if last.dist_h1 is not None:
            lines.append(f"H1 distance to reference eigenspace: {last.dist_h1:.6g}")
        if self.reached_index is not None:
            lines.append(f"closest reference eigenvalue index: {self.reached_index}")
            if self.reached_index != self.eig_index:
                lines.append("WARNING: run tracked eigenvalue index "
                             f"{self.eig_index} but landed nearest reference "
                             f"index {self.reached_index}")
        if self.decomposition:
            k, n0, ns, npl = self.decomposition[0]
            lines.append(
                "mesh-sequence split of the first recorded mesh "
                f"(finite-run approximation): fully-refined {n0}, "
                f"in-between {ns}, never-refined {npl}")
        return "\n".join(lines) + "\n"


def _solve_on(tri, problem: ProblemDef, cfg: AdaptConfig):
    dofmap = fem.build_dofmap(tri, problem.degree)
    forms = fem.assemble(tri, dofmap, problem.coefficients)
    m = min(problem.eig_index + 2, dofmap.num_interior)
    if m < problem.eig_index:
        raise eigsolve.EigenSolveError(
            f"mesh has only {dofmap.num_interior} interior dofs, cannot "
            f"reach eigenvalue index {problem.eig_index}")
    spectrum = eigsolve.solve_smallest(forms, m, method=cfg.solver_method,
                                       seed=cfg.seed)
    pair = eigsolve.pick_j(spectrum, problem.eig_index)
    return dofmap, forms, spectrum, pair


def _run_loop(cfg: AdaptConfig, mark_all: bool) -> RunLog:
    p = cfg.problem
    tri = p.tri
    history = [tri]
    records = []
    k = 0
    while True:
        t0 = time.perf_counter()
        try:
            dofmap, forms, spectrum, pair = _solve_on(tri, p, cfg)
        except eigsolve.EigenSolveError as exc:
            # abort with the partial log attached so callers can save it
            exc.iteration = k
            exc.partial_records = records
            raise
        fld = estimator.estimate(tri, dofmap, p.coefficients,
                                 pair.value, pair.function)
        dist = None
        if cfg.compute_distance and p.reference_basis:
            dist = dist_to_eigenspace(pair.function, tri, p.coefficients,
                                      p.reference_basis)
        lam_err = None if p.lambda_ref is None else pair.value - p.lambda_ref
        wall = (time.perf_counter() - t0) * 1e3 if cfg.record_walltime else None
        rec = IterationRecord(k, tri.num_elements, dofmap.num_interior,
                              pair.value, fld.eta_global,
                              float(fld.eta.max()) if fld.eta.size else 0.0,
                              0, _mesh.meshsize_max(tri), dist, lam_err, wall)
        records.append(rec)
        stop = ((cfg.max_iterations is not None and k >= cfg.max_iterations)
                or (cfg.max_dofs is not None
                    and dofmap.num_interior >= cfg.max_dofs)
                or (cfg.eta_tol > 0.0 and fld.eta_global <= cfg.eta_tol))
        if stop:
            break
        if mark_all:
            marks = marking.MarkSet(np.arange(tri.num_elements), 1.0)
        else:
            marks = marking.mark(fld, cfg.mark)
            if marks.converged:
                break
        rec.marked = int(marks.elements.size)
        tri = _mesh.refine(tri, marks.elements)
        history.append(tri)
        k += 1

    decomposition = [(d.k,) + d.sizes for d in _mesh.decompose_sequence(history)]
    reached = None
    if p.reference_spectrum:
        reached = int(np.argmin(np.abs(np.asarray(p.reference_spectrum)
                                       - pair.value))) + 1
    log = RunLog(records, tri, pair, fld, spectrum, decomposition,
                 p.name, p.eig_index, reached)
    log.validate()
    return log


def adapt_loop(cfg: AdaptConfig) -> RunLog:
    """Run solve -> estimate -> mark -> refine until a stop rule fires."""
    return _run_loop(cfg, mark_all=False)


def uniform_baseline(cfg: AdaptConfig) -> RunLog:
    """The same loop with marking replaced by mark-everything."""
    return _run_loop(cfg, mark_all=True)


# -- H1 distance to a reference eigenspace ---------------------------------------


def _quad_data(tri, dofmap, quad_degree):
    from .quadrature import triangle_rule
    pts, w = triangle_rule(quad_degree)
    bary = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    phi = fem.shape_values(dofmap.degree, bary)
    gref = fem.shape_gradients(dofmap.degree, bary)
    xy, J, detJ, Jinv = fem._element_geometry(tri)
    X = np.einsum("ql,eld->eqd", bary, xy)
    grad = np.einsum("qli,eij->eqlj", gref, Jinv)
    return X, w, detJ, phi, grad


def _min_quadratic_on_sphere(G, r):
    """Minimize c^T G c - 2 r^T c over the unit sphere.

    Trust-region subproblem at radius one: the global minimizer solves
    (G - nu I) c = r with nu below the smallest eigenvalue, found through
    the secular equation on the eigendecomposition of G.
    """
    lam, Q = np.linalg.eigh(G)
    rt = Q.T @ r
    scale = max(abs(lam[-1]), 1.0)

    def value(c):
        return float(c @ G @ c - 2.0 * r @ c)

    if np.linalg.norm(rt) < 1e-14 * scale:
        return Q[:, 0], float(lam[0])

    min_space = lam < lam[0] + 1e-12 * scale
    if np.all(np.abs(rt[min_space]) < 1e-13 * max(np.linalg.norm(rt), scale)):
        # r has no component on the bottom eigenspace: nu = lam_min with
        # the leftover norm placed on that eigenspace, if it fits.
        ci = np.zeros_like(rt)
        free = ~min_space
        ci[free] = rt[free] / (lam[free] - lam[0])
        s = float(np.sum(ci ** 2))
        if s <= 1.0:
            ci[0] = np.sqrt(max(1.0 - s, 0.0))
            c = Q @ ci
            return c, value(c)

    def norm2(nu):
        return float(np.sum((rt / (lam - nu)) ** 2))

    lo = lam[0] - np.linalg.norm(rt) - scale
    hi = lam[0] - 1e-14 * scale
    while norm2(hi) < 1.0 and lam[0] - hi > 1e-300:
        hi = lam[0] - (lam[0] - hi) * 0.25
    while norm2(lo) > 1.0:
        lo = lam[0] - 2.0 * (lam[0] - lo)
    nu = brentq(lambda v: norm2(v) - 1.0, lo, hi, xtol=1e-15, rtol=8.9e-16)
    ci = rt / (lam - nu)
    ci /= np.linalg.norm(ci)
    c = Q @ ci
    return c, value(c)


def dist_to_eigenspace(u: fem.DiscreteFunction, tri: _mesh.Triangulation,
                       coeffs, basis, quad_degree: int | None = None) -> float:
    """H1 distance from u to the b-normalized sphere of a reference span.

    The closed-form basis functions are b-orthonormalized with the same
    quadrature, then the sphere-constrained quadratic is minimized
    exactly.  For a one-dimensional eigenspace this reduces to the better
    of the two signs.
    """
    if not basis:
        raise ConfigError("reference eigenspace unavailable")
    deg = u.dofmap.degree
    if quad_degree is None:
        quad_degree = 2 * deg + 6
    X, w, detJ, phi, grad = _quad_data(tri, u.dofmap, quad_degree)
    vals = u.full_values()[u.dofmap.elem_dofs]         # (ne, nloc)
    uq = np.einsum("ql,el->eq", phi, vals)
    ugq = np.einsum("eqli,el->eqi", grad, vals)
    scale = w[None, :] * detJ[:, None]                 # (ne, nq)

    nb = len(basis)
    wq = np.empty((nb,) + uq.shape)
    wgq = np.empty((nb,) + ugq.shape)
    for i, bfun in enumerate(basis):
        wq[i] = bfun.value(X[:, :, 0], X[:, :, 1])
        wgq[i] = bfun.grad(X[:, :, 0], X[:, :, 1])
    Bq = np.empty(uq.shape)
    for rid in np.unique(tri.elem_region):
        m = tri.elem_region == rid
        Bq[m] = coeffs.eval_B(int(rid), X[m, :, 0], X[m, :, 1])

    def h1(aq, agq, bq, bgq):
        return float(np.sum(scale * (aq * bq + np.einsum("eqi,eqi->eq", agq, bgq))))

    Bgram = np.array([[float(np.sum(scale * Bq * wq[i] * wq[j]))
                       for j in range(nb)] for i in range(nb)])
    L = np.linalg.cholesky(Bgram)
    Linv = np.linalg.inv(L)
    G = np.array([[h1(wq[i], wgq[i], wq[j], wgq[j]) for j in range(nb)]
                  for i in range(nb)])
    r = np.array([h1(uq, ugq, wq[i], wgq[i]) for i in range(nb)])
    G = Linv @ G @ Linv.T
    r = Linv @ r
    uu = h1(uq, ugq, uq, ugq)
    _, val = _min_quadratic_on_sphere(G, r)
    return float(np.sqrt(max(uu + val, 0.0)))


# -- lower-bound and oscillation diagnostics ---------------------------------------


@dataclass
class LowerBoundEntry:
    element: int
    eta: float
    theorem_ratio: float      # eta_T over the discrete lower bound RHS
    corollary_ratio: float    # eta_T over the oscillation-free RHS
    osc_ratio: float          # oscillation over its stability bound


@dataclass
class LowerBoundLevel:
    k: int
    dofs: int
    entries: list

    @property
    def max_theorem_ratio(self):
        return max(e.theorem_ratio for e in self.entries)

    @property
    def max_corollary_ratio(self):
        return max(e.corollary_ratio for e in self.entries)

    @property
    def max_osc_ratio(self):
        return max(e.osc_ratio for e in self.entries)


@dataclass
class LowerBoundReport:
    problem_name: str
    levels: list

    def summary(self) -> str:
        lines = [f"lower-bound diagnostics: {self.problem_name}"]
        for lv in self.levels:
            lines.append(
                f"level {lv.k}: dofs {lv.dofs}, max ratios: "
                f"theorem {lv.max_theorem_ratio:.4g}, "
                f"corollary {lv.max_corollary_ratio:.4g}, "
                f"oscillation {lv.max_osc_ratio:.4g}")
        return "\n".join(lines) + "\n"


def _subset_norms(tri, dofmap, funcs, elems, quad_degree):
    """L2 norms and H1 seminorms of discrete functions over a subset of
    elements.  funcs is a list of full-value vectors; returns arrays
    (len(funcs),) of (l2sq, h1sq)."""
    from .quadrature import triangle_rule
    pts, w = triangle_rule(quad_degree)
    bary = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    phi = fem.shape_values(dofmap.degree, bary)
    gref = fem.shape_gradients(dofmap.degree, bary)
    xy = tri.element_coords(elems)
    J = np.empty((len(elems), 2, 2))
    J[:, :, 0] = xy[:, 1] - xy[:, 0]
    J[:, :, 1] = xy[:, 2] - xy[:, 0]
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1]
    Jinv[:, 0, 1] = -J[:, 0, 1]
    Jinv[:, 1, 0] = -J[:, 1, 0]
    Jinv[:, 1, 1] = J[:, 0, 0]
    Jinv /= detJ[:, None, None]
    grad = np.einsum("qli,eij->eqlj", gref, Jinv)
    scale = w[None, :] * detJ[:, None]
    out = []
    for fv in funcs:
        vals = fv[dofmap.elem_dofs[elems]]
        uq = np.einsum("ql,el->eq", phi, vals)
        gq = np.einsum("eqli,el->eqi", grad, vals)
        out.append((float(np.sum(scale * uq * uq)),
                    float(np.sum(scale * np.einsum("eqi,eqi->eq", gq, gq)))))
    return out


def verify_lower_bound(cfg: AdaptConfig, levels: int = 4, top: int = 10,
                       patch_bisections: int = _mesh.N_BISECT_INTERIOR,
                       whole_mesh: bool = False) -> LowerBoundReport:
    """Exercise the discrete local lower bound and the oscillation
    stability bound on a benchmark run.

    For each of the `top` largest-estimator elements of each level, the
    neighbor patch is bisected `patch_bisections` times, the eigenproblem
    is re-solved there, and the estimator is compared against the
    computable right-hand sides.  With whole_mesh=True every element is
    bisected instead of just the patch (a larger space containing the
    patch-refined one, so the bound still applies).
    """
    p = cfg.problem
    tri = p.tri
    report_levels = []
    for k in range(levels):
        dofmap, forms, spectrum, pair = _solve_on(tri, p, cfg)
        fld = estimator.estimate(tri, dofmap, p.coefficients,
                                 pair.value, pair.function)
        osc = estimator.oscillation(tri, dofmap, p.coefficients,
                                    pair.value, pair.function)
        h = np.sqrt(tri.areas())
        order = np.argsort(-fld.eta, kind="stable")
        entries = []
        qdeg = 2 * p.degree + 2 * p.coefficients.max_degree + 2
        for t in order[:min(top, order.size)]:
            t = int(t)
            nbrs = _mesh.neighbors(tri, t)
            refine_set = (np.arange(tri.num_elements) if whole_mesh
                          else nbrs)
            fine = _mesh.refine_times(tri, refine_set, patch_bisections)
            dof_f = fem.build_dofmap(fine, p.degree)
            forms_f = fem.assemble(fine, dof_f, p.coefficients)
            m = min(p.eig_index + 2, dof_f.num_interior)
            spectrum_f = eigsolve.solve_smallest(forms_f, m,
                                                 method=cfg.solver_method,
                                                 seed=cfg.seed)
            wpair = eigsolve.pick_j(spectrum_f, p.eig_index)
            u_f = fem.prolong(pair.function, tri, fine, dof_f)
            wvec = wpair.function.coeffs
            if wvec @ (forms_f.M @ u_f.coeffs) < 0.0:
                wvec = -wvec
            mu = wpair.value
            patch_f = np.nonzero(np.isin(fine.parent_elements, nbrs))[0]
            dvec = np.zeros(dof_f.num_dofs)
            dvec[dof_f.interior_dofs] = wvec - u_f.coeffs
            mvec = np.zeros(dof_f.num_dofs)
            mvec[dof_f.interior_dofs] = mu * wvec
            rvec = np.zeros(dof_f.num_dofs)
            rvec[dof_f.interior_dofs] = mu * wvec - pair.value * u_f.coeffs
            (d_l2, d_h1), (mw_l2, _), (rw_l2, _) = _subset_norms(
                fine, dof_f, [dvec, mvec, rvec], patch_f, qdeg)
            (u_l2, u_h1), = _subset_norms(
                tri, dofmap, [pair.function.full_values()], nbrs, qdeg)
            u_h1_full = np.sqrt(u_l2 + u_h1)
            osc_patch_res = h[t] * float(
                np.sqrt(np.sum(osc.residual_norms[nbrs] ** 2)))
            osc_t = osc_patch_res + float(osc.osc_jump[t])
            rhs_theorem = (np.sqrt(d_h1) + h[t] * np.sqrt(rw_l2) + osc_t)
            rhs_corollary = (np.sqrt(d_h1) + h[t] * np.sqrt(mw_l2)
                             + h[t] * (1.0 + pair.value) * u_h1_full)
            osc_bound = h[t] * (2.0 + pair.value) * u_h1_full
            entries.append(LowerBoundEntry(
                t, float(fld.eta[t]),
                float(fld.eta[t] / rhs_theorem),
                float(fld.eta[t] / rhs_corollary),
                float(osc_t / osc_bound)))
        report_levels.append(LowerBoundLevel(k, dofmap.num_interior, entries))
        marks = marking.mark(fld, cfg.mark)
        tri = _mesh.refine(tri, marks.elements)
    return LowerBoundReport(p.name, report_levels)


# -- reference eigenvalue by extrapolation ----------------------------------------


@dataclass
class ExtrapolationResult:
    value: float
    rate: float
    dofs: list
    eigenvalues: list


def compute_reference_eigenvalue(problem: ProblemDef, target_dofs: int = 30_000,
                                 seed: int = 0) -> ExtrapolationResult:
    """Reference eigenvalue from uniform refinement plus Richardson
    extrapolation.

    Bisects every element once per sweep; the meshsize halves every two
    sweeps, so the eigenvalues at every second sweep form a geometric
    error sequence.  Aitken extrapolation of the last three such values
    removes the leading term, and the observed rate is reported.
    """
    tri = problem.tri
    lams, dofs = [], []
    while True:
        dofmap = fem.build_dofmap(tri, problem.degree)
        if dofmap.num_interior >= problem.eig_index:
            forms = fem.assemble(tri, dofmap, problem.coefficients)
            m = min(problem.eig_index + 2, dofmap.num_interior)
            spectrum = eigsolve.solve_smallest(forms, m, seed=seed)
            lams.append(float(spectrum.values[problem.eig_index - 1]))
            dofs.append(dofmap.num_interior)
        else:
            lams.append(np.nan)
            dofs.append(dofmap.num_interior)
        if dofs[-1] >= target_dofs:
            break
        tri = _mesh.refine(tri, np.arange(tri.num_elements))
    # values at every second sweep, ending at the finest: h halves between
    # consecutive entries
    series = []
    for i in range(len(lams) - 1, -1, -2):
        if not np.isfinite(lams[i]):
            break
        series.append(lams[i])
    series.reverse()
    if len(series) < 3:
        raise ConfigError("not enough uniform levels for extrapolation; "
                          "raise target_dofs")
    e0, e1, e2 = series[-3], series[-2], series[-1]
    denom = (e2 - e1) - (e1 - e0)
    value = e2 - (e2 - e1) ** 2 / denom
    rate = float(np.log2(abs((e1 - e0) / (e2 - e1))))
    return ExtrapolationResult(float(value), rate, dofs, lams)
