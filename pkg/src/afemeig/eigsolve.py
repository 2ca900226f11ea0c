"""Generalized symmetric eigensolver for the discrete pencil (K, M).

Small problems go through the dense LAPACK path; larger ones use a
blocked LOBPCG iteration preconditioned by a sparse factorization of the
stiffness matrix, started from a seeded subspace so runs reproduce
bit-for-bit.  Eigenvectors come out ascending, b-orthonormal, with the
largest-magnitude coefficient made positive.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .fem import AssembledForms, DiscreteFunction

DENSE_CUTOFF = 500
RESIDUAL_TOL = 1e-9
CLUSTER_RTOL = 1e-6


class EigenSolveError(Exception):
    """Eigensolver failure; carries the best residual norms reached."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass
class EigenPair:
    """One eigenvalue with its b-normalized eigenfunction."""
    value: float
    function: DiscreteFunction
    residual_norm: float
    cluster: tuple = ()


@dataclass
class SpectrumSlice:
    """The m smallest eigenpairs of one discrete problem."""
    values: np.ndarray          # ascending
    vectors: np.ndarray         # (n, m), b-orthonormal columns
    residual_norms: np.ndarray
    clusters: list              # tuples of 1-based indices, gap-tolerance groups
    dofmap: object

    def cluster_of(self, j: int) -> tuple:
        for c in self.clusters:
            if j in c:
                return c
        raise EigenSolveError(f"index {j} outside the computed slice")


def cluster_tags(values, rtol: float = CLUSTER_RTOL):
    """Group ascending eigenvalues whose consecutive relative gaps stay
    below rtol.  Returns a list of tuples of 1-based indices."""
    values = np.asarray(values, dtype=float)
    clusters = []
    current = [1]
    for i in range(1, values.shape[0]):
        gap = values[i] - values[i - 1]
        scale = max(abs(values[i]), abs(values[i - 1]), 1e-300)
        if gap <= rtol * scale:
            current.append(i + 1)
        else:
            clusters.append(tuple(current))
            current = [i + 1]
    clusters.append(tuple(current))
    return clusters


def _residual_norms(K, M, values, vectors):
    KX = K @ vectors
    MX = M @ vectors
    res = KX - MX * values[None, :]
    num = np.linalg.norm(res, axis=0)
    den = np.linalg.norm(KX, axis=0)
    den[den == 0.0] = 1.0
    return num / den


def _b_orthonormalize(M, values, vectors, rtol=CLUSTER_RTOL):
    """Gram-Schmidt in the M inner product inside each gap cluster;
    across clusters the solver output is already orthogonal."""
    for cluster in cluster_tags(values, rtol):
        idx = [j - 1 for j in cluster]
        for pos, j in enumerate(idx):
            v = vectors[:, j]
            for i in idx[:pos]:
                v = v - (vectors[:, i] @ (M @ v)) * vectors[:, i]
            nb = np.sqrt(v @ (M @ v))
            vectors[:, j] = v / nb
    # plain b-renormalization for the rest
    nb = np.sqrt(np.einsum("ij,ij->j", vectors, M @ vectors))
    vectors /= nb[None, :]
    return vectors


def _fix_signs(vectors):
    for j in range(vectors.shape[1]):
        k = int(np.argmax(np.abs(vectors[:, j])))
        if vectors[k, j] < 0.0:
            vectors[:, j] = -vectors[:, j]
    return vectors


def _polish_block(K, M, lu, X, m, residual_tol, max_rounds=40):
    """Inverse subspace iteration with Rayleigh-Ritz, reusing the K
    factorization, until the first m residuals meet the tolerance.

    Contracts whatever LOBPCG left on the table; each round is one block
    solve plus a small dense eigenproblem, fully deterministic."""
    values = None
    for _ in range(max_rounds):
        G = X.T @ (M @ X)
        G = 0.5 * (G + G.T)
        X = sla.solve_triangular(np.linalg.cholesky(G), X.T, lower=True).T
        A = X.T @ (K @ X)
        B = X.T @ (M @ X)
        values, C = sla.eigh(0.5 * (A + A.T), 0.5 * (B + B.T))
        X = X @ C
        res = _residual_norms(K, M, values, X)
        if np.all(res[:m] <= 0.1 * residual_tol):
            break
        X = lu.solve(M @ X)
    return values, X


def solve_smallest(forms: AssembledForms, m: int, method: str = "auto",
                   seed: int = 0, cluster_rtol: float = CLUSTER_RTOL,
                   residual_tol: float = RESIDUAL_TOL,
                   maxiter: int = 400) -> SpectrumSlice:
    """The m smallest eigenpairs of K x = lambda M x.

    method 'auto' picks dense LAPACK up to DENSE_CUTOFF interior dofs and
    the blocked preconditioned iteration beyond; 'dense' and 'iterative'
    force a path.  Raises EigenSolveError when the iteration cannot push
    every residual below residual_tol.
    """
    n = forms.K.shape[0]
    if m < 1:
        raise EigenSolveError(f"need at least one eigenpair, got m={m}")
    if m > n:
        raise EigenSolveError(f"requested {m} eigenpairs of a {n}-dim problem")
    if method not in ("auto", "dense", "iterative"):
        raise EigenSolveError(f"unknown method {method!r}")
    if method == "auto":
        method = "dense" if n <= DENSE_CUTOFF else "iterative"

    if method == "dense":
        values, vectors = sla.eigh(forms.K.toarray(), forms.M.toarray(),
                                   subset_by_index=[0, m - 1])
    else:
        block = min(n, max(m + 2, 3))
        if n < 5 * block + 1:
            # LOBPCG needs room for its trial subspace; fall back rather
            # than fail on tiny corner cases.
            values, vectors = sla.eigh(forms.K.toarray(), forms.M.toarray(),
                                       subset_by_index=[0, block - 1])
        else:
            lu = spla.splu(forms.K.tocsc())
            prec = spla.LinearOperator(forms.K.shape, matvec=lu.solve,
                                       matmat=lu.solve)
            rng = np.random.default_rng([seed, n, m])
            X = rng.standard_normal((n, block))
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    _, X = spla.lobpcg(forms.K, X, B=forms.M, M=prec,
                                       largest=False, tol=1e-10,
                                       maxiter=maxiter)
                if not np.all(np.isfinite(X)):
                    raise np.linalg.LinAlgError("non-finite iterate")
                values, X = _polish_block(forms.K, forms.M, lu, X, m,
                                          residual_tol)
            except np.linalg.LinAlgError as exc:
                raise EigenSolveError(
                    f"iterative eigensolver broke down: {exc}") from exc
            vectors = X
        values, vectors = values[:m], vectors[:, :m]

    order = np.argsort(values, kind="stable")
    values = np.ascontiguousarray(values[order])
    vectors = np.ascontiguousarray(vectors[:, order])
    vectors = _b_orthonormalize(forms.M, values, vectors, cluster_rtol)
    vectors = _fix_signs(vectors)
    res = _residual_norms(forms.K, forms.M, values, vectors)
    if np.any(res > residual_tol):
        raise EigenSolveError(
            f"eigensolver residuals {res} exceed {residual_tol}",
            residuals=res)
    return SpectrumSlice(values, vectors, res,
                         cluster_tags(values, cluster_rtol), forms.dofmap)


def rayleigh(u, forms: AssembledForms) -> float:
    """Rayleigh quotient of a coefficient vector or DiscreteFunction."""
    x = u.coeffs if isinstance(u, DiscreteFunction) else np.asarray(u, dtype=float)
    b = x @ (forms.M @ x)
    if b == 0.0:
        raise EigenSolveError("Rayleigh quotient of the zero function")
    return float(x @ (forms.K @ x)) / float(b)


def pick_j(spectrum: SpectrumSlice, j: int) -> EigenPair:
    """The j-th ascending eigenpair (1-based) with its cluster tag."""
    if j < 1 or j > spectrum.values.shape[0]:
        raise EigenSolveError(
            f"eigenvalue index {j} outside computed range "
            f"1..{spectrum.values.shape[0]}")
    u = DiscreteFunction(spectrum.dofmap, spectrum.vectors[:, j - 1].copy())
    return EigenPair(float(spectrum.values[j - 1]), u,
                     float(spectrum.residual_norms[j - 1]),
                     spectrum.cluster_of(j))
