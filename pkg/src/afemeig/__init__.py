"""Adaptive finite element solution of elliptic eigenvalue problems.

Solve -div(A grad u) = lambda B u with homogeneous Dirichlet conditions
on 2D polygonal domains through the adaptive loop
solve -> estimate -> mark -> refine, with residual a-posteriori
estimators and newest-vertex bisection.
"""

from .mesh import (MeshError, Triangulation, from_arrays, refine, refine_times,
                   uniform_refine, neighbors, patch, meshsize, meshsize_max,
                   regularity, decompose_sequence, read_mesh, write_mesh)
from .problem import (ProblemDef, ProblemError, CoefficientField,
                      RegionCoefficients, ReferenceEigenfunction, builtin,
                      load_problem, save_problem)
from .fem import (AssemblyError, DofMap, DiscreteFunction, AssembledForms,
                  build_dofmap, assemble, assemble_unit, norms, prolong,
                  interpolate, eval_function, eval_gradient, local_polynomial,
                  export_matrix, import_matrix)
from .eigsolve import (EigenPair, SpectrumSlice, EigenSolveError, solve_smallest,
                       rayleigh, pick_j, cluster_tags)
from .estimator import (EstimatorField, LocalEstimator, OscillationField,
                        estimate, oscillation, element_residual, jump_residual)
from .marking import (MarkConfig, MarkSet, MarkingError, MarkingReport, mark,
                      validate_marking)
from .driver import (AdaptConfig, ConfigError, IterationRecord, RunLog,
                     LowerBoundReport, adapt_loop, uniform_baseline,
                     verify_lower_bound, dist_to_eigenspace,
                     compute_reference_eigenvalue)
from .poly import Poly2

__all__ = [
    "MeshError", "Triangulation", "from_arrays", "refine", "refine_times",
    "uniform_refine", "neighbors", "patch", "meshsize", "meshsize_max",
    "regularity", "decompose_sequence", "read_mesh", "write_mesh",
    "ProblemDef", "ProblemError", "CoefficientField", "RegionCoefficients",
    "ReferenceEigenfunction", "builtin", "load_problem", "save_problem",
    "AssemblyError", "DofMap", "DiscreteFunction", "AssembledForms",
    "build_dofmap", "assemble", "assemble_unit", "norms", "prolong",
    "interpolate", "eval_function", "eval_gradient", "local_polynomial",
    "export_matrix", "import_matrix",
    "EigenPair", "SpectrumSlice", "EigenSolveError", "solve_smallest",
    "rayleigh", "pick_j", "cluster_tags",
    "EstimatorField", "LocalEstimator", "OscillationField", "estimate",
    "oscillation", "element_residual", "jump_residual",
    "MarkConfig", "MarkSet", "MarkingError", "MarkingReport", "mark",
    "validate_marking",
    "AdaptConfig", "ConfigError", "IterationRecord", "RunLog",
    "LowerBoundReport", "adapt_loop", "uniform_baseline",
    "verify_lower_bound", "dist_to_eigenspace", "compute_reference_eigenvalue",
    "Poly2",
]

__version__ = "0.1.0"
