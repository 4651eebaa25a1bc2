from .batch import DIAGNOSTIC_FIELDS, solve_batch
from .objectives import KINDS, PixelProblem, build_problem, cosine_similarity, make_objective
from .refine import (
    DEFAULT_BACKENDS,
    PixelFit,
    default_configs,
    derive_anisotropy_roughness,
    fit_sigma,
    fuse_normals,
    refine_albedo,
    refine_diffuse_normal,
    refine_specular_normal,
    solve_problem,
)
from .solvers import BACKENDS, SolveResult, SolverConfig, minimize

__all__ = [
    "BACKENDS",
    "DEFAULT_BACKENDS",
    "DIAGNOSTIC_FIELDS",
    "KINDS",
    "PixelFit",
    "PixelProblem",
    "SolveResult",
    "SolverConfig",
    "build_problem",
    "cosine_similarity",
    "default_configs",
    "derive_anisotropy_roughness",
    "fit_sigma",
    "fuse_normals",
    "make_objective",
    "minimize",
    "refine_albedo",
    "refine_diffuse_normal",
    "refine_specular_normal",
    "solve_batch",
    "solve_problem",
]
