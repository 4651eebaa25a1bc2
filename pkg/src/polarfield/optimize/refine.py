"""Per-pixel refinement entry points and map-level helpers."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .objectives import AlbedoObjective, NormalObjective, PixelProblem, SigmaObjective
from .solvers import SolverConfig, minimize

DEFAULT_BACKENDS = {
    "diffuse-normal": "LBFGS-backtracking",
    "specular-normal": "LBFGS-backtracking",
    "sigma": "GaussNewton",
    "diffuse-albedo": "LBFGS-zoom",
    "specular-albedo": "LBFGS-zoom",
}

UNDERDETERMINED = "underdetermined"
DEGENERATE = "degenerate"


def default_configs(**overrides):
    """Solver config per problem kind; ``overrides`` maps kind to backend name."""
    out = {}
    for kind, backend in DEFAULT_BACKENDS.items():
        out[kind] = SolverConfig(backend=overrides.get(kind, backend))
    return out


def _config_for(config, kind):
    if isinstance(config, dict):
        return config[kind]
    return config


@dataclass
class PixelFit:
    kind: str
    index: int
    backend: str
    status: str
    iterations: int = 0
    grad_norm: float = float("nan")
    fun: float = float("nan")
    nfev: int = 0
    wall_time: float = 0.0
    normal: np.ndarray | None = None
    correlation: float = float("nan")
    sigma: np.ndarray | None = None
    tangent: np.ndarray | None = None
    albedo: np.ndarray | None = None
    clamped: bool = False

    @property
    def ok(self):
        return self.status not in (UNDERDETERMINED, DEGENERATE)


def flagged(kind, index, backend, status=UNDERDETERMINED) -> PixelFit:
    return PixelFit(kind, index, backend, status)


def solve_problem(problem: PixelProblem, config) -> PixelFit:
    """Solve one problem with the backend configured for its kind."""
    config = _config_for(config, problem.kind)
    kind = problem.kind
    if config.backend == "GaussNewton" and kind.endswith("normal"):
        raise ValueError("Gauss-Newton needs a least-squares objective; normal fits are not")
    start = time.perf_counter()
    fit = PixelFit(kind, problem.index, config.backend, "")
    if kind.endswith("normal"):
        obj = NormalObjective(problem)
        res = minimize(obj, obj.initial_point(), config)
        fit.normal = obj.decode(res.x)
        fit.correlation = obj.correlation(fit.normal)
    elif kind == "sigma":
        # sigma alone first; the joint (sigma, normal) solve then only has to
        # polish, which keeps the normal away from the lobe's horizon blow-up
        obj = SigmaObjective(problem, refine_normal=False)
        res = minimize(obj, obj.initial_point(), config)
        if problem.refine_normal:
            first = res
            obj = SigmaObjective(problem, refine_normal=True)
            res = minimize(obj, obj.initial_point(np.exp(first.x[:2])), config)
            res.iterations += first.iterations
            res.nfev += first.nfev
        sigma, n, t, _ = obj.decode(res.x)
        fit.sigma, fit.normal, fit.tangent = sigma, n, t
    else:
        obj = AlbedoObjective(problem)
        res = minimize(obj, obj.initial_point(), config)
        albedo = res.x.copy()
        fit.clamped = bool(np.any(albedo < 0))
        fit.albedo = np.maximum(albedo, 0.0)
    fit.status = res.status
    fit.iterations = res.iterations
    fit.grad_norm = res.grad_norm
    fit.fun = res.fun
    fit.nfev = res.nfev
    fit.wall_time = time.perf_counter() - start
    return fit


def refine_diffuse_normal(problem: PixelProblem, n_init, config: SolverConfig | None = None):
    """Unit diffuse normal maximizing the Lambert correlation, and that correlation."""
    fit = _normal_fit(problem, n_init, config, "diffuse-normal")
    return fit.normal, fit.correlation


def refine_specular_normal(problem: PixelProblem, n_init, config: SolverConfig | None = None):
    """Unit specular normal maximizing the reflection-lobe correlation, and that correlation."""
    fit = _normal_fit(problem, n_init, config, "specular-normal")
    return fit.normal, fit.correlation


def _normal_fit(problem, n_init, config, kind):
    if problem.kind != kind:
        raise ValueError(f"expected a {kind} problem, got {problem.kind}")
    if n_init is not None:
        problem = dataclasses.replace(problem, normal=np.asarray(n_init, dtype=float))
    return solve_problem(problem, config or SolverConfig(backend=DEFAULT_BACKENDS[kind]))


def fit_sigma(problem: PixelProblem, n_s=None, frame_init=None, config: SolverConfig | None = None, return_fit=False):
    """Ward lobe deviations along the (tangent, bitangent) axes.

    ``frame_init`` is ``[n, b, t]``; its tangent sets the in-plane reference
    axis of the lobe frame. With ``return_fit`` the full :class:`PixelFit`
    (including the jointly refined specular normal) is returned.
    """
    if problem.kind != "sigma":
        raise ValueError(f"expected a sigma problem, got {problem.kind}")
    changes = {}
    if frame_init is not None:
        n, _, t = (np.asarray(v, dtype=float) for v in frame_init)
        changes.update(normal=n, reference=t)
    elif n_s is not None:
        changes["normal"] = np.asarray(n_s, dtype=float)
    if changes:
        problem = dataclasses.replace(problem, **changes)
    fit = solve_problem(problem, config or SolverConfig(backend=DEFAULT_BACKENDS["sigma"]))
    return fit if return_fit else fit.sigma


def refine_albedo(problem: PixelProblem, n_hat=None, sigma=None, config: SolverConfig | None = None):
    """Least-squares albedo: ``(3,)`` for diffuse problems, scalar for specular."""
    changes = {}
    if n_hat is not None:
        changes["normal"] = np.asarray(n_hat, dtype=float)
    if sigma is not None:
        changes["sigma"] = np.asarray(sigma, dtype=float)
    if changes:
        problem = dataclasses.replace(problem, **changes)
    fit = solve_problem(problem, config or SolverConfig(backend=DEFAULT_BACKENDS[problem.kind]))
    if problem.kind == "specular-albedo":
        return float(fit.albedo[0])
    return fit.albedo


def derive_anisotropy_roughness(sigma):
    """``(sx - sy) / (sx + sy)`` and ``sx^2 + sy^2``; zero where sigma is unset."""
    sigma = np.asarray(sigma, dtype=float)
    sx, sy = sigma[..., 0], sigma[..., 1]
    total = sx + sy
    aniso = np.divide(sx - sy, total, out=np.zeros_like(total), where=total > 0)
    return aniso, sx * sx + sy * sy


def fuse_normals(n_d, n_s, corr_d, corr_s):
    """Blend normals with their clamped correlations as weights."""
    n_d = np.asarray(n_d, dtype=float)
    n_s = np.asarray(n_s, dtype=float)
    w_d = np.maximum(np.nan_to_num(np.asarray(corr_d, dtype=float)), 0.0)
    w_s = np.maximum(np.nan_to_num(np.asarray(corr_s, dtype=float)), 0.0)
    total = w_d + w_s
    safe = np.where(total > 0, total, 1.0)
    blend = (w_d / safe)[..., None] * n_d + (w_s / safe)[..., None] * n_s
    norm = np.linalg.norm(blend, axis=-1, keepdims=True)
    fallback = np.where((np.asarray(corr_d) >= np.asarray(corr_s))[..., None], n_d, n_s)
    good = (total > 0)[..., None] & (norm > 1e-12)
    return np.where(good, blend / np.where(norm > 0, norm, 1.0), fallback)
