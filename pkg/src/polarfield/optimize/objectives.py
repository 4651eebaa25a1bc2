"""Per-pixel refinement problems and their objectives.

Every objective works on a filtered light list (only lights with
``n . w_i > 0`` for the normal the problem was built around) and provides
``value_and_grad``. The sigma and albedo objectives are least squares and
also expose ``residuals`` returning ``(r, J)``.

Unit normals are optimized in a fixed tangent chart
``n(a, b) = normalize(n0 + a t0 + b b0)`` around the starting normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import LUMA, normalize
from ..errors import BelowHorizon, Underdetermined
from ..synth import shading_frame, ward_lobe

KINDS = ("diffuse-normal", "specular-normal", "sigma", "diffuse-albedo", "specular-albedo")
MIN_SAMPLES = 3
# Lobe fits drop near-grazing lights: the 1/sqrt(n . w_i) factor makes the
# model blow up for samples that drift across the horizon while the normal
# moves.
GRAZING_MARGIN = 0.05
LOG_SIGMA_LIMIT = 30.0


@dataclass(frozen=True)
class PixelProblem:
    """One pixel's refinement problem.

    ``observations`` is ``(K,)`` luminance, or ``(K, 3)`` for diffuse albedo;
    ``directions`` the matching ``(K, 3)`` light directions; ``weights`` the
    per-sample visibility gate. ``normal`` is the normal the light list was
    filtered against and the starting point for normal solves. ``sigma``
    and ``reference`` define the specular lobe for specular-albedo problems.
    """

    kind: str
    observations: np.ndarray
    directions: np.ndarray
    omega_o: np.ndarray
    normal: np.ndarray
    weights: np.ndarray | None = None
    sigma: np.ndarray | None = None
    reference: np.ndarray | None = None
    kappa: float = 1.0
    index: int = -1
    sigma_init: tuple = (0.2, 0.2)
    refine_normal: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        obs = np.asarray(self.observations, dtype=float)
        dirs = np.asarray(self.directions, dtype=float).reshape(-1, 3)
        if obs.shape[0] != dirs.shape[0]:
            raise ValueError("observations and directions differ in length")
        w = np.ones(dirs.shape[0]) if self.weights is None else np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "omega_o", np.asarray(self.omega_o, dtype=float))
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float))
        if self.reference is None:
            object.__setattr__(self, "reference", _reference_axis(self.normal))
        if int(np.count_nonzero(w)) < MIN_SAMPLES:
            raise Underdetermined(f"{self.kind}: fewer than {MIN_SAMPLES} usable samples")
        if self.kind in ("sigma", "specular-albedo") and float(self.normal @ self.omega_o) <= 0:
            raise BelowHorizon("view direction is below the specular normal's horizon")

    @property
    def size(self):
        return self.directions.shape[0]


def _reference_axis(n):
    n = np.asarray(n, dtype=float)
    return np.array([0.0, 1.0, 0.0]) if abs(n[0]) > 0.9 else np.array([1.0, 0.0, 0.0])


def build_problem(kind, signal, directions, omega_o, normal, visibility=None, **extra) -> PixelProblem:
    """Filter a full light sequence down to a :class:`PixelProblem`.

    ``signal`` is ``(N, 3)``; lights with ``normal . w_i <= 0`` are dropped
    (``<= GRAZING_MARGIN`` for sigma problems).
    ``visibility`` is an optional ``(N,)`` gate applied as sample weights.
    Raises :class:`Underdetermined` when fewer than three usable samples
    remain.
    """
    signal = np.asarray(signal, dtype=float)
    directions = np.asarray(directions, dtype=float)
    normal = np.asarray(normal, dtype=float)
    margin = GRAZING_MARGIN if kind == "sigma" else 0.0
    keep = directions @ normal > margin
    obs = signal[keep] if kind == "diffuse-albedo" else signal[keep] @ LUMA
    weights = None if visibility is None else np.asarray(visibility, dtype=float)[keep]
    return PixelProblem(kind, obs, directions[keep], omega_o, normal, weights, **extra)


def _unit(v):
    norm = float(np.linalg.norm(v))
    return v / norm if norm > 0 else v


class _Chart:
    """Tangent chart ``n(x) = normalize(n0 + x0 t0 + x1 b0)``."""

    def __init__(self, n0):
        self.n0 = _unit(np.asarray(n0, dtype=float))
        t0, b0 = shading_frame(self.n0)
        self.basis = np.stack([t0, b0], axis=1)  # (3, 2)

    def __call__(self, x):
        u = self.n0 + self.basis @ np.asarray(x, dtype=float)
        nu = float(np.linalg.norm(u))
        n = u / nu
        dn = (np.eye(3) - np.outer(n, n)) / nu @ self.basis  # (3, 2)
        return n, dn


def cosine_similarity(model, obs):
    """Normalized cross-correlation ``<m, o> / (|m| |o|)``; 0 when either is zero."""
    mn = float(np.linalg.norm(model))
    on = float(np.linalg.norm(obs))
    if mn == 0 or on == 0:
        return 0.0
    return float(model @ obs) / (mn * on)


class NormalObjective:
    """``F = -corr(model(n), obs)`` for the diffuse or specular normal.

    Diffuse model: ``nu_k (n . w_k)``. Specular model: ``nu_k (w_r . w_o)``
    with ``w_r = 2 (w_k . n) n - w_k``.
    """

    def __init__(self, problem: PixelProblem):
        if problem.kind not in ("diffuse-normal", "specular-normal"):
            raise ValueError("not a normal problem")
        self.problem = problem
        self.specular = problem.kind == "specular-normal"
        self.chart = _Chart(problem.normal)
        obs = problem.observations
        on = float(np.linalg.norm(obs))
        self.obs_hat = obs / on if on > 0 else obs
        self.dim = 2

    def initial_point(self):
        return np.zeros(2)

    def model(self, n):
        p = self.problem
        a = p.directions @ n
        if self.specular:
            c = float(n @ p.omega_o)
            return p.weights * (2.0 * a * c - p.directions @ p.omega_o)
        return p.weights * a

    def _model_jacobian(self, n):
        p = self.problem
        if self.specular:
            a = p.directions @ n
            c = float(n @ p.omega_o)
            jac = 2.0 * c * p.directions + 2.0 * a[:, None] * p.omega_o[None, :]
        else:
            jac = p.directions
        return p.weights[:, None] * jac

    def correlation(self, n):
        return cosine_similarity(self.model(n), self.obs_hat)

    def value_and_grad(self, x):
        n, dn = self.chart(x)
        m = self.model(n)
        mn = float(np.linalg.norm(m))
        if mn == 0:
            return 0.0, np.zeros(2)
        corr = float(m @ self.obs_hat) / mn
        dcorr_dm = self.obs_hat / mn - corr * m / (mn * mn)
        grad_n = -(self._model_jacobian(n).T @ dcorr_dm)
        return -corr, dn.T @ grad_n

    def decode(self, x):
        return self.chart(x)[0]


class SigmaObjective:
    """``F = |normalize(f_sigma) - normalize(obs)|^2`` over the Ward lobe.

    Parameters are ``(log sx, log sy)`` followed, when ``refine_normal`` is
    set, by the two tangent-chart offsets of the specular normal. The lobe
    frame follows the normal: ``t`` is ``reference`` Gram-Schmidt'ed against
    ``n`` and ``b = n x t``.
    """

    def __init__(self, problem: PixelProblem, refine_normal: bool | None = None):
        if problem.kind != "sigma":
            raise ValueError("not a sigma problem")
        self.problem = problem
        self.refine_normal = problem.refine_normal if refine_normal is None else refine_normal
        self.chart = _Chart(problem.normal)
        obs = problem.observations
        on = float(np.linalg.norm(obs))
        self.obs_hat = obs / on if on > 0 else obs
        wi = problem.directions
        self.h = normalize(wi + problem.omega_o[None, :])
        self.dim = 4 if self.refine_normal else 2

    def initial_point(self, sigma=None):
        x = np.zeros(self.dim)
        x[:2] = np.log(np.asarray(self.problem.sigma_init if sigma is None else sigma, dtype=float))
        return x

    def frame(self, n):
        e = self.problem.reference
        v = e - (e @ n) * n
        vn = float(np.linalg.norm(v))
        t = v / vn
        b = _cross(n, t)
        return t, b, v, vn

    def decode(self, x):
        """Return ``(sigma, normal, tangent, bitangent)``."""
        x = np.asarray(x, dtype=float)
        n = self.chart(x[2:4])[0] if self.refine_normal else self.chart.n0
        t, b, _, _ = self.frame(n)
        return np.exp(x[:2]), n, t, b

    def lobe(self, x):
        """Unnormalized model vector and its log-derivatives ``(K, dim)``."""
        p = self.problem
        x = np.asarray(x, dtype=float)
        sx, sy = math.exp(x[0]), math.exp(x[1])
        if self.refine_normal:
            n, dn = self.chart(x[2:4])
        else:
            n, dn = self.chart.n0, None
        t, b, v, vn = self.frame(n)
        wi, wo, h = p.directions, p.omega_o, self.h
        ci = wi @ n
        co = float(wo @ n)
        ht, hb, hn = h @ t, h @ b, h @ n
        live = (ci > 0) & (co > 0) & (p.weights > 0)
        ci_safe = np.where(live, ci, 1.0)
        den = 1.0 + hn
        q = ht * ht / (sx * sx) + hb * hb / (sy * sy)
        expo = -2.0 * q / den
        norm = 4.0 * math.pi * sx * sy * np.sqrt(ci_safe * max(co, 1e-300))
        f = np.where(live, p.weights * np.exp(expo) / norm, 0.0)

        dlog = np.zeros((p.size, self.dim))
        dlog[:, 0] = 4.0 * ht * ht / (sx * sx * den) - 1.0
        dlog[:, 1] = 4.0 * hb * hb / (sy * sy * den) - 1.0
        if self.refine_normal:
            e = p.reference
            jt = (np.eye(3) - np.outer(t, t)) / vn @ (-(np.outer(n, e)) - (e @ n) * np.eye(3))
            jb = -_skew(t) + _skew(n) @ jt
            d_ht = -4.0 * ht / (sx * sx * den)
            d_hb = -4.0 * hb / (sy * sy * den)
            d_hn = -expo / den
            g_n = (
                d_ht[:, None] * (h @ jt)
                + d_hb[:, None] * (h @ jb)
                + d_hn[:, None] * h
                - 0.5 * wi / ci_safe[:, None]
                - 0.5 * wo[None, :] / max(co, 1e-300)
            )
            dlog[:, 2:4] = g_n @ dn
        dlog[~live] = 0.0
        return f, dlog

    def residuals(self, x):
        if not np.all(np.abs(np.asarray(x, dtype=float)[:2]) <= LOG_SIGMA_LIMIT):
            # far outside any physical lobe; reject so line searches shrink
            return np.full(self.problem.size, math.inf), np.zeros((self.problem.size, self.dim))
        f, dlog = self.lobe(x)
        fn = float(np.linalg.norm(f))
        if fn == 0 or not math.isfinite(fn):
            return -self.obs_hat, np.zeros((self.problem.size, self.dim))
        fh = f / fn
        df = f[:, None] * dlog
        jac = (df - np.outer(fh, fh @ df)) / fn
        return fh - self.obs_hat, jac

    def value_and_grad(self, x):
        r, jac = self.residuals(x)
        if not np.all(np.isfinite(r)):
            return math.inf, np.zeros(self.dim)
        return float(r @ r), 2.0 * (jac.T @ r)


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def albedo_basis(problem: PixelProblem):
    """Per-sample basis ``b_k`` such that observations are ``rho * b_k``."""
    p = problem
    if p.kind == "diffuse-albedo":
        basis = p.directions @ p.normal / p.kappa
    elif p.kind == "specular-albedo":
        if p.sigma is None:
            raise ValueError("specular albedo needs the fitted lobe deviations")
        n = p.normal
        e = p.reference
        t = _unit(e - (e @ n) * n)
        b = _cross(n, t)
        basis = ward_lobe(p.directions, p.omega_o, n, t, b, float(p.sigma[0]), float(p.sigma[1])) / p.kappa
    else:
        raise ValueError("not an albedo problem")
    return p.weights * basis


@dataclass
class AlbedoObjective:
    """``F = sum_k sum_c (rho_c b_k - o_kc)^2``; one parameter per channel."""

    problem: PixelProblem
    basis: np.ndarray = field(init=False)

    def __post_init__(self):
        self.basis = albedo_basis(self.problem)
        obs = self.problem.observations
        self.obs = obs if obs.ndim == 2 else obs[:, None]
        self.dim = self.obs.shape[1]

    def initial_point(self):
        return np.zeros(self.dim)

    def closed_form(self):
        bb = float(self.basis @ self.basis)
        if bb == 0:
            return np.zeros(self.dim)
        return self.basis @ self.obs / bb

    def residuals(self, x):
        x = np.asarray(x, dtype=float)
        r = (self.basis[:, None] * x[None, :] - self.obs).ravel()
        jac = np.kron(self.basis[:, None], np.eye(self.dim))
        return r, jac

    def value_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        r = self.basis[:, None] * x[None, :] - self.obs
        return float(np.sum(r * r)), 2.0 * (self.basis @ r)


def make_objective(problem: PixelProblem):
    if problem.kind in ("diffuse-normal", "specular-normal"):
        return NormalObjective(problem)
    if problem.kind == "sigma":
        return SigmaObjective(problem)
    return AlbedoObjective(problem)
