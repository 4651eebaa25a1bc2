"""Small dense unconstrained minimizers.

Every backend minimizes an objective exposing ``value_and_grad(x) -> (f, g)``.
Gauss-Newton additionally needs ``residuals(x) -> (r, J)`` with
``f = r @ r``. A solve stops when the gradient norm drops below the
tolerance, when the iteration budget runs out, or as soon as a line search
fails, in which case the last accepted iterate is returned. A step whose relative
decrease ``(f_old - f_new) / max(|f_old|, |f_new|, 1)`` falls below
``function_tolerance`` also counts as convergence: at that point the
objective is flat to within roundoff.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

BACKENDS = (
    "LBFGS-backtracking",
    "LBFGS-zoom",
    "LBFGS-hager-zhang",
    "GD",
    "NCG",
    "GaussNewton",
)

CONVERGED = "converged"
MAX_ITERATIONS = "max-iterations"
LINESEARCH_FAILED = "linesearch-failed"


@dataclass(frozen=True)
class SolverConfig:
    backend: str = "LBFGS-zoom"
    max_iterations: int = 500
    gradient_tolerance: float = 1e-9
    function_tolerance: float = 1e-15
    memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_linesearch: int = 40
    shrink: float = 0.5

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; choose from {', '.join(BACKENDS)}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.function_tolerance < 0:
            raise ValueError("function_tolerance must be non-negative")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("line search constants need 0 < c1 < c2 < 1")

    def with_backend(self, backend):
        return SolverConfig(**{**self.__dict__, "backend": backend})


@dataclass
class SolveResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    iterations: int
    nfev: int
    status: str

    @property
    def converged(self):
        return self.status == CONVERGED


class _Line:
    """phi(alpha) = f(x + alpha p), evaluated lazily with a small cache."""

    def __init__(self, objective, x, p):
        self.objective = objective
        self.x = x
        self.p = p
        self.nfev = 0
        self._cache = {}

    def __call__(self, alpha):
        hit = self._cache.get(alpha)
        if hit is not None:
            return hit
        f, g = self.objective.value_and_grad(self.x + alpha * self.p)
        self.nfev += 1
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            out = (math.inf, g, math.nan)
        else:
            out = (float(f), g, float(g @ self.p))
        self._cache[alpha] = out
        return out


# --------------------------------------------------------------------------
# Line searches. Each returns (alpha, f, g) or None on failure.


def backtracking(line, f0, d0, alpha0, c1=1e-4, shrink=0.5, max_steps=40):
    """Armijo backtracking: shrink alpha until sufficient decrease holds."""
    alpha = alpha0
    for _ in range(max_steps):
        f, g, _ = line(alpha)
        if f <= f0 + c1 * alpha * d0:
            return alpha, f, g
        alpha *= shrink
    return None


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating two points with slopes, or None."""
    if a == b:
        return None
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0 or not math.isfinite(disc):
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    x = b - (b - a) * (db + d2 - d1) / denom
    return x if math.isfinite(x) else None


def zoom_search(line, f0, d0, alpha0, c1=1e-4, c2=0.9, max_steps=40, alpha_max=1e8):
    """Strong-Wolfe line search: bracketing phase followed by zoom with
    safeguarded cubic interpolation."""
    evals = 0
    a_prev, f_prev, d_prev = 0.0, f0, d0
    alpha = alpha0

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        nonlocal evals
        while evals < max_steps:
            left, right = min(lo, hi), max(lo, hi)
            width = right - left
            trial = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi) if math.isfinite(f_hi) else None
            if trial is None or not (left + 0.1 * width <= trial <= right - 0.1 * width):
                trial = 0.5 * (lo + hi)
            if width <= 1e-16 * max(1.0, right):
                break
            f, g, d = line(trial)
            evals += 1
            if f > f0 + c1 * trial * d0 or f >= f_lo:
                hi, f_hi, d_hi = trial, f, d
            else:
                if abs(d) <= -c2 * d0:
                    return trial, f, g
                if d * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = trial, f, d
        if lo > 0 and f_lo <= f0 + c1 * lo * d0:
            f, g, _ = line(lo)
            return lo, f, g
        return None

    while evals < max_steps:
        f, g, d = line(alpha)
        evals += 1
        if f > f0 + c1 * alpha * d0 or (a_prev > 0 and f >= f_prev):
            return zoom(a_prev, f_prev, d_prev, alpha, f, d)
        if abs(d) <= -c2 * d0:
            return alpha, f, g
        if d >= 0:
            return zoom(alpha, f, d, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev = alpha, f, d
        alpha = min(2.0 * alpha, alpha_max)
    return None


class _HZFound(Exception):
    def __init__(self, alpha):
        self.alpha = alpha


def hager_zhang_search(
    line, f0, d0, alpha0, delta=0.1, sigma=0.9, epsilon=1e-6, theta=0.5, gamma=0.66, rho=5.0, max_steps=40
):
    """Hager-Zhang line search accepting Wolfe or approximate-Wolfe points.

    Uses the bracket / secant^2 / bisection scheme of CG_DESCENT.
    """
    eps_k = epsilon * abs(f0)
    count = [0]

    def probe(c):
        if count[0] >= max_steps:
            raise _HZFound(None)
        count[0] += 1
        f, _, d = line(c)
        if math.isfinite(f):
            wolfe = f - f0 <= delta * c * d0 and d >= sigma * d0
            approx = (2.0 * delta - 1.0) * d0 >= d >= sigma * d0 and f <= f0 + eps_k
            if wolfe or approx:
                raise _HZFound(c)
        return f, d

    def bisect(a, b):
        while True:
            c = (1.0 - theta) * a + theta * b
            f, d = probe(c)
            if d >= 0:
                return a, c
            if f <= f0 + eps_k:
                a = c
            else:
                b = c

    def update(a, b, c):
        if not a < c < b:
            return a, b
        f, d = probe(c)
        if d >= 0:
            return a, c
        if f <= f0 + eps_k:
            return c, b
        return bisect(a, c)

    def slope(c):
        return line(c)[2] if c > 0 else d0

    def secant(a, b):
        da, db = slope(a), slope(b)
        if db == da or not math.isfinite(da) or not math.isfinite(db):
            return 0.5 * (a + b)
        return (a * db - b * da) / (db - da)

    def secant2(a, b):
        c = secant(a, b)
        A, B = update(a, b, c)
        cbar = None
        if c == B:
            cbar = secant(b, B)
        elif c == A:
            cbar = secant(a, A)
        if cbar is not None:
            A, B = update(A, B, cbar)
        return A, B

    def bracket(c):
        good = 0.0
        while True:
            f, d = probe(c)
            if d >= 0:
                return good, c
            if f > f0 + eps_k:
                return bisect(0.0, c)
            good = c
            c *= rho

    try:
        a, b = bracket(alpha0)
        while True:
            A, B = secant2(a, b)
            if B - A > gamma * (b - a):
                A, B = update(A, B, 0.5 * (A + B))
            if B - A <= 1e-16 * max(1.0, B):
                return None
            a, b = A, B
    except _HZFound as found:
        if found.alpha is None:
            return None
        f, g, _ = line(found.alpha)
        return found.alpha, f, g


# --------------------------------------------------------------------------
# Minimizers


def _flat(f_old, f_new, config):
    return f_old - f_new <= config.function_tolerance * max(abs(f_old), abs(f_new), 1.0)


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _search(kind, line, f, d0, alpha0, config):
    if kind == "backtracking":
        return backtracking(line, f, d0, alpha0, config.c1, config.shrink, config.max_linesearch)
    if kind == "zoom":
        return zoom_search(line, f, d0, alpha0, config.c1, config.c2, config.max_linesearch)
    return hager_zhang_search(line, f, d0, alpha0, sigma=config.c2, max_steps=config.max_linesearch)


def lbfgs(objective, x0, config: SolverConfig, linesearch="zoom") -> SolveResult:
    x = np.array(x0, dtype=float)
    f, g = objective.value_and_grad(x)
    nfev = 1
    pairs = deque(maxlen=config.memory)
    status = MAX_ITERATIONS
    it = 0
    for it in range(config.max_iterations + 1):
        gn = float(np.linalg.norm(g))
        if gn <= config.gradient_tolerance:
            status = CONVERGED
            break
        if it == config.max_iterations:
            break
        p = -_two_loop(g, pairs)
        d0 = float(g @ p)
        if not d0 < 0:
            pairs.clear()
            p = -g
            d0 = -gn * gn
        alpha0 = 1.0 if pairs else min(1.0, 1.0 / gn)
        line = _Line(objective, x, p)
        found = _search(linesearch, line, f, d0, alpha0, config)
        nfev += line.nfev
        if found is None:
            status = LINESEARCH_FAILED
            break
        alpha, f_new, g_new = found
        s = alpha * p
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(y @ y) and sy > 0:
            pairs.append((s, y, 1.0 / sy))
        x = x + s
        stalled = _flat(f, f_new, config)
        f, g = f_new, g_new
        if stalled:
            status = CONVERGED
            it += 1
            break
    return SolveResult(x, float(f), float(np.linalg.norm(g)), it, nfev, status)


def gradient_descent(objective, x0, config: SolverConfig) -> SolveResult:
    x = np.array(x0, dtype=float)
    f, g = objective.value_and_grad(x)
    nfev = 1
    status = MAX_ITERATIONS
    step = None
    it = 0
    for it in range(config.max_iterations + 1):
        gn = float(np.linalg.norm(g))
        if gn <= config.gradient_tolerance:
            status = CONVERGED
            break
        if it == config.max_iterations:
            break
        alpha0 = 2.0 * step if step else min(1.0, 1.0 / gn)
        line = _Line(objective, x, -g)
        found = backtracking(line, f, -gn * gn, alpha0, config.c1, config.shrink, config.max_linesearch)
        nfev += line.nfev
        if found is None:
            status = LINESEARCH_FAILED
            break
        step, f_new, g_new = found
        x = x - step * g
        stalled = _flat(f, f_new, config)
        f, g = f_new, g_new
        if stalled:
            status = CONVERGED
            it += 1
            break
    return SolveResult(x, float(f), float(np.linalg.norm(g)), it, nfev, status)


def nonlinear_cg(objective, x0, config: SolverConfig) -> SolveResult:
    """Polak-Ribiere+ conjugate gradient with Powell restarts and a
    strong-Wolfe line search (c2 = 0.1)."""
    x = np.array(x0, dtype=float)
    f, g = objective.value_and_grad(x)
    nfev = 1
    p = -g
    status = MAX_ITERATIONS
    prev = None
    it = 0
    c2 = min(0.1, config.c2)
    c1 = min(config.c1, 0.5 * c2)
    for it in range(config.max_iterations + 1):
        gn = float(np.linalg.norm(g))
        if gn <= config.gradient_tolerance:
            status = CONVERGED
            break
        if it == config.max_iterations:
            break
        d0 = float(g @ p)
        if not d0 < 0:
            p = -g
            d0 = -gn * gn
        if prev is None:
            alpha0 = min(1.0, 1.0 / gn)
        else:
            alpha0 = min(1.0, max(prev[0] * prev[1] / d0, 1e-12)) if d0 else 1.0
        line = _Line(objective, x, p)
        found = zoom_search(line, f, d0, alpha0, c1, c2, config.max_linesearch)
        nfev += line.nfev
        if found is None:
            status = LINESEARCH_FAILED
            break
        alpha, f_new, g_new = found
        x = x + alpha * p
        if _flat(f, f_new, config):
            f, g = f_new, g_new
            status = CONVERGED
            it += 1
            break
        f = f_new
        gg = float(g @ g)
        if abs(float(g_new @ g)) >= 0.2 * float(g_new @ g_new):
            beta = 0.0
        else:
            beta = max(0.0, float(g_new @ (g_new - g)) / gg)
        prev = (alpha, d0)
        g = g_new
        p = -g + beta * p
    return SolveResult(x, float(f), float(np.linalg.norm(g)), it, nfev, status)


class _LeastSquaresView:
    def __init__(self, objective):
        self.objective = objective

    def value_and_grad(self, x):
        r, J = self.objective.residuals(x)
        if not np.all(np.isfinite(r)):
            return math.inf, np.zeros(J.shape[1])
        return float(r @ r), 2.0 * (J.T @ r)


def gauss_newton(objective, x0, config: SolverConfig) -> SolveResult:
    if not hasattr(objective, "residuals"):
        raise TypeError("Gauss-Newton needs a least-squares objective with residuals()")
    x = np.array(x0, dtype=float)
    view = _LeastSquaresView(objective)
    r, J = objective.residuals(x)
    f = float(r @ r)
    g = 2.0 * (J.T @ r)
    nfev = 1
    status = MAX_ITERATIONS
    it = 0
    for it in range(config.max_iterations + 1):
        gn = float(np.linalg.norm(g))
        if gn <= config.gradient_tolerance:
            status = CONVERGED
            break
        if it == config.max_iterations:
            break
        p = np.linalg.lstsq(J, -r, rcond=None)[0]
        d0 = float(g @ p)
        if not d0 < 0:
            p = -g
            d0 = -gn * gn
        line = _Line(view, x, p)
        found = backtracking(line, f, d0, 1.0, config.c1, config.shrink, config.max_linesearch)
        nfev += line.nfev
        if found is None:
            status = LINESEARCH_FAILED
            break
        alpha = found[0]
        x = x + alpha * p
        r, J = objective.residuals(x)
        nfev += 1
        f_old, f = f, float(r @ r)
        g = 2.0 * (J.T @ r)
        if _flat(f_old, f, config):
            status = CONVERGED
            it += 1
            break
    return SolveResult(x, f, float(np.linalg.norm(g)), it, nfev, status)


def minimize(objective, x0, config: SolverConfig) -> SolveResult:
    """Run the backend named in ``config`` on ``objective`` from ``x0``."""
    backend = config.backend
    if backend == "LBFGS-backtracking":
        return lbfgs(objective, x0, config, "backtracking")
    if backend == "LBFGS-zoom":
        return lbfgs(objective, x0, config, "zoom")
    if backend == "LBFGS-hager-zhang":
        return lbfgs(objective, x0, config, "hager-zhang")
    if backend == "GD":
        return gradient_descent(objective, x0, config)
    if backend == "NCG":
        return nonlinear_cg(objective, x0, config)
    return gauss_newton(objective, x0, config)
