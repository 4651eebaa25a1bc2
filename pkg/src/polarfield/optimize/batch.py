"""Batch runner over independent per-pixel problems."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

from .refine import PixelFit, solve_problem

DIAGNOSTIC_FIELDS = ("pixel", "kind", "backend", "iterations", "grad_norm", "status")


def _solve_chunk(args):
    problems, config = args
    return [solve_problem(p, config) for p in problems]


def solve_batch(problems, config, threads: int = 1, chunk_size: int = 64):
    """Solve every problem; returns ``(fits, diagnostics)``.

    ``config`` is a :class:`SolverConfig` or a dict keyed by problem kind.
    Each solve is deterministic, so results do not depend on ``threads``.
    Diagnostics rows are ``(pixel, kind, backend, iterations, grad_norm,
    status)`` in input order.
    """
    problems = list(problems)
    if not problems:
        return [], []
    if threads <= 1 or len(problems) <= chunk_size:
        fits = [solve_problem(p, config) for p in problems]
    else:
        chunks = [(problems[i : i + chunk_size], config) for i in range(0, len(problems), chunk_size)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            fits = [fit for part in pool.map(_solve_chunk, chunks) for fit in part]
    return fits, [diagnostic_row(f) for f in fits]


def diagnostic_row(fit: PixelFit):
    return (fit.index, fit.kind, fit.backend, fit.iterations, fit.grad_norm, fit.status)
