"""Image-level refinement: builds per-pixel problems, runs them in batches and
assembles the refined maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import LightRig
from ..errors import BelowHorizon, Underdetermined
from .batch import diagnostic_row, solve_batch
from .objectives import NormalObjective, build_problem
from .refine import UNDERDETERMINED, default_configs, derive_anisotropy_roughness, flagged, fuse_normals
from .solvers import MAX_ITERATIONS

# bit flags stored in the per-pixel flag map
DEGENERATE_D = 1
DEGENERATE_S = 2
BACKFACING_S = 4
UNDERDETERMINED_D = 8
UNDERDETERMINED_S = 16
UNDERDETERMINED_SIGMA = 32
NONCONVERGED = 64
ALBEDO_CLAMPED = 128
SPECULAR_VALID = 256

FLAG_NAMES = {
    DEGENERATE_D: "degenerate-diffuse",
    DEGENERATE_S: "degenerate-specular",
    BACKFACING_S: "backfacing-specular",
    UNDERDETERMINED_D: "underdetermined-diffuse",
    UNDERDETERMINED_S: "underdetermined-specular",
    UNDERDETERMINED_SIGMA: "underdetermined-sigma",
    NONCONVERGED: "nonconverged",
    ALBEDO_CLAMPED: "albedo-clamped",
    SPECULAR_VALID: "specular-valid",
}

REFILTER_PASSES = 3


@dataclass
class RefinedMaterial:
    n_d: np.ndarray
    n_s: np.ndarray
    normal: np.ndarray
    sigma: np.ndarray
    anisotropy: np.ndarray
    roughness: np.ndarray
    rho_d: np.ndarray
    rho_s: np.ndarray
    correlation_d: np.ndarray
    correlation_s: np.ndarray
    tangent: np.ndarray
    flags: np.ndarray

    @property
    def specular_valid(self):
        return (self.flags & SPECULAR_VALID) > 0


def _gate(seq, zeta):
    return np.any(seq > zeta, axis=-1)


class _Driver:
    def __init__(self, diffuse, specular, rig, view, zeta_d, zeta_s, configs, threads):
        self.diffuse = diffuse
        self.specular = specular
        self.rig = rig
        self.view = view
        self.gate_d = _gate(diffuse, zeta_d)  # (N, H, W)
        self.gate_s = _gate(specular, zeta_s)
        self.configs = configs
        self.threads = threads
        self.rows = []
        _, self.h, self.w, _ = diffuse.shape

    def pixel(self, idx):
        return divmod(idx, self.w)

    def build(self, kind, idx, normal, **extra):
        i, j = self.pixel(idx)
        seq, gate = (self.diffuse, self.gate_d) if kind.startswith("diffuse") else (self.specular, self.gate_s)
        return build_problem(
            kind,
            seq[:, i, j],
            self.rig.directions,
            self.view[i, j],
            normal,
            gate[:, i, j],
            kappa=self.rig.kappa,
            index=idx,
            **extra,
        )

    def run(self, kind, requests):
        """``requests`` maps pixel index to (normal, extra kwargs).

        Returns fits keyed by pixel; pixels whose problem cannot be built get
        a flagged fit.
        """
        backend = self.configs[kind].backend
        fits, problems = {}, []
        for idx, (normal, extra) in requests.items():
            try:
                problems.append(self.build(kind, idx, normal, **extra))
            except (Underdetermined, BelowHorizon):
                fits[idx] = flagged(kind, idx, backend)
        solved, _ = solve_batch(problems, self.configs, self.threads)
        for fit in solved:
            fits[fit.index] = fit
        return fits

    def refine_normals(self, kind, starts):
        """Normal fits, re-filtering the light list until it matches the result."""
        fits = self.run(kind, {idx: (n, {}) for idx, n in starts.items()})
        dirs = self.rig.directions
        pending = dict(starts)
        for _ in range(REFILTER_PASSES - 1):
            redo = {}
            for idx in pending:
                fit = fits[idx]
                if fit.status == UNDERDETERMINED:
                    continue
                if np.any((dirs @ fit.normal > 0) != (dirs @ pending[idx] > 0)):
                    redo[idx] = fit.normal
            if not redo:
                break
            again = self.run(kind, {idx: (n, {}) for idx, n in redo.items()})
            for idx, fit in again.items():
                if fit.status != UNDERDETERMINED:
                    prev = fits[idx]
                    fit.iterations += prev.iterations
                    fit.nfev += prev.nfev
                    fits[idx] = fit
            pending = redo
        return fits

    def log(self, fits):
        self.rows.extend(diagnostic_row(fits[k]) for k in sorted(fits))


def refine_maps(diffuse, specular, init, rig: LightRig, view, zeta_d=0.0, zeta_s=0.0, configs=None, threads=1):
    """Run every refinement over the image.

    ``init`` provides ``n_d_init``, ``n_s_init`` and the degeneracy /
    backfacing masks. Returns ``(RefinedMaterial, diagnostics rows)``.
    """
    configs = configs or default_configs()
    drv = _Driver(diffuse, specular, rig, view, zeta_d, zeta_s, configs, threads)
    h, w = drv.h, drv.w
    flags = np.zeros((h, w), dtype=np.int64)
    flags[init.degenerate_d] |= DEGENERATE_D
    flags[init.degenerate_s] |= DEGENERATE_S
    flags[init.backfacing_s] |= BACKFACING_S
    flat = flags.reshape(-1)

    n_d = np.array(init.n_d_init, dtype=float).reshape(-1, 3)
    n_s = np.array(init.n_s_init, dtype=float).reshape(-1, 3)
    corr_d = np.zeros(h * w)
    corr_s = np.zeros(h * w)
    sigma = np.zeros((h * w, 2))
    tangent = np.zeros((h * w, 3))
    rho_d = np.zeros((h * w, 3))
    rho_s = np.zeros(h * w)

    def absorb(fits, under_bit):
        for idx, fit in fits.items():
            if fit.status == UNDERDETERMINED:
                flat[idx] |= under_bit
            elif fit.status == MAX_ITERATIONS:
                flat[idx] |= NONCONVERGED

    # diffuse normals
    starts = {idx: n_d[idx] for idx in range(h * w) if not flat[idx] & DEGENERATE_D}
    fits = drv.refine_normals("diffuse-normal", starts)
    absorb(fits, UNDERDETERMINED_D)
    drv.log(fits)
    for idx, fit in fits.items():
        if fit.ok:
            n_d[idx], corr_d[idx] = fit.normal, fit.correlation

    # specular normals
    starts = {idx: n_s[idx] for idx in range(h * w) if not flat[idx] & (DEGENERATE_S | BACKFACING_S)}
    fits = drv.refine_normals("specular-normal", starts)
    absorb(fits, UNDERDETERMINED_S)
    drv.log(fits)
    for idx, fit in fits.items():
        if fit.ok:
            n_s[idx] = fit.normal

    # lobe deviations, jointly polishing the specular normal. The correlation
    # optimum can sit well off a narrow lobe when lights are sparse, so the
    # fit also starts from the initial normal and keeps the better residual.
    requests = {idx: (n_s[idx], {}) for idx, fit in fits.items() if fit.ok}
    sig_fits = drv.run("sigma", requests)
    n_s0 = np.asarray(init.n_s_init, dtype=float).reshape(-1, 3)
    alt = {
        idx: (n_s0[idx], {})
        for idx in requests
        if np.any(n_s0[idx]) and float(n_s0[idx] @ n_s[idx]) < 1.0 - 1e-12
    }
    for idx, fit in drv.run("sigma", alt).items():
        cur = sig_fits[idx]
        if fit.ok and (not cur.ok or fit.fun < cur.fun):
            fit.iterations += cur.iterations
            fit.nfev += cur.nfev
            sig_fits[idx] = fit
        elif fit.ok:
            cur.iterations += fit.iterations
            cur.nfev += fit.nfev
    absorb(sig_fits, UNDERDETERMINED_SIGMA)
    drv.log(sig_fits)
    for idx, fit in sig_fits.items():
        if fit.ok:
            n_s[idx], sigma[idx], tangent[idx] = fit.normal, fit.sigma, fit.tangent
            flat[idx] |= SPECULAR_VALID
            try:
                problem = drv.build("specular-normal", idx, fit.normal)
                corr_s[idx] = NormalObjective(problem).correlation(fit.normal)
            except Underdetermined:
                corr_s[idx] = 0.0

    # albedos
    requests = {idx: (n_d[idx], {}) for idx in range(h * w) if np.any(n_d[idx])}
    alb = drv.run("diffuse-albedo", requests)
    drv.log(alb)
    for idx, fit in alb.items():
        if fit.ok:
            rho_d[idx] = fit.albedo
            if fit.clamped:
                flat[idx] |= ALBEDO_CLAMPED
    requests = {
        idx: (n_s[idx], {"sigma": sigma[idx], "reference": tangent[idx]})
        for idx in range(h * w)
        if flat[idx] & SPECULAR_VALID
    }
    alb = drv.run("specular-albedo", requests)
    drv.log(alb)
    for idx, fit in alb.items():
        if fit.ok:
            rho_s[idx] = float(fit.albedo[0])
            if fit.clamped:
                flat[idx] |= ALBEDO_CLAMPED

    fused = fuse_normals(n_d, n_s, corr_d, corr_s)
    aniso, rough = derive_anisotropy_roughness(sigma)
    shape = (h, w)
    refined = RefinedMaterial(
        n_d=n_d.reshape(shape + (3,)),
        n_s=n_s.reshape(shape + (3,)),
        normal=fused.reshape(shape + (3,)),
        sigma=sigma.reshape(shape + (2,)),
        anisotropy=aniso.reshape(shape),
        roughness=rough.reshape(shape),
        rho_d=rho_d.reshape(shape + (3,)),
        rho_s=rho_s.reshape(shape),
        correlation_d=corr_d.reshape(shape),
        correlation_s=corr_s.reshape(shape),
        tangent=tangent.reshape(shape + (3,)),
        flags=flags,
    )
    return refined, drv.rows
