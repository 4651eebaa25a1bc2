"""Stage orchestration: separate -> preprocess -> init -> optimize.

Each stage writes its maps into the output bundle. A stage that is needed
but not requested is loaded from the bundle when a previous invocation
completed it, and run otherwise, so splitting the stage sequence across
invocations gives the same bundle as a single run. Values cross every stage
boundary as float32 (the storage precision) in both cases.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import __version__
from ..core import separate
from ..errors import PolarfieldError, StageError
from ..estimate import InitialEstimates, initialize
from ..optimize.maps import BACKFACING_S, DEGENERATE_D, DEGENERATE_S, refine_maps
from ..optimize.solvers import SolverConfig
from ..preprocess import CleanStack, clean_sequences, compute_geometry, shadow_compensate
from .bundle import (
    DIAGNOSTICS,
    MaterialBundle,
    read_bundle,
    read_provenance,
    write_bundle,
    write_diagnostics,
)
from .manifest import CaptureManifest, read_stack

STAGES = ("separate", "preprocess", "init", "optimize")

STAGE_MAPS = {
    "separate": ("diffuse_sequence", "specular_sequence"),
    "preprocess": (
        "diffuse_sequence",
        "specular_sequence",
        "removed_mask",
        "visibility_diffuse",
        "visibility_specular",
        "occlusion_diffuse",
        "occlusion_specular",
        "interreflection_diffuse",
        "interreflection_specular",
    ),
    "init": (
        "albedo_diffuse_init",
        "albedo_specular_init",
        "normal_diffuse_init",
        "normal_specular_init",
        "init_flags",
    ),
    "optimize": (
        "normal_diffuse",
        "normal_specular",
        "normal",
        "tangent",
        "sigma_x",
        "sigma_y",
        "anisotropy",
        "roughness",
        "albedo_diffuse",
        "albedo_specular",
        "albedo_diffuse_compensated",
        "albedo_specular_compensated",
        "correlation_diffuse",
        "correlation_specular",
        "flags",
        "visibility_diffuse",
        "visibility_specular",
        "occlusion_diffuse",
        "occlusion_specular",
        "interreflection_diffuse",
        "interreflection_specular",
    ),
}


def _q(arr):
    """Round to storage precision."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


def parse_stages(stages):
    if stages is None:
        return set(STAGES)
    if isinstance(stages, str):
        stages = [s.strip() for s in stages.split(",") if s.strip()]
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ValueError(f"unknown stage(s) {', '.join(unknown)}; choose from {', '.join(STAGES)}")
    if not stages:
        raise ValueError("no stages selected")
    return set(stages)


def _geometry_maps(geo):
    return {
        "visibility_diffuse": geo.nu_d,
        "visibility_specular": geo.nu_s,
        "occlusion_diffuse": geo.tau_d,
        "occlusion_specular": geo.tau_s,
        "interreflection_diffuse": geo.varrho_d,
        "interreflection_specular": geo.varrho_s,
    }


def _specular_geometry_normal(n_s, n_d):
    """Specular normal where available, the diffuse one elsewhere."""
    valid = np.linalg.norm(n_s, axis=-1, keepdims=True) > 0
    return np.where(valid, n_s, n_d)


class _Run:
    def __init__(self, manifest: CaptureManifest, out_dir, threads=1, solvers=None, epsilon="manifest", iterations=None):
        self.manifest = manifest
        self.out = Path(out_dir)
        self.threads = threads
        self.rig = manifest.rig
        self.pose = manifest.pose
        self.view = self.pose.view_directions(manifest.height, manifest.width)
        configs = manifest.solver_configs()
        for kind, backend in (solvers or {}).items():
            configs[kind] = SolverConfig(backend=backend)
        self.configs = configs
        self.epsilon = manifest.epsilon if epsilon == "manifest" else epsilon
        self.iterations = manifest.iterations if iterations is None else iterations
        self.zeta = manifest.noise_floor
        self.state = {}
        self.prov = read_provenance(self.out)
        if self.prov and self.prov.get("manifest_sha256") != manifest.digest():
            # outputs of a different capture: start over
            self.prov = {}
        self.done = list(self.prov.get("stages", []))
        self.params = dict(self.prov.get("parameters", {}))

    def stage_parameters(self, stage):
        if stage == "separate":
            return {"ambient": "file" if self.manifest.ambient else "estimated"}
        if stage == "preprocess":
            eps = list(self.epsilon) if isinstance(self.epsilon, (tuple, list)) else self.epsilon
            return {"epsilon": eps, "iterations": self.iterations, "noise_floor": self.zeta}
        if stage == "init":
            return {}
        return {"solvers": {k: c.backend for k, c in sorted(self.configs.items())}, "noise_floor": self.zeta}

    # -- loading -------------------------------------------------------------

    def load(self, stage):
        if stage not in self.done:
            return False
        names = STAGE_MAPS[stage]
        bundle = read_bundle(self.out, names)
        for k in names:
            v = bundle[k]
            self.state[k] = v if v.dtype == bool or np.issubdtype(v.dtype, np.integer) else _q(v)
        return True

    def invalidate(self, stage):
        """Forget ``stage`` and everything after it, removing their outputs."""
        first = STAGES.index(stage)
        maps = self.prov.get("maps", {})
        for later in STAGES[first:]:
            self.params.pop(later, None)
            if later not in self.done:
                continue
            self.done.remove(later)
            kept = {n for s in STAGES[:first] if s in self.done for n in STAGE_MAPS[s]}
            for name in STAGE_MAPS[later]:
                if name in kept:
                    continue
                meta = maps.pop(name, None)
                if meta is not None:
                    (self.out / meta["file"]).unlink(missing_ok=True)
            if later == "optimize":
                (self.out / DIAGNOSTICS).unlink(missing_ok=True)

    def get(self, *names):
        return [self.state[n] for n in names]

    # -- stages --------------------------------------------------------------

    def separate(self):
        stack = read_stack(self.manifest)
        amb = stack.ambient[None]
        d, s = separate(np.maximum(stack.cross - amb, 0.0), np.maximum(stack.parallel - amb, 0.0))
        return {"diffuse_sequence": d, "specular_sequence": s}

    def preprocess(self):
        d, s = self.get("diffuse_sequence", "specular_sequence")
        clean = clean_sequences(d, s, self.epsilon, self.iterations)
        clean = CleanStack(_q(clean.diffuse), _q(clean.specular), clean.removed_diffuse, clean.removed_specular)
        init = initialize(clean, self.rig, self.view)
        n_s = _specular_geometry_normal(init.n_s_init, init.n_d_init)
        geo = compute_geometry(clean, init.n_d_init, n_s, self.zeta, self.zeta, self.rig)
        out = {
            "diffuse_sequence": clean.diffuse,
            "specular_sequence": clean.specular,
            "removed_mask": clean.removed_mask,
        }
        out.update(_geometry_maps(geo))
        return out

    def init(self):
        d, s = self.get("diffuse_sequence", "specular_sequence")
        init = initialize(CleanStack(d, s, d < 0, s < 0), self.rig, self.view)
        flags = (
            init.degenerate_d * DEGENERATE_D + init.degenerate_s * DEGENERATE_S + init.backfacing_s * BACKFACING_S
        ).astype(np.int64)
        return {
            "albedo_diffuse_init": init.rho_d_init,
            "albedo_specular_init": init.rho_s_init,
            "normal_diffuse_init": init.n_d_init,
            "normal_specular_init": init.n_s_init,
            "init_flags": flags,
        }

    def optimize(self):
        d, s, n_d0, n_s0, flags0 = self.get(
            "diffuse_sequence", "specular_sequence", "normal_diffuse_init", "normal_specular_init", "init_flags"
        )
        rho_d0, rho_s0 = self.get("albedo_diffuse_init", "albedo_specular_init")
        init = InitialEstimates(
            rho_d0,
            rho_s0,
            n_d0,
            n_s0,
            (flags0 & DEGENERATE_D) > 0,
            (flags0 & DEGENERATE_S) > 0,
            (flags0 & BACKFACING_S) > 0,
        )
        ref, rows = refine_maps(d, s, init, self.rig, self.view, self.zeta, self.zeta, self.configs, self.threads)
        n_s_geo = _specular_geometry_normal(ref.n_s, ref.n_d)
        clean = CleanStack(d, s, d < 0, s < 0)
        geo = compute_geometry(clean, ref.n_d, n_s_geo, self.zeta, self.zeta, self.rig)
        self.rows = rows
        out = {
            "normal_diffuse": ref.n_d,
            "normal_specular": ref.n_s,
            "normal": ref.normal,
            "tangent": ref.tangent,
            "sigma_x": ref.sigma[..., 0],
            "sigma_y": ref.sigma[..., 1],
            "anisotropy": ref.anisotropy,
            "roughness": ref.roughness,
            "albedo_diffuse": ref.rho_d,
            "albedo_specular": ref.rho_s,
            "albedo_diffuse_compensated": shadow_compensate(ref.rho_d, geo.tau_d),
            "albedo_specular_compensated": shadow_compensate(ref.rho_s, geo.tau_s),
            "correlation_diffuse": ref.correlation_d,
            "correlation_specular": ref.correlation_s,
            "flags": ref.flags,
        }
        out.update(_geometry_maps(geo))
        return out

    # -- driver --------------------------------------------------------------

    def execute(self, wanted):
        last = max(STAGES.index(s) for s in wanted)
        emitted = {}
        for stage in STAGES[: last + 1]:
            if stage not in wanted and self.load(stage):
                continue
            try:
                maps = getattr(self, stage)()
            except PolarfieldError as exc:
                raise StageError(stage, exc) from exc
            except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                raise StageError(stage, exc) from exc
            maps = {k: (v if v.dtype == bool or np.issubdtype(v.dtype, np.integer) else _q(v)) for k, v in maps.items()}
            self.invalidate(stage)
            self.state.update(maps)
            emitted.update(maps)
            self.done.append(stage)
            self.params[stage] = self.stage_parameters(stage)
        return emitted

    def provenance(self):
        return {
            "tool": "polarfield",
            "version": __version__,
            "manifest_sha256": self.manifest.digest(),
            "stages": self.done,
            "parameters": self.params,
            "maps": self.prov.get("maps", {}) if self.prov else {},
        }


def run_pipeline(
    manifest: CaptureManifest,
    stages=None,
    out_dir="out",
    threads: int = 1,
    solvers=None,
    epsilon="manifest",
    iterations=None,
) -> MaterialBundle:
    """Run the requested stages and write their maps into ``out_dir``.

    ``solvers`` maps problem kinds to backend names, overriding the
    manifest; ``epsilon`` and ``iterations`` override the manifest's
    overexposure-removal settings. Returns the maps emitted by this call
    together with the updated provenance.
    """
    wanted = parse_stages(stages)
    run = _Run(manifest, out_dir, threads, solvers, epsilon, iterations)
    run.out.mkdir(parents=True, exist_ok=True)
    emitted = run.execute(wanted)
    bundle = MaterialBundle(emitted, run.provenance())
    bundle.provenance = write_bundle(bundle, run.out)
    if hasattr(run, "rows"):
        write_diagnostics(run.out / DIAGNOSTICS, run.rows)
    return bundle
