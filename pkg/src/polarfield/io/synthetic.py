"""Write rendered captures to disk as manifest + PFM frames, with the ground
truth material alongside as a bundle."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..core import LightRig
from ..synth import ArtifactConfig, GroundTruthMaterial, render_olat
from .bundle import MaterialBundle, write_bundle
from .manifest import CaptureManifest, camera_dict, frame_names, write_manifest, write_stack

MANIFEST_NAME = "manifest.json"
GROUND_TRUTH_DIR = "ground_truth"


def ground_truth_bundle(material: GroundTruthMaterial, provenance=None) -> MaterialBundle:
    maps = {
        "albedo_diffuse": material.rho_d,
        "albedo_specular": material.rho_s,
        "normal_diffuse": material.n_d,
        "normal_specular": material.n_s,
        "tangent": material.tangent,
        "sigma_x": material.sigma[..., 0],
        "sigma_y": material.sigma[..., 1],
        "anisotropy": material.anisotropy,
        "roughness": material.roughness,
    }
    return MaterialBundle(maps, dict(provenance or {}))


def write_synthetic_capture(
    out_dir,
    material: GroundTruthMaterial,
    rig: LightRig,
    artifacts: ArtifactConfig | None = None,
    seed: int = 0,
    pose=None,
    epsilon=None,
    iterations=2,
    noise_floor=0.0,
    lights=None,
) -> CaptureManifest:
    """Render ``material`` and write ``manifest.json``, frames, the ambient map
    and ``ground_truth/``. Returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stack = render_olat(material, rig, artifacts=artifacts, seed=seed, pose=pose)
    n, h, w = stack.shape
    if lights is None and rig.generator == "fibonacci_spiral":
        lights = {"generator": "spiral", "count": n}
    elif lights is None:
        lights = {"directions": np.asarray(rig.directions).tolist()}
    manifest = CaptureManifest(
        n=n,
        height=h,
        width=w,
        lights=lights,
        cross=frame_names(n, "cross"),
        parallel=frame_names(n, "parallel"),
        camera=camera_dict(stack.pose),
        l0=rig.l0,
        a0=rig.a0,
        ambient="ambient.pfm",
        epsilon=epsilon,
        iterations=iterations,
        noise_floor=noise_floor,
        root=out,
    )
    write_stack(manifest, stack)
    write_manifest(manifest, out / MANIFEST_NAME)
    art = artifacts or ArtifactConfig()
    prov = {"seed": seed, "artifacts": {k: (list(v) if isinstance(v, tuple) else v) for k, v in art.__dict__.items()}}
    write_bundle(ground_truth_bundle(material, prov), out / GROUND_TRUTH_DIR)
    return manifest
