"""Capture manifests: a JSON document describing one polarized OLAT capture.

Schema (version 1)::

    {
      "version": 1,
      "dimensions": {"n": 346, "height": 64, "width": 64},
      "lights": {"generator": "spiral", "count": 346}
                 | {"directions": [[x, y, z], ...]},
      "l0": 1.0,
      "a0": null,                      # null = 4 pi / N
      "frames": {"cross": ["cross/0000.pfm", ...],
                 "parallel": ["parallel/0000.pfm", ...]},
      "camera": {"R": [[...]], "t": [...], "K": [[...]], "orthographic": false},
      "ambient": "ambient.pfm" | null, # null = estimated from dark frames
      "preprocess": {"epsilon": null | e | [e_diffuse, e_specular],
                     "iterations": 2, "noise_floor": 0.0},
      "solvers": {"<problem kind>": "<backend>", ...}
    }

Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import CameraPose, LightRig, PolarizedOLATStack, spiral_directions
from ..errors import DimensionMismatch, MissingFile, ParseError, PolarfieldError, UnsupportedVersion
from ..optimize import BACKENDS, DEFAULT_BACKENDS, SolverConfig
from .pfm import read_pfm, read_pfm_header, write_pfm

SUPPORTED_VERSIONS = (1,)


@dataclass
class CaptureManifest:
    n: int
    height: int
    width: int
    lights: dict
    cross: list
    parallel: list
    camera: dict
    l0: float = 1.0
    a0: float | None = None
    ambient: str | None = None
    epsilon: object = None
    iterations: int = 2
    noise_floor: float = 0.0
    solvers: dict = field(default_factory=lambda: dict(DEFAULT_BACKENDS))
    version: int = 1
    root: Path = field(default=Path("."), compare=False)

    # -- derived objects -----------------------------------------------------

    @property
    def directions(self) -> np.ndarray:
        if "generator" in self.lights:
            return spiral_directions(int(self.lights["count"]))
        return np.asarray(self.lights["directions"], dtype=float)

    @property
    def rig(self) -> LightRig:
        return LightRig(self.directions, l0=self.l0, a0=self.a0)

    @property
    def pose(self) -> CameraPose:
        cam = self.camera
        return CameraPose(cam["R"], cam["t"], cam["K"], bool(cam.get("orthographic", False)))

    def solver_configs(self):
        return {kind: SolverConfig(backend=backend) for kind, backend in self.solvers.items()}

    def path(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        eps = list(self.epsilon) if isinstance(self.epsilon, (tuple, list)) else self.epsilon
        return {
            "version": self.version,
            "dimensions": {"n": self.n, "height": self.height, "width": self.width},
            "lights": self.lights,
            "l0": self.l0,
            "a0": self.a0,
            "frames": {"cross": list(self.cross), "parallel": list(self.parallel)},
            "camera": self.camera,
            "ambient": self.ambient,
            "preprocess": {"epsilon": eps, "iterations": self.iterations, "noise_floor": self.noise_floor},
            "solvers": dict(self.solvers),
        }

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def camera_dict(pose: CameraPose):
    return {
        "R": pose.R.tolist(),
        "t": pose.t.tolist(),
        "K": pose.K.tolist(),
        "orthographic": bool(pose.orthographic),
    }


def write_manifest(manifest: CaptureManifest, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")


def _need(tree, key, kind, where):
    if not isinstance(tree, dict) or key not in tree:
        raise ParseError(f"missing key '{where}{key}'")
    value = tree[key]
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ParseError(f"'{where}{key}' has the wrong type ({type(value).__name__})")
    return value


def parse_manifest(tree, root=".", check_files=True) -> CaptureManifest:
    """Validate a decoded manifest tree; raises on the first violated rule."""
    if not isinstance(tree, dict):
        raise ParseError("manifest must be a JSON object")
    version = _need(tree, "version", int, "")
    if version not in SUPPORTED_VERSIONS:
        raise UnsupportedVersion(f"manifest version {version} is not supported (known: {SUPPORTED_VERSIONS})")
    dims = _need(tree, "dimensions", dict, "")
    n = _need(dims, "n", int, "dimensions.")
    height = _need(dims, "height", int, "dimensions.")
    width = _need(dims, "width", int, "dimensions.")
    if n < 4 or height < 1 or width < 1:
        raise ParseError("dimensions must be positive with at least 4 lights")

    lights = _need(tree, "lights", dict, "")
    if "generator" in lights:
        if lights["generator"] != "spiral":
            raise ParseError(f"unknown light generator {lights['generator']!r}")
        count = _need(lights, "count", int, "lights.")
        lights = {"generator": "spiral", "count": count}
    else:
        dirs = _need(lights, "directions", list, "lights.")
        try:
            arr = np.asarray(dirs, dtype=float)
        except (TypeError, ValueError):
            raise ParseError("lights.directions must be a list of 3-vectors") from None
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ParseError("lights.directions must be a list of 3-vectors")
        count = arr.shape[0]
        lights = {"directions": arr.tolist()}
    if count != n:
        raise DimensionMismatch(f"manifest declares N={n} but lists {count} light directions")

    l0 = float(tree.get("l0", 1.0))
    a0 = tree.get("a0")
    a0 = None if a0 is None else float(a0)

    frames = _need(tree, "frames", dict, "")
    cross = _need(frames, "cross", list, "frames.")
    parallel = _need(frames, "parallel", list, "frames.")
    camera = _need(tree, "camera", dict, "")
    for key in ("R", "t", "K"):
        _need(camera, key, list, "camera.")
    ambient = tree.get("ambient")
    if ambient is not None and not isinstance(ambient, str):
        raise ParseError("'ambient' must be a path or null")

    pre = tree.get("preprocess", {})
    if not isinstance(pre, dict):
        raise ParseError("'preprocess' must be an object")
    epsilon = pre.get("epsilon")
    if isinstance(epsilon, list):
        if len(epsilon) != 2:
            raise ParseError("preprocess.epsilon pair must have two entries")
        epsilon = tuple(None if e is None else float(e) for e in epsilon)
    elif epsilon is not None:
        epsilon = float(epsilon)
    iterations = int(pre.get("iterations", 2))
    noise_floor = float(pre.get("noise_floor", 0.0))
    if iterations < 1:
        raise ParseError("preprocess.iterations must be at least 1")

    solvers = dict(DEFAULT_BACKENDS)
    given = tree.get("solvers", {})
    if not isinstance(given, dict):
        raise ParseError("'solvers' must be an object")
    for kind, backend in given.items():
        if kind not in DEFAULT_BACKENDS:
            raise ParseError(f"unknown problem kind {kind!r} in solvers")
        if backend not in BACKENDS:
            raise ParseError(f"unknown backend {backend!r} for {kind}")
        if backend == "GaussNewton" and kind.endswith("normal"):
            raise ParseError(f"GaussNewton cannot solve {kind} problems")
        solvers[kind] = backend

    manifest = CaptureManifest(
        n=n,
        height=height,
        width=width,
        lights=lights,
        cross=[str(p) for p in cross],
        parallel=[str(p) for p in parallel],
        camera={k: camera[k] for k in ("R", "t", "K")} | {"orthographic": bool(camera.get("orthographic", False))},
        l0=l0,
        a0=a0,
        ambient=ambient,
        epsilon=epsilon,
        iterations=iterations,
        noise_floor=noise_floor,
        solvers=solvers,
        version=version,
        root=Path(root),
    )
    try:
        manifest.pose
        manifest.rig
    except (ValueError, TypeError) as exc:
        raise ParseError(f"invalid camera or lights: {exc}") from None
    if check_files:
        validate_files(manifest)
    return manifest


def validate_files(manifest: CaptureManifest):
    """Check every referenced frame exists and has the declared size."""
    for name, paths in (("cross", manifest.cross), ("parallel", manifest.parallel)):
        for idx in range(manifest.n):
            if idx >= len(paths):
                raise MissingFile(f"{name} frame {idx} is not listed", index=idx)
            _check_image(manifest, paths[idx], f"{name} frame {idx}", idx)
        if len(paths) > manifest.n:
            raise DimensionMismatch(f"{len(paths)} {name} frames listed for N={manifest.n}")
    if manifest.ambient is not None:
        _check_image(manifest, manifest.ambient, "ambient map", None)


def _check_image(manifest, rel, what, idx):
    path = manifest.path(rel)
    if not path.is_file():
        raise MissingFile(f"{what} missing: {path}", index=idx, path=str(path))
    h, w, c, _, _ = read_pfm_header(path)
    if (h, w, c) != (manifest.height, manifest.width, 3):
        raise DimensionMismatch(f"{what} is {w}x{h}x{c}, expected {manifest.width}x{manifest.height}x3")


def read_manifest(path, check_files=True) -> CaptureManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingFile(f"manifest not found: {path}", path=str(path)) from None
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    try:
        return parse_manifest(tree, root=path.parent, check_files=check_files)
    except PolarfieldError:
        raise
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from None


def read_stack(manifest: CaptureManifest) -> PolarizedOLATStack:
    """Load all frames named by the manifest."""
    validate_files(manifest)
    cross = np.stack([read_pfm(manifest.path(p)) for p in manifest.cross[: manifest.n]])
    parallel = np.stack([read_pfm(manifest.path(p)) for p in manifest.parallel[: manifest.n]])
    ambient = None if manifest.ambient is None else read_pfm(manifest.path(manifest.ambient))
    return PolarizedOLATStack(
        cross.astype(float),
        parallel.astype(float),
        manifest.rig,
        manifest.pose,
        None if ambient is None else ambient.astype(float),
    )


def write_stack(manifest: CaptureManifest, stack: PolarizedOLATStack, write_ambient=True):
    """Write frames (and the ambient map, if the manifest names one)."""
    n, h, w = stack.shape
    if (n, h, w) != (manifest.n, manifest.height, manifest.width):
        raise DimensionMismatch(f"stack is {(n, h, w)}, manifest declares {(manifest.n, manifest.height, manifest.width)}")
    for frames, paths in ((stack.cross, manifest.cross), (stack.parallel, manifest.parallel)):
        if len(paths) != n:
            raise MissingFile(f"manifest lists {len(paths)} frames for N={n}", index=min(len(paths), n))
        for k in range(n):
            target = manifest.path(paths[k])
            os.makedirs(target.parent, exist_ok=True)
            write_pfm(target, frames[k])
    if write_ambient and manifest.ambient is not None:
        write_pfm(manifest.path(manifest.ambient), stack.ambient)


def frame_names(n, folder):
    return [f"{folder}/{k:04d}.pfm" for k in range(n)]
