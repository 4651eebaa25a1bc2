"""Material bundles: a directory of PFM maps plus ``provenance.json``.

Every map is stored as ``maps/<name>.pfm``. Arrays with more than two
spatial axes are flattened into tall images: ``(N, H, W[, 3])`` sequences
become ``(N*H, W[, 3])``. ``provenance.json`` records, per map, the original
shape, dtype, declared value range and observed min/max, so the bundle can be
read back without any other context.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CorruptImage, MissingFile
from .pfm import read_pfm, write_pfm

PROVENANCE = "provenance.json"
DIAGNOSTICS = "diagnostics.csv"

# declared value range per map name (None = unbounded side)
MAP_RANGES = {
    "diffuse_sequence": (0.0, None),
    "specular_sequence": (0.0, None),
    "removed_mask": (0, 1),
    "visibility_diffuse": (0, 1),
    "visibility_specular": (0, 1),
    "occlusion_diffuse": (0.0, 4.0),
    "occlusion_specular": (0.0, 4.0),
    "interreflection_diffuse": (0.0, None),
    "interreflection_specular": (0.0, None),
    "albedo_diffuse_init": (0.0, None),
    "albedo_specular_init": (0.0, None),
    "normal_diffuse_init": (-1.0, 1.0),
    "normal_specular_init": (-1.0, 1.0),
    "init_flags": (0, None),
    "normal_diffuse": (-1.0, 1.0),
    "normal_specular": (-1.0, 1.0),
    "normal": (-1.0, 1.0),
    "tangent": (-1.0, 1.0),
    "sigma_x": (0.0, None),
    "sigma_y": (0.0, None),
    "anisotropy": (-1.0, 1.0),
    "roughness": (0.0, None),
    "albedo_diffuse": (0.0, None),
    "albedo_specular": (0.0, None),
    "albedo_diffuse_compensated": (0.0, None),
    "albedo_specular_compensated": (0.0, None),
    "correlation_diffuse": (-1.0, 1.0),
    "correlation_specular": (-1.0, 1.0),
    "flags": (0, None),
}

UNIT_MAPS = ("normal", "normal_diffuse", "normal_specular")


def _to_image(arr):
    """Flatten to a PFM-compatible ``(rows, W)`` or ``(rows, W, 3)`` image."""
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[-1] == 3:
        return arr
    if arr.ndim == 3:
        return arr.reshape(-1, arr.shape[-1])
    if arr.ndim == 4 and arr.shape[-1] == 3:
        return arr.reshape(-1, arr.shape[-2], 3)
    raise ValueError(f"cannot store an array of shape {arr.shape}")


@dataclass
class MaterialBundle:
    maps: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.maps[name]

    def __contains__(self, name):
        return name in self.maps

    def names(self):
        return sorted(self.maps)

    def range_violations(self, tol=1e-4):
        """``{name: count}`` of samples outside each map's declared range;
        unit maps also count non-unit, non-zero vectors."""
        out = {}
        for name, arr in self.maps.items():
            lo, hi = MAP_RANGES.get(name, (None, None))
            a = np.asarray(arr, dtype=float)
            bad = np.zeros(a.shape, dtype=bool)
            if lo is not None:
                bad |= a < lo - tol
            if hi is not None:
                bad |= a > hi + tol
            count = int(np.count_nonzero(bad))
            if name in UNIT_MAPS:
                norm = np.linalg.norm(a, axis=-1)
                count += int(np.count_nonzero((norm > 0) & (np.abs(norm - 1.0) > tol)))
            if count:
                out[name] = count
        return out


def map_metadata(name, arr):
    arr = np.asarray(arr)
    lo, hi = MAP_RANGES.get(name, (None, None))
    finite = arr.astype(np.float32)
    return {
        "file": f"maps/{name}.pfm",
        "shape": list(arr.shape),
        "dtype": "bool" if arr.dtype == bool else ("int" if np.issubdtype(arr.dtype, np.integer) else "float32"),
        "range": [lo, hi],
        "min": float(finite.min()) if finite.size else None,
        "max": float(finite.max()) if finite.size else None,
    }


def write_map(out_dir, name, arr):
    out_dir = Path(out_dir)
    (out_dir / "maps").mkdir(parents=True, exist_ok=True)
    arr = np.asarray(arr)
    write_pfm(out_dir / "maps" / f"{name}.pfm", _to_image(arr.astype(np.float32)))
    return map_metadata(name, arr)


def read_map(out_dir, name, meta):
    path = Path(out_dir) / meta["file"]
    if not path.is_file():
        raise MissingFile(f"bundle map '{name}' missing: {path}", path=str(path))
    img = read_pfm(path)
    shape = tuple(meta["shape"])
    if img.size != int(np.prod(shape)):
        raise CorruptImage(f"map '{name}' holds {img.size} samples, provenance says {shape}")
    arr = img.reshape(shape)
    if meta["dtype"] == "bool":
        return arr > 0.5
    if meta["dtype"] == "int":
        return arr.astype(np.int64)
    return arr


def write_bundle(bundle: MaterialBundle, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = dict(bundle.provenance.get("maps", {}))
    for name in sorted(bundle.maps):
        meta[name] = write_map(out_dir, name, bundle.maps[name])
    prov = dict(bundle.provenance)
    prov["maps"] = {k: meta[k] for k in sorted(meta)}
    write_provenance(out_dir, prov)
    return prov


def write_provenance(out_dir, prov):
    text = json.dumps(prov, indent=2, sort_keys=True) + "\n"
    (Path(out_dir) / PROVENANCE).write_text(text, encoding="utf-8")


def read_provenance(out_dir):
    path = Path(out_dir) / PROVENANCE
    if not path.is_file():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


def read_bundle(out_dir, names=None) -> MaterialBundle:
    """Load a bundle (or just ``names``) back from disk."""
    prov = read_provenance(out_dir)
    if not prov:
        raise MissingFile(f"no {PROVENANCE} in {out_dir}", path=str(Path(out_dir) / PROVENANCE))
    meta = prov.get("maps", {})
    wanted = sorted(meta) if names is None else list(names)
    maps = {}
    for name in wanted:
        if name not in meta:
            raise MissingFile(f"bundle has no map '{name}'")
        maps[name] = read_map(out_dir, name, meta[name])
    return MaterialBundle(maps, prov)


def write_diagnostics(path, rows):
    """Per-pixel solver diagnostics as CSV:
    ``pixel,kind,backend,iterations,grad_norm,status``; the gradient norm is
    written with 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pixel", "kind", "backend", "iterations", "grad_norm", "status"])
        for pixel, kind, backend, iterations, grad_norm, status in rows:
            writer.writerow([pixel, kind, backend, iterations, f"{grad_norm:.17g}", status])


def read_diagnostics(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            (int(r["pixel"]), r["kind"], r["backend"], int(r["iterations"]), float(r["grad_norm"]), r["status"])
            for r in reader
        ]
