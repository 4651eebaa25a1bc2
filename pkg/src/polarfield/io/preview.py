"""8-bit false-color PNG previews and summary statistics of bundle maps."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .bundle import MAP_RANGES, UNIT_MAPS

# sequential ramp (dark blue -> teal -> yellow) and diverging ramp (blue -> white -> red)
_SEQ = np.array([[0.07, 0.04, 0.33], [0.13, 0.40, 0.55], [0.15, 0.65, 0.52], [0.55, 0.82, 0.30], [0.99, 0.91, 0.15]])
_DIV = np.array([[0.23, 0.30, 0.75], [0.87, 0.87, 0.87], [0.71, 0.02, 0.15]])

PANEL_ORDER = (
    "albedo_diffuse",
    "albedo_specular",
    "normal",
    "normal_diffuse",
    "normal_specular",
    "anisotropy",
    "roughness",
    "occlusion_diffuse",
    "interreflection_diffuse",
)


def _ramp(t, stops):
    t = np.clip(np.nan_to_num(t), 0.0, 1.0)
    x = t * (len(stops) - 1)
    lo = np.floor(x).astype(int).clip(0, len(stops) - 2)
    frac = (x - lo)[..., None]
    return stops[lo] * (1 - frac) + stops[lo + 1] * frac


def false_color(name, arr):
    """``(H, W, 3)`` uint8 preview of a 2D map."""
    a = np.asarray(arr, dtype=float)
    if a.ndim == 3 and a.shape[-1] == 3:
        if name in UNIT_MAPS or name.startswith("normal") or name == "tangent":
            rgb = 0.5 * (a + 1.0)
        else:
            peak = np.percentile(a, 99.5) if a.size else 1.0
            rgb = np.clip(a / (peak if peak > 0 else 1.0), 0, 1) ** (1 / 2.2)
    elif a.ndim == 2:
        lo, hi = MAP_RANGES.get(name, (None, None))
        if lo is not None and hi is not None and lo < 0:
            rgb = _ramp((a - lo) / (hi - lo), _DIV)
        else:
            vmin = float(np.min(a)) if lo is None else float(lo)
            vmax = float(np.max(a)) if a.size else 1.0
            span = vmax - vmin
            rgb = _ramp((a - vmin) / (span if span > 0 else 1.0), _SEQ)
    else:
        raise ValueError(f"no preview for a map of shape {a.shape}")
    return (np.clip(rgb, 0, 1) * 255 + 0.5).astype(np.uint8)


def save_preview(path, name, arr):
    Image.fromarray(false_color(name, arr), mode="RGB").save(path)


def decomposition_panel(maps, path, names=PANEL_ORDER, gap=2):
    """Tile the available maps side by side into one PNG."""
    tiles = [false_color(n, maps[n]) for n in names if n in maps and np.ndim(maps[n]) in (2, 3)]
    tiles = [t for t in tiles if t.ndim == 3]
    if not tiles:
        raise ValueError("none of the panel maps are present")
    h = max(t.shape[0] for t in tiles)
    w = sum(t.shape[1] for t in tiles) + gap * (len(tiles) - 1)
    canvas = np.full((h, w, 3), 255, dtype=np.uint8)
    x = 0
    for t in tiles:
        canvas[: t.shape[0], x : x + t.shape[1]] = t
        x += t.shape[1] + gap
    Image.fromarray(canvas, mode="RGB").save(path)


def map_statistics(name, arr):
    """Per-channel min / max / mean, plus unit-norm violations for normal maps."""
    a = np.asarray(arr, dtype=float)
    chans = a.reshape(-1, a.shape[-1]) if a.ndim == 3 and a.shape[-1] == 3 else a.reshape(-1, 1)
    stats = {
        "shape": list(a.shape),
        "min": chans.min(axis=0).tolist(),
        "max": chans.max(axis=0).tolist(),
        "mean": chans.mean(axis=0).tolist(),
    }
    if a.ndim == 3 and a.shape[-1] == 3 and (name in UNIT_MAPS or name.startswith("normal")):
        norm = np.linalg.norm(a, axis=-1)
        stats["unit_norm_violations"] = int(np.count_nonzero(np.abs(norm - 1.0) > 1e-3))
    return stats
