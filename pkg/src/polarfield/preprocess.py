"""Overexposure removal and the visibility / inter-reflection / occlusion maps.

The indicator written ``ceil(I - zeta)`` in the estimators is a {0, 1} gate:
a light counts as observed when any channel of its sample exceeds the
ambient floor ``zeta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LUMA, LightRig, as_pixel_signal
from .errors import DimensionMismatch, EmptySignal


def ambient_offset(values, epsilon, top_fraction=0.01):
    """Replacement offset: per-channel mean without the top 1% of samples,
    capped at ``epsilon / 10``. ``values`` has the light axis first."""
    n = values.shape[0]
    drop = int(math.ceil(top_fraction * n)) if n > 1 else 0
    keep = max(n - drop, 1)
    part = np.sort(values, axis=0)[:keep]
    return np.minimum(part.mean(axis=0), epsilon / 10.0)


def _remove_overexposure(values, epsilon, iterations, delta):
    """Core of the spike removal on an array with the light axis first."""
    values = np.array(values, dtype=float)
    mask = np.zeros(values.shape, dtype=bool)
    if values.shape[0] < 2:
        return values, mask
    if delta is None:
        delta = ambient_offset(values, epsilon)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), values.shape[1:])
    for _ in range(iterations):
        order = np.argsort(-values, axis=0, kind="stable")
        ranked = np.take_along_axis(values, order, axis=0)
        gaps = ranked[:-1] - ranked[1:]
        exceed = gaps > epsilon
        hit = exceed.any(axis=0)
        if not hit.any():
            break
        j = np.argmax(exceed, axis=0)
        target = np.take_along_axis(order, j[None], axis=0)[0]
        below = np.take_along_axis(ranked, (j + 1)[None], axis=0)[0]
        new = np.where(hit, below + delta, np.take_along_axis(values, target[None], axis=0)[0])
        np.put_along_axis(values, target[None], new[None], axis=0)
        np.put_along_axis(mask, target[None], (np.take_along_axis(mask, target[None], axis=0)[0] | hit)[None], axis=0)
    return values, mask


def remove_overexposure(signal, epsilon: float, iterations: int = 2, delta=None):
    """Remove isolated overexposure pulses from one pixel's light sequence.

    Per channel and per iteration, the samples are ranked in descending
    order; at the first consecutive gap larger than ``epsilon``, the sample
    just above the gap is replaced by the sample just below it plus an
    ambient offset ``delta``. At most one sample per channel changes per
    iteration.

    Parameters
    ----------
    signal : array (N, 3) or (N,)
    epsilon : float
        Gap threshold, > 0.
    iterations : int
        Number of passes (two is the usual setting).
    delta : float or array (3,), optional
        Ambient offset. Defaults to the channel mean without its top 1% of
        samples, capped at ``epsilon / 10``.

    Returns
    -------
    cleaned, mask : arrays shaped like ``signal``; ``mask`` marks altered samples.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    arr = np.asarray(signal, dtype=float)
    if arr.shape[0] == 0:
        raise EmptySignal("cannot clean an empty signal")
    if arr.ndim == 2:
        as_pixel_signal(arr)
    return _remove_overexposure(arr, epsilon, iterations, delta)


def remove_overexposure_stack(sequence, epsilon: float, iterations: int = 2):
    """Vectorized :func:`remove_overexposure` over an ``(N, H, W, 3)`` stack."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return _remove_overexposure(sequence, epsilon, iterations, None)


@dataclass(frozen=True)
class CleanStack:
    diffuse: np.ndarray
    specular: np.ndarray
    removed_diffuse: np.ndarray
    removed_specular: np.ndarray

    def __post_init__(self):
        if self.diffuse.shape != self.specular.shape:
            raise DimensionMismatch("diffuse and specular sequences differ in shape")

    @property
    def removed_mask(self):
        return self.removed_diffuse | self.removed_specular

    @property
    def shape(self):
        n, h, w, _ = self.diffuse.shape
        return n, h, w


def clean_sequences(diffuse, specular, epsilon=None, iterations=2) -> CleanStack:
    """Apply overexposure removal to both separated sequences.

    ``epsilon`` is a scalar, a ``(diffuse, specular)`` pair, or None to skip
    cleaning of that sequence.
    """
    if isinstance(epsilon, (tuple, list)):
        eps_d, eps_s = epsilon
    else:
        eps_d = eps_s = epsilon
    out = []
    for seq, eps in ((diffuse, eps_d), (specular, eps_s)):
        seq = np.asarray(seq, dtype=float)
        if eps is None:
            out.append((seq.copy(), np.zeros(seq.shape, dtype=bool)))
        else:
            out.append(remove_overexposure_stack(seq, eps, iterations))
    (d, md), (s, ms) = out
    return CleanStack(d, s, md, ms)


# --------------------------------------------------------------------------
# Geometry-derived maps


def _gate(sequence, zeta):
    """{0, 1} indicator per light: any channel above the floor."""
    return np.any(sequence > zeta, axis=-1)


def visibility(signal, zeta, rig: LightRig, n) -> np.ndarray:
    """Per-light visibility of one pixel: observed above ``zeta`` and ``n . w > 0``."""
    signal = as_pixel_signal(signal)
    if signal.shape[0] != rig.n:
        raise DimensionMismatch("signal length and rig disagree")
    n = np.asarray(n, dtype=float)
    return _gate(signal, np.asarray(zeta, dtype=float)) & (rig.directions @ n > 0)


def visibility_map(sequence, zeta, rig: LightRig, normals) -> np.ndarray:
    """Visibility for every pixel, shape ``(H, W, N)``."""
    lit = _gate(sequence, zeta)  # (N, H, W)
    facing = np.einsum("kc,hwc->khw", rig.directions, normals) > 0
    return np.moveaxis(lit & facing, 0, -1)


def _pair(normals):
    if isinstance(normals, (tuple, list)):
        return normals
    return normals, normals


def _pair_zeta(zeta):
    if isinstance(zeta, (tuple, list)):
        return zeta
    return zeta, zeta


def interreflection_map(stack: CleanStack, normals, zeta, rig: LightRig):
    """Below-horizon energy ``sum_k gate_k * max(-w_k . n, 0) * I_k``.

    ``normals`` and ``zeta`` are single maps or ``(diffuse, specular)`` pairs.
    Returns ``(rho_d (H, W, 3), rho_s (H, W))``; the specular map uses
    luminance.
    """
    n_d, n_s = _pair(normals)
    z_d, z_s = _pair_zeta(zeta)
    out = []
    for seq, n, z in ((stack.diffuse, n_d, z_d), (stack.specular, n_s, z_s)):
        gate = _gate(seq, z)
        back = np.maximum(-np.einsum("kc,hwc->khw", rig.directions, n), 0.0)
        out.append(np.einsum("khw,khwc->hwc", gate * back, seq))
    return out[0], out[1] @ LUMA


def occlusion_map(stack: CleanStack, normals, zeta, rig: LightRig):
    """Normalized occlusion ``(4/N) sum_k gate_k * max(w_k . n, 0)`` for both
    sequences, returned as ``(tau_d, tau_s)``."""
    n_d, n_s = _pair(normals)
    z_d, z_s = _pair_zeta(zeta)
    out = []
    for seq, n, z in ((stack.diffuse, n_d, z_d), (stack.specular, n_s, z_s)):
        gate = _gate(seq, z)
        front = np.maximum(np.einsum("kc,hwc->khw", rig.directions, n), 0.0)
        out.append(4.0 / rig.n * np.sum(gate * front, axis=0))
    return out[0], out[1]


def shadow_compensate(albedo, tau, floor: float = 0.05):
    """Divide an albedo map by occlusion, with ``tau`` clamped below at ``floor``."""
    if floor <= 0:
        raise ValueError("floor must be positive")
    albedo = np.asarray(albedo, dtype=float)
    tau = np.maximum(np.asarray(tau, dtype=float), floor)
    if albedo.ndim == tau.ndim + 1:
        tau = tau[..., None]
    return albedo / tau


@dataclass(frozen=True)
class GeometryMaps:
    nu_d: np.ndarray
    nu_s: np.ndarray
    tau_d: np.ndarray
    tau_s: np.ndarray
    varrho_d: np.ndarray
    varrho_s: np.ndarray


def compute_geometry(stack: CleanStack, n_d, n_s, zeta_d, zeta_s, rig: LightRig) -> GeometryMaps:
    nu_d = visibility_map(stack.diffuse, zeta_d, rig, n_d)
    nu_s = visibility_map(stack.specular, zeta_s, rig, n_s)
    tau_d, tau_s = occlusion_map(stack, (n_d, n_s), (zeta_d, zeta_s), rig)
    var_d, var_s = interreflection_map(stack, (n_d, n_s), (zeta_d, zeta_s), rig)
    return GeometryMaps(nu_d, nu_s, tau_d, tau_s, var_d, var_s)
