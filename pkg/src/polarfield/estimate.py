"""Closed-form initial albedos and normals from the cleaned sequences."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LUMA, LightRig
from .synth import gradient_images

DEGENERATE_NORM = 1e-9


def init_albedo(stack, rig: LightRig):
    """Integrated albedo estimates.

    ``rho_d = 4 kappa / N * sum_k I_d^k`` per channel and
    ``rho_s = 4 pi kappa / N * sum_k lum(I_s^k)``. Works on full stacks
    ``(N, H, W, 3)`` or single signals ``(N, 3)``.
    """
    n = rig.n
    rho_d = 4.0 * rig.kappa / n * np.sum(stack.diffuse, axis=0)
    rho_s = 4.0 * math.pi * rig.kappa / n * (np.sum(stack.specular, axis=0) @ LUMA)
    return rho_d, rho_s


def init_normals(grad_d, grad_s, rho_d, omega_o):
    """Normals from the gradient responses.

    Parameters
    ----------
    grad_d, grad_s : arrays (3, ..., 3)
        Gradient images indexed ``[axis, ..., channel]``.
    rho_d : array (..., 3)
        Diffuse albedo used to scale the diffuse response per channel.
    omega_o : array (..., 3)
        Surface-to-camera directions.

    Returns
    -------
    n_d, n_s : arrays (..., 3), zero where degenerate
    degenerate_d, degenerate_s : boolean arrays (...)
    """
    grad_d = np.moveaxis(np.asarray(grad_d, dtype=float), 0, -2)  # (..., axis, channel)
    grad_s = np.moveaxis(np.asarray(grad_s, dtype=float), 0, -2)
    rho_d = np.asarray(rho_d, dtype=float)

    usable = rho_d > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(usable[..., None, :], 3.0 / (2.0 * math.pi * rho_d[..., None, :]) * grad_d, 0.0)
    weights = LUMA * usable
    wsum = weights.sum(axis=-1, keepdims=True)
    weights = np.divide(weights, wsum, out=np.zeros_like(weights), where=wsum > 0)
    vd = np.einsum("...jc,...c->...j", scaled, weights)
    raw_d = np.linalg.norm(grad_d @ LUMA, axis=-1)
    degenerate_d = (raw_d < DEGENERATE_NORM) | (np.linalg.norm(vd, axis=-1) < DEGENERATE_NORM)
    n_d = _safe_normalize(vd, degenerate_d)

    vs = grad_s @ LUMA
    degenerate_s = np.linalg.norm(vs, axis=-1) < DEGENERATE_NORM
    half = _safe_normalize(vs, degenerate_s) + np.asarray(omega_o, dtype=float)
    degenerate_s = degenerate_s | (np.linalg.norm(half, axis=-1) < DEGENERATE_NORM)
    n_s = _safe_normalize(half, degenerate_s)
    return n_d, n_s, degenerate_d, degenerate_s


def _safe_normalize(v, bad):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    out = np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)
    return np.where(bad[..., None], 0.0, out)


@dataclass(frozen=True)
class InitialEstimates:
    rho_d_init: np.ndarray
    rho_s_init: np.ndarray
    n_d_init: np.ndarray
    n_s_init: np.ndarray
    degenerate_d: np.ndarray
    degenerate_s: np.ndarray
    backfacing_s: np.ndarray


def initialize(stack, rig: LightRig, view) -> InitialEstimates:
    rho_d, rho_s = init_albedo(stack, rig)
    grad_d = gradient_images(stack.diffuse, rig)
    grad_s = gradient_images(stack.specular, rig)
    n_d, n_s, deg_d, deg_s = init_normals(grad_d, grad_s, rho_d, view)
    backfacing = ~deg_s & (np.sum(n_s * view, axis=-1) <= 0)
    return InitialEstimates(rho_d, rho_s, n_d, n_s, deg_d, deg_s, backfacing)
