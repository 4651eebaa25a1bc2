"""Geometry, polarization math and diffuse/specular separation.

Conventions used throughout the package:

* Directions are unit 3-vectors stored in the last axis of float64 arrays.
* ``omega_o`` always points from the surface towards the camera.
* Image stacks are ``(N, H, W, 3)`` arrays indexed ``[light, row, col, channel]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidCount, LengthMismatch

#: Rec. 709 luminance weights, used wherever an RGB signal must become scalar.
LUMA = np.array([0.2126, 0.7152, 0.0722])

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def normalize(v, axis=-1):
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / norm


def luminance(rgb):
    return np.asarray(rgb, dtype=float) @ LUMA


def as_pixel_signal(samples) -> np.ndarray:
    """Validate a length-N sequence of RGB samples and return it as ``(N, 3)``."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None].repeat(3, axis=1) if arr.size else arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DimensionMismatch(f"pixel signal must be (N, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("pixel signal contains non-finite values")
    if np.any(arr < 0):
        raise ValueError("pixel signal contains negative intensities")
    return arr


# --------------------------------------------------------------------------
# Polarization


@dataclass(frozen=True)
class StokesVector:
    s0: float
    s1: float = 0.0
    s2: float = 0.0
    s3: float = 0.0

    def __post_init__(self):
        if self.s0 < 0:
            raise ValueError("s0 must be non-negative")
        if self.s1**2 + self.s2**2 + self.s3**2 > self.s0**2 * (1 + 1e-12) + 1e-300:
            raise ValueError("degree of polarization exceeds 1")

    @classmethod
    def unpolarized(cls, intensity=1.0):
        return cls(float(intensity))

    def as_array(self):
        return np.array([self.s0, self.s1, self.s2, self.s3])

    @property
    def intensity(self):
        return self.s0


def malus_intensity(i0, theta):
    return i0 * np.cos(theta) ** 2


def polarizer_mueller(theta) -> np.ndarray:
    """Mueller matrix of an ideal linear polarizer with its axis at ``theta``.

    The physical factor 1/2 is kept, so unpolarized light loses half its
    intensity on the first pass.
    """
    c, s = math.cos(2 * theta), math.sin(2 * theta)
    return 0.5 * np.array(
        [
            [1.0, c, s, 0.0],
            [c, c * c, c * s, 0.0],
            [s, c * s, s * s, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ]
    )


def apply_mueller(matrix, stokes: StokesVector) -> StokesVector:
    out = np.asarray(matrix) @ stokes.as_array()
    # roundoff can push s0 a hair below zero for a crossed pair
    s0 = max(float(out[0]), 0.0)
    vec = out[1:]
    bound = math.sqrt(float(vec @ vec))
    if bound > s0:
        vec = vec * (s0 / bound) if bound > 0 else vec
    return StokesVector(s0, *map(float, vec))


def separate(cross, parallel):
    """Split cross/parallel-polarized observations into diffuse and specular.

    ``diffuse = 2 * cross`` and ``specular = max(2 * parallel - 2 * cross, 0)``,
    element-wise over arrays of any matching shape.
    """
    cross = np.asarray(cross, dtype=float)
    parallel = np.asarray(parallel, dtype=float)
    if cross.shape != parallel.shape:
        raise LengthMismatch(f"cross {cross.shape} and parallel {parallel.shape} differ")
    diffuse = 2.0 * cross
    specular = np.maximum(2.0 * parallel - 2.0 * cross, 0.0)
    return diffuse, specular


# --------------------------------------------------------------------------
# Light rig


def spiral_directions(n: int) -> np.ndarray:
    """Golden-angle Fibonacci spiral from +z to -z, shape ``(n, 3)``.

    z decreases strictly along the sequence, which matches the capture order
    of the rig (top of the dome first).
    """
    if int(n) != n or n < 4:
        raise InvalidCount(f"need at least 4 directions, got {n}")
    k = np.arange(int(n), dtype=float)
    z = 1.0 - (2.0 * k + 1.0) / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = k * GOLDEN_ANGLE
    out = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LightRig:
    """N light directions with the shared radiant intensity ``l0`` and
    per-light solid angle ``a0``."""

    directions: np.ndarray
    l0: float = 1.0
    a0: float | None = None
    generator: str = "explicit"

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=float)
        if d.ndim != 2 or d.shape[1] != 3:
            raise DimensionMismatch(f"directions must be (N, 3), got {d.shape}")
        if d.shape[0] < 4:
            raise InvalidCount(f"a rig needs at least 4 lights, got {d.shape[0]}")
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        if len(np.unique(np.round(d, 12), axis=0)) != len(d):
            raise ValueError("light directions must be distinct")
        object.__setattr__(self, "directions", _frozen(d))
        a0 = 4.0 * math.pi / len(d) if self.a0 is None else float(self.a0)
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "l0", float(self.l0))
        if not (self.l0 > 0 and a0 > 0 and math.isfinite(self.kappa)):
            raise ValueError("l0 and a0 must be positive")

    @classmethod
    def spiral(cls, n: int, l0: float = 1.0, a0: float | None = None) -> "LightRig":
        return cls(spiral_directions(n), l0=l0, a0=a0, generator="fibonacci_spiral")

    @property
    def n(self) -> int:
        return self.directions.shape[0]

    @property
    def kappa(self) -> float:
        return 1.0 / (self.l0 * self.a0)

    def rotated(self, rotation) -> "LightRig":
        return LightRig(self.directions @ np.asarray(rotation).T, self.l0, self.a0)

    def __eq__(self, other):
        return (
            isinstance(other, LightRig)
            and np.array_equal(self.directions, other.directions)
            and self.l0 == other.l0
            and self.a0 == other.a0
        )

    __hash__ = None


# --------------------------------------------------------------------------
# Camera


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera transform ``x_cam = R @ x_world + t`` with intrinsics K.

    The camera looks along its +z axis (OpenCV convention). With
    ``orthographic=True`` every pixel shares the view direction of the optical
    axis and K is only kept for bookkeeping.
    """

    R: np.ndarray
    t: np.ndarray
    K: np.ndarray
    orthographic: bool = False

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        t = np.asarray(self.t, dtype=float).reshape(-1)
        K = np.asarray(self.K, dtype=float)
        if R.shape != (3, 3) or t.shape != (3,) or K.shape != (3, 3):
            raise DimensionMismatch("camera pose needs R (3x3), t (3,), K (3x3)")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("R must be a proper rotation")
        if np.any(np.abs(np.tril(K, -1)) > 0):
            raise ValueError("K must be upper triangular")
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "K", _frozen(K))

    @classmethod
    def looking_at_origin(cls, distance=10.0, focal=None, width=64, height=64, orthographic=False):
        """Camera on the +z axis looking down at the origin."""
        R = np.diag([1.0, -1.0, -1.0])
        f = float(focal if focal is not None else 2.0 * max(width, height))
        K = np.array([[f, 0.0, width / 2.0], [0.0, f, height / 2.0], [0.0, 0.0, 1.0]])
        return cls(R, np.array([0.0, 0.0, distance]), K, orthographic)

    @classmethod
    def orthographic_from_view(cls, omega_o, width=64, height=64) -> "CameraPose":
        """Orthographic camera whose surface-to-camera direction is ``omega_o``."""
        forward = -normalize(omega_o)
        up = np.array([0.0, 1.0, 0.0]) if abs(forward[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        x = normalize(np.cross(up, forward))
        y = np.cross(forward, x)
        R = np.stack([x, y, forward])
        K = np.array([[1.0, 0.0, width / 2.0], [0.0, 1.0, height / 2.0], [0.0, 0.0, 1.0]])
        return cls(R, np.zeros(3), K, orthographic=True)

    @property
    def center(self):
        return -self.R.T @ self.t

    def view_directions(self, height: int, width: int) -> np.ndarray:
        """Per-pixel surface-to-camera directions, shape ``(H, W, 3)``."""
        if self.orthographic:
            d = -self.R[2]
            return np.broadcast_to(d / np.linalg.norm(d), (height, width, 3)).copy()
        v, u = np.mgrid[0:height, 0:width].astype(float)
        pix = np.stack([u + 0.5, v + 0.5, np.ones_like(u)], axis=-1)
        rays = pix @ np.linalg.inv(self.K).T @ self.R
        return -normalize(rays)

    def __eq__(self, other):
        return (
            isinstance(other, CameraPose)
            and np.array_equal(self.R, other.R)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.K, other.K)
            and self.orthographic == other.orthographic
        )

    __hash__ = None


# --------------------------------------------------------------------------
# Captured stack


def estimate_ambient(cross, fraction=0.05) -> np.ndarray:
    """Per-pixel mean of the darkest ``fraction`` of frames, shape ``(H, W, 3)``."""
    cross = np.asarray(cross, dtype=float)
    n = cross.shape[0]
    k = max(1, int(math.ceil(fraction * n)))
    luma = cross @ LUMA
    order = np.argsort(luma, axis=0, kind="stable")[:k]
    darkest = np.take_along_axis(cross, order[..., None], axis=0)
    return darkest.mean(axis=0)


@dataclass(frozen=True)
class PolarizedOLATStack:
    cross: np.ndarray
    parallel: np.ndarray
    rig: LightRig
    pose: CameraPose
    ambient: np.ndarray | None = None
    view: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        cross = np.asarray(self.cross, dtype=float)
        parallel = np.asarray(self.parallel, dtype=float)
        if cross.ndim != 4 or cross.shape[-1] != 3:
            raise DimensionMismatch(f"stacks must be (N, H, W, 3), got {cross.shape}")
        if cross.shape != parallel.shape:
            raise DimensionMismatch(f"cross {cross.shape} and parallel {parallel.shape} differ")
        if cross.shape[0] != self.rig.n:
            raise DimensionMismatch(f"stack has {cross.shape[0]} frames, rig has {self.rig.n} lights")
        _, h, w, _ = cross.shape
        ambient = estimate_ambient(cross) if self.ambient is None else np.asarray(self.ambient, float)
        if ambient.shape != (h, w, 3):
            raise DimensionMismatch(f"ambient map must be {(h, w, 3)}, got {ambient.shape}")
        view = self.pose.view_directions(h, w) if self.view is None else np.asarray(self.view, float)
        if view.shape != (h, w, 3):
            raise DimensionMismatch(f"view map must be {(h, w, 3)}, got {view.shape}")
        for name, arr in [("cross", cross), ("parallel", parallel), ("ambient", ambient), ("view", view)]:
            object.__setattr__(self, name, _frozen(arr))

    @property
    def shape(self):
        n, h, w, _ = self.cross.shape
        return n, h, w

    def polarization_violations(self, noise_floor=0.0) -> int:
        """Number of samples where ``parallel < cross - noise_floor``."""
        return int(np.count_nonzero(self.parallel < self.cross - noise_floor))
