"""Forward renderer for polarized OLAT captures.

Renders cross/parallel-polarized stacks from known per-pixel materials
(Lambertian diffuse plus an anisotropic Ward specular lobe) and injects the
capture artifacts the preprocessing stage is designed to remove. Everything
random is keyed by (seed, purpose, light, row, col), so any subset of the
image renders identically to the same region of a full render.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    CameraPose,
    LightRig,
    PolarizedOLATStack,
    normalize,
    separate,
)
from .errors import BelowHorizon, DimensionMismatch


def shading_frame(normal):
    """Tangent and bitangent for ``normal`` (any leading shape).

    The tangent is +x projected onto the tangent plane, or +y when the normal
    is within ~25 degrees of the x axis; ``bitangent = normal x tangent`` so
    that ``tangent x bitangent = normal``.
    """
    n = np.asarray(normal, dtype=float)
    ref = np.zeros_like(n)
    near_x = np.abs(n[..., 0]) > 0.9
    ref[..., 0] = np.where(near_x, 0.0, 1.0)
    ref[..., 1] = np.where(near_x, 1.0, 0.0)
    t = ref - np.sum(ref * n, axis=-1, keepdims=True) * n
    t = normalize(t)
    b = np.cross(n, t)
    return t, b


@dataclass(frozen=True)
class WardLobeParams:
    sigma_x: float
    sigma_y: float
    normal: np.ndarray
    bitangent: np.ndarray
    tangent: np.ndarray

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise ValueError("lobe deviations must be positive")
        n, b, t = (np.asarray(v, dtype=float) for v in (self.normal, self.bitangent, self.tangent))
        frame = np.stack([n, b, t])
        if not np.allclose(frame @ frame.T, np.eye(3), atol=1e-9):
            raise ValueError("shading frame must be orthonormal")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "bitangent", b)
        object.__setattr__(self, "tangent", t)

    @classmethod
    def aligned(cls, sigma_x, sigma_y, normal=(0.0, 0.0, 1.0)):
        n = normalize(np.asarray(normal, dtype=float))
        t, b = shading_frame(n)
        return cls(float(sigma_x), float(sigma_y), n, b, t)


def ward_lobe(wi, wo, n, t, b, sigma_x, sigma_y):
    """Vectorized Ward lobe; zero wherever either direction is below the horizon.

    All vector arguments broadcast against each other over leading axes.
    """
    wi = np.asarray(wi, dtype=float)
    wo = np.asarray(wo, dtype=float)
    ci = np.sum(wi * n, axis=-1)
    co = np.sum(wo * n, axis=-1)
    h = normalize(wi + wo)
    ht = np.sum(h * t, axis=-1) / sigma_x
    hb = np.sum(h * b, axis=-1) / sigma_y
    hn = np.sum(h * n, axis=-1)
    visible = (ci > 0) & (co > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        expo = -2.0 * (ht * ht + hb * hb) / (1.0 + hn)
        val = np.exp(expo) / (4.0 * math.pi * sigma_x * sigma_y * np.sqrt(ci * co))
    return np.where(visible, val, 0.0)


def ward_brdf(omega_i, omega_o, lobe: WardLobeParams) -> float:
    n = lobe.normal
    omega_i = normalize(omega_i)
    omega_o = normalize(omega_o)
    if omega_i @ n <= 0 or omega_o @ n <= 0:
        raise BelowHorizon("omega_i and omega_o must both lie above the surface")
    return float(ward_lobe(omega_i, omega_o, n, lobe.tangent, lobe.bitangent, lobe.sigma_x, lobe.sigma_y))


def hemisphere_integral(sigma_x, sigma_y, omega_o=(0.0, 0.0, 1.0), n_theta=1024, n_phi=512):
    """Integral of the Ward lobe over incident directions in the upper hemisphere.

    Gauss-Legendre in ``s = sqrt(cos theta)`` absorbs the 1/sqrt(cos) grazing
    singularity; the azimuth uses the midpoint rule. The lobe frame is the
    canonical frame of +z.
    """
    x, w = np.polynomial.legendre.leggauss(n_theta)
    s = 0.5 * (x + 1.0)
    ws = 0.5 * w
    mu = s * s
    sin_t = np.sqrt(1.0 - mu * mu)
    phi = (np.arange(n_phi) + 0.5) * (2.0 * math.pi / n_phi)
    wi = np.stack(
        [
            sin_t[:, None] * np.cos(phi)[None],
            sin_t[:, None] * np.sin(phi)[None],
            np.broadcast_to(mu[:, None], (n_theta, n_phi)),
        ],
        axis=-1,
    )
    n = np.array([0.0, 0.0, 1.0])
    t, b = shading_frame(n)
    f = ward_lobe(wi, normalize(omega_o), n, t, b, sigma_x, sigma_y)
    return float(np.sum(f * (2.0 * s * ws)[:, None]) * (2.0 * math.pi / n_phi))


# --------------------------------------------------------------------------
# Materials and artifacts


@dataclass(frozen=True)
class GroundTruthMaterial:
    """Per-pixel ground truth. ``sigma`` is ``(H, W, 2)`` and pairs with the
    canonical shading frame of ``n_s`` unless explicit tangents are given.
    ``visibility`` is an optional ``(H, W, N)`` occluder mask."""

    rho_d: np.ndarray
    rho_s: np.ndarray
    n_d: np.ndarray
    n_s: np.ndarray
    sigma: np.ndarray
    tangent: np.ndarray | None = None
    visibility: np.ndarray | None = None

    def __post_init__(self):
        rho_d = np.asarray(self.rho_d, dtype=float)
        if rho_d.ndim != 3 or rho_d.shape[-1] != 3:
            raise DimensionMismatch("rho_d must be (H, W, 3)")
        h, w, _ = rho_d.shape
        rho_s = np.asarray(self.rho_s, dtype=float)
        n_d = normalize(np.asarray(self.n_d, dtype=float))
        n_s = normalize(np.asarray(self.n_s, dtype=float))
        sigma = np.asarray(self.sigma, dtype=float)
        if rho_s.shape != (h, w) or n_d.shape != (h, w, 3) or n_s.shape != (h, w, 3) or sigma.shape != (h, w, 2):
            raise DimensionMismatch("material maps disagree on image size")
        if np.any(rho_d < 0) or np.any(rho_s < 0) or not np.all(np.isfinite(rho_d)) or not np.all(np.isfinite(rho_s)):
            raise ValueError("albedos must be finite and non-negative")
        if np.any(sigma <= 0):
            raise ValueError("lobe deviations must be positive")
        if self.tangent is None:
            t, _ = shading_frame(n_s)
        else:
            t = np.asarray(self.tangent, dtype=float)
            t = normalize(t - np.sum(t * n_s, axis=-1, keepdims=True) * n_s)
        object.__setattr__(self, "rho_d", rho_d)
        object.__setattr__(self, "rho_s", rho_s)
        object.__setattr__(self, "n_d", n_d)
        object.__setattr__(self, "n_s", n_s)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "tangent", t)
        if self.visibility is not None:
            vis = np.asarray(self.visibility, dtype=bool)
            if vis.shape[:2] != (h, w):
                raise DimensionMismatch("visibility must be (H, W, N)")
            object.__setattr__(self, "visibility", vis)

    @property
    def shape(self):
        return self.rho_d.shape[:2]

    @property
    def bitangent(self):
        return np.cross(self.n_s, self.tangent)

    def lobe_at(self, row, col) -> WardLobeParams:
        return WardLobeParams(
            self.sigma[row, col, 0],
            self.sigma[row, col, 1],
            self.n_s[row, col],
            self.bitangent[row, col],
            self.tangent[row, col],
        )

    @property
    def anisotropy(self):
        sx, sy = self.sigma[..., 0], self.sigma[..., 1]
        return (sx - sy) / (sx + sy)

    @property
    def roughness(self):
        return self.sigma[..., 0] ** 2 + self.sigma[..., 1] ** 2


@dataclass(frozen=True)
class ArtifactConfig:
    """Capture artifacts injected by :func:`render_olat`.

    ``interreflection`` is an energy per light (scalar or length-N) added to
    the diffuse sequence wherever that light is below the diffuse horizon.
    """

    overexposure_probability: float = 0.0
    overexposure_magnitude: float = 0.0
    lens_flare_enabled: bool = False
    lens_flare_strength: float = 0.0
    ambient_level: float = 0.0
    sensor_noise_stddev: float = 0.0
    interreflection: float | tuple = 0.0

    def __post_init__(self):
        if not 0.0 <= self.overexposure_probability <= 1.0:
            raise ValueError("overexposure_probability must lie in [0, 1]")
        for name in ("overexposure_magnitude", "lens_flare_strength", "ambient_level", "sensor_noise_stddev"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if np.any(np.asarray(self.interreflection) < 0):
            raise ValueError("interreflection energy must be non-negative")


# --------------------------------------------------------------------------
# Position-keyed random numbers

def _splitmix64(x):
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def keyed_uniform(seed, stream, light, row, col):
    """Uniform (0, 1) numbers that depend only on their arguments."""
    key = _splitmix64(_splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF)) ^ np.uint64(stream))
    pos = (
        (np.asarray(light, dtype=np.uint64) << np.uint64(40))
        | (np.asarray(row, dtype=np.uint64) << np.uint64(20))
        | np.asarray(col, dtype=np.uint64)
    )
    z = _splitmix64(_splitmix64(pos ^ key))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def keyed_normal(seed, stream, light, row, col):
    u1 = keyed_uniform(seed, 2 * stream, light, row, col)
    u2 = keyed_uniform(seed, 2 * stream + 1, light, row, col)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


_SPIKE, _NOISE_CROSS, _NOISE_PARALLEL = 1, 16, 32


# --------------------------------------------------------------------------
# Rendering


def render_components(material: GroundTruthMaterial, rig: LightRig, view):
    """Artifact-free diffuse and specular sequences, each ``(N, H, W, 3)``."""
    wi = rig.directions[:, None, None, :]
    scale = rig.l0 * rig.a0
    cos_d = np.maximum(np.sum(wi * material.n_d, axis=-1), 0.0)
    diffuse = scale * cos_d[..., None] * material.rho_d
    lobe = ward_lobe(
        wi,
        view,
        material.n_s,
        material.tangent,
        material.bitangent,
        material.sigma[..., 0],
        material.sigma[..., 1],
    )
    specular = (scale * material.rho_s * lobe)[..., None] * np.ones(3)
    if material.visibility is not None:
        vis = np.moveaxis(material.visibility, -1, 0)[..., None]
        diffuse = diffuse * vis
        specular = specular * vis
    return diffuse, specular


def render_olat(
    material: GroundTruthMaterial,
    rig: LightRig,
    omega_o=None,
    artifacts: ArtifactConfig | None = None,
    seed: int = 0,
    pose: CameraPose | None = None,
) -> PolarizedOLATStack:
    """Render a polarized OLAT capture.

    ``omega_o`` fixes one view direction for all pixels (orthographic camera);
    otherwise per-pixel view directions come from ``pose`` (default: a camera
    on +z looking at the origin).
    """
    artifacts = artifacts or ArtifactConfig()
    h, w = material.shape
    if material.visibility is not None and material.visibility.shape[-1] != rig.n:
        raise DimensionMismatch("material visibility and rig disagree on light count")
    if omega_o is not None:
        pose = CameraPose.orthographic_from_view(omega_o, width=w, height=h)
    elif pose is None:
        pose = CameraPose.looking_at_origin(width=w, height=h)
    view = pose.view_directions(h, w)

    diffuse, specular = render_components(material, rig, view)
    cross = 0.5 * diffuse + artifacts.ambient_level
    parallel = 0.5 * diffuse + 0.5 * specular + artifacts.ambient_level

    light, row, col = np.meshgrid(np.arange(rig.n), np.arange(h), np.arange(w), indexing="ij")

    if artifacts.lens_flare_enabled and artifacts.lens_flare_strength > 0:
        facing = np.sum(rig.directions[:, None, None, :] * view, axis=-1)
        ramp = artifacts.lens_flare_strength * np.maximum(-facing, 0.0)
        cross = cross + ramp[..., None]
        parallel = parallel + ramp[..., None]

    inter = np.asarray(artifacts.interreflection, dtype=float)
    if np.any(inter > 0):
        energy = np.broadcast_to(inter.reshape(-1, 1, 1) if inter.ndim else inter, (rig.n, h, w))
        below = np.sum(rig.directions[:, None, None, :] * material.n_d, axis=-1) < 0
        injected = np.where(below, energy, 0.0)[..., None]
        cross = cross + 0.5 * injected
        parallel = parallel + 0.5 * injected

    if artifacts.overexposure_probability > 0 and artifacts.overexposure_magnitude > 0:
        hit = keyed_uniform(seed, _SPIKE, light, row, col) < artifacts.overexposure_probability
        spike = np.where(hit, artifacts.overexposure_magnitude, 0.0)[..., None]
        # a spike appears with the same magnitude 2S in both separated sequences
        cross = cross + spike
        parallel = parallel + 2.0 * spike

    if artifacts.sensor_noise_stddev > 0:
        sd = artifacts.sensor_noise_stddev
        chan = np.arange(3)
        for stream, target in ((_NOISE_CROSS, "cross"), (_NOISE_PARALLEL, "parallel")):
            noise = np.stack(
                [keyed_normal(seed, stream + c, light, row, col) for c in chan], axis=-1
            )
            if target == "cross":
                cross = cross + sd * noise
            else:
                parallel = parallel + sd * noise
        cross = np.maximum(cross, 0.0)
        parallel = np.maximum(parallel, 0.0)

    ambient = np.full((h, w, 3), artifacts.ambient_level)
    return PolarizedOLATStack(cross, parallel, rig, pose, ambient=ambient, view=view)


def gradient_images(sequence, rig: LightRig) -> np.ndarray:
    """Spherical-gradient responses ``sum_k w_j^k I^k``, shape ``(3, H, W, 3)``.

    The weight of light k for axis j is the j-th component of its direction.
    """
    sequence = np.asarray(sequence, dtype=float)
    if sequence.shape[0] != rig.n:
        raise DimensionMismatch("sequence length and rig disagree")
    return np.einsum("kj,k...->j...", rig.directions, sequence)


def synthesize_gradient_images(source, rig: LightRig | None = None):
    """Diffuse and specular gradient images from a capture or a cleaned stack.

    ``source`` is either a :class:`PolarizedOLATStack` (separated here) or any
    object carrying ``diffuse`` and ``specular`` sequences. Returns
    ``(grad_d, grad_s)``, each ``(3, H, W, 3)``.
    """
    if isinstance(source, PolarizedOLATStack):
        rig = source.rig
        diffuse, specular = separate(source.cross, source.parallel)
    else:
        diffuse, specular = source.diffuse, source.specular
        if rig is None:
            raise ValueError("a rig is required for pre-separated sequences")
    return gradient_images(diffuse, rig), gradient_images(specular, rig)


# --------------------------------------------------------------------------
# Demo materials


def random_normals(rng, shape, max_tilt_deg=35.0):
    """Normals uniformly distributed on the cap within ``max_tilt_deg`` of +z."""
    cmin = math.cos(math.radians(max_tilt_deg))
    z = rng.uniform(cmin, 1.0, size=shape)
    phi = rng.uniform(0.0, 2.0 * math.pi, size=shape)
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


MIXED_CLASSES = {
    "lambertian": None,
    "isotropic": (0.1, 0.1),
    "anisotropic": (0.05, 0.3),
}


def mixed_material(height=64, width=64, seed=0, max_tilt_deg=35.0) -> GroundTruthMaterial:
    """Columns cycle through Lambertian, isotropic Ward (0.1) and anisotropic
    Ward (0.05, 0.3) materials; every pixel has a random diffuse color and a
    random normal, shared by the diffuse and specular layers."""
    rng = np.random.default_rng(seed)
    normals = random_normals(rng, (height, width), max_tilt_deg)
    rho_d = rng.uniform(0.1, 0.9, size=(height, width, 3))
    rho_s = rng.uniform(0.3, 0.8, size=(height, width))
    sigma = np.full((height, width, 2), 0.2)
    cls = np.arange(width) % 3
    for c, name in enumerate(MIXED_CLASSES):
        cols = cls == c
        if MIXED_CLASSES[name] is None:
            rho_s[:, cols] = 0.0
        else:
            sigma[:, cols] = MIXED_CLASSES[name]
    return GroundTruthMaterial(rho_d, rho_s, normals, normals.copy(), sigma)


def material_class_map(width, height):
    """Class index per pixel for :func:`mixed_material` (0 Lambertian, 1 iso, 2 aniso)."""
    return np.broadcast_to(np.arange(width) % 3, (height, width))


def uniform_material(height, width, rho_d=(0.5, 0.5, 0.5), rho_s=0.0, sigma=(0.2, 0.2), normal=(0, 0, 1)):
    n = np.broadcast_to(normalize(np.asarray(normal, dtype=float)), (height, width, 3)).copy()
    return GroundTruthMaterial(
        np.broadcast_to(np.asarray(rho_d, float), (height, width, 3)).copy(),
        np.full((height, width), float(rho_s)),
        n,
        n.copy(),
        np.broadcast_to(np.asarray(sigma, float), (height, width, 2)).copy(),
    )
