"""Material recovery from polarized one-light-at-a-time (OLAT) captures.

Diffuse/specular albedo, normals, Ward lobe deviations, anisotropy,
roughness, occlusion and inter-reflection maps, plus a forward renderer that
produces synthetic captures with known ground truth.
"""

__version__ = "0.1.0"

from .core import (
    CameraPose,
    LightRig,
    PolarizedOLATStack,
    StokesVector,
    apply_mueller,
    malus_intensity,
    polarizer_mueller,
    separate,
    spiral_directions,
)
from .errors import PolarfieldError

__all__ = [
    "CameraPose",
    "LightRig",
    "PolarfieldError",
    "PolarizedOLATStack",
    "StokesVector",
    "__version__",
    "apply_mueller",
    "malus_intensity",
    "polarizer_mueller",
    "separate",
    "spiral_directions",
]
