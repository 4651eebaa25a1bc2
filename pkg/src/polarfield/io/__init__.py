from .bundle import MaterialBundle, read_bundle, read_diagnostics, write_bundle, write_diagnostics
from .manifest import (
    CaptureManifest,
    parse_manifest,
    read_manifest,
    read_stack,
    write_manifest,
    write_stack,
)
from .pfm import read_pfm, write_pfm
from .pipeline import STAGES, run_pipeline
from .synthetic import write_synthetic_capture

__all__ = [
    "CaptureManifest",
    "MaterialBundle",
    "STAGES",
    "parse_manifest",
    "read_bundle",
    "read_diagnostics",
    "read_manifest",
    "read_pfm",
    "read_stack",
    "run_pipeline",
    "write_bundle",
    "write_diagnostics",
    "write_manifest",
    "write_pfm",
    "write_stack",
    "write_synthetic_capture",
]
