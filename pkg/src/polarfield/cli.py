"""Command line interface: ``polarfield synth | run | preprocess | fit | inspect``."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .core import LightRig
from .errors import PolarfieldError, StageError
from .optimize import BACKENDS, KINDS

STAGE_HELP = "Comma-separated subset of separate,preprocess,init,optimize."


def _parse_solvers(values):
    out = {}
    for item in values:
        kind, sep, backend = item.partition("=")
        if not sep:
            raise click.BadParameter(f"expected KIND=BACKEND, got {item!r}", param_hint="--solver")
        if kind not in KINDS:
            raise click.BadParameter(f"unknown kind {kind!r}; choose from {', '.join(KINDS)}", param_hint="--solver")
        if backend not in BACKENDS:
            raise click.BadParameter(
                f"unknown backend {backend!r}; choose from {', '.join(BACKENDS)}", param_hint="--solver"
            )
        if backend == "GaussNewton" and kind.endswith("normal"):
            raise click.BadParameter(f"GaussNewton cannot solve {kind} problems", param_hint="--solver")
        out[kind] = backend
    return out


def _parse_epsilon(value):
    """``None`` keeps the manifest setting; 'none' disables cleaning; 'a' or 'a,b'."""
    if value is None:
        return "manifest"
    if value.lower() == "none":
        return None
    parts = value.split(",")
    try:
        nums = [None if p.strip().lower() == "none" else float(p) for p in parts]
    except ValueError:
        raise click.BadParameter(f"not a number: {value!r}", param_hint="--epsilon") from None
    if len(nums) == 1:
        return nums[0]
    if len(nums) == 2:
        return tuple(nums)
    raise click.BadParameter("give one value or a diffuse,specular pair", param_hint="--epsilon")


def _fail(exc):
    if isinstance(exc, StageError):
        click.echo(f"error: [{exc.stage}] {exc.cause}", err=True)
    else:
        click.echo(f"error: {exc}", err=True)
    sys.exit(1)


@click.group()
@click.version_option(__version__, prog_name="polarfield")
def main():
    """Recover material maps from polarized OLAT captures."""


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Capture directory to write.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--size", default=64, show_default=True, type=click.IntRange(1), help="Image width and height.")
@click.option("--lights", "n_lights", default=346, show_default=True, type=click.IntRange(4))
@click.option(
    "--material",
    type=click.Choice(["mixed", "uniform"]),
    default="mixed",
    show_default=True,
    help="mixed: Lambertian / isotropic / anisotropic columns; uniform: one Ward material.",
)
@click.option("--overexposure", default=0.0, show_default=True, help="Probability of a spike per sample.")
@click.option("--spike", default=0.0, show_default=True, help="Spike magnitude.")
@click.option("--noise", default=0.0, show_default=True, help="Sensor noise standard deviation.")
@click.option("--ambient", default=0.0, show_default=True, help="Ambient level added to every frame.")
@click.option("--flare", default=0.0, show_default=True, help="Lens-flare strength (0 disables).")
def synth(out_dir, seed, size, n_lights, material, overexposure, spike, noise, ambient, flare):
    """Render a synthetic capture (manifest, frames, ground truth)."""
    from .io.synthetic import write_synthetic_capture
    from .synth import ArtifactConfig, mixed_material, uniform_material

    try:
        if material == "mixed":
            mat = mixed_material(size, size, seed=seed)
        else:
            mat = uniform_material(size, size, rho_d=(0.6, 0.4, 0.3), rho_s=0.5, sigma=(0.1, 0.2))
        art = ArtifactConfig(
            overexposure_probability=overexposure,
            overexposure_magnitude=spike,
            lens_flare_enabled=flare > 0,
            lens_flare_strength=flare,
            ambient_level=ambient,
            sensor_noise_stddev=noise,
        )
        manifest = write_synthetic_capture(out_dir, mat, LightRig.spiral(n_lights), art, seed=seed)
    except (PolarfieldError, ValueError, OSError) as exc:
        _fail(exc)
    click.echo(f"wrote {manifest.n} lights x {manifest.height}x{manifest.width} capture to {out_dir}")


def _pipeline_options(f):
    f = click.option("--threads", default=1, show_default=True, type=click.IntRange(1))(f)
    f = click.option("--iterations", default=None, type=click.IntRange(1), help="Overexposure-removal passes M.")(f)
    f = click.option("--epsilon", default=None, help="Overexposure gap threshold: value, 'd,s' pair or 'none'.")(f)
    f = click.option("--solver", "solvers", multiple=True, metavar="KIND=BACKEND", help="Backend per problem kind.")(f)
    f = click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Bundle directory.")(f)
    f = click.option("--manifest", required=True, type=click.Path(dir_okay=False), help="Capture manifest.")(f)
    return f


def _run(manifest_path, out_dir, stages, solvers, epsilon, iterations, threads):
    from .io import read_manifest, run_pipeline

    solver_map = _parse_solvers(solvers)
    eps = _parse_epsilon(epsilon)
    try:
        manifest = read_manifest(manifest_path)
        bundle = run_pipeline(manifest, stages, out_dir, threads, solver_map, eps, iterations)
    except (PolarfieldError, OSError) as exc:
        _fail(exc)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    click.echo(f"stages done: {', '.join(bundle.provenance['stages'])}; {len(bundle.maps)} maps written to {out_dir}")


@main.command()
@_pipeline_options
@click.option("--stages", default=None, help=STAGE_HELP)
def run(manifest, out_dir, solvers, epsilon, iterations, threads, stages):
    """Run the pipeline (all stages unless --stages is given)."""
    _run(manifest, out_dir, stages, solvers, epsilon, iterations, threads)


@main.command()
@_pipeline_options
def preprocess(manifest, out_dir, solvers, epsilon, iterations, threads):
    """Separate and clean the capture; emit geometry maps."""
    _run(manifest, out_dir, "separate,preprocess", solvers, epsilon, iterations, threads)


@main.command()
@_pipeline_options
def fit(manifest, out_dir, solvers, epsilon, iterations, threads):
    """Optimize from the intermediate maps already in --out."""
    _run(manifest, out_dir, "optimize", solvers, epsilon, iterations, threads)


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(exists=True, file_okay=False), help="Bundle directory.")
@click.option("--map", "names", multiple=True, help="Map to inspect (default: all 2D maps).")
@click.option("--png", "png_dir", default=None, type=click.Path(file_okay=False), help="Write false-color previews here.")
@click.option("--panel", default=None, type=click.Path(dir_okay=False), help="Write a side-by-side decomposition PNG.")
@click.option("--json", "as_json", is_flag=True, help="Print statistics as JSON.")
def inspect(out_dir, names, png_dir, panel, as_json):
    """Print per-channel statistics of bundle maps; optionally save previews."""
    from .io import read_bundle
    from .io.preview import decomposition_panel, map_statistics, save_preview

    try:
        bundle = read_bundle(out_dir, names or None)
    except (PolarfieldError, OSError, ValueError) as exc:
        _fail(exc)
    image_maps = {k: v for k, v in bundle.maps.items() if v.ndim == 2 or (v.ndim == 3 and v.shape[-1] == 3)}
    stats = {name: map_statistics(name, arr) for name, arr in sorted(image_maps.items())}
    if as_json:
        click.echo(json.dumps(stats, indent=2))
    else:
        for name, st in stats.items():
            line = f"{name:30s} shape={tuple(st['shape'])}"
            for label in ("min", "max", "mean"):
                line += f" {label}=[" + ", ".join(f"{v:.4g}" for v in st[label]) + "]"
            if "unit_norm_violations" in st:
                line += f" unit_norm_violations={st['unit_norm_violations']}"
            click.echo(line)
    if png_dir:
        Path(png_dir).mkdir(parents=True, exist_ok=True)
        for name, arr in image_maps.items():
            save_preview(Path(png_dir) / f"{name}.png", name, np.asarray(arr))
    if panel:
        try:
            decomposition_panel(image_maps, panel)
        except ValueError as exc:
            _fail(exc)


if __name__ == "__main__":
    main()
