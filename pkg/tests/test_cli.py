import json

import numpy as np
import pytest
from click.testing import CliRunner

from polarfield import __version__
from polarfield.cli import main
from polarfield.io import read_bundle, read_manifest


@pytest.fixture(scope="module")
def capture(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "cap"
    res = CliRunner().invoke(main, ["synth", "--out", str(out), "--size", "4", "--lights", "60", "--seed", "3"])
    assert res.exit_code == 0, res.output
    return out / "manifest.json"


def test_version():
    res = CliRunner().invoke(main, ["--version"])
    assert res.exit_code == 0
    assert __version__ in res.output


def test_synth_writes_manifest(capture):
    m = read_manifest(capture)
    assert (m.height, m.width, m.n) == (4, 4, 60)


def test_run_all_stages(capture, tmp_path):
    res = CliRunner().invoke(main, ["run", "--manifest", str(capture), "--out", str(tmp_path), "--solver", "sigma=LBFGS-zoom"])
    assert res.exit_code == 0, res.output
    bundle = read_bundle(tmp_path)
    assert bundle.provenance["stages"] == ["separate", "preprocess", "init", "optimize"]
    assert np.all(np.isfinite(bundle["normal"]))


def test_preprocess_then_fit(capture, tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["preprocess", "--manifest", str(capture), "--out", str(tmp_path), "--epsilon", "none"])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["run", "--manifest", str(capture), "--out", str(tmp_path), "--stages", "init"])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["fit", "--manifest", str(capture), "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert "optimize" in read_bundle(tmp_path).provenance["stages"]


def test_inspect(capture, tmp_path):
    runner = CliRunner()
    runner.invoke(main, ["run", "--manifest", str(capture), "--out", str(tmp_path)])
    res = runner.invoke(main, ["inspect", "--out", str(tmp_path), "--map", "normal", "--json"])
    assert res.exit_code == 0, res.output
    stats = json.loads(res.output)
    assert stats["normal"]["unit_norm_violations"] == 0
    res = runner.invoke(main, ["inspect", "--out", str(tmp_path), "--png", str(tmp_path / "png"), "--panel", str(tmp_path / "panel.png")])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "png" / "normal.png").exists()
    assert (tmp_path / "panel.png").exists()


@pytest.mark.parametrize(
    "extra",
    [
        ["--solver", "sigma"],
        ["--solver", "bogus=NCG"],
        ["--solver", "sigma=Newton"],
        ["--solver", "diffuse-normal=GaussNewton"],
        ["--epsilon", "abc"],
        ["--stages", "separate,bogus"],
        ["--threads", "0"],
    ],
)
def test_usage_errors_exit_2(capture, tmp_path, extra):
    res = CliRunner().invoke(main, ["run", "--manifest", str(capture), "--out", str(tmp_path), *extra])
    assert res.exit_code == 2


def test_runtime_errors_exit_1(capture, tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["run", "--manifest", str(tmp_path / "missing.json"), "--out", str(tmp_path)])
    assert res.exit_code == 1
    assert "error:" in res.output
    res = runner.invoke(main, ["preprocess", "--manifest", str(capture), "--out", str(tmp_path), "--epsilon", "-1"])
    assert res.exit_code == 1
    assert "[preprocess]" in res.output


def test_fit_recomputes_missing_prerequisites(capture, tmp_path):
    res = CliRunner().invoke(main, ["fit", "--manifest", str(capture), "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert read_bundle(tmp_path).provenance["stages"] == ["separate", "preprocess", "init", "optimize"]
