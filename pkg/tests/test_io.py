import json
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from polarfield.errors import (
    CorruptImage,
    DimensionMismatch,
    MissingFile,
    ParseError,
    StageError,
    UnsupportedVersion,
)
from polarfield.io import (
    MaterialBundle,
    parse_manifest,
    read_bundle,
    read_diagnostics,
    read_manifest,
    read_pfm,
    read_stack,
    run_pipeline,
    write_bundle,
    write_diagnostics,
    write_pfm,
)
from polarfield.io.bundle import map_metadata
from polarfield.io.pfm import read_pfm_header
from polarfield.io.preview import decomposition_panel, false_color, map_statistics

finite32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


@given(hnp.arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3])), elements=finite32))
@settings(max_examples=50, deadline=None)
def test_pfm_round_trip(tmp_path_factory, img):
    path = tmp_path_factory.mktemp("pfm") / "x.pfm"
    if img.shape[-1] == 1:
        img = img[..., 0]
    write_pfm(path, img)
    np.testing.assert_array_equal(read_pfm(path), img)


def test_pfm_layout(tmp_path):
    img = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], dtype=np.float32)
    write_pfm(tmp_path / "a.pfm", img)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 3\n-1.0\n")
    data = np.frombuffer(raw[len(b"Pf\n2 3\n-1.0\n") :], dtype="<f4")
    # bottom row first
    np.testing.assert_array_equal(data, [5, 6, 3, 4, 1, 2])
    assert read_pfm_header(tmp_path / "a.pfm")[:4] == (3, 2, 1, True)


def test_pfm_big_endian(tmp_path):
    img = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
    body = np.ascontiguousarray(img[::-1]).astype(">f4").tobytes()
    (tmp_path / "b.pfm").write_bytes(b"PF\n2  2\n1.0\n" + body)
    np.testing.assert_array_equal(read_pfm(tmp_path / "b.pfm"), img)


def test_pfm_errors(tmp_path):
    img = np.ones((2, 2, 3), dtype=np.float32)
    write_pfm(tmp_path / "c.pfm", img)
    raw = (tmp_path / "c.pfm").read_bytes()
    (tmp_path / "short.pfm").write_bytes(raw[:-5])
    with pytest.raises(CorruptImage) as info:
        read_pfm(tmp_path / "short.pfm")
    assert info.value.offset == len(raw) - 5
    (tmp_path / "long.pfm").write_bytes(raw + b"xx")
    with pytest.raises(CorruptImage):
        read_pfm(tmp_path / "long.pfm")
    (tmp_path / "bad.pfm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(CorruptImage):
        read_pfm(tmp_path / "bad.pfm")
    with pytest.raises(CorruptImage):
        write_pfm(tmp_path / "nan.pfm", np.array([[np.nan]]))
    with pytest.raises(CorruptImage):
        write_pfm(tmp_path / "shape.pfm", np.ones((2, 2, 2)))


def test_manifest_round_trip(manifest, small_capture):
    tree = json.loads(small_capture[0].read_text())
    again = parse_manifest(tree, small_capture[0].parent)
    assert again == manifest
    assert again.digest() == manifest.digest()
    assert manifest.rig.n == 120
    stack = read_stack(manifest)
    assert stack.shape == (120, 8, 9)


def _tree(small_capture):
    return json.loads(small_capture[0].read_text())


def test_manifest_errors(small_capture, tmp_path):
    root = small_capture[0].parent
    tree = _tree(small_capture)
    tree["version"] = 7
    with pytest.raises(UnsupportedVersion):
        parse_manifest(tree, root)
    tree = _tree(small_capture)
    tree["lights"] = {"directions": [[0, 0, 1]] * 3}
    with pytest.raises(DimensionMismatch):
        parse_manifest(tree, root)
    tree = _tree(small_capture)
    tree["lights"] = {"generator": "grid", "count": 120}
    with pytest.raises(ParseError):
        parse_manifest(tree, root)
    tree = _tree(small_capture)
    tree["solvers"] = {"diffuse-normal": "GaussNewton"}
    with pytest.raises(ParseError):
        parse_manifest(tree, root)
    tree = _tree(small_capture)
    tree["frames"]["cross"][5] = "cross/missing.pfm"
    with pytest.raises(MissingFile) as info:
        parse_manifest(tree, root)
    assert info.value.index == 5
    tree = _tree(small_capture)
    del tree["dimensions"]
    with pytest.raises(ParseError):
        parse_manifest(tree, root)
    (tmp_path / "m.json").write_text("{not json")
    with pytest.raises(ParseError):
        read_manifest(tmp_path / "m.json")
    with pytest.raises(MissingFile):
        read_manifest(tmp_path / "nope.json")


def test_manifest_frame_size_checked(small_capture, tmp_path):
    root = tmp_path / "cap"
    shutil.copytree(small_capture[0].parent, root)
    write_pfm(root / "parallel" / "0003.pfm", np.zeros((4, 4, 3), dtype=np.float32))
    with pytest.raises(DimensionMismatch):
        read_manifest(root / "manifest.json")


def test_bundle_round_trip(tmp_path):
    maps = {
        "normal": np.dstack([np.zeros((3, 4)), np.zeros((3, 4)), np.ones((3, 4))]),
        "roughness": np.linspace(0, 1, 12).reshape(3, 4),
        "removed_mask": np.eye(3, 4, dtype=bool),
        "flags": np.arange(12).reshape(3, 4),
        "diffuse_sequence": np.ones((5, 3, 4, 3)),
        "visibility_diffuse": np.ones((3, 4, 7), dtype=bool),
    }
    write_bundle(MaterialBundle(maps, {"tool": "test"}), tmp_path)
    back = read_bundle(tmp_path)
    assert set(back.names()) == set(maps)
    for name, arr in maps.items():
        assert back[name].shape == arr.shape
        np.testing.assert_array_equal(back[name], arr.astype(np.float32) if arr.dtype == float else arr)
    assert back["removed_mask"].dtype == bool
    assert back["flags"].dtype == np.int64
    assert back.provenance["tool"] == "test"
    assert back.range_violations() == {}
    bad = MaterialBundle({"normal": np.full((2, 2, 3), 2.0), "sigma_x": -np.ones((2, 2))})
    assert set(bad.range_violations()) == {"normal", "sigma_x"}
    with pytest.raises(MissingFile):
        read_bundle(tmp_path, ["nonexistent"])


def test_map_metadata_records_range():
    meta = map_metadata("anisotropy", np.array([[-0.5, 0.25]]))
    assert meta["range"] == [-1.0, 1.0]
    assert meta["min"] == -0.5 and meta["max"] == 0.25


def test_diagnostics_round_trip(tmp_path):
    rows = [(0, "sigma", "GaussNewton", 7, 1.2345678901234567e-10, "converged"), (3, "diffuse-normal", "NCG", 0, float("nan"), "underdetermined")]
    write_diagnostics(tmp_path / "d.csv", rows)
    back = read_diagnostics(tmp_path / "d.csv")
    assert back[0] == rows[0]
    assert np.isnan(back[1][4])


def test_pipeline_full_and_split_are_identical(manifest, tmp_path):
    full = run_pipeline(manifest, None, tmp_path / "a")
    assert full.provenance["stages"] == ["separate", "preprocess", "init", "optimize"]
    run_pipeline(manifest, "separate,preprocess", tmp_path / "b")
    run_pipeline(manifest, "init", tmp_path / "b")
    run_pipeline(manifest, "optimize", tmp_path / "b")
    for p in sorted((tmp_path / "a" / "maps").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / "maps" / p.name).read_bytes(), p.name
    assert (tmp_path / "a" / "diagnostics.csv").read_bytes() == (tmp_path / "b" / "diagnostics.csv").read_bytes()
    assert (tmp_path / "a" / "provenance.json").read_bytes() == (tmp_path / "b" / "provenance.json").read_bytes()


def test_pipeline_rerun_invalidates_later_stages(manifest, tmp_path):
    run_pipeline(manifest, None, tmp_path)
    bundle = run_pipeline(manifest, "preprocess", tmp_path, epsilon=0.5)
    prov = bundle.provenance
    assert prov["stages"] == ["separate", "preprocess"]
    assert "normal" not in prov["maps"]
    assert not (tmp_path / "maps" / "normal.pfm").exists()
    assert prov["parameters"]["preprocess"]["epsilon"] == 0.5


def test_pipeline_outputs_recover_material(manifest, small_capture, tmp_path):
    mat = small_capture[1]
    bundle = run_pipeline(manifest, None, tmp_path)
    err = np.degrees(np.arccos(np.clip(np.sum(bundle["normal"] * mat.n_d, -1), -1, 1)))
    assert np.median(err) < 0.5
    np.testing.assert_allclose(bundle["albedo_diffuse"], mat.rho_d, rtol=1e-4)
    assert bundle.range_violations() == {}
    rows = read_diagnostics(tmp_path / "diagnostics.csv")
    assert rows and all(r[5] == "converged" for r in rows)


def test_pipeline_stage_errors_name_the_stage(manifest, tmp_path):
    with pytest.raises(ValueError):
        run_pipeline(manifest, "bogus", tmp_path)
    with pytest.raises(StageError) as info:
        run_pipeline(manifest, "preprocess", tmp_path, epsilon=-1.0)
    assert info.value.stage == "preprocess"


def test_previews(tmp_path):
    img = false_color("anisotropy", np.linspace(-1, 1, 12).reshape(3, 4))
    assert img.shape == (3, 4, 3) and img.dtype == np.uint8
    n = np.dstack([np.zeros((3, 4)), np.zeros((3, 4)), np.ones((3, 4))])
    np.testing.assert_array_equal(false_color("normal", n)[0, 0], [128, 128, 255])
    decomposition_panel({"normal": n, "roughness": np.ones((3, 4))}, tmp_path / "p.png")
    assert (tmp_path / "p.png").stat().st_size > 0
    stats = map_statistics("normal", n)
    assert stats["unit_norm_violations"] == 0
    assert stats["mean"] == [0.0, 0.0, 1.0]
