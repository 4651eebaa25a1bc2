import numpy as np
import pytest

from polarfield.core import LightRig, separate
from polarfield.estimate import init_albedo, init_normals, initialize
from polarfield.preprocess import CleanStack
from polarfield.synth import gradient_images, mixed_material, render_olat, uniform_material


def _clean(stack):
    d, s = separate(stack.cross, stack.parallel)
    return CleanStack(d, s, d < 0, s < 0)


def _angle(a, b):
    return np.degrees(np.arccos(np.clip(np.sum(a * b, axis=-1), -1, 1)))


@pytest.fixture(scope="module")
def rendered():
    rig = LightRig.spiral(2000)
    mat = mixed_material(6, 6, seed=3)
    stack = render_olat(mat, rig)
    return rig, mat, stack, _clean(stack)


def test_init_albedo_diffuse_close_to_truth(rendered):
    rig, mat, _, clean = rendered
    rho_d, _ = init_albedo(clean, rig)
    np.testing.assert_allclose(rho_d, mat.rho_d, rtol=0.02)


def test_init_albedo_specular_order_of_magnitude(rendered):
    rig, mat, _, clean = rendered
    _, rho_s = init_albedo(clean, rig)
    spec = mat.rho_s > 0
    assert np.all(rho_s[~spec] == 0)
    # the integrated estimate ignores the lobe shape; it is only a starting point
    ratio = rho_s[spec] / mat.rho_s[spec]
    assert np.all((ratio > 0.3) & (ratio < 3.0))


def test_init_normals_close_to_truth(rendered):
    rig, mat, stack, clean = rendered
    init = initialize(clean, rig, stack.view)
    assert not init.degenerate_d.any()
    assert np.percentile(_angle(init.n_d_init, mat.n_d), 95) < 2.0
    spec = mat.rho_s > 0
    assert np.all(init.degenerate_s == ~spec)
    assert np.median(_angle(init.n_s_init, mat.n_s)[spec]) < 3.0


def test_normals_are_scale_invariant(rendered):
    rig, _, stack, clean = rendered
    a = initialize(clean, rig, stack.view)
    scaled = CleanStack(clean.diffuse * 7.5, clean.specular * 7.5, clean.removed_diffuse, clean.removed_specular)
    b = initialize(scaled, rig, stack.view)
    np.testing.assert_allclose(a.n_d_init, b.n_d_init, atol=1e-12)
    np.testing.assert_allclose(a.n_s_init, b.n_s_init, atol=1e-12)


def test_aligned_specular_normal_is_up():
    rig = LightRig.spiral(1000)
    mat = uniform_material(1, 1, rho_s=0.5, sigma=(0.1, 0.1))
    stack = render_olat(mat, rig, omega_o=[0, 0, 1])
    init = initialize(_clean(stack), rig, stack.view)
    np.testing.assert_allclose(init.n_s_init[0, 0], [0, 0, 1], atol=1e-3)


def test_dark_pixel_is_degenerate():
    rig = LightRig.spiral(50)
    zero = np.zeros((50, 1, 2, 3))
    zero[:, 0, 1] = np.maximum(rig.directions[:, 2], 0)[:, None]
    clean = CleanStack(zero, np.zeros_like(zero), zero < 0, zero < 0)
    view = np.broadcast_to([0.0, 0.0, 1.0], (1, 2, 3))
    init = initialize(clean, rig, view)
    assert init.degenerate_d[0, 0] and not init.degenerate_d[0, 1]
    np.testing.assert_array_equal(init.n_d_init[0, 0], 0)
    assert init.degenerate_s.all()


def test_init_normals_direct():
    rig = LightRig.spiral(500)
    seq = np.maximum(rig.directions @ np.array([0.6, 0.0, 0.8]), 0)[:, None] * np.ones(3)
    g = gradient_images(seq[:, None, None, :], rig)
    n_d, n_s, deg_d, deg_s = init_normals(g, np.zeros_like(g), np.full((1, 1, 3), 0.5), np.array([[[0, 0, 1.0]]]))
    np.testing.assert_allclose(n_d[0, 0], [0.6, 0.0, 0.8], atol=5e-3)
    assert deg_s[0, 0]
