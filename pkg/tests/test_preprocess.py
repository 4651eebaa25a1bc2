import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from polarfield.core import LightRig
from polarfield.errors import EmptySignal
from polarfield.preprocess import (
    CleanStack,
    ambient_offset,
    clean_sequences,
    compute_geometry,
    interreflection_map,
    occlusion_map,
    remove_overexposure,
    shadow_compensate,
    visibility,
    visibility_map,
)


def test_single_spike_is_replaced():
    sig = np.array([0.10, 0.12, 0.11, 5.0, 0.09, 0.13])
    out, mask = remove_overexposure(sig, epsilon=1.0, iterations=2, delta=0.01)
    np.testing.assert_array_equal(mask, [False, False, False, True, False, False])
    # replaced by the next-highest sample plus the offset
    assert out[3] == pytest.approx(0.13 + 0.01)
    np.testing.assert_array_equal(out[~mask], sig[~mask])


def test_two_spikes_need_two_passes():
    sig = np.array([0.1, 5.0, 0.2, 5.5, 0.15])
    once, m1 = remove_overexposure(sig, 1.0, iterations=1, delta=0.0)
    twice, m2 = remove_overexposure(sig, 1.0, iterations=2, delta=0.0)
    assert m1.sum() == 1 and m2.sum() == 2
    # the 5.5 -> 5.0 gap is below epsilon, so the first hit is the 5.0 -> 0.2 gap
    assert once[1] == pytest.approx(0.2)
    assert twice.max() == pytest.approx(0.2)


def test_spike_replaced_by_lower_spike_survives():
    # a replacement takes the value just below the gap, which may itself be a spike
    sig = np.array([0.1, 3.0, 0.2, 6.0, 0.15])
    out, mask = remove_overexposure(sig, 1.0, iterations=2, delta=0.01)
    assert mask.sum() == 2
    assert out.max() == pytest.approx(3.01)


def test_smooth_signal_untouched():
    sig = np.linspace(0, 1, 50)[:, None] * np.ones(3)
    out, mask = remove_overexposure(sig, 0.5)
    assert not mask.any()
    np.testing.assert_array_equal(out, sig)


def test_remove_overexposure_validation():
    with pytest.raises(ValueError):
        remove_overexposure([1.0, 2.0], 0.0)
    with pytest.raises(ValueError):
        remove_overexposure([1.0, 2.0], 1.0, iterations=0)
    with pytest.raises(EmptySignal):
        remove_overexposure(np.zeros(0), 1.0)


def test_ambient_offset_capped():
    vals = np.concatenate([np.full(99, 2.0), [100.0]])
    assert ambient_offset(vals, epsilon=1.0) == pytest.approx(0.1)
    assert ambient_offset(vals, epsilon=100.0) == pytest.approx(2.0)


@given(
    hnp.arrays(np.float64, st.tuples(st.integers(2, 40), st.just(3)), elements=st.floats(0, 10)),
    st.floats(0.1, 5.0),
    st.integers(1, 4),
)
@settings(max_examples=60, deadline=None)
def test_removal_only_lowers_and_is_bounded(sig, eps, m):
    out, mask = remove_overexposure(sig, eps, iterations=m)
    assert np.all(out <= sig)
    assert np.all(mask.sum(axis=0) <= m)
    np.testing.assert_array_equal(out[~mask], sig[~mask])


def test_stack_removal_matches_per_pixel():
    rng = np.random.default_rng(4)
    seq = rng.uniform(0, 0.3, size=(30, 2, 3, 3))
    seq[7, 1, 2, 0] = 9.0
    seq[3, 0, 0, :] = 4.0
    clean = clean_sequences(seq, seq, epsilon=1.0, iterations=2)
    for i in range(2):
        for j in range(3):
            ref, mask = remove_overexposure(seq[:, i, j], 1.0, 2)
            np.testing.assert_array_equal(clean.diffuse[:, i, j], ref)
            np.testing.assert_array_equal(clean.removed_diffuse[:, i, j], mask)
    assert clean.removed_mask.sum() == 4


def test_clean_sequences_none_skips():
    seq = np.zeros((5, 1, 1, 3))
    seq[0] = 10.0
    clean = clean_sequences(seq, seq, epsilon=(None, 1.0))
    np.testing.assert_array_equal(clean.diffuse, seq)
    assert clean.removed_specular.any() and not clean.removed_diffuse.any()


def _dome(n=4000):
    return LightRig.spiral(n)


def test_occlusion_fully_visible_is_one():
    rig = _dome()
    normals = np.array([[[0.0, 0.0, 1.0]]])
    seq = np.ones((rig.n, 1, 1, 3))
    stack = CleanStack(seq, seq, seq < 0, seq < 0)
    tau_d, tau_s = occlusion_map(stack, normals, 0.0, rig)
    assert tau_d[0, 0] == pytest.approx(1.0, abs=2e-3)
    assert tau_s[0, 0] == pytest.approx(1.0, abs=2e-3)


def test_occlusion_half_plane_is_half():
    rig = _dome()
    normals = np.array([[[0.0, 0.0, 1.0]]])
    seq = np.ones((rig.n, 1, 1, 3))
    seq[rig.directions[:, 0] < 0] = 0.0
    stack = CleanStack(seq, seq, seq < 0, seq < 0)
    tau_d, _ = occlusion_map(stack, normals, 0.0, rig)
    assert tau_d[0, 0] == pytest.approx(0.5, abs=5e-3)


def test_interreflection_collects_below_horizon_energy():
    rig = _dome(500)
    n = np.array([[[0.0, 0.0, 1.0]]])
    seq = np.zeros((rig.n, 1, 1, 3))
    below = rig.directions[:, 2] < 0
    seq[below] = 0.2
    stack = CleanStack(seq, seq, seq < 0, seq < 0)
    rd, rs = interreflection_map(stack, n, 0.0, rig)
    expected = 0.2 * np.sum(-rig.directions[below, 2])
    np.testing.assert_allclose(rd[0, 0], expected)
    assert rs[0, 0] == pytest.approx(expected)


def test_visibility_gate_any_channel():
    rig = LightRig.spiral(6)
    sig = np.zeros((6, 3))
    sig[:, 2] = 0.5
    vis = visibility(sig, 0.1, rig, [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(vis, rig.directions[:, 2] > 0)
    seq = sig[:, None, None, :]
    vm = visibility_map(seq, 0.1, rig, np.array([[[0.0, 0.0, 1.0]]]))
    np.testing.assert_array_equal(vm[0, 0], vis)


def test_shadow_compensate():
    alb = np.full((2, 2, 3), 0.4)
    tau = np.array([[1.0, 0.5], [0.0, 0.8]])
    out = shadow_compensate(alb, tau)
    np.testing.assert_allclose(out[0, 1], 0.8)
    np.testing.assert_allclose(out[1, 0], 0.4 / 0.05)
    with pytest.raises(ValueError):
        shadow_compensate(alb, tau, floor=0)


def test_compute_geometry_shapes():
    rig = LightRig.spiral(20)
    seq = np.ones((20, 2, 3, 3))
    n = np.zeros((2, 3, 3))
    n[..., 2] = 1
    geo = compute_geometry(CleanStack(seq, seq, seq < 0, seq < 0), n, n, 0.0, 0.0, rig)
    assert geo.nu_d.shape == (2, 3, 20)
    assert geo.tau_s.shape == (2, 3)
    assert geo.varrho_d.shape == (2, 3, 3)
