import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from selfsim_anomaly import nfa_detect
from selfsim_anomaly.errors import InvalidInputError
from selfsim_anomaly.image_core import build_pyramid
from selfsim_anomaly.nfa_detect import (
    DetectionConfig, NfaMapStack, band_for, count_tests, detect, detection_threshold,
    group_detections, log10_nfa_map, nfa_map,
)
from oracles import mp_nfa


def test_config_defaults():
    c = DetectionConfig()
    assert (c.epsilon, c.kernel_radii, c.n_scales) == (1e-2, (1, 2), 4)
    assert (c.residual.patch_side, c.residual.n_neighbors, c.residual.h) == (8, 16, 10.0)
    f = DetectionConfig.for_mode("features")
    assert f.kernel_radii == (1, 2, 3) and f.residual.patch_side == 5
    o = DetectionConfig.for_mode("pixels", patch_side=6, kernel_radii=None, epsilon=0.5)
    assert o.residual.patch_side == 6 and o.kernel_radii == (1, 2) and o.epsilon == 0.5


@pytest.mark.parametrize("kw", [dict(epsilon=0), dict(kernel_radii=()), dict(kernel_radii=(0,)),
                                dict(n_scales=0), dict(mode="rgb")])
def test_config_validation(kw):
    with pytest.raises(InvalidInputError):
        DetectionConfig(**kw)


def test_count_tests_examples():
    pyr = build_pyramid(np.zeros((256, 256, 3)), 4)
    assert count_tests(DetectionConfig(), pyr) == 2 * 3 * (65536 + 16384 + 4096 + 1024) == 522240
    one = build_pyramid(np.zeros((32, 32, 1)), 1)
    assert count_tests(DetectionConfig(kernel_radii=(1,), n_scales=1), one) == 1024
    pyr5 = build_pyramid(np.zeros((256, 256, 5)), 4)
    assert count_tests(DetectionConfig.for_mode("features"), pyr5) == 3 * 5 * 87040 == 1305600


def test_nfa_spot_values():
    raw, lg = nfa_map(np.array([0.0, 3.0, 6.0]), 1000)
    assert raw[0] == pytest.approx(1000.0, rel=1e-15)
    raw, _ = nfa_map(np.array([3.0]), 10 ** 5)
    assert raw[0] == pytest.approx(269.9796, abs=1e-3)
    # 2 Phi(-6) = 1.973175e-9, times 522240 gives 1.030471e-3
    raw, _ = nfa_map(np.array([6.0]), 522240)
    assert raw[0] == pytest.approx(float(mp_nfa(6.0, 522240)), rel=1e-12)
    assert raw[0] == pytest.approx(1.030471e-3, rel=1e-6)
    assert raw[0] <= 1e-2


def test_nfa_vs_mpmath_oracle():
    x = np.concatenate([np.linspace(-8, 8, 321), [0.1234, 7.999, -5.5]])
    n = 130560
    raw, lg = nfa_map(x, n)
    ref = np.array([float(mp_nfa(v, n)) for v in x])
    np.testing.assert_allclose(raw, ref, rtol=1e-10)
    np.testing.assert_allclose(lg, np.log10(ref), rtol=0, atol=1e-11)


def test_raw_accuracy_up_to_40():
    # raw values below the smallest normal double (|x| > ~37.5 here) cannot
    # carry 12 digits; the log10 form covers them
    n = 522240
    x = np.linspace(0, 40, 801)
    raw, lg = nfa_map(x, n)
    ref = [mp_nfa(v, n) for v in x]
    normal = np.array([r > 2.3e-308 for r in ref])
    np.testing.assert_allclose(raw[normal], [float(r) for r, ok in zip(ref, normal) if ok], rtol=1e-12)
    assert np.all(raw[~normal] < 1e-300)
    np.testing.assert_allclose(lg, [float(mpmath.log10(r)) for r in ref], rtol=1e-12, atol=1e-11)


def test_log10_far_tail_vs_mpmath():
    x = np.array([10.0, 20.0, 38.5, 40.0, 100.0, 1000.0])
    n = 522240
    lg = log10_nfa_map(x, n)
    ref = [float(mpmath.log10(mp_nfa(v, n))) for v in x]
    np.testing.assert_allclose(lg, ref, rtol=1e-12)


def test_nfa_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        nfa_map(np.array([1.0, np.inf]), 10)


@given(st.floats(1e-6, 1e3), st.integers(1, 10 ** 7))
def test_threshold_equivalence(eps, n):
    tau = detection_threshold(eps, n)
    x = np.array([tau * 0.999, tau * 1.001 + 1e-9]) if tau > 0 else np.array([0.0, 1.0])
    lg = log10_nfa_map(x, n)
    if tau > 0:
        assert lg[0] > math.log10(eps) and lg[1] <= math.log10(eps)
    else:
        assert np.all(lg <= math.log10(eps) + 1e-12)


@given(st.lists(st.floats(0, 30), min_size=2, max_size=50))
def test_nfa_decreasing_in_abs(xs):
    x = np.sort(np.array(xs))
    lg = log10_nfa_map(x, 1000)
    assert np.all(np.diff(lg) <= 0)
    np.testing.assert_array_equal(log10_nfa_map(-x, 1000), lg)


def test_bands():
    assert band_for(-2.0) == "weak"
    assert band_for(-3.0) == "mild"
    assert band_for(-3.0001) == "mild"
    assert band_for(-8.0) == "strong"
    assert band_for(-21.0) == "very_strong"
    assert band_for(-300.0) == "very_strong"


def stack_from(grid, scale=0, radius=1, n=100):
    g = np.asarray(grid, dtype=float)
    if g.ndim == 2:
        g = g[:, :, None]
    return NfaMapStack(n_tests=n, log10_maps={(scale, radius): g})


def test_group_single_pixel():
    g = np.zeros((6, 7))
    g[2, 5] = -4.0
    (r,) = group_detections(stack_from(g), 1e-2)
    assert (r.x, r.y, r.band) == (5, 2, "mild")
    assert r.nfa == pytest.approx(1e-4)


def test_group_diagonal_neighbors_merge():
    g = np.zeros((6, 6))
    g[1, 1] = -3.0
    g[2, 2] = -5.0
    (r,) = group_detections(stack_from(g), 1e-2)
    assert (r.x, r.y, r.log10_nfa) == (2, 2, -5.0)


def test_group_empty():
    assert group_detections(stack_from(np.zeros((5, 5))), 1e-2) == []


def test_group_scale_maps_to_level0():
    g = np.zeros((8, 8))
    g[3, 5] = -9.0
    (r,) = group_detections(stack_from(g, scale=2), 1e-2)
    assert (r.x, r.y, r.scale) == (20, 12, 2)
    assert 5 * 4 <= r.x < 6 * 4 and 3 * 4 <= r.y < 4 * 4


@given(st.integers(0, 2 ** 31), st.floats(-6, 0))
def test_group_argmin_and_threshold(seed, log_eps):
    rng = np.random.default_rng(seed)
    g = np.round(rng.normal(-1, 2, size=(12, 10, 2)), 1)
    records = group_detections(stack_from(g), 10 ** log_eps)
    limit = math.log10(10 ** log_eps)
    from scipy import ndimage
    expected = 0
    for c in range(2):
        labels, k = ndimage.label(g[:, :, c] <= limit, structure=np.ones((3, 3)))
        expected += k
        for r in [r for r in records if r.channel == c]:
            lab = labels[r.y, r.x]
            assert lab > 0
            assert g[r.y, r.x, c] == g[:, :, c][labels == lab].min()
            assert r.nfa <= 10 ** log_eps * (1 + 1e-12)
    assert len(records) == expected


def tiled(rng, size=128, tile=16):
    base = rng.uniform(60, 190, size=(tile, tile, 3))
    return np.tile(base, (size // tile, size // tile, 1))


def test_detect_implanted_block(rng):
    img = tiled(rng) + rng.normal(0, 3, size=(128, 128, 3))
    img[50:58, 70:78] = 255 - img[50:58, 70:78]
    res = detect(img)
    assert res.records
    cx, cy = 73.5, 53.5
    near = [r for r in res.records if max(abs(r.x - cx), abs(r.y - cy)) <= 8 and r.nfa <= 1e-2]
    assert near
    assert all(r.nfa <= 1e-2 for r in res.records)


def test_detect_bright_pixel_on_constant():
    img = np.full((64, 64, 3), 100.0)
    img[30, 40] = 255.0
    res = detect(img)
    level0 = res.stack.log10_maps[(0, 1)]
    assert level0[30, 40].max() <= -8.0
    strongest = min(res.records, key=lambda r: r.log10_nfa)
    assert strongest.band in ("strong", "very_strong")
    assert max(abs(strongest.x - 40), abs(strongest.y - 30)) <= 1


def test_detect_constant_image_is_empty():
    res = detect(np.full((48, 48, 3), 7.0))
    assert res.records == []
    assert all(p is None for p in res.ggd)


def test_detect_consistency_and_determinism(rng):
    img = rng.normal(size=(64, 48, 3))
    a = detect(img, DetectionConfig(epsilon=5.0))
    b = detect(img, DetectionConfig(epsilon=5.0))
    assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]
    pyr = build_pyramid(np.zeros((64, 48, 3)), 4)
    assert a.stack.n_tests == count_tests(DetectionConfig(), pyr)
    for key, grid in a.stack.log10_maps.items():
        assert np.all(np.isfinite(grid))
        assert np.all(grid <= math.log10(a.stack.n_tests) + 1e-12)
    assert all(r.nfa <= 5.0 for r in a.records)


def test_records_sorted_and_roundtrip(rng):
    img = rng.normal(size=(48, 48, 3))
    res = detect(img, DetectionConfig(epsilon=20.0))
    keys = [(r.scale, r.channel, r.kernel_radius, r.y, r.x) for r in res.records]
    assert keys == sorted(keys)
    for r in res.records:
        assert nfa_detect.DetectionRecord.from_dict(r.to_dict()) == r


def test_detect_features_mode(rng):
    feats = np.abs(rng.normal(size=(40, 40, 12)))
    res = detect(feats, DetectionConfig.for_mode("features"))
    assert res.basis is not None
    assert res.stack.log10_maps[(0, 3)].shape == (40, 40, 5)


@pytest.mark.parametrize("eps", [0.1, 1.0, 10.0])
@pytest.mark.parametrize("n", [4096, 522240])
def test_expected_false_alarms_equal_epsilon(eps, n):
    # detections are exactly {|x| >= tau}; under N(0, 1) their expected number is N * 2 Phi(-tau)
    tau = detection_threshold(eps, n)
    mpmath.mp.dps = 40
    expected = n * mpmath.erfc(mpmath.mpf(tau) / mpmath.sqrt(2))
    assert float(expected) == pytest.approx(eps, rel=1e-9)
    lg = log10_nfa_map(np.array([tau * (1 - 1e-12), tau * (1 + 1e-12)]), n)
    assert lg[0] > math.log10(eps) >= lg[1]
