import numpy as np
import pytest
from hypothesis import given, strategies as st

from selfsim_anomaly import image_core
from selfsim_anomaly.errors import InvalidInputError
from selfsim_anomaly.image_core import build_pyramid, convolve_disk, disk_kernel, noise_gain


def naive_disk_conv(img, radius, pad_mode):
    """Direct per-pixel sum over the disk; mirror means d c b a | a b c d."""
    h, w, c = img.shape
    cells = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
             if dy * dy + dx * dx <= radius * radius]

    def fold(i, n):
        if pad_mode == "zero":
            return i if 0 <= i < n else None
        while i < 0 or i >= n:
            i = -i - 1 if i < 0 else 2 * n - i - 1
        return i

    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            acc = np.zeros(c)
            for dy, dx in cells:
                yy, xx = fold(y + dy, h), fold(x + dx, w)
                if yy is not None and xx is not None:
                    acc += img[yy, xx]
            out[y, x] = acc / len(cells)
    return out


def test_disk_radius_1():
    k = disk_kernel(1)
    assert k.weights.shape == (3, 3)
    assert k.support == 5
    expected = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]) / 5
    np.testing.assert_array_equal(k.weights, expected)


def test_disk_radius_2():
    k = disk_kernel(2)
    assert k.weights.shape == (5, 5)
    assert k.support == 13
    nz = k.weights[k.weights > 0]
    np.testing.assert_allclose(nz, 1 / 13, rtol=0, atol=1e-15)


@pytest.mark.parametrize("radius", [1, 2, 3, 4, 7])
def test_disk_membership_and_sum(radius):
    k = disk_kernel(radius)
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    inside = xx ** 2 + yy ** 2 <= radius ** 2
    assert np.array_equal(k.weights > 0, inside)
    assert abs(k.weights.sum() - 1.0) < 1e-15


@pytest.mark.parametrize("radius", [0, -1, 1.5])
def test_disk_rejects_bad_radius(radius):
    with pytest.raises(InvalidInputError):
        disk_kernel(radius)


def test_pyramid_sizes_256():
    img = np.zeros((256, 256, 3))
    pyr = build_pyramid(img, 4)
    assert [lvl.shape for lvl in pyr.levels] == [(256, 256, 3), (128, 128, 3), (64, 64, 3), (32, 32, 3)]
    assert not pyr.clamped


def test_pyramid_single_level_is_copy(rng):
    img = rng.normal(size=(20, 30, 2))
    pyr = build_pyramid(img, 1)
    assert len(pyr) == 1
    np.testing.assert_array_equal(pyr[0], img)
    assert pyr[0] is not img


def test_pyramid_clamps_64(caplog):
    pyr = build_pyramid(np.zeros((64, 64, 1)), 4)
    assert [lvl.shape[0] for lvl in pyr.levels] == [64, 32, 16]
    assert pyr.clamped and pyr.requested_scales == 4
    assert "clamped" in caplog.text


def test_pyramid_rejects_empty():
    with pytest.raises(InvalidInputError):
        build_pyramid(np.zeros((0, 4, 3)), 2)


@given(st.integers(16, 200), st.integers(16, 200), st.integers(1, 6))
def test_pyramid_ceil_dimensions(h, w, n):
    pyr = build_pyramid(np.zeros((h, w, 1)), n)
    for s, lvl in enumerate(pyr.levels):
        assert lvl.shape == (-(-h // 2 ** s), -(-w // 2 ** s), 1)
    # the last kept level respects the 16 px minimum
    assert min(pyr.levels[-1].shape[:2]) >= 16 or len(pyr) == 1


@pytest.mark.parametrize("mode", ["mirror", "zero"])
def test_constant_mean_preserved_by_blur_decimate(mode):
    img = np.full((40, 36, 2), 3.25)
    if mode == "mirror":
        out = image_core.downsample(img, mode)
        np.testing.assert_allclose(out, 3.25, rtol=0, atol=1e-13)
    else:
        # zero padding only keeps the constant away from the borders
        out = image_core.downsample(img, mode)
        np.testing.assert_allclose(out[6:-6, 6:-6], 3.25, rtol=0, atol=1e-13)


@pytest.mark.parametrize("radius", [1, 2, 3])
def test_convolve_constant(radius):
    img = np.full((12, 15, 3), -4.5)
    np.testing.assert_allclose(convolve_disk(img, disk_kernel(radius)), -4.5, atol=1e-13)


def test_convolve_impulse_stamps_kernel():
    img = np.zeros((9, 9, 1))
    img[4, 4, 0] = 1.0
    out = convolve_disk(img, disk_kernel(1))[:, :, 0]
    expected = np.zeros((9, 9))
    expected[3:6, 3:6] = disk_kernel(1).weights
    np.testing.assert_array_equal(out, expected)


@pytest.mark.parametrize("mode", ["mirror", "zero"])
@pytest.mark.parametrize("radius", [1, 2, 3])
def test_convolve_matches_bruteforce(rng, mode, radius):
    img = rng.normal(size=(32, 32, 2))
    got = convolve_disk(img, disk_kernel(radius), mode=mode)
    np.testing.assert_allclose(got, naive_disk_conv(img, radius, mode), rtol=0, atol=1e-12)


def test_convolve_linear(rng):
    u, v = rng.normal(size=(2, 32, 32, 3))
    k = disk_kernel(2)
    lhs = convolve_disk(2.5 * u - 0.75 * v, k)
    rhs = 2.5 * convolve_disk(u, k) - 0.75 * convolve_disk(v, k)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-10)


def test_convolve_kernel_too_large():
    with pytest.raises(InvalidInputError):
        convolve_disk(np.zeros((4, 10, 1)), disk_kernel(3))


def test_as_image_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        image_core.as_image(np.array([[1.0, np.nan]]))


def test_unknown_boundary_mode():
    with pytest.raises(InvalidInputError):
        convolve_disk(np.zeros((8, 8, 1)), disk_kernel(1), mode="wrap")


@pytest.mark.parametrize("scale,radius", [(0, 1), (1, 2), (2, 1)])
def test_noise_gain_matches_linear_operator(rng, scale, radius):
    # oracle: push every unit impulse through the actual chain, sum squared responses
    h, w = 24, 20
    base = np.zeros((h, w, 1))
    var = None
    for y in range(h):
        for x in range(w):
            base[:] = 0.0
            base[y, x, 0] = 1.0
            lvl = base
            for _ in range(scale):
                lvl = image_core.downsample(lvl, "zero")
            resp = convolve_disk(lvl, disk_kernel(radius), mode="zero")[:, :, 0]
            var = resp ** 2 if var is None else var + resp ** 2
    gain = noise_gain(var.shape, (h, w), scale, radius)
    np.testing.assert_allclose(gain, np.sqrt(var), rtol=1e-10, atol=1e-14)
