import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.color import rgb2lab

from fusioncolor.colorspace import (LabImage, NormalizedPlanes, RgbImage, denormalize, fitted_size,
                                    lab_to_srgb, load_luminance, normalize, resize_with_padding,
                                    srgb_to_lab, stack_luminance3)


def _rgb(*pixel):
    return RgbImage(np.array([[pixel]], dtype=np.uint8))


def _lab(img):
    lab = srgb_to_lab(img)
    return float(lab.L[0, 0]), float(lab.a[0, 0]), float(lab.b[0, 0])


def test_white_and_black():
    L, a, b = _lab(_rgb(255, 255, 255))
    assert L == pytest.approx(100, abs=1e-6) and abs(a) < 0.01 and abs(b) < 0.01
    assert _lab(_rgb(0, 0, 0)) == pytest.approx((0, 0, 0), abs=1e-9)


@pytest.mark.parametrize("pixel", [(255, 0, 0), (0, 255, 0), (0, 0, 255), (12, 200, 90), (250, 180, 40)])
def test_matches_reference_implementation(pixel):
    # skimage is an independent D65 / 2-degree implementation
    ref = rgb2lab(np.array([[pixel]], dtype=np.uint8))[0, 0]
    assert _lab(_rgb(*pixel)) == pytest.approx(tuple(ref), abs=0.01)


def test_lattice_round_trip():
    levels = np.linspace(0, 255, 16).round().astype(np.uint8)
    cube = np.stack(np.meshgrid(levels, levels, levels, indexing="ij"), axis=-1).reshape(64, 64, 3)
    back = lab_to_srgb(srgb_to_lab(RgbImage(cube))).pixels
    assert np.abs(back.astype(int) - cube.astype(int)).max() <= 1


def test_lab_endpoints():
    white = lab_to_srgb(LabImage(np.full((1, 1), 100.0), np.zeros((1, 1)), np.zeros((1, 1))))
    assert np.all(np.abs(white.pixels.astype(int) - 255) <= 1)
    black = lab_to_srgb(LabImage(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1))))
    assert np.all(black.pixels == 0)


def test_out_of_gamut_is_clamped():
    img = lab_to_srgb(LabImage(np.full((1, 1), 50.0), np.full((1, 1), 127.0), np.full((1, 1), -127.0)))
    assert img.pixels.dtype == np.uint8


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 255))
def test_grays_are_neutral(v):
    _, a, b = _lab(_rgb(v, v, v))
    assert abs(a) < 0.01 and abs(b) < 0.01


def test_normalize_examples():
    lab = LabImage(np.array([[50.0, 0.0, 100.0]]), np.array([[128.0, -128.0, 0.0]]), np.zeros((1, 3)))
    n = normalize(lab)
    np.testing.assert_allclose(n.L, [[0.0, -1.0, 1.0]])
    np.testing.assert_allclose(n.a, [[1.0, -1.0, 0.0]])


def test_normalize_round_trip(rng):
    lab = LabImage(rng.uniform(0, 100, (5, 7)), rng.uniform(-128, 128, (5, 7)), rng.uniform(-128, 128, (5, 7)))
    back = denormalize(normalize(lab))
    for got, want in ((back.L, lab.L), (back.a, lab.a), (back.b, lab.b)):
        np.testing.assert_allclose(got, want, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normalized_planes_in_unit_range(seed):
    px = np.random.default_rng(seed).integers(0, 256, (4, 4, 3), dtype=np.uint8)
    n = normalize(srgb_to_lab(RgbImage(px)))
    for plane in (n.L, n.a, n.b):
        assert np.all(np.abs(plane) <= 1)


class TestResize:
    def test_square_is_pure_resize(self):
        px = np.random.default_rng(0).integers(0, 256, (50, 50, 3), dtype=np.uint8)
        out = resize_with_padding(RgbImage(px), 50)
        np.testing.assert_array_equal(out.pixels, px)
        big = resize_with_padding(RgbImage(px), 224)
        assert big.pixels.shape == (224, 224, 3)
        assert not np.all(big.pixels[0] == 255)

    def test_wide_image_gets_white_bands(self):
        px = np.zeros((50, 100, 3), dtype=np.uint8)
        out = resize_with_padding(RgbImage(px), 224).pixels
        assert out.shape == (224, 224, 3)
        assert np.all(out[:56] == 255) and np.all(out[168:] == 255)
        assert np.all(out[56:168] == 0)

    def test_content_sizes(self):
        assert fitted_size(100, 50, 224) == (224, 112)
        assert fitted_size(640, 480, 224) == (224, 168)
        assert fitted_size(480, 640, 299) == (224, 299)

    def test_tall_image_padding_is_exact_white(self):
        px = np.full((480, 200, 3), 30, dtype=np.uint8)
        out = resize_with_padding(RgbImage(px), 299).pixels
        w, _ = fitted_size(200, 480, 299)
        left = (299 - w) // 2
        assert np.all(out[:, :left] == 255) and np.all(out[:, left + w:] == 255)
        assert np.all(out[:, left:left + w] == 30)

    def test_zero_size_rejected(self):
        with pytest.raises(ValueError):
            resize_with_padding(RgbImage(np.zeros((0, 5, 3), dtype=np.uint8)), 224)


def test_stack_luminance3():
    assert np.all(stack_luminance3(np.array([[0.5]])).data == 0.5)
    plane = np.random.default_rng(1).normal(size=(4, 6))
    stacked = stack_luminance3(plane)
    assert stacked.shape == (3, 4, 6)
    assert stacked.data[0].tobytes() == stacked.data[1].tobytes() == stacked.data[2].tobytes()


def test_load_luminance_gray_file_is_direct(tmp_path):
    from PIL import Image
    path = tmp_path / "g.png"
    Image.fromarray(np.array([[0, 255, 51]], dtype=np.uint8), mode="L").save(path)
    np.testing.assert_allclose(load_luminance(path), [[0.0, 100.0, 20.0]])


def test_normalized_planes_ab():
    p = NormalizedPlanes(np.zeros((2, 2)), np.ones((2, 2)), -np.ones((2, 2)))
    assert p.ab.shape == (2, 2, 2)
