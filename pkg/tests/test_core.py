import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from maxent_retinex.core import (ContractError, Decomposition, ImageIOError, load_image,
                                 max_channel, save_image, to_gray)


def _write(path, data, mode=None):
    Image.fromarray(np.asarray(data, dtype=np.uint8), mode=mode).save(path)


def test_load_black_and_white_pixels(tmp_path):
    _write(tmp_path / "k.png", [[[0, 0, 0]]])
    _write(tmp_path / "w.png", [[[255, 255, 255]]])
    np.testing.assert_array_equal(load_image(tmp_path / "k.png"), [[[0.0, 0.0, 0.0]]])
    np.testing.assert_array_equal(load_image(tmp_path / "w.png"), [[[1.0, 1.0, 1.0]]])


def test_load_divides_raw_bytes_by_255(tmp_path):
    raw = np.array([[0, 128], [255, 64]], dtype=np.uint8)
    _write(tmp_path / "x.png", np.repeat(raw[..., None], 3, axis=2))
    img = load_image(tmp_path / "x.png")
    assert img.shape == (2, 2, 3)
    expected = raw.astype(np.float32) / np.float32(255.0)
    for c in range(3):
        np.testing.assert_array_equal(img[..., c], expected)
    assert img[0, 1, 0] == np.float32(128 / 255)


@pytest.mark.parametrize("suffix", [".png", ".bmp"])
def test_grayscale_file_replicated(tmp_path, suffix):
    _write(tmp_path / f"g{suffix}", [[10, 20], [30, 40]])
    img = load_image(tmp_path / f"g{suffix}")
    assert img.shape == (2, 2, 3)
    assert (img[..., 0] == img[..., 1]).all() and (img[..., 1] == img[..., 2]).all()


def test_load_errors_carry_path(tmp_path):
    with pytest.raises(ImageIOError, match="missing.png"):
        load_image(tmp_path / "missing.png")
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(ImageIOError, match="bad.png"):
        load_image(bad)
    deep = tmp_path / "deep.png"
    Image.fromarray(np.full((2, 2), 40000, dtype=np.uint16)).save(deep)
    with pytest.raises(ImageIOError, match="deep.png"):
        load_image(deep)


def test_save_rejects_out_of_range(tmp_path):
    with pytest.raises(ContractError):
        save_image(np.full((2, 2, 3), 1.5), tmp_path / "x.png")


def test_save_to_unwritable_path(tmp_path):
    with pytest.raises(ImageIOError):
        save_image(np.zeros((2, 2, 3)), tmp_path / "nope" / "x.png")


@settings(max_examples=25, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9), st.just(3))))
def test_save_load_round_trip_is_byte_exact(tmp_path_factory, raw):
    d = tmp_path_factory.mktemp("rt")
    img = raw.astype(np.float32) / np.float32(255)
    save_image(img, d / "a.png")
    back = load_image(d / "a.png")
    np.testing.assert_array_equal(np.rint(back * 255).astype(np.uint8), raw)
    save_image(back, d / "b.png")
    assert (d / "a.png").read_bytes() == (d / "b.png").read_bytes()


def test_max_channel_examples(rng):
    assert max_channel(np.array([[[0.2, 0.5, 0.3]]]))[0, 0, 0] == 0.5
    np.testing.assert_array_equal(max_channel(np.full((3, 4, 3), 0.7)), np.full((3, 4, 1), 0.7))
    img = rng.random((4, 4, 3))
    m = max_channel(img)
    for i in range(4):
        for j in range(4):
            best = img[i, j, 0]
            for c in (1, 2):
                if img[i, j, c] > best:
                    best = img[i, j, c]
            assert m[i, j, 0] == best


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 4, 3), elements=st.floats(0, 1)))
def test_max_channel_dominates_and_gray_in_range(img):
    m = max_channel(img)
    assert (m >= img).all()
    g = to_gray(img)
    assert (g >= -1e-12).all() and (g <= 1 + 1e-12).all()


def test_to_gray_coefficients():
    assert to_gray(np.ones((1, 1, 3)))[0, 0, 0] == pytest.approx(1.0, abs=1e-15)
    assert to_gray(np.zeros((1, 1, 3)))[0, 0, 0] == 0.0
    assert to_gray(np.array([[[1.0, 0.0, 0.0]]]))[0, 0, 0] == pytest.approx(0.299, abs=1e-15)


@pytest.mark.parametrize("fn", [max_channel, to_gray])
def test_channel_count_contract(fn):
    with pytest.raises(ContractError):
        fn(np.zeros((2, 2, 1)))


def test_decomposition_shape_contract():
    Decomposition(np.zeros((4, 5, 3)), np.zeros((4, 5, 1)))
    with pytest.raises(ContractError):
        Decomposition(np.zeros((4, 5, 3)), np.zeros((4, 6, 1)))
