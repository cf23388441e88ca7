import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coli.errors import FormatError, ShapeError, TruncatedError
from coli.pixel_io import (
    Image,
    encode_pnm,
    load_image,
    patch_count,
    save_image,
    split_patches,
    stitch,
    stitch_array,
)


@st.composite
def images(draw, max_side=40):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    c = draw(st.sampled_from([1, 3]))
    seed = draw(st.integers(0, 2**32 - 1))
    data = np.random.default_rng(seed).integers(0, 256, size=(h, w, c), dtype=np.uint8)
    return Image.from_array(data)


def test_load_pgm_bytes(tmp_path):
    path = tmp_path / "tiny.pgm"
    path.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([0, 64, 128, 255]))
    img = load_image(path)
    assert (img.width, img.height, img.channels) == (2, 2, 1)
    assert img.data[:, :, 0].tolist() == [[0, 64], [128, 255]]


def test_load_ppm_round_trip(tmp_path):
    data = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    img = Image.from_array(data)
    path = tmp_path / "c.ppm"
    save_image(img, path)
    assert load_image(path) == img
    assert path.read_bytes() == encode_pnm(img)


def test_truncated_pnm(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(10))
    with pytest.raises(TruncatedError, match="unexpected end"):
        load_image(path)


def test_unknown_format(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"GIF89a....")
    with pytest.raises(FormatError):
        load_image(path)


def test_png_round_trip(tmp_path):
    data = np.random.default_rng(0).integers(0, 256, size=(9, 7, 3), dtype=np.uint8)
    img = Image.from_array(data)
    save_image(img, tmp_path / "a.png")
    assert load_image(tmp_path / "a.png") == img


@pytest.mark.parametrize(
    "h, w, p, expected",
    [(32, 32, 16, 4), (64, 48, 8, 48), (65, 65, 11, 36), (10, 30, 5, 12), (7, 7, 16, 1)],
)
def test_patch_count(h, w, p, expected):
    assert patch_count(h, w, p, p) == expected
    img = Image.from_array(np.zeros((h, w), np.uint8))
    assert split_patches(img, p, p).n == expected


def test_65_crop():
    data = np.random.default_rng(3).integers(0, 256, size=(65, 65), dtype=np.uint8)
    img = Image.from_array(data)
    grid = split_patches(img, 32, 32)
    assert (grid.rows, grid.cols) == (3, 3)
    out = stitch(grid)
    assert (out.height, out.width) == (65, 65)
    assert out == img


def test_single_patch_is_whole_image():
    data = np.random.default_rng(4).integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    img = Image.from_array(data)
    grid = split_patches(img, 16, 16)
    assert grid.n == 1
    assert np.array_equal(grid.patch(1), img.data)
    assert stitch(grid) == img


def test_row_major_order():
    data = np.arange(16, dtype=np.uint8).reshape(4, 4)
    grid = split_patches(Image.from_array(data), 2, 2)
    assert grid.patch(1)[:, :, 0].tolist() == [[0, 1], [4, 5]]
    assert grid.patch(2)[:, :, 0].tolist() == [[2, 3], [6, 7]]
    assert grid.patch(3)[:, :, 0].tolist() == [[8, 9], [12, 13]]


def test_edge_replication_padding():
    data = np.arange(9, dtype=np.uint8).reshape(3, 3)
    grid = split_patches(Image.from_array(data), 2, 2)
    last = grid.patch(4)[:, :, 0]
    assert last.tolist() == [[8, 8], [8, 8]]


def test_stitch_rejects_bad_count():
    with pytest.raises(ShapeError):
        stitch_array(np.zeros((3, 2, 2, 1), np.uint8), 2, 2, 4, 4)


@given(images(), st.integers(1, 17), st.integers(1, 17))
def test_split_stitch_identity(img, p_h, p_w):
    grid = split_patches(img, p_h, p_w)
    assert grid.n == patch_count(img.height, img.width, p_h, p_w)
    assert stitch(grid) == img


@given(images(max_side=20), st.integers(1, 9))
def test_padding_keeps_in_bounds_pixels(img, p):
    grid = split_patches(img, p, p)
    full = grid.patches.reshape(grid.rows, grid.cols, p, p, img.channels)
    full = full.transpose(0, 2, 1, 3, 4).reshape(grid.rows * p, grid.cols * p, img.channels)
    assert np.array_equal(full[: img.height, : img.width], img.data)
