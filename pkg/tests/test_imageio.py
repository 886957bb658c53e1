import numpy as np
import pytest

from inrstream.imageio import PPMError, decode_ppm, encode_ppm, load, save, to_uint8


def test_decode_two_pixel_example():
    data = b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255])
    px = decode_ppm(data)
    assert px.shape == (1, 2, 3)
    np.testing.assert_array_equal(px[0, 0], [255, 0, 0])
    np.testing.assert_array_equal(px[0, 1], [0, 0, 255])


def test_decode_header_comments():
    data = b"P6\n# made by hand\n2 1 # trailing\n255\n" + bytes(6)
    assert decode_ppm(data).shape == (1, 2, 3)


def test_truncated_payload_names_offset():
    data = b"P6\n2 2\n255\n" + bytes(5)
    with pytest.raises(PPMError, match="offset 11"):
        decode_ppm(data)


@pytest.mark.parametrize("data", [b"P3\n1 1\n255\n000", b"P6\n1 1\n65535\n" + bytes(6), b"P6\n0 1\n255\n", b"P6\n1"])
def test_rejects_bad_headers(data):
    with pytest.raises(PPMError):
        decode_ppm(data)


def test_encode_decode_round_trip():
    px = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    np.testing.assert_array_equal(decode_ppm(encode_ppm(px)), px)


def test_to_uint8_rounding_and_clamping():
    np.testing.assert_array_equal(to_uint8([0.5, -0.3, 1.7, 1.0, 0.0]), [128, 0, 255, 255, 0])


def test_save_load_round_trip(tmp_path):
    px = np.random.default_rng(1).integers(0, 256, size=(4, 3, 3), dtype=np.uint8)
    path = tmp_path / "img.ppm"
    save(px / 255.0, path)
    img = load(path)
    np.testing.assert_array_equal(to_uint8(img), px)
    assert not (tmp_path / "img.ppm.tmp").exists()


def test_load_png(tmp_path):
    Image = pytest.importorskip("PIL.Image")
    px = np.random.default_rng(2).integers(0, 256, size=(3, 4, 3), dtype=np.uint8)
    Image.fromarray(px).save(tmp_path / "x.png")
    np.testing.assert_array_equal(to_uint8(load(tmp_path / "x.png")), px)
