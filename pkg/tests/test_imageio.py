import numpy as np
import pytest

from ifa import imageio


def test_ppm_roundtrip_bit_exact(tmp_path, rng):
    rgb = rng.integers(0, 256, (7, 11, 3), dtype=np.uint8)
    imageio.write_ppm(tmp_path / "a.ppm", rgb)
    raw = (tmp_path / "a.ppm").read_bytes()
    assert raw.startswith(b"P6\n11 7\n255\n") and len(raw) == 12 + 7 * 11 * 3
    np.testing.assert_array_equal(imageio.read_ppm(tmp_path / "a.ppm"), rgb)


def test_pgm_roundtrip_and_comments(tmp_path, rng):
    gray = rng.integers(0, 256, (5, 3), dtype=np.uint8)
    imageio.write_pgm(tmp_path / "g.pgm", gray)
    np.testing.assert_array_equal(imageio.read_pgm(tmp_path / "g.pgm"), gray)
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n3 5\n255\n" + gray.tobytes())
    np.testing.assert_array_equal(imageio.read_pgm(tmp_path / "c.pgm"), gray)


@pytest.mark.parametrize("payload", [b"P6\n2 2\n255\n\x00", b"P6\n2 2\n65535\n" + bytes(24),
                                     b"P5\n2 2\n255\n" + bytes(4)])
def test_rejects_bad_ppm(tmp_path, payload):
    (tmp_path / "x.ppm").write_bytes(payload)
    with pytest.raises(imageio.ImageFormatError):
        imageio.read_ppm(tmp_path / "x.ppm")


def test_chw_conversion_inverts():
    rgb = np.arange(24, dtype=np.uint8).reshape(2, 4, 3)
    np.testing.assert_array_equal(imageio.chw_to_image(imageio.image_to_chw(rgb)), rgb)
