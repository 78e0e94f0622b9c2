import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fgsm_lab.errors import FormatError
from fgsm_lab.imageio import decode_pnm, encode_pnm, read_pnm, write_pnm


@settings(max_examples=30)
@given(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3]), st.integers(0, 2**32 - 1))
def test_8bit_roundtrip_is_exact(h, w, c, seed):
    pix = np.random.default_rng(seed).integers(0, 256, (h, w, c))
    img = (pix / 255).astype(np.float32)
    back = decode_pnm(encode_pnm(img))
    assert back.shape == (h, w, c)
    np.testing.assert_array_equal(np.round(back * 255), pix)


def test_header_with_comments():
    raw = b"P5\n# made by hand\n2 # width\n1\n255\n\x00\xff"
    np.testing.assert_array_equal(decode_pnm(raw)[..., 0], [[0.0, 1.0]])


def test_sixteen_bit():
    raw = b"P5 1 1 65535\n" + (65535 // 2).to_bytes(2, "big")
    assert decode_pnm(raw)[0, 0, 0] == pytest.approx(0.5, abs=1e-4)


def test_file_roundtrip(tmp_path):
    img = np.zeros((2, 3, 3), np.float32)
    img[0, 1] = [1, 0, 0]
    write_pnm(tmp_path / "a.ppm", img)
    np.testing.assert_array_equal(read_pnm(tmp_path / "a.ppm"), img)


@pytest.mark.parametrize("raw", [
    b"P3\n1 1\n255\n0 0 0",
    b"P6\n1 1\n",
    b"P6\nx 1\n255\n\x00\x00\x00",
    b"P6\n1 1\n0\n\x00\x00\x00",
    b"P6\n2 2\n255\n\x00",
])
def test_malformed(raw):
    with pytest.raises(FormatError):
        decode_pnm(raw)


def test_encode_rejects_two_channels():
    with pytest.raises(FormatError):
        encode_pnm(np.zeros((2, 2, 2)))


def test_missing_file(tmp_path):
    with pytest.raises(FormatError):
        read_pnm(tmp_path / "nope.ppm")
