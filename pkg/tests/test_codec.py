"""Tests for the GSF container: byte layout, error ladder, roundtrips."""

import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splatc.codec import (
    BYTES_PER_SPLAT,
    FLAG_COLORS_CLAMPED,
    HEADER_BYTES,
    HEADER_FORMAT,
    MAGIC,
    VERSION,
    BadMagicError,
    GsfError,
    InvalidHeaderError,
    NonFinitePayloadError,
    OutOfRangeError,
    SizeMismatchError,
    TruncatedPayloadError,
    UnsupportedVersionError,
    decode_gsf,
    decode_to_image,
    encode_gsf,
    parse_gsf,
)
from splatc.model import SplatSet
from splatc.renderer import render_tiled

from conftest import random_set, single_splat_set


def small_set(n=5, seed=0, width=40, height=30):
    rng = np.random.default_rng(seed)
    return random_set(rng, width, height, n)


def test_file_size_law():
    for n in (0, 1, 7, 400):
        data = encode_gsf(small_set(n=n))
        assert len(data) == HEADER_BYTES + n * BYTES_PER_SPLAT


def test_header_layout():
    s = small_set(n=3, width=640, height=480)
    data = encode_gsf(s)
    magic, version, width, height, count, flags = struct.unpack(
        HEADER_FORMAT, data[:HEADER_BYTES])
    assert magic == b"GS2F" == MAGIC
    assert version == 1 == VERSION
    assert (width, height, count, flags) == (640, 480, 3, 0)


def test_known_half_bytes_in_payload():
    # float16 0.5 is 0x3800; mu.x sits first in the payload
    s = single_splat_set(16, 16, mu=(0.5, 0.25), sigma=0.25, color=(1.0, 0.5, 0.25))
    data = encode_gsf(s)
    assert data[HEADER_BYTES:HEADER_BYTES + 2] == b"\x00\x38"
    # mu.y = 0.25 is 0x3400
    assert data[HEADER_BYTES + 2:HEADER_BYTES + 4] == b"\x00\x34"


def test_handcrafted_file_decodes_exactly():
    # build the file with struct/numpy directly, no encoder involved
    params = np.array([[0.25, 0.5, 1.0, -0.5, 2.0, 1.0, 0.5, 0.25],
                       [0.75, 0.125, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0]],
                      dtype=np.float16)
    raw = struct.pack(HEADER_FORMAT, MAGIC, VERSION, 64, 32, 2, 0)
    raw += params.astype("<f2").tobytes()
    s = decode_gsf(raw)
    assert (s.width, s.height, s.n) == (64, 32, 2)
    np.testing.assert_array_equal(s.mu, [[0.25, 0.5], [0.75, 0.125]])
    np.testing.assert_array_equal(s.chol, [[1.0, -0.5, 2.0], [0.5, 0.0, 0.5]])
    np.testing.assert_array_equal(s.color, [[1.0, 0.5, 0.25], [0.0, 1.0, 0.0]])
    assert s.n_alive == 2


def test_roundtrip_half_precision_accuracy():
    s = small_set(n=64, seed=7)
    out = decode_gsf(encode_gsf(s))
    for a, b in ((s.mu, out.mu), (s.chol, out.chol), (s.color, out.color)):
        rel = np.abs(a - b) / np.maximum(np.abs(a), 1e-6)
        assert rel.max() <= 2.0 ** -11  # half has 11 significand bits


def test_double_roundtrip_is_byte_fixed_point():
    s = small_set(n=33, seed=1)
    first = encode_gsf(s)
    second = encode_gsf(decode_gsf(first))
    assert first == second


def test_encode_rejects_dead_splats():
    s = small_set(n=4)
    s.alive_mask[2] = False
    with pytest.raises(ValueError, match="compact"):
        encode_gsf(s)


def test_encode_rejects_oversized_dimensions():
    s = SplatSet(width=70000, height=16, mu=np.full((1, 2), 0.5),
                 chol=np.zeros((1, 3)), color=np.full((1, 3), 0.5))
    with pytest.raises(OutOfRangeError) as exc:
        encode_gsf(s)
    assert exc.value.param == "width"


def test_encode_rejects_half_overflow():
    # 1e6 rounds to +inf in half precision; error names the parameter
    s = single_splat_set(8, 8, mu=(0.5, 0.5), sigma=0.2, color=(1e6, 0.0, 0.0))
    with pytest.raises(OutOfRangeError) as exc:
        encode_gsf(s)
    assert exc.value.param == "r"
    assert "splat 0" in str(exc.value)


def test_clamp_colors_flag_and_values():
    s = single_splat_set(8, 8, mu=(0.5, 0.5), sigma=0.2, color=(1.5, -0.25, 0.5))
    data = encode_gsf(s, clamp_colors=True)
    f = parse_gsf(data)
    assert f.flags & FLAG_COLORS_CLAMPED
    assert f.colors_clamped
    out = decode_gsf(data)
    np.testing.assert_array_equal(out.color, [[1.0, 0.0, 0.5]])
    # without the flag the raw values survive (1.5 fits in half exactly)
    raw = decode_gsf(encode_gsf(s))
    np.testing.assert_array_equal(raw.color, [[1.5, -0.25, 0.5]])


def test_unknown_flag_bits_are_preserved_not_fatal():
    data = bytearray(encode_gsf(small_set(n=2)))
    data[14] |= 0x80  # set a flag bit the current version does not define
    f = parse_gsf(bytes(data))
    assert f.flags & 0x80
    decode_gsf(bytes(data))  # still decodes


def test_bad_magic():
    with pytest.raises(BadMagicError):
        parse_gsf(b"JUNKxxxxxxxxxxxxxxxx")
    with pytest.raises(BadMagicError):
        parse_gsf(b"")
    with pytest.raises(BadMagicError):
        parse_gsf(b"GS2")  # shorter than the magic itself


def test_truncated_header():
    with pytest.raises(TruncatedPayloadError):
        parse_gsf(b"GS2F\x01\x00")


def test_unsupported_version():
    raw = struct.pack(HEADER_FORMAT, MAGIC, 2, 8, 8, 0, 0)
    with pytest.raises(UnsupportedVersionError):
        parse_gsf(raw)


def test_zero_dimensions_rejected():
    raw = struct.pack(HEADER_FORMAT, MAGIC, VERSION, 0, 8, 0, 0)
    with pytest.raises(InvalidHeaderError):
        parse_gsf(raw)
    raw = struct.pack(HEADER_FORMAT, MAGIC, VERSION, 8, 0, 0, 0)
    with pytest.raises(InvalidHeaderError):
        parse_gsf(raw)


def test_truncated_payload():
    data = encode_gsf(small_set(n=3))
    with pytest.raises(TruncatedPayloadError):
        parse_gsf(data[:-1])
    with pytest.raises(TruncatedPayloadError):
        parse_gsf(data[:HEADER_BYTES])


def test_trailing_bytes_rejected():
    data = encode_gsf(small_set(n=3))
    with pytest.raises(SizeMismatchError):
        parse_gsf(data + b"\x00")


def test_non_finite_payload_rejected():
    data = bytearray(encode_gsf(small_set(n=2)))
    # half NaN at the second splat's g channel (param column 6)
    off = HEADER_BYTES + BYTES_PER_SPLAT + 6 * 2
    data[off:off + 2] = struct.pack("<e", float("nan"))
    with pytest.raises(NonFinitePayloadError, match="g at splat 1"):
        decode_gsf(bytes(data))
    data[off:off + 2] = struct.pack("<e", float("inf"))
    with pytest.raises(NonFinitePayloadError):
        decode_gsf(bytes(data))


def test_decode_to_image_matches_render_and_is_clamped():
    s = single_splat_set(24, 24, mu=(0.5, 0.5), sigma=0.3, color=(2.0, 2.0, 2.0))
    data = encode_gsf(s)
    img = decode_to_image(data)
    assert (img.width, img.height) == (24, 24)
    assert img.data.max() <= 1.0
    assert img.data.min() >= 0.0
    unclamped = render_tiled(decode_gsf(data))
    np.testing.assert_array_equal(
        img.data, np.clip(unclamped.data, 0.0, 1.0))


def test_header_only_file_decodes_to_black():
    s = SplatSet.from_gaussians(20, 12, [])
    data = encode_gsf(s)
    assert len(data) == 16
    img = decode_to_image(data)
    assert (img.width, img.height) == (20, 12)
    np.testing.assert_array_equal(img.data, np.zeros((12, 20, 3), np.float32))


def test_roundtrip_render_stays_faithful_to_fit_output():
    # the only loss is float16 parameter rounding; measured 65.7 dB
    # between the decoded render and the fit-time render
    from splatc.corpus import generate_synthetic
    from splatc.fitter import FitConfig, fit
    from splatc.metrics import psnr

    target = generate_synthetic("gaussian-blobs", 4, 48, 48)
    s, _ = fit(target, FitConfig(num_gaussians=36, iterations=300, seed=0))
    fit_render = render_tiled(s)
    decoded_render = render_tiled(decode_gsf(encode_gsf(s)))
    assert psnr(decoded_render, fit_render) > 35.0


@given(st.binary(max_size=200))
def test_fuzzed_bytes_never_crash_outside_gsf_errors(data):
    try:
        parse_gsf(data)
    except GsfError:
        pass


@given(st.binary(max_size=200))
def test_fuzzed_bytes_with_valid_magic(data):
    try:
        f = parse_gsf(MAGIC + data)
        assert f.total_bytes == len(MAGIC + data)
    except GsfError:
        pass
