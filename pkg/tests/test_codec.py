"""Tests for the two-stage block codec and its stream format."""

import dataclasses
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsfc import (
    CodecConfig,
    DistortionSpec,
    EnvelopeSpec,
    RationalDistortionLevel,
    SourcePmf,
    block_distortion,
    builtin_envelope,
    decode,
    decode_stream,
    encode,
    measured_rate,
    merge_symbol,
    overflow_symbol,
    roundtrip,
    sqrt_threshold_schedule,
    tail_matched_schedule,
    tail_threshold,
    truncate_symbol,
)
from dsfc.errors import (
    ConfigInvalid,
    EnvelopeViolation,
    InvalidOverflowSymbol,
    LengthMismatch,
    MalformedStream,
    TrailingBits,
)

ABS = DistortionSpec(kind="absolute")
GEO = builtin_envelope("geometric")
POLY = builtin_envelope("polynomial")


def geo_cfg(**kw):
    base = dict(envelope=GEO, spec=ABS, level=RationalDistortionLevel(1), n=8, k=3)
    base.update(kw)
    return CodecConfig(**base)


# ---------------------------------------------------------------------------
# Symbol splitting
# ---------------------------------------------------------------------------


def test_truncate_symbol():
    assert truncate_symbol(3, 2) == 2
    assert truncate_symbol(3, 3) == 3
    assert truncate_symbol(3, 4) == 4
    assert truncate_symbol(3, 9) == 4


def test_overflow_symbol():
    assert overflow_symbol(3, 2) == 1
    assert overflow_symbol(3, 3) == 1
    assert overflow_symbol(3, 9) == 9


def test_merge_symbol():
    assert merge_symbol(3, 2, 1) == 2
    assert merge_symbol(3, 4, 9) == 9


def test_merge_rejects_reserved_overflow_values():
    with pytest.raises(InvalidOverflowSymbol):
        merge_symbol(3, 2, 3)


@settings(max_examples=100, deadline=None)
@given(x=st.integers(min_value=1, max_value=100), k=st.integers(min_value=1, max_value=20))
def test_split_then_merge_is_identity_on_tail(x, k):
    y = truncate_symbol(k, x)
    z = overflow_symbol(k, x)
    merged = merge_symbol(k, y, z)
    if x > k:
        assert merged == x
    else:
        assert merged == y == x


# ---------------------------------------------------------------------------
# Threshold schedules
# ---------------------------------------------------------------------------


def test_sqrt_schedule_values():
    assert [sqrt_threshold_schedule(n) for n in (1, 2, 4, 64, 100)] == [1, 2, 2, 4, 4]


def test_tail_matched_schedule_equals_tail_threshold():
    for n in (2, 8, 64):
        assert tail_matched_schedule(GEO, n) == tail_threshold(GEO, n)


def test_effective_threshold_respects_envelope_floor():
    # The polynomial envelope only becomes a sub-probability bound from 2 on,
    # so a requested threshold of 1 is raised to 2.
    cfg = CodecConfig(envelope=POLY, spec=ABS, level=RationalDistortionLevel(1), n=4, k=1)
    stream = encode(cfg, np.array([1, 2, 1, 1]))
    assert stream.k == 2


# ---------------------------------------------------------------------------
# Round trips
# ---------------------------------------------------------------------------


def test_grid_round_trip_example():
    cfg = geo_cfg()
    x = np.array([1, 2, 5, 1, 3, 9, 2, 1])
    stream, x_hat, rho = roundtrip(cfg, x)
    assert stream.mode == "grid"
    assert isinstance(rho, Fraction)
    assert rho <= Fraction(cfg.level.num, cfg.level.den)
    assert np.array_equal(decode_stream(stream.to_bytes()), x_hat)


def test_oracle_round_trip_example():
    cfg = geo_cfg(n=4, k=2, first_stage="oracle")
    stream, x_hat, rho = roundtrip(cfg, np.array([2, 1, 1, 6]))
    assert stream.mode == "oracle"
    assert rho <= 1
    assert np.array_equal(decode_stream(stream.to_bytes()), x_hat)


def test_overflow_symbols_survive_exactly():
    cfg = geo_cfg()
    x = np.array([1, 1, 1, 1, 50, 1, 9, 1])
    _, x_hat, _ = roundtrip(cfg, x)
    assert x_hat[4] == 50
    assert x_hat[6] == 9


def test_encode_decode_deterministic():
    cfg = geo_cfg()
    x = np.array([3, 1, 4, 1, 5, 9, 2, 6])
    assert encode(cfg, x).to_bytes() == encode(cfg, x).to_bytes()


def test_decode_matches_config_header():
    cfg = geo_cfg()
    data = encode(cfg, np.array([1, 2, 5, 1, 3, 9, 2, 1])).to_bytes()
    assert np.array_equal(decode(cfg, data), decode_stream(data))
    other = geo_cfg(k=4)
    with pytest.raises(MalformedStream):
        decode(other, data)


@settings(max_examples=50, deadline=None)
@given(
    xs=st.lists(st.integers(min_value=1, max_value=40), min_size=8, max_size=8),
    num=st.integers(min_value=1, max_value=4),
)
def test_round_trip_never_violates_budget(xs, num):
    cfg = geo_cfg(level=RationalDistortionLevel(num))
    x = np.asarray(xs)
    _, x_hat, rho = roundtrip(cfg, x)
    assert rho == block_distortion(ABS, x, x_hat)
    assert rho <= num


@settings(max_examples=25, deadline=None)
@given(
    xs=st.lists(st.integers(min_value=1, max_value=12), min_size=3, max_size=3),
)
def test_oracle_round_trip_never_violates_budget(xs):
    cfg = geo_cfg(n=3, k=2, first_stage="oracle", level=RationalDistortionLevel(1))
    x = np.asarray(xs)
    _, x_hat, rho = roundtrip(cfg, x)
    assert rho <= 1


# ---------------------------------------------------------------------------
# Stream validation
# ---------------------------------------------------------------------------


def test_bad_magic_rejected():
    data = encode(geo_cfg(), np.array([1, 2, 5, 1, 3, 9, 2, 1])).to_bytes()
    bad = bytes([data[0] ^ 0xFF]) + data[1:]
    with pytest.raises(MalformedStream):
        decode_stream(bad)


def test_truncated_stream_rejected():
    data = encode(geo_cfg(), np.array([1, 2, 5, 1, 3, 9, 2, 1])).to_bytes()
    with pytest.raises(MalformedStream):
        decode_stream(data[:-1])


def test_oversized_stream_rejected():
    data = encode(geo_cfg(), np.array([1, 2, 5, 1, 3, 9, 2, 1])).to_bytes()
    with pytest.raises(MalformedStream):
        decode_stream(data + b"\x00")


def test_nonzero_padding_rejected():
    stream = encode(geo_cfg(), np.array([1, 2, 5, 1, 3, 9, 2, 1]))
    used = stream.first_stage_bits + stream.second_stage_bits
    assert 8 * len(stream.payload) > used  # example leaves pad bits
    tampered = stream.payload[:-1] + bytes([stream.payload[-1] | 0x01])
    with pytest.raises(TrailingBits):
        decode_stream(dataclasses.replace(stream, payload=tampered).to_bytes())


def test_symbols_below_support_floor_rejected():
    with pytest.raises(ConfigInvalid):
        encode(geo_cfg(), np.array([0, 2, 5, 1, 3, 9, 2, 1]))


def test_block_length_must_match_config():
    with pytest.raises(LengthMismatch):
        encode(geo_cfg(), np.array([1, 2, 3]))


# ---------------------------------------------------------------------------
# Measured rate
# ---------------------------------------------------------------------------


def test_measured_rate_parts_are_additive():
    mr = measured_rate(geo_cfg(), SourcePmf.geometric(), 32, 5)
    assert mr.bits_per_sample == pytest.approx(mr.first_stage_bps + mr.second_stage_bps)
    assert mr.trials == 32
    assert mr.n == 8
    assert mr.std_error >= 0


def test_measured_rate_deterministic_given_seed():
    a = measured_rate(geo_cfg(), SourcePmf.geometric(), 16, 9)
    b = measured_rate(geo_cfg(), SourcePmf.geometric(), 16, 9)
    assert a.bits_per_sample == b.bits_per_sample


def test_point_mass_rate_is_exact_codeword_length():
    env = EnvelopeSpec.tabulated((Fraction(1), Fraction(1, 2), Fraction(1, 4)))
    cfg = CodecConfig(envelope=env, spec=ABS, level=RationalDistortionLevel(1), n=1, k=2)
    mr = measured_rate(cfg, SourcePmf.point_mass(1), 16, 0)
    stream = encode(cfg, np.array([1]))
    assert mr.std_error == 0.0
    assert mr.bits_per_sample == stream.first_stage_bits + stream.second_stage_bits


def test_measured_rate_requires_domination():
    with pytest.raises(EnvelopeViolation):
        measured_rate(geo_cfg(n=1, k=2), SourcePmf.point_mass(1), 4, 0)


# ---------------------------------------------------------------------------
# Configuration validation
# ---------------------------------------------------------------------------


def test_config_rejects_bad_first_stage():
    with pytest.raises(ConfigInvalid):
        CodecConfig(envelope=GEO, spec=ABS, level=RationalDistortionLevel(1), n=4, first_stage="fft")


def test_config_rejects_nonpositive_n():
    with pytest.raises(ConfigInvalid):
        CodecConfig(envelope=GEO, spec=ABS, level=RationalDistortionLevel(1), n=0)


def test_config_rejects_unknown_schedule():
    with pytest.raises(ConfigInvalid):
        CodecConfig(envelope=GEO, spec=ABS, level=RationalDistortionLevel(1), n=4, schedule="midnight")
