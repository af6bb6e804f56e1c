"""Rounding onto reduced formats, checked against independent oracles."""

import math
import struct
from bisect import bisect_left

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlcg.precision import (
    EXPERIMENT_PRECISIONS,
    FORMATS,
    EmulationMode,
    format_of,
    round_scalar,
    round_vector,
)

# u, x_min, x_max as printed in the floating-point format table
TABLE = {
    "q52": (1.25e-1, 6.10e-5, 5.73e4),
    "bf16": (3.91e-3, 1.18e-38, 3.39e38),
    "fp16": (4.88e-4, 6.10e-5, 6.55e4),
    "fp32": (5.96e-8, 1.18e-38, 3.40e38),
    "fp64": (1.11e-16, 2.23e-308, 1.80e308),
}


def sig3(x):
    return float(f"{x:.2e}")


@pytest.mark.parametrize("name", sorted(TABLE))
def test_format_table(name):
    f = format_of(name)
    assert (sig3(f.unit_roundoff), sig3(f.x_min), sig3(f.x_max)) == TABLE[name]


def test_named_format_parameters():
    fp16, bf16, tf32 = format_of("fp16"), format_of("bf16"), format_of("tf32")
    assert (fp16.t, fp16.e_min, fp16.e_max) == (11, -14, 15)
    assert bf16.t == 8
    assert (tf32.t, tf32.e_min, tf32.e_max) == (11, -126, 127)
    assert tf32.unit_roundoff == fp16.unit_roundoff
    assert tf32.x_max == pytest.approx(format_of("fp32").x_max, rel=1e-3)


def test_format_lookup():
    assert format_of("FP32") is FORMATS["fp32"]
    assert format_of(FORMATS["bf16"]) is FORMATS["bf16"]
    with pytest.raises(ValueError):
        format_of("fp8")
    assert "q52" not in EXPERIMENT_PRECISIONS
    assert EmulationMode.parse("Fast") is EmulationMode.FAST


# -- oracles --------------------------------------------------------------


def bf16_oracle(x):
    """Nearest bf16 by enumerating the two neighbours in fp32 bit space."""
    bits = struct.unpack("<I", struct.pack("<f", np.float32(x)))[0]
    if np.float32(x) != x:
        raise ValueError("oracle needs an fp32-representable input")
    lo = bits & 0xFFFF0000
    hi = lo + 0x10000
    vlo = struct.unpack("<f", struct.pack("<I", lo))[0]
    vhi = struct.unpack("<f", struct.pack("<I", hi))[0]
    dlo, dhi = abs(x - vlo), abs(vhi - x)
    if dlo < dhi:
        return vlo
    if dhi < dlo:
        return vhi
    return vlo if (lo >> 16) % 2 == 0 else vhi


def enumerate_format(t, e_min, e_max):
    """All nonnegative finite values of a small format, with their significand parity."""
    vals = {0.0: 0}
    for m in range(1, 2 ** (t - 1)):  # subnormals
        vals[math.ldexp(m, e_min - t + 1)] = m
    for e in range(e_min, e_max + 1):
        for m in range(2 ** (t - 1), 2**t):
            vals[math.ldexp(m, e - t + 1)] = m
    keys = sorted(vals)
    return keys, [vals[k] for k in keys]


def nearest_even(x, grid, mant, x_max):
    ax = abs(x)
    if ax > grid[-1]:
        # beyond x_max: half an ulp past it is the overflow threshold
        ulp = grid[-1] - grid[-2]
        r = math.inf if ax >= grid[-1] + ulp / 2 else grid[-1]
        return math.copysign(r, x)
    i = bisect_left(grid, ax)
    if grid[i] == ax:
        return math.copysign(ax, x)
    lo, hi = grid[i - 1], grid[i]
    if ax - lo < hi - ax:
        r = lo
    elif hi - ax < ax - lo:
        r = hi
    else:
        r = lo if mant[i - 1] % 2 == 0 else hi
    return math.copysign(r, x)


# -- worked examples -------------------------------------------------------


def test_bf16_tie_goes_to_even():
    x = 1.0 + 2.0**-9
    assert bf16_oracle(x) == 1.0
    assert round_scalar(x, "bf16") == 1.0
    # the next tie up rounds away from 1 + 2^-8, whose last bit is odd
    x = 1.0 + 3 * 2.0**-9
    assert round_scalar(x, "bf16") == bf16_oracle(x) == 1.0 + 2.0**-7


def test_fp16_overflow_and_specials():
    assert round_scalar(7.0e4, "fp16") == math.inf
    assert round_scalar(-7.0e4, "fp16") == -math.inf
    assert round_scalar(65504.0, "fp16") == 65504.0
    assert round_scalar(65519.0, "fp16") == 65504.0
    assert round_scalar(65520.0, "fp16") == math.inf
    assert math.isnan(round_scalar(math.nan, "bf16"))
    assert round_scalar(-math.inf, "fp16") == -math.inf
    for f in FORMATS:
        assert round_scalar(0.0, f) == 0.0


def test_round_vector_examples():
    for f in FORMATS:
        np.testing.assert_array_equal(round_vector([0.0, 1.0, -1.0], f), [0.0, 1.0, -1.0])
    np.testing.assert_array_equal(round_vector([1 + 2.0**-9], "bf16"), [1.0])
    assert round_vector(np.ones((2, 2)), "fp16").shape == (4,)


def test_subnormals_fp16():
    tiny = 2.0**-24  # smallest fp16 subnormal
    assert round_scalar(tiny, "fp16") == tiny
    assert round_scalar(0.49 * tiny, "fp16") == 0.0
    assert round_scalar(0.5 * tiny, "fp16") == 0.0  # tie to the even neighbour 0
    assert round_scalar(0.51 * tiny, "fp16") == tiny
    assert round_scalar(3 * tiny, "fp16") == 3 * tiny
    assert format_of("fp16").x_min_subnormal == tiny


# -- brute-force oracles over many inputs -------------------------------------


def samples(f, n, rng):
    """Random doubles spanning subnormal, normal and overflow ranges of f."""
    e = rng.integers(max(f.e_min - f.t - 2, -1074), min(f.e_max + 2, 1024), size=n)
    m = rng.uniform(1.0, 2.0, size=n)
    s = rng.choice([-1.0, 1.0], size=n)
    return s * np.ldexp(m, e)


@pytest.mark.parametrize("name", ["q52", "fp16"])
def test_matches_enumeration_oracle(name):
    f = format_of(name)
    grid, mant = enumerate_format(f.t, f.e_min, f.e_max)
    assert grid[-1] == f.x_max
    rng = np.random.default_rng(1)
    xs = samples(f, 4000, rng)
    # exact midpoints between neighbours exercise ties
    mids = [(a + b) / 2 for a, b in zip(grid[:-1], grid[1:])][:: max(1, len(grid) // 500)]
    xs = np.concatenate([xs, mids, -np.asarray(mids)])
    got = round_vector(xs, f)
    want = np.array([nearest_even(x, grid, mant, f.x_max) for x in xs])
    np.testing.assert_array_equal(got, want)


def test_fp16_matches_numpy_half():
    rng = np.random.default_rng(2)
    xs = samples(format_of("fp16"), 100_000, rng)
    with np.errstate(over="ignore"):
        want = xs.astype(np.float16).astype(np.float64)
    np.testing.assert_array_equal(round_vector(xs, "fp16"), want)


def test_fp32_matches_numpy_single():
    rng = np.random.default_rng(3)
    xs = samples(format_of("fp32"), 100_000, rng)
    with np.errstate(over="ignore"):
        want = xs.astype(np.float32).astype(np.float64)
    np.testing.assert_array_equal(round_vector(xs, "fp32"), want)


def test_bf16_matches_bit_oracle():
    rng = np.random.default_rng(4)
    xs = rng.standard_normal(3000).astype(np.float32).astype(np.float64) * 10.0 ** rng.integers(-30, 30, 3000)
    xs = xs.astype(np.float32).astype(np.float64)
    want = [bf16_oracle(x) for x in xs]
    np.testing.assert_array_equal(round_vector(xs, "bf16"), want)


# -- properties ----------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(FORMATS))
def test_rounding_properties(name):
    f = format_of(name)
    rng = np.random.default_rng(5)
    xs = samples(f, 100_000, rng)
    r = round_vector(xs, f)
    np.testing.assert_array_equal(round_vector(r, f), r)
    np.testing.assert_array_equal(round_vector(-xs, f), -r)
    order = np.argsort(xs, kind="stable")
    ro = r[order]
    assert np.all(ro[1:] >= ro[:-1])
    normal = (np.abs(xs) >= f.x_min) & (np.abs(xs) <= f.x_max)
    assert normal.sum() > 50_000
    err = np.abs(r[normal] - xs[normal])
    assert np.all(err <= f.unit_roundoff * np.abs(xs[normal]))


def test_fp64_is_identity_bitwise():
    rng = np.random.default_rng(6)
    bits = rng.integers(0, 2**63, size=100_000, dtype=np.int64)
    xs = bits.view(np.float64)
    xs = xs[np.isfinite(xs)]
    assert np.array_equal(round_vector(xs, "fp64").view(np.int64), xs.view(np.int64))
    assert all(round_scalar(x, "fp64") == x for x in xs[:1000])


@pytest.mark.parametrize("small,large", [("bf16", "fp32"), ("fp16", "fp32"), ("fp16", "tf32"), ("fp32", "fp64"),
                                         ("q52", "fp16")])
def test_nested_formats_are_fixed_points(small, large):
    rng = np.random.default_rng(7)
    f = format_of(small)
    xs = round_vector(samples(f, 20_000, rng), f)
    xs = xs[np.isfinite(xs)]
    np.testing.assert_array_equal(round_vector(xs, large), xs)


@settings(max_examples=300, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False), st.sampled_from(sorted(FORMATS)))
def test_round_scalar_agrees_with_vector(x, name):
    assert round_scalar(x, name) == round_vector([x], name)[0]
    assert round_scalar(round_scalar(x, name), name) == round_scalar(x, name)
