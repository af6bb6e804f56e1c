"""Reduced floating-point formats emulated on top of float64 storage.

Values always live in native doubles. A format only describes the grid a
value is snapped onto: round-to-nearest, ties-to-even, with gradual
underflow and overflow to infinity.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numba
import numpy as np

__all__ = [
    "EmulationMode",
    "PrecisionFormat",
    "FORMATS",
    "EXPERIMENT_PRECISIONS",
    "format_of",
    "round_scalar",
    "round_vector",
]


class EmulationMode(str, enum.Enum):
    STRICT = "strict"
    FAST = "fast"

    @classmethod
    def parse(cls, value: "EmulationMode | str") -> "EmulationMode":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


@dataclass(frozen=True)
class PrecisionFormat:
    """Binary floating-point format with ``t`` significand bits (implicit bit included)."""

    name: str
    t: int
    e_min: int
    e_max: int

    def __post_init__(self):
        if self.t < 2 or not (self.e_min < 0 < self.e_max):
            raise ValueError(f"invalid format parameters for {self.name!r}")

    @property
    def unit_roundoff(self) -> float:
        return math.ldexp(1.0, -self.t)

    @property
    def x_min(self) -> float:
        """Smallest positive normalized number."""
        return math.ldexp(1.0, self.e_min)

    @property
    def x_max(self) -> float:
        return math.ldexp(2.0 - math.ldexp(1.0, 1 - self.t), self.e_max)

    @property
    def x_min_subnormal(self) -> float:
        return math.ldexp(1.0, self.e_min - self.t + 1)

    @property
    def is_identity(self) -> bool:
        return self.t >= 53

    def params(self) -> tuple[int, int, float]:
        """Packed (t, e_min, x_max) as consumed by the compiled kernels."""
        return self.t, self.e_min, self.x_max


FORMATS: dict[str, PrecisionFormat] = {
    f.name: f
    for f in (
        PrecisionFormat("q52", 3, -14, 15),
        PrecisionFormat("bf16", 8, -126, 127),
        PrecisionFormat("fp16", 11, -14, 15),
        PrecisionFormat("tf32", 11, -126, 127),
        PrecisionFormat("fp32", 24, -126, 127),
        PrecisionFormat("fp64", 53, -1022, 1023),
    )
}

# q52 is supported but never offered to the agent.
EXPERIMENT_PRECISIONS: tuple[str, ...] = ("bf16", "fp16", "tf32", "fp32", "fp64")


def format_of(name: "str | PrecisionFormat") -> PrecisionFormat:
    if isinstance(name, PrecisionFormat):
        return name
    try:
        return FORMATS[str(name).lower()]
    except KeyError:
        raise ValueError(
            f"unknown precision {name!r}; expected one of {sorted(FORMATS)}"
        ) from None


@numba.njit(cache=True, inline="always")
def rnd(x, t, e_min, x_max):
    """Round one double onto the (t, e_min, x_max) grid; identity for t >= 53."""
    if t >= 53:
        return x
    ax = abs(x)
    if ax == 0.0 or not (ax < np.inf):
        # zero, inf and nan pass through
        return x
    e = math.frexp(ax)[1] - 1
    if e < e_min:
        e = e_min
    scale = math.ldexp(1.0, t - 1 - e)
    r = np.rint(ax * scale) / scale
    if r > x_max:
        r = np.inf
    return math.copysign(r, x)


@numba.njit(cache=True)
def _round_array(v, t, e_min, x_max):
    out = np.empty_like(v)
    for i in range(v.shape[0]):
        out[i] = rnd(v[i], t, e_min, x_max)
    return out


def round_scalar(x: float, fmt: "PrecisionFormat | str") -> float:
    fmt = format_of(fmt)
    if fmt.is_identity:
        return float(x)
    return float(rnd(float(x), *fmt.params()))


def round_vector(v, fmt: "PrecisionFormat | str") -> np.ndarray:
    fmt = format_of(fmt)
    v = np.ascontiguousarray(v, dtype=np.float64).ravel()
    if fmt.is_identity:
        return v.copy()
    return _round_array(v, *fmt.params())
