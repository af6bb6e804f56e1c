"""Test-problem families: sparse random SPD systems and randomized 2D Poisson.

Every generator is a pure function of its spec (seed included), and every
sampled parameter is returned so instances can be recorded in a manifest.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np
import scipy.sparse as sp

from .errors import RlcgError
from .precond import IlutFactors, build_preconditioner
from .sparsela import CsrMatrix, direct_solve

__all__ = [
    "SparseRandomSpec",
    "PoissonSpec",
    "Problem",
    "Family",
    "gen_sparse_spd",
    "gen_poisson2d",
    "make_problem_set",
    "TEST_SEED_OFFSET",
]

log = logging.getLogger(__name__)

# test instances draw seeds from base_seed + TEST_SEED_OFFSET + i
TEST_SEED_OFFSET = 1_000_000


class Family(str, enum.Enum):
    SPARSE = "sparse"
    POISSON = "poisson"


@dataclass(frozen=True)
class SparseRandomSpec:
    n: int = 500
    n_pairs: Optional[int] = None  # defaults to n
    beta_range: tuple[float, float] = (1e-4, 1e-2)
    sparsity_scale_range: tuple[float, float] = (1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.n_pairs is not None and self.n_pairs < 0:
            raise ValueError("n_pairs must be nonnegative")
        for lo, hi in (self.beta_range, self.sparsity_scale_range):
            if not 0 < lo <= hi:
                raise ValueError("ranges must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class PoissonSpec:
    nx: int = 40
    ny: int = 40
    seed: int = 0
    domain: tuple[float, float] = (0.0, 2.0)
    # forces a subdomain / boundary data / source instead of sampling them
    subdomain: Optional[tuple[float, float, float, float]] = None
    boundary: Optional[dict] = None
    source: Optional[dict] = None
    amplitude_range: tuple[float, float] = (-1.0, 1.0)
    frequency_range: tuple[float, float] = (0.5, 3.0)  # multiples of pi

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("nx and ny must be positive")


@dataclass(eq=False)
class Problem:
    id: str
    family: Family
    seed: int
    A: CsrMatrix
    b: np.ndarray
    x_true: np.ndarray
    M: IlutFactors
    params: dict[str, Any] = field(default_factory=dict)

    @property
    def fallback(self) -> bool:
        return self.M.fallback

    def as_training_tuple(self):
        return self.A, self.b, self.M


# -- synthetic sparse SPD -----------------------------------------------------


def gen_sparse_spd(spec: SparseRandomSpec) -> tuple[CsrMatrix, np.ndarray, dict]:
    """A = B B^T + beta I with B holding randomly placed N(0, 1) entries."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    base_pairs = n if spec.n_pairs is None else spec.n_pairs
    scale = float(rng.uniform(*spec.sparsity_scale_range))
    n_pairs = int(round(scale * base_pairs))
    rows = rng.integers(0, n, size=n_pairs)
    cols = rng.integers(0, n, size=n_pairs)
    vals = rng.standard_normal(n_pairs)
    beta = float(rng.uniform(*spec.beta_range))
    # duplicate index pairs add up
    B = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    BBt = (B @ B.T).tocsr()
    # exact symmetry: B B^T may differ from its transpose in the last bit
    BBt = sp.triu(BBt, format="csr")
    A = BBt + sp.triu(BBt, k=1, format="csr").T + beta * sp.identity(n, format="csr")
    b = rng.standard_normal(n)
    params = {"n": n, "n_pairs": n_pairs, "sparsity_scale": scale, "beta": beta, "rhs": "standard_normal"}
    return CsrMatrix.from_scipy(A), b, params


# -- 2D Poisson -----------------------------------------------------------------

EDGES = ("left", "right", "bottom", "top")


def _sample_subdomain(rng, lo, hi):
    width = hi - lo
    a = lo + rng.uniform(0.0, 0.95 * width)
    b = a + rng.uniform(0.05 * width, hi - a)
    return float(a), float(b)


def _sample_boundary(rng, spec: PoissonSpec) -> dict:
    amp = spec.amplitude_range
    out = {}
    for edge in EDGES:
        kind = ("constant", "linear", "sinusoidal")[int(rng.integers(3))]
        if kind == "constant":
            out[edge] = {"kind": kind, "c": float(rng.uniform(*amp))}
        elif kind == "linear":
            out[edge] = {"kind": kind, "c0": float(rng.uniform(*amp)), "c1": float(rng.uniform(*amp))}
        else:
            out[edge] = {
                "kind": kind,
                "amplitude": float(rng.uniform(*amp)),
                "frequency": float(rng.uniform(*spec.frequency_range) * math.pi),
            }
    return out


def _sample_source(rng, spec: PoissonSpec) -> dict:
    amp = spec.amplitude_range
    kind = ("zero", "sinusoidal", "polynomial")[int(rng.integers(3))]
    if kind == "zero":
        return {"kind": kind}
    if kind == "sinusoidal":
        return {
            "kind": kind,
            "amplitude": float(rng.uniform(*amp)),
            "kx": float(rng.uniform(*spec.frequency_range) * math.pi),
            "ky": float(rng.uniform(*spec.frequency_range) * math.pi),
        }
    # c00 + c10 x + c01 y + c20 x^2 + c11 x y + c02 y^2
    return {"kind": kind, "coeffs": [float(c) for c in rng.uniform(*amp, size=6)]}


def _boundary_value(g: dict, s: np.ndarray) -> np.ndarray:
    """Evaluate edge data at tangential coordinate ``s``."""
    if g["kind"] == "constant":
        return np.full_like(s, g["c"])
    if g["kind"] == "linear":
        return g["c0"] + g["c1"] * s
    if g["kind"] == "sinusoidal":
        return g["amplitude"] * np.sin(g["frequency"] * s)
    raise ValueError(f"unknown boundary kind {g['kind']!r}")


def _source_value(f: dict, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if f["kind"] == "zero":
        return np.zeros_like(x)
    if f["kind"] == "sinusoidal":
        return f["amplitude"] * np.sin(f["kx"] * x) * np.sin(f["ky"] * y)
    if f["kind"] == "polynomial":
        c = f["coeffs"]
        return c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
    raise ValueError(f"unknown source kind {f['kind']!r}")


def _laplacian_1d(m: int, h: float) -> sp.csr_matrix:
    return sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(m, m), format="csr") / (h * h)


def gen_poisson2d(spec: PoissonSpec) -> tuple[CsrMatrix, np.ndarray, dict]:
    """Five-point discretization of -Δu = f with Dirichlet data on a random subdomain.

    Unknowns are ordered row-major with y outermost: index = j * nx + i.
    """
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.domain
    if spec.subdomain is not None:
        ax, bx, ay, by = spec.subdomain
    else:
        ax, bx = _sample_subdomain(rng, lo, hi)
        ay, by = _sample_subdomain(rng, lo, hi)
    if not (lo <= ax < bx <= hi and lo <= ay < by <= hi):
        raise ValueError("subdomain must lie inside the outer domain")
    bc = spec.boundary if spec.boundary is not None else _sample_boundary(rng, spec)
    src = spec.source if spec.source is not None else _sample_source(rng, spec)

    nx, ny = spec.nx, spec.ny
    hx, hy = (bx - ax) / (nx + 1), (by - ay) / (ny + 1)
    xs = ax + hx * np.arange(1, nx + 1)
    ys = ay + hy * np.arange(1, ny + 1)

    Tx, Ty = _laplacian_1d(nx, hx), _laplacian_1d(ny, hy)
    A = sp.kron(sp.identity(ny), Tx) + sp.kron(Ty, sp.identity(nx))

    X, Y = np.meshgrid(xs, ys)  # shape (ny, nx), row j is y_j
    rhs = _source_value(src, X, Y)
    rhs[:, 0] += _boundary_value(bc["left"], ys) / hx**2
    rhs[:, -1] += _boundary_value(bc["right"], ys) / hx**2
    rhs[0, :] += _boundary_value(bc["bottom"], xs) / hy**2
    rhs[-1, :] += _boundary_value(bc["top"], xs) / hy**2

    params = {
        "nx": nx,
        "ny": ny,
        "subdomain": [ax, bx, ay, by],
        "hx": hx,
        "hy": hy,
        "boundary": bc,
        "source": src,
    }
    return CsrMatrix.from_scipy(A), rhs.ravel(), params


# -- problem sets -----------------------------------------------------------------


def make_problem_set(
    family: "Family | str",
    count: int,
    base_seed: int = 0,
    split: str = "train",
    spec: "SparseRandomSpec | PoissonSpec | None" = None,
    drop_tol: float = 1e-4,
    fill_factor: float = 10.0,
    storage_fmt: str = "fp32",
) -> list[Problem]:
    """Generate ``count`` systems with reference solutions and ILUT preconditioners.

    Seeds are ``base_seed + i`` for the train split and
    ``base_seed + TEST_SEED_OFFSET + i`` for the test split. Instances whose
    generation or reference solve fails are logged and skipped.
    """
    family = Family(family)
    if count < 1:
        raise ValueError("count must be at least 1")
    if split not in ("train", "test"):
        raise ValueError("split must be 'train' or 'test'")
    if spec is None:
        spec = SparseRandomSpec() if family is Family.SPARSE else PoissonSpec()
    if family is Family.SPARSE and split == "test" and spec.sparsity_scale_range == (1.0, 1.0):
        spec = replace(spec, sparsity_scale_range=(0.8, 1.2))
    offset = base_seed + (TEST_SEED_OFFSET if split == "test" else 0)

    out = []
    for i in range(count):
        seed = offset + i
        s = replace(spec, seed=seed)
        try:
            A, b, params = gen_sparse_spd(s) if family is Family.SPARSE else gen_poisson2d(s)
            x_true = direct_solve(A, b)
            M = build_preconditioner(A, drop_tol, fill_factor, storage_fmt)
        except (RlcgError, ValueError) as exc:
            log.warning("skipping %s instance with seed %d: %s", family.value, seed, exc)
            continue
        params = dict(params, precond="jacobi" if M.fallback else "ilut", drop_tol=drop_tol,
                      fill_factor=fill_factor, storage_fmt=storage_fmt)
        out.append(Problem(f"{family.value}-{split}-{i:04d}", family, seed, A, b, x_true, M, params))
    return out
