"""CSR storage and the precision-emulated kernels used inside CG.

Strict kernels round every operand, every product and every partial sum;
Fast kernels round the operands and the final result only. Accumulation is
always left to right in index order, so the fp64 variants reproduce a plain
double loop bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularMatrix
from .precision import EmulationMode, PrecisionFormat, format_of, rnd

__all__ = [
    "CsrMatrix",
    "matvec_emulated",
    "dot_emulated",
    "axpy_fp64",
    "norm2_fp64",
    "direct_solve",
    "write_matrix_market",
    "read_matrix_market",
    "write_vector",
    "read_vector",
]


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for name, dtype in (("row_ptr", np.int64), ("col_idx", np.int64), ("values", np.float64)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    def validate(self) -> None:
        n, rp, ci = self.n, self.row_ptr, self.col_idx
        if rp.shape != (n + 1,) or rp[0] != 0 or rp[-1] != ci.size or ci.size != self.values.size:
            raise ValueError("inconsistent CSR arrays")
        if np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if ci.size and (ci.min() < 0 or ci.max() >= n):
            raise ValueError("column index out of range")
        rows = np.repeat(np.arange(n), np.diff(rp))
        same_row = rows[1:] == rows[:-1]
        if np.any(np.diff(ci)[same_row] <= 0):
            raise ValueError("column indices must be strictly increasing within rows")

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @classmethod
    def from_scipy(cls, m) -> "CsrMatrix":
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"matrix must be square, got {m.shape}")
        return cls(m.shape[0], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)))

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"))

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values.copy(), self.col_idx.copy(), self.row_ptr.copy()), shape=(self.n, self.n)
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()

    def is_symmetric(self) -> bool:
        """Structural and exact value symmetry."""
        m = self.to_scipy()
        t = m.T.tocsr()
        t.sort_indices()
        return (
            np.array_equal(m.indptr, t.indptr)
            and np.array_equal(m.indices, t.indices)
            and np.array_equal(m.data, t.data)
        )

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.nnz else 0.0

    def __eq__(self, other):
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values, other.values)
        )


# -- compiled kernels -------------------------------------------------------


@numba.njit(cache=True)
def _matvec_strict(row_ptr, col_idx, values, v, t, e_min, x_max):
    n = row_ptr.shape[0] - 1
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(row_ptr[i], row_ptr[i + 1]):
            a = rnd(values[k], t, e_min, x_max)
            x = rnd(v[col_idx[k]], t, e_min, x_max)
            s = rnd(s + rnd(a * x, t, e_min, x_max), t, e_min, x_max)
        out[i] = s
    return out


@numba.njit(cache=True)
def _matvec_fast(row_ptr, col_idx, values, v, t, e_min, x_max):
    n = row_ptr.shape[0] - 1
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(row_ptr[i], row_ptr[i + 1]):
            s += rnd(values[k], t, e_min, x_max) * rnd(v[col_idx[k]], t, e_min, x_max)
        out[i] = rnd(s, t, e_min, x_max)
    return out


@numba.njit(cache=True)
def _dot_strict(u, v, t, e_min, x_max):
    s = 0.0
    for i in range(u.shape[0]):
        p = rnd(rnd(u[i], t, e_min, x_max) * rnd(v[i], t, e_min, x_max), t, e_min, x_max)
        s = rnd(s + p, t, e_min, x_max)
    return s


@numba.njit(cache=True)
def _dot_fast(u, v, t, e_min, x_max):
    s = 0.0
    for i in range(u.shape[0]):
        s += rnd(u[i], t, e_min, x_max) * rnd(v[i], t, e_min, x_max)
    return rnd(s, t, e_min, x_max)


@numba.njit(cache=True)
def _sumsq(v):
    s = 0.0
    for i in range(v.shape[0]):
        s += v[i] * v[i]
    return s


def _vec(v) -> np.ndarray:
    return np.ascontiguousarray(v, dtype=np.float64).ravel()


def matvec_emulated(
    A: CsrMatrix,
    v,
    fmt: "PrecisionFormat | str",
    mode: "EmulationMode | str" = EmulationMode.STRICT,
) -> np.ndarray:
    v = _vec(v)
    if v.size != A.n:
        raise ValueError(f"dimension mismatch: matrix {A.n}, vector {v.size}")
    fmt = format_of(fmt)
    kernel = _matvec_strict if EmulationMode.parse(mode) is EmulationMode.STRICT else _matvec_fast
    return kernel(A.row_ptr, A.col_idx, A.values, v, *fmt.params())


def dot_emulated(
    u,
    v,
    fmt: "PrecisionFormat | str",
    mode: "EmulationMode | str" = EmulationMode.STRICT,
) -> float:
    u, v = _vec(u), _vec(v)
    if u.size != v.size:
        raise ValueError(f"length mismatch: {u.size} vs {v.size}")
    fmt = format_of(fmt)
    kernel = _dot_strict if EmulationMode.parse(mode) is EmulationMode.STRICT else _dot_fast
    return float(kernel(u, v, *fmt.params()))


def axpy_fp64(alpha: float, x, y) -> np.ndarray:
    """Return ``y + alpha * x`` in double precision."""
    x, y = _vec(x), _vec(y)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    return y + float(alpha) * x


def norm2_fp64(v) -> float:
    return math.sqrt(_sumsq(_vec(v)))


def direct_solve(A: CsrMatrix, b) -> np.ndarray:
    """Reference solution via sparse LU. Never used inside the iterative loop."""
    b = _vec(b)
    threshold = 1e-14 * A.max_abs()
    try:
        lu = spla.splu(A.to_scipy().tocsc())
    except RuntimeError as exc:
        raise SingularMatrix(str(exc)) from exc
    pivots = np.abs(lu.U.diagonal())
    if pivots.size and pivots.min() < threshold:
        raise SingularMatrix(f"pivot {pivots.min():.3e} below {threshold:.3e}")
    return lu.solve(b)


# -- file formats -----------------------------------------------------------


def write_matrix_market(path, A: CsrMatrix, comment: str = "") -> None:
    m = A.to_scipy()
    symmetry = "symmetric" if A.is_symmetric() else "general"
    if symmetry == "symmetric":
        m = sp.tril(m, format="coo")
    scipy.io.mmwrite(str(path), m, comment=comment, field="real", precision=17, symmetry=symmetry)


def read_matrix_market(path) -> CsrMatrix:
    path = Path(path)
    if not path.exists() and path.with_suffix(".mtx").exists():
        path = path.with_suffix(".mtx")
    return CsrMatrix.from_scipy(scipy.io.mmread(str(path)))


def write_vector(path, v) -> None:
    np.savetxt(path, _vec(v), fmt="%.17g")


def read_vector(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(path, dtype=np.float64))
