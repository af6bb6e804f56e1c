"""Threshold incomplete LU (ILUT) preconditioner with emulated triangular solves.

The factors are built once per system and stored rounded to a fixed format
(fp32 by default); only the precision of *applying* them changes during CG.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ZeroDiagonal, ZeroPivot
from .precision import EmulationMode, PrecisionFormat, format_of, rnd
from .sparsela import CsrMatrix

__all__ = ["IlutFactors", "ilut_factor", "apply_precond", "jacobi_fallback", "build_preconditioner"]

log = logging.getLogger(__name__)

PIVOT_RTOL = 1e-14


@dataclass(frozen=True, eq=False)
class IlutFactors:
    """``L`` is strictly lower (unit diagonal implied); ``U`` is upper with its diagonal."""

    L: CsrMatrix
    U: CsrMatrix
    storage_fmt: PrecisionFormat
    drop_tol: float
    fill_factor: float
    fallback: bool = False

    @property
    def n(self) -> int:
        return self.U.n

    @property
    def nnz(self) -> int:
        return self.L.nnz + self.U.nnz

    def lower_dense(self) -> np.ndarray:
        return self.L.to_dense() + np.eye(self.n)

    def upper_dense(self) -> np.ndarray:
        return self.U.to_dense()


@numba.njit(cache=True)
def _ilut_kernel(n, indptr, indices, data, drop_tol, fill_factor, pivot_floor, t, e_min, x_max):
    # the per-row budget is shared by both factors, so nnz(L) + nnz(U) <= fill * nnz(A) + n
    caps = np.empty(n, dtype=np.int64)
    for i in range(n):
        caps[i] = max(1, int(fill_factor * (indptr[i + 1] - indptr[i])) // 2)
    # capacity-based row offsets; compacted by the caller
    l_off = np.zeros(n + 1, dtype=np.int64)
    u_off = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        l_off[i + 1] = l_off[i] + caps[i]
        u_off[i + 1] = u_off[i] + caps[i] + 1
    l_cols = np.empty(l_off[n], dtype=np.int64)
    l_vals = np.empty(l_off[n])
    l_len = np.zeros(n, dtype=np.int64)
    u_cols = np.empty(u_off[n], dtype=np.int64)
    u_vals = np.empty(u_off[n])
    u_len = np.zeros(n, dtype=np.int64)
    diag = np.zeros(n)

    w = np.zeros(n)
    marker = np.full(n, -1, dtype=np.int64)
    done = np.full(n, -1, dtype=np.int64)
    pattern = np.empty(n, dtype=np.int64)
    lmag = np.zeros(n)

    for i in range(n):
        cnt = 0
        norm = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            w[j] = data[k]
            marker[j] = i
            pattern[cnt] = j
            cnt += 1
            norm += data[k] * data[k]
        tau = drop_tol * np.sqrt(norm)

        # eliminate lower entries in ascending column order, fill-in included
        while True:
            kmin = n
            for q in range(cnt):
                c = pattern[q]
                if c < i and done[c] != i and c < kmin:
                    kmin = c
            if kmin == n:
                break
            k = kmin
            done[k] = i
            if w[k] == 0.0:
                continue
            # threshold on the entry itself, not the multiplier, so the test
            # is invariant under row scaling
            if abs(w[k]) < tau:
                w[k] = 0.0
                continue
            lmag[k] = abs(w[k])
            piv = w[k] / diag[k]
            w[k] = piv
            # U row k holds the diagonal first, then the off-diagonal entries
            for q in range(u_off[k] + 1, u_off[k] + u_len[k]):
                j = u_cols[q]
                if marker[j] != i:
                    marker[j] = i
                    w[j] = 0.0
                    pattern[cnt] = j
                    cnt += 1
                w[j] -= piv * u_vals[q]

        p = caps[i]
        lo = np.empty(cnt, dtype=np.int64)
        nlo = 0
        up = np.empty(cnt, dtype=np.int64)
        nup = 0
        for q in range(cnt):
            c = pattern[q]
            if c == i or w[c] == 0.0:
                continue
            if c < i:
                lo[nlo] = c
                nlo += 1
            elif abs(w[c]) >= tau:
                up[nup] = c
                nup += 1
        lo = np.sort(lo[:nlo])
        up = np.sort(up[:nup])

        if nlo > p:
            mags = np.empty(nlo)
            for q in range(nlo):
                mags[q] = -lmag[lo[q]]
            keep = np.argsort(mags, kind="mergesort")[:p]
            lo = np.sort(lo[keep])
            nlo = p
        if nup > p:
            mags = np.empty(nup)
            for q in range(nup):
                mags[q] = -abs(w[up[q]])
            keep = np.argsort(mags, kind="mergesort")[:p]
            up = np.sort(up[keep])
            nup = p

        d = w[i] if marker[i] == i else 0.0
        d = rnd(d, t, e_min, x_max)
        if not (abs(d) >= pivot_floor):
            return i, d, l_off, l_cols, l_vals, l_len, u_off, u_cols, u_vals, u_len
        diag[i] = d

        base = l_off[i]
        for q in range(nlo):
            l_cols[base + q] = lo[q]
            l_vals[base + q] = rnd(w[lo[q]], t, e_min, x_max)
        l_len[i] = nlo
        base = u_off[i]
        u_cols[base] = i
        u_vals[base] = d
        for q in range(nup):
            u_cols[base + 1 + q] = up[q]
            u_vals[base + 1 + q] = rnd(w[up[q]], t, e_min, x_max)
        u_len[i] = nup + 1

        for q in range(cnt):
            w[pattern[q]] = 0.0

    return -1, 0.0, l_off, l_cols, l_vals, l_len, u_off, u_cols, u_vals, u_len


def _compact(n, off, cols, vals, lengths) -> CsrMatrix:
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lengths, out=row_ptr[1:])
    take = np.concatenate([np.arange(off[i], off[i] + lengths[i]) for i in range(n)]) if n else []
    take = np.asarray(take, dtype=np.int64)
    return CsrMatrix(n, row_ptr, cols[take], vals[take])


def ilut_factor(
    A: CsrMatrix,
    drop_tol: float = 1e-4,
    fill_factor: float = 10.0,
    storage_fmt: "PrecisionFormat | str" = "fp32",
) -> IlutFactors:
    """Row-wise ILUT with threshold dropping relative to each row's 2-norm and a
    per-row cap of ``fill_factor * nnz(A[i, :]) / 2`` off-diagonal entries in each factor.

    Raises ZeroPivot when a kept diagonal falls below ``1e-14 * max|A|``.
    """
    if drop_tol < 0:
        raise ValueError("drop_tol must be nonnegative")
    if fill_factor < 1:
        raise ValueError("fill_factor must be >= 1")
    fmt = format_of(storage_fmt)
    n = A.n
    bad, pivot, *arrays = _ilut_kernel(
        n, A.row_ptr, A.col_idx, A.values, float(drop_tol), float(fill_factor),
        PIVOT_RTOL * A.max_abs(), *fmt.params(),
    )
    if bad >= 0:
        raise ZeroPivot(int(bad), float(pivot))
    l_off, l_cols, l_vals, l_len, u_off, u_cols, u_vals, u_len = arrays
    L = _compact(n, l_off, l_cols, l_vals, l_len)
    U = _compact(n, u_off, u_cols, u_vals, u_len)
    return IlutFactors(L, U, fmt, float(drop_tol), float(fill_factor))


def jacobi_fallback(A: CsrMatrix, storage_fmt: "PrecisionFormat | str" = "fp32") -> IlutFactors:
    fmt = format_of(storage_fmt)
    d = A.diagonal()
    zero = np.flatnonzero(d == 0)
    if zero.size:
        raise ZeroDiagonal(int(zero[0]))
    n = A.n
    rounded = np.array([rnd(x, *fmt.params()) for x in d]) if not fmt.is_identity else d.copy()
    L = CsrMatrix(n, np.zeros(n + 1, dtype=np.int64), np.empty(0), np.empty(0))
    U = CsrMatrix(n, np.arange(n + 1), np.arange(n), rounded)
    return IlutFactors(L, U, fmt, 0.0, 1.0, fallback=True)


def build_preconditioner(
    A: CsrMatrix,
    drop_tol: float = 1e-4,
    fill_factor: float = 10.0,
    storage_fmt: "PrecisionFormat | str" = "fp32",
) -> IlutFactors:
    """ILUT, falling back to Jacobi on a degenerate pivot."""
    try:
        return ilut_factor(A, drop_tol, fill_factor, storage_fmt)
    except ZeroPivot as exc:
        log.warning("ILUT failed (%s); using Jacobi preconditioner", exc)
        return jacobi_fallback(A, storage_fmt)


# -- application --------------------------------------------------------------


@numba.njit(cache=True)
def _solve_strict(l_ptr, l_cols, l_vals, u_ptr, u_cols, u_vals, r, t, e_min, x_max):
    n = r.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = rnd(r[i], t, e_min, x_max)
        for k in range(l_ptr[i], l_ptr[i + 1]):
            prod = rnd(rnd(l_vals[k], t, e_min, x_max) * y[l_cols[k]], t, e_min, x_max)
            s = rnd(s - prod, t, e_min, x_max)
        y[i] = s
    z = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        d = 1.0
        for k in range(u_ptr[i], u_ptr[i + 1]):
            j = u_cols[k]
            if j == i:
                d = rnd(u_vals[k], t, e_min, x_max)
            else:
                prod = rnd(rnd(u_vals[k], t, e_min, x_max) * z[j], t, e_min, x_max)
                s = rnd(s - prod, t, e_min, x_max)
        z[i] = rnd(s / d, t, e_min, x_max)
    return z


@numba.njit(cache=True)
def _solve_fast(l_ptr, l_cols, l_vals, u_ptr, u_cols, u_vals, r, t, e_min, x_max):
    n = r.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = rnd(r[i], t, e_min, x_max)
        for k in range(l_ptr[i], l_ptr[i + 1]):
            s -= rnd(l_vals[k], t, e_min, x_max) * y[l_cols[k]]
        y[i] = s
    z = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        d = 1.0
        for k in range(u_ptr[i], u_ptr[i + 1]):
            j = u_cols[k]
            if j == i:
                d = rnd(u_vals[k], t, e_min, x_max)
            else:
                s -= rnd(u_vals[k], t, e_min, x_max) * z[j]
        z[i] = s / d
    for i in range(n):
        z[i] = rnd(z[i], t, e_min, x_max)
    return z


def apply_precond(
    M: IlutFactors,
    r,
    fmt: "PrecisionFormat | str",
    mode: "EmulationMode | str" = EmulationMode.STRICT,
) -> np.ndarray:
    """z = U^{-1} L^{-1} r with the solves emulated in ``fmt``."""
    r = np.ascontiguousarray(r, dtype=np.float64).ravel()
    if r.size != M.n:
        raise ValueError(f"dimension mismatch: preconditioner {M.n}, vector {r.size}")
    fmt = format_of(fmt)
    kernel = _solve_strict if EmulationMode.parse(mode) is EmulationMode.STRICT else _solve_fast
    L, U = M.L, M.U
    return kernel(L.row_ptr, L.col_idx, L.values, U.row_ptr, U.col_idx, U.values, r, *fmt.params())
