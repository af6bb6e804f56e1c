import csv
import math

import numpy as np
import pytest

from conftest import random_spd
from rlcg.cgsolver import (
    CgConfig,
    CgIteration,
    PrecisionAction,
    SolveStatus,
    cg_solve,
    fixed_policy,
    write_trace_csv,
)
from rlcg.precond import ilut_factor
from rlcg.problems import PoissonSpec, gen_poisson2d
from rlcg.sparsela import CsrMatrix, direct_solve


def identity_M(n):
    return ilut_factor(CsrMatrix.identity(n))


def rel_err(x, x_true):
    return np.linalg.norm(x - x_true) / np.linalg.norm(x_true)


def fp64_run(A, b, M, steps):
    cfg = CgConfig(tol=1e-14, max_iters=1000, min_iters=0)
    it = CgIteration(A, b, M, cfg, "fp64")
    xs, rs = [it.x], [it.r]
    for _ in range(steps):
        out = it.step(PrecisionAction.uniform("fp64"))
        if out.breakdown or out.converged:
            break
        xs.append(it.x)
        rs.append(it.r)
    return xs, rs


def test_identity_system_one_step():
    b = np.eye(3)[0]
    res = cg_solve(CsrMatrix.identity(3), b, identity_M(3), fixed_policy("fp64"), CgConfig(min_iters=0))
    assert res.status is SolveStatus.CONVERGED
    assert res.iterations == 1
    np.testing.assert_array_equal(res.x, b)


@pytest.mark.parametrize("seed", range(5))
def test_fp64_cg_invariants(seed):
    n = 50
    A = random_spd(n, seed, density=0.1)
    b = np.random.default_rng(seed).standard_normal(n)
    M = identity_M(n)
    xs, rs = fp64_run(A, b, M, 40)
    As = A.to_scipy()
    bn = np.linalg.norm(b)
    for x, r in zip(xs, rs):
        assert np.linalg.norm(r - (b - As @ x)) / bn <= 1e-10
    first = rs[:10]
    for i in range(len(first)):
        for j in range(i):
            ri, rj = first[i], first[j]
            assert abs(ri @ rj) / (np.linalg.norm(ri) * np.linalg.norm(rj)) <= 1e-8
    phi = [0.5 * x @ (As @ x) - b @ x for x in xs]
    assert all(p1 <= p0 + 1e-12 * abs(p0) for p0, p1 in zip(phi, phi[1:]))

    res = cg_solve(A, b, M, fixed_policy("fp64"), CgConfig(tol=1e-6))
    assert res.status is SolveStatus.CONVERGED
    assert rel_err(res.x, direct_solve(A, b)) <= 1e-6


def test_fp32_vs_fp64():
    A = random_spd(50, 11, density=0.1)
    b = np.random.default_rng(1).standard_normal(50)
    M = ilut_factor(A)
    x_true = direct_solve(A, b)
    r64 = cg_solve(A, b, M, fixed_policy("fp64"))
    r32 = cg_solve(A, b, M, fixed_policy("fp32"))
    assert r64.status is SolveStatus.CONVERGED
    assert r32.status in (SolveStatus.CONVERGED, SolveStatus.BREAKDOWN)
    assert rel_err(r32.x, x_true) >= rel_err(r64.x, x_true)
    assert rel_err(r32.x, x_true) <= 1e-4


def test_nu_underflow_breaks_down():
    # fl16(1e-9) is below half the smallest fp16 subnormal, so q = 0 and nu = 0
    A = CsrMatrix.from_dense(np.diag([1e-9, 1e-9]))
    b = np.array([1.0, 1.0])
    res = cg_solve(A, b, identity_M(2), fixed_policy("fp16"), CgConfig(min_iters=0))
    assert res.status is SolveStatus.BREAKDOWN
    assert res.iterations == 1
    assert math.isnan(res.trace[0].rho_next)
    np.testing.assert_array_equal(res.x, [0.0, 0.0])


def test_breakdown_returns_best_iterate():
    A0 = random_spd(30, 2)
    A = CsrMatrix(A0.n, A0.row_ptr, A0.col_idx, A0.values * 1e5)
    b = np.random.default_rng(2).standard_normal(30)

    def policy(k, rho):
        return PrecisionAction.uniform("fp64" if k < 3 else "fp16")

    res = cg_solve(A, b, ilut_factor(A, 0.5, 1), policy, CgConfig(min_iters=0, tol=1e-12))
    assert res.status is SolveStatus.BREAKDOWN
    assert np.all(np.isfinite(res.x))
    finite = [rec.rho_next for rec in res.trace if math.isfinite(rec.rho_next)]
    assert res.rho_final == min(finite)
    true_rho = np.linalg.norm(b - A.to_scipy() @ res.x) / np.linalg.norm(b)
    assert true_rho == pytest.approx(res.rho_final, rel=1e-6)


def test_min_iters_and_status_invariants():
    A, b, _ = gen_poisson2d(PoissonSpec(nx=10, ny=10, seed=1))
    M = ilut_factor(A)
    cfg = CgConfig()
    res = cg_solve(A, b, M, fixed_policy("fp64"), cfg)
    assert res.status is SolveStatus.CONVERGED
    assert res.iterations == 11
    assert res.rho_final < cfg.tol
    assert len(res.trace) == res.iterations
    assert [r.k for r in res.trace] == list(range(res.iterations))
    assert all(a == PrecisionAction.uniform("fp64") for a in res.actions())
    assert res.trace[-1].beta is None


def test_max_iters_status():
    A = random_spd(40, 3, shift=1e-3)
    b = np.ones(40)
    res = cg_solve(A, b, identity_M(40), fixed_policy("fp64"), CgConfig(max_iters=3, min_iters=0, tol=1e-12))
    assert res.status is SolveStatus.MAX_ITERS
    assert res.iterations == 3


def test_initial_action_sets_z0_precision():
    A = random_spd(20, 4)
    b = np.random.default_rng(4).standard_normal(20)
    calls = []

    def policy(k, rho):
        calls.append((k, rho))
        return PrecisionAction("fp64", "bf16" if k == 0 else "fp64", "fp64", "fp64")

    res = cg_solve(A, b, ilut_factor(A), policy, CgConfig(min_iters=0))
    assert calls[0] == (0, 1.0)
    assert [k for k, _ in calls] == list(range(res.iterations))
    it = CgIteration(A, b, ilut_factor(A), CgConfig(), "bf16")
    it64 = CgIteration(A, b, ilut_factor(A), CgConfig(), "fp64")
    assert not np.array_equal(it.z, it64.z)


def test_determinism_and_action_validation():
    A, b, _ = gen_poisson2d(PoissonSpec(nx=8, ny=8, seed=5))
    M = ilut_factor(A)

    def mixed(k, rho):
        return PrecisionAction(*(("bf16", "tf32", "fp32", "fp64")[(k + j) % 4] for j in range(4)))

    r1, r2 = cg_solve(A, b, M, mixed), cg_solve(A, b, M, mixed)
    assert np.array_equal(r1.x, r2.x) and r1.trace == r2.trace
    with pytest.raises(ValueError):
        cg_solve(A, b, M, fixed_policy("q52"))
    with pytest.raises(ValueError):
        CgConfig(tol=0.0)
    with pytest.raises(ValueError):
        CgConfig(min_iters=10, max_iters=10)


def test_trace_csv(tmp_path):
    A, b, _ = gen_poisson2d(PoissonSpec(nx=6, ny=6, seed=6))
    res = cg_solve(A, b, ilut_factor(A), fixed_policy("fp32"))
    write_trace_csv(tmp_path / "t.csv", res.trace)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["k", "rho", "p1", "p2", "p3", "p4", "alpha", "beta"]
    assert len(rows) == res.iterations + 1
    assert float(rows[1][1]) == res.trace[0].rho
    assert rows[1][2:6] == ["fp32"] * 4
