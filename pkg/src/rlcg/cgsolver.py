"""Preconditioned CG with per-iteration precision control.

Four operations follow the policy's action: the matrix-vector product (p1),
the preconditioner solve (p2) and the two inner products (p3 for p^T q,
p4 for r^T z). Scalars, the solution/residual updates and the direction
update stay in double precision.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .precision import EXPERIMENT_PRECISIONS, EmulationMode, format_of
from .precond import IlutFactors, apply_precond
from .sparsela import CsrMatrix, axpy_fp64, dot_emulated, matvec_emulated, norm2_fp64

__all__ = [
    "PrecisionAction",
    "CgConfig",
    "IterationRecord",
    "SolveStatus",
    "SolveResult",
    "StepOutcome",
    "CgIteration",
    "cg_solve",
    "fixed_policy",
    "write_trace_csv",
]


@dataclass(frozen=True)
class PrecisionAction:
    p1: str  # matvec
    p2: str  # preconditioner solve
    p3: str  # p^T q
    p4: str  # r^T z

    @classmethod
    def uniform(cls, tag: str) -> "PrecisionAction":
        return cls(tag, tag, tag, tag)

    @property
    def tags(self) -> tuple[str, str, str, str]:
        return (self.p1, self.p2, self.p3, self.p4)


Policy = Callable[[int, float], PrecisionAction]


@dataclass(frozen=True)
class CgConfig:
    tol: float = 1e-6
    max_iters: int = 1000
    # convergence is accepted only once the 0-based iteration index reaches this
    min_iters: int = 10
    emulation_mode: EmulationMode = EmulationMode.STRICT
    precision_set: tuple[str, ...] = EXPERIMENT_PRECISIONS

    def __post_init__(self):
        object.__setattr__(self, "emulation_mode", EmulationMode.parse(self.emulation_mode))
        object.__setattr__(self, "precision_set", tuple(format_of(p).name for p in self.precision_set))
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if not 0 <= self.min_iters < self.max_iters:
            raise ValueError("need 0 <= min_iters < max_iters")
        if not self.precision_set:
            raise ValueError("precision_set must be nonempty")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    rho: float
    action: PrecisionAction
    alpha: float
    beta: Optional[float]
    rho_next: float


class SolveStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    BREAKDOWN = "breakdown"


@dataclass
class SolveResult:
    x: np.ndarray
    status: SolveStatus
    iterations: int
    trace: list[IterationRecord] = field(default_factory=list)
    rho_final: float = math.nan

    def actions(self) -> list[PrecisionAction]:
        return [rec.action for rec in self.trace]


@dataclass(frozen=True)
class StepOutcome:
    record: IterationRecord
    converged: bool = False
    breakdown: bool = False


def _finite(v) -> bool:
    return bool(np.all(np.isfinite(v)))


class CgIteration:
    """Mutable CG state advanced one iteration at a time.

    Shared by :func:`cg_solve` and the Q-learning trainer so both execute the
    same arithmetic. ``initial_p2`` picks the precision of z0 = M^{-1} r0.
    """

    def __init__(self, A: CsrMatrix, b, M: IlutFactors, cfg: CgConfig, initial_p2: str):
        b = np.ascontiguousarray(b, dtype=np.float64).ravel()
        if b.size != A.n or M.n != A.n:
            raise ValueError("dimension mismatch between A, b and M")
        self.A, self.M, self.cfg = A, M, cfg
        self.mode = cfg.emulation_mode
        self.b_norm = norm2_fp64(b)
        if not self.b_norm > 0:
            raise ValueError("right-hand side must be nonzero")
        self.k = 0
        self.x = np.zeros_like(b)
        self.r = b.copy()
        self.rho = 1.0
        self.best_x, self.best_rho = self.x, self.rho
        self.z = apply_precond(M, self.r, initial_p2, self.mode)
        self.p = self.z.copy()
        self.sigma = dot_emulated(self.r, self.z, "fp64", self.mode)
        self.broken = not (_finite(self.z) and math.isfinite(self.sigma) and self.sigma != 0.0)

    def _breakdown(self, action, rho, rho_next, alpha=math.nan) -> StepOutcome:
        self.broken = True
        rec = IterationRecord(self.k, rho, action, alpha, None, rho_next)
        return StepOutcome(rec, breakdown=True)

    def step(self, action: PrecisionAction) -> StepOutcome:
        if self.broken:
            raise RuntimeError("CG iteration has broken down")
        mode = self.mode
        k, rho = self.k, self.rho
        q = matvec_emulated(self.A, self.p, action.p1, mode)
        nu = dot_emulated(self.p, q, action.p3, mode)
        if not (math.isfinite(nu) and nu > 0.0):
            return self._breakdown(action, rho, math.nan)
        alpha = self.sigma / nu
        if not math.isfinite(alpha):
            return self._breakdown(action, rho, math.nan)
        x = axpy_fp64(alpha, self.p, self.x)
        r = axpy_fp64(-alpha, q, self.r)
        rho_next = norm2_fp64(r) / self.b_norm
        if not (math.isfinite(rho_next) and _finite(x)):
            return self._breakdown(action, rho, math.nan, alpha)

        self.x, self.r, self.rho = x, r, rho_next
        if rho_next < self.best_rho:
            self.best_x, self.best_rho = x, rho_next

        if rho_next < self.cfg.tol and k >= self.cfg.min_iters:
            self.k += 1
            return StepOutcome(IterationRecord(k, rho, action, alpha, None, rho_next), converged=True)

        z = apply_precond(self.M, r, action.p2, mode)
        sigma_next = dot_emulated(r, z, action.p4, mode)
        if not (_finite(z) and math.isfinite(sigma_next) and sigma_next != 0.0):
            return self._breakdown(action, rho, rho_next, alpha)
        beta = sigma_next / self.sigma
        if not math.isfinite(beta):
            return self._breakdown(action, rho, rho_next, alpha)
        self.z = z
        self.p = axpy_fp64(beta, self.p, z)
        self.sigma = sigma_next
        self.k += 1
        return StepOutcome(IterationRecord(k, rho, action, alpha, beta, rho_next))


def cg_solve(A: CsrMatrix, b, M: IlutFactors, policy: Policy, cfg: CgConfig = CgConfig()) -> SolveResult:
    """Solve ``A x = b`` with precisions chosen by ``policy(k, rho_k)`` each iteration.

    The action for iteration 0 also sets the precision of the initial
    preconditioner solve. On breakdown the iterate with the smallest residual
    ratio seen so far is returned.
    """
    allowed = set(cfg.precision_set)
    action = policy(0, 1.0)
    _check_action(action, allowed)
    it = CgIteration(A, b, M, cfg, action.p2)
    trace: list[IterationRecord] = []
    if it.broken:
        return SolveResult(it.best_x.copy(), SolveStatus.BREAKDOWN, 0, trace, it.best_rho)

    for k in range(cfg.max_iters):
        if k > 0:
            action = policy(k, it.rho)
            _check_action(action, allowed)
        out = it.step(action)
        trace.append(out.record)
        if out.breakdown:
            return SolveResult(it.best_x.copy(), SolveStatus.BREAKDOWN, len(trace), trace, it.best_rho)
        if out.converged:
            return SolveResult(it.x.copy(), SolveStatus.CONVERGED, len(trace), trace, it.rho)
    return SolveResult(it.x.copy(), SolveStatus.MAX_ITERS, len(trace), trace, it.rho)


def _check_action(action: PrecisionAction, allowed: set) -> None:
    bad = [t for t in action.tags if t not in allowed]
    if bad:
        raise ValueError(f"action uses precisions outside the configured set: {bad}")


def fixed_policy(fmt: str) -> Policy:
    action = PrecisionAction.uniform(format_of(fmt).name)

    def policy(k: int, rho: float) -> PrecisionAction:
        return action

    return policy


TRACE_COLUMNS = ("k", "rho", "p1", "p2", "p3", "p4", "alpha", "beta")


def write_trace_csv(path, trace: Sequence[IterationRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for rec in trace:
            beta = "" if rec.beta is None else repr(rec.beta)
            w.writerow([rec.k, repr(rec.rho), *rec.action.tags, repr(rec.alpha), beta])
