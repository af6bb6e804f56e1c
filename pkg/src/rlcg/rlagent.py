"""Tabular Q-learning over CG iterations.

One Q-table per controlled operation, indexed by a discretized
(iteration, residual-ratio) state and the precision chosen for that operation.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .cgsolver import CgConfig, CgIteration, PrecisionAction, Policy
from .errors import CorruptFile, FormatVersionMismatch
from .precision import EXPERIMENT_PRECISIONS, format_of
from .precond import IlutFactors
from .sparsela import CsrMatrix

__all__ = [
    "COST_C1",
    "COST_C2",
    "MdpConfig",
    "RewardConfig",
    "TrainConfig",
    "QPolicy",
    "EpisodeLog",
    "discretize",
    "reward",
    "select_action",
    "greedy_action",
    "greedy_policy",
    "q_update",
    "epsilon_schedule",
    "train",
    "save_policy",
    "load_policy",
]

log = logging.getLogger(__name__)

N_OPS = 4
POLICY_VERSION = 1

COST_C1 = {"bf16": 0.6, "fp16": 0.8, "tf32": 0.8, "fp32": 1.0, "fp64": 2.0}
COST_C2 = {"bf16": 0.4, "fp16": 0.5, "tf32": 0.5, "fp32": 1.5, "fp64": 3.0}


@dataclass(frozen=True)
class MdpConfig:
    b: int = 10  # iteration bins
    r: int = 10  # residual bins
    T_max: int = 1000
    eps_min: float = 1e-16

    def __post_init__(self):
        if self.b < 1 or self.r < 1 or self.T_max < 1:
            raise ValueError("b, r and T_max must be positive")
        if not 0 < self.eps_min < 1:
            raise ValueError("eps_min must lie in (0, 1)")

    @property
    def delta(self) -> float:
        return -math.log10(self.eps_min) / self.r

    @property
    def n_states(self) -> int:
        return self.b * self.r


@dataclass(frozen=True)
class RewardConfig:
    w1: float = 1.0
    w2: float = 0.1
    w3: float = 10.0
    tau: float = 1e-6
    cost: Mapping[str, float] = field(default_factory=lambda: dict(COST_C1))
    eps_min: float = 1e-16

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("reward weights must be nonnegative")
        if any(c <= 0 for c in self.cost.values()):
            raise ValueError("costs must be positive")

    def check_covers(self, precision_set: Sequence[str]) -> None:
        missing = [p for p in precision_set if p not in self.cost]
        if missing:
            raise ValueError(f"cost map lacks precisions {missing}")


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 200  # per training matrix
    learning_rate: float = 0.1
    discount: float = 0.9
    eps0: float = 1.0
    eps_floor: float = 0.1
    seed: int = 0
    shuffle: bool = False

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be nonnegative")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 <= self.discount < 1:
            raise ValueError("discount must lie in [0, 1)")
        if not 0 <= self.eps0 <= 1 or not 0 <= self.eps_floor <= self.eps0:
            raise ValueError("need 0 <= eps0 <= 1 and 0 <= eps_floor <= eps0")


@dataclass(eq=False)
class QPolicy:
    tables: np.ndarray  # (4, b*r, |P|)
    mdp: MdpConfig
    precision_set: tuple[str, ...]
    trained_episodes: int = 0

    @classmethod
    def zeros(cls, mdp: MdpConfig, precision_set: Sequence[str] = EXPERIMENT_PRECISIONS) -> "QPolicy":
        ps = tuple(format_of(p).name for p in precision_set)
        return cls(np.zeros((N_OPS, mdp.n_states, len(ps))), mdp, ps)

    def __post_init__(self):
        self.precision_set = tuple(self.precision_set)
        expected = (N_OPS, self.mdp.n_states, len(self.precision_set))
        if self.tables.shape != expected:
            raise ValueError(f"Q-table shape {self.tables.shape} does not match {expected}")

    def index(self, tag: str) -> int:
        return self.precision_set.index(tag)

    def __eq__(self, other):
        if not isinstance(other, QPolicy):
            return NotImplemented
        return (
            self.mdp == other.mdp
            and self.precision_set == other.precision_set
            and self.trained_episodes == other.trained_episodes
            and self.tables.shape == other.tables.shape
            and self.tables.tobytes() == other.tables.tobytes()
        )


@dataclass(frozen=True)
class EpisodeLog:
    episode: int
    matrix: int
    epsilon: float
    final_rho: float
    iterations: int
    cumulative_reward: float
    status: str


# -- MDP pieces -------------------------------------------------------------


def discretize(k: int, rho: float, mdp: MdpConfig) -> int:
    width = math.ceil(mdp.T_max / mdp.b)
    i = min(k // width, mdp.b - 1)
    level = -math.log10(max(rho, mdp.eps_min))
    # residual ratios above 1 share the first bin
    j = min(max(math.floor(level / mdp.delta), 0), mdp.r - 1)
    return i * mdp.r + j


def reward(rho_next: float, action: PrecisionAction, rcfg: RewardConfig) -> float:
    accuracy = min(-math.log10(max(rho_next, rcfg.eps_min)), -math.log10(rcfg.eps_min))
    cost = sum(rcfg.cost[p] for p in action.tags)
    bonus = 1.0 if rho_next < rcfg.tau else 0.0
    return rcfg.w1 * accuracy - rcfg.w2 * cost + rcfg.w3 * bonus


def _argmax(row: np.ndarray, tie_key: Sequence[float]) -> int:
    best = row.max()
    cands = np.flatnonzero(row == best)
    return int(min(cands, key=lambda i: (tie_key[i], i)))


def _tie_key(q: QPolicy, costs: Optional[Mapping[str, float]]) -> list[float]:
    if costs is None:
        return [0.0] * len(q.precision_set)
    return [costs[p] for p in q.precision_set]


def greedy_action(s: int, q: QPolicy, costs: Optional[Mapping[str, float]] = None) -> PrecisionAction:
    """Argmax per table; ties go to the cheapest precision, then the lowest index."""
    key = _tie_key(q, costs)
    ps = q.precision_set
    return PrecisionAction(*(ps[_argmax(q.tables[j, s], key)] for j in range(N_OPS)))


def select_action(
    s: int,
    q: QPolicy,
    epsilon: float,
    rng: np.random.Generator,
    costs: Optional[Mapping[str, float]] = None,
) -> PrecisionAction:
    """Epsilon-greedy, decided independently for each operation."""
    key = _tie_key(q, costs)
    ps = q.precision_set
    tags = []
    for j in range(N_OPS):
        if rng.random() < epsilon:
            tags.append(ps[int(rng.integers(len(ps)))])
        else:
            tags.append(ps[_argmax(q.tables[j, s], key)])
    return PrecisionAction(*tags)


def greedy_policy(q: QPolicy, costs: Optional[Mapping[str, float]] = None) -> Policy:
    def policy(k: int, rho: float) -> PrecisionAction:
        return greedy_action(discretize(k, rho, q.mdp), q, costs)

    return policy


def q_update(
    q: QPolicy,
    s: int,
    action: PrecisionAction,
    R: float,
    s_next: Optional[int],
    alpha: float,
    gamma: float,
) -> None:
    """In-place TD update of every table; ``s_next=None`` marks a terminal step."""
    for j, tag in enumerate(action.tags):
        p = q.index(tag)
        target = R if s_next is None else R + gamma * q.tables[j, s_next].max()
        q.tables[j, s, p] += alpha * (target - q.tables[j, s, p])


def epsilon_schedule(e: int, tcfg: TrainConfig, total: Optional[int] = None) -> float:
    total = tcfg.episodes if total is None else total
    if total <= 0:
        return tcfg.eps0
    return max(tcfg.eps0 * (1.0 - e / total), tcfg.eps_floor)


# -- training -----------------------------------------------------------------


def train(
    problems: Sequence[tuple[CsrMatrix, np.ndarray, IlutFactors]],
    mdp: MdpConfig = MdpConfig(),
    rcfg: RewardConfig = RewardConfig(),
    tcfg: TrainConfig = TrainConfig(),
    cg: CgConfig = CgConfig(),
    history: Optional[list] = None,
) -> QPolicy:
    """Run ``tcfg.episodes`` Q-learning episodes per training system.

    Exploration decays over the global episode counter. A numerical breakdown
    ends the episode with a terminal update; its reward is computed from the
    last finite residual ratio, or reuses the previous step's reward when the
    residual itself became non-finite.
    """
    if not problems:
        raise ValueError("need at least one training problem")
    rcfg.check_covers(cg.precision_set)
    q = QPolicy.zeros(mdp, cg.precision_set)
    rng = np.random.default_rng(tcfg.seed)

    schedule = [i for i in range(len(problems)) for _ in range(tcfg.episodes)]
    if tcfg.shuffle:
        rng.shuffle(schedule)
    total = len(schedule)
    alpha, gamma = tcfg.learning_rate, tcfg.discount

    for e, m in enumerate(schedule):
        A, b, M = problems[m]
        eps = epsilon_schedule(e, tcfg, total)
        s = discretize(0, 1.0, mdp)
        action = select_action(s, q, eps, rng, rcfg.cost)
        it = CgIteration(A, b, M, cg, action.p2)
        last_R, total_R, status, steps = 0.0, 0.0, "max_iters", 0

        if it.broken:
            q_update(q, s, action, last_R, None, alpha, gamma)
            status = "breakdown"
        else:
            for k in range(cg.max_iters):
                if k > 0:
                    s = discretize(k, it.rho, mdp)
                    action = select_action(s, q, eps, rng, rcfg.cost)
                out = it.step(action)
                steps += 1
                rho_next = out.record.rho_next
                if out.breakdown:
                    R = reward(rho_next, action, rcfg) if math.isfinite(rho_next) else last_R
                    q_update(q, s, action, R, None, alpha, gamma)
                    total_R += R
                    status = "breakdown"
                    break
                R = reward(rho_next, action, rcfg)
                total_R += R
                last_R = R
                if out.converged:
                    q_update(q, s, action, R, None, alpha, gamma)
                    status = "converged"
                    break
                q_update(q, s, action, R, discretize(k + 1, rho_next, mdp), alpha, gamma)

        q.trained_episodes += 1
        if history is not None:
            history.append(EpisodeLog(e, m, eps, it.rho, steps, total_R, status))
    return q


# -- persistence --------------------------------------------------------------

OP_NAMES = ("matvec", "precond", "dot_pq", "dot_rz")


def _checksum(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_policy(q: QPolicy, path) -> None:
    payload = {
        "version": POLICY_VERSION,
        "mdp": asdict(q.mdp),
        "precision_set": list(q.precision_set),
        "tables": {name: q.tables[j].tolist() for j, name in enumerate(OP_NAMES)},
        "trained_episodes": q.trained_episodes,
    }
    payload["checksum"] = _checksum(payload)
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_policy(
    path,
    mdp: Optional[MdpConfig] = None,
    precision_set: Optional[Sequence[str]] = None,
) -> QPolicy:
    """Load and verify a policy file; optionally require a matching MDP/precision set."""
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    if not isinstance(payload, dict) or "checksum" not in payload:
        raise CorruptFile(f"{path}: missing checksum")
    checksum = payload.pop("checksum")
    if _checksum(payload) != checksum:
        raise CorruptFile(f"{path}: checksum mismatch")
    if payload.get("version") != POLICY_VERSION:
        raise FormatVersionMismatch(f"{path}: version {payload.get('version')!r}, expected {POLICY_VERSION}")

    file_mdp = MdpConfig(**payload["mdp"])
    ps = tuple(payload["precision_set"])
    if mdp is not None and mdp != file_mdp:
        raise FormatVersionMismatch(f"{path}: MDP {file_mdp} differs from expected {mdp}")
    if precision_set is not None and tuple(precision_set) != ps:
        raise FormatVersionMismatch(f"{path}: precision set {ps} differs from expected {tuple(precision_set)}")

    expected = (file_mdp.n_states, len(ps))
    tables = []
    for name in OP_NAMES:
        t = np.asarray(payload["tables"][name], dtype=np.float64)
        if t.shape != expected:
            raise FormatVersionMismatch(f"{path}: table {name} has shape {t.shape}, expected {expected}")
        tables.append(t)
    return QPolicy(np.stack(tables), file_mdp, ps, int(payload["trained_episodes"]))
