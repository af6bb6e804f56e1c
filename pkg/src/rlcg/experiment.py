"""Experiment configuration and the gen / train / bench pipeline."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np
import yaml

from .cgsolver import CgConfig, Policy, SolveResult, cg_solve, fixed_policy, write_trace_csv
from .errors import ConfigError
from .precision import EXPERIMENT_PRECISIONS, EmulationMode, format_of
from .problems import Family, PoissonSpec, Problem, SparseRandomSpec, make_problem_set
from .report import BenchRow, ExperimentReport
from .rlagent import (
    COST_C1,
    COST_C2,
    EpisodeLog,
    MdpConfig,
    QPolicy,
    RewardConfig,
    TrainConfig,
    greedy_policy,
    load_policy,
    save_policy,
    train,
)
from .sparsela import write_matrix_market, write_vector

__all__ = [
    "ExperimentConfig",
    "load_config",
    "build_problems",
    "run_training",
    "run_bench",
    "cmd_gen",
    "cmd_train",
    "cmd_bench",
]

log = logging.getLogger(__name__)

COST_SETTINGS = {"C1": COST_C1, "C2": COST_C2}
SCALES = {
    "desk": {"nx": 40, "ny": 40, "n": 500},
    "paper": {"nx": 80, "ny": 80, "n": 5000},
}


@dataclass
class ExperimentConfig:
    family: str = "poisson"
    n_train: int = 10
    n_test: int = 20
    scale: str = "desk"
    # problem size; None means "take it from the scale preset"
    nx: Optional[int] = None
    ny: Optional[int] = None
    n: Optional[int] = None
    n_pairs: Optional[int] = None
    beta_range: tuple[float, float] = (1e-4, 1e-2)
    cost_setting: Union[str, dict] = "C1"
    w1: float = 1.0
    w2: float = 0.1
    w3: float = 10.0
    tol: float = 1e-6
    max_iters: int = 1000
    min_iters: int = 10
    mode: str = "strict"
    precision_set: tuple[str, ...] = EXPERIMENT_PRECISIONS
    episodes: int = 50
    learning_rate: float = 0.1
    discount: float = 0.9
    eps0: float = 1.0
    eps_floor: float = 0.1
    shuffle: bool = False
    bins_iter: int = 10
    bins_residual: int = 10
    eps_min: float = 1e-16
    drop_tol: float = 1e-4
    fill_factor: float = 10.0
    precond_storage: str = "fp32"
    trace_count: int = 3
    seed: int = 0
    out: str = "runs/default"

    def __post_init__(self):
        try:
            self.family = Family(self.family).value
        except ValueError:
            raise ConfigError(f"unknown family {self.family!r}") from None
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {sorted(SCALES)}")
        try:
            self.mode = EmulationMode.parse(self.mode).value
            self.precision_set = tuple(format_of(p).name for p in self.precision_set)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be positive")
        self.beta_range = tuple(self.beta_range)
        cost = self.cost_map
        missing = [p for p in self.precision_set if p not in cost]
        if missing:
            raise ConfigError(f"cost setting lacks precisions {missing}")
        try:
            self.cg_config(), self.mdp_config(), self.train_config(), self.reward_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def cost_map(self) -> dict[str, float]:
        if isinstance(self.cost_setting, Mapping):
            return {format_of(k).name: float(v) for k, v in self.cost_setting.items()}
        try:
            return dict(COST_SETTINGS[str(self.cost_setting).upper()])
        except KeyError:
            raise ConfigError(f"unknown cost setting {self.cost_setting!r}") from None

    @property
    def cost_label(self) -> str:
        return "custom" if isinstance(self.cost_setting, Mapping) else str(self.cost_setting).upper()

    def size(self, key: str) -> int:
        value = getattr(self, key)
        return SCALES[self.scale][key] if value is None else value

    def cg_config(self) -> CgConfig:
        return CgConfig(self.tol, self.max_iters, self.min_iters, EmulationMode(self.mode), self.precision_set)

    def mdp_config(self) -> MdpConfig:
        return MdpConfig(self.bins_iter, self.bins_residual, self.max_iters, self.eps_min)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.episodes, self.learning_rate, self.discount, self.eps0, self.eps_floor,
                           self.seed, self.shuffle)

    def reward_config(self) -> RewardConfig:
        return RewardConfig(self.w1, self.w2, self.w3, self.tol, self.cost_map, self.eps_min)

    def problem_spec(self):
        if self.family == Family.SPARSE.value:
            return SparseRandomSpec(n=self.size("n"), n_pairs=self.n_pairs, beta_range=self.beta_range)
        return PoissonSpec(nx=self.size("nx"), ny=self.size("ny"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["precision_set"] = list(self.precision_set)
        d["beta_range"] = list(self.beta_range)
        return d


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a YAML config; nested sections are flattened and ``None`` overrides ignored."""
    raw: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a mapping at the top level")
        raw = _flatten(loaded)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


_SECTIONS = {"cg", "train", "mdp", "reward", "precond", "problem"}


def _flatten(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if k in _SECTIONS and isinstance(v, dict):
            out.update(v)
        else:
            out[k] = v
    return out


# -- pipeline -----------------------------------------------------------------


def build_problems(cfg: ExperimentConfig, split: str) -> list[Problem]:
    count = cfg.n_train if split == "train" else cfg.n_test
    return make_problem_set(cfg.family, count, cfg.seed, split, cfg.problem_spec(), cfg.drop_tol,
                            cfg.fill_factor, cfg.precond_storage)


def run_training(cfg: ExperimentConfig, problems: Optional[list[Problem]] = None):
    if problems is None:
        problems = build_problems(cfg, "train")
    history: list[EpisodeLog] = []
    q = train([p.as_training_tuple() for p in problems], cfg.mdp_config(), cfg.reward_config(),
              cfg.train_config(), cfg.cg_config(), history)
    return q, history


def relative_error(x, x_true) -> float:
    return float(np.linalg.norm(x - x_true) / np.linalg.norm(x_true))


def _row(problem: Problem, solver: str, res: SolveResult) -> BenchRow:
    hist: dict[str, int] = {}
    for rec in res.trace:
        for tag in rec.action.tags:
            hist[tag] = hist.get(tag, 0) + 1
    return BenchRow(problem.id, solver, relative_error(res.x, problem.x_true), res.iterations,
                    res.status.value, problem.params.get("precond", "ilut"), hist)


def run_bench(
    cfg: ExperimentConfig,
    policy: "QPolicy | Policy",
    problems: Optional[list[Problem]] = None,
    trace_dir=None,
) -> ExperimentReport:
    """Solve every test system with the RL policy and with the fp64 baseline."""
    if problems is None:
        problems = build_problems(cfg, "test")
    if isinstance(policy, QPolicy):
        if policy.precision_set != cfg.precision_set:
            raise ConfigError(f"policy precisions {policy.precision_set} differ from {cfg.precision_set}")
        if policy.mdp != cfg.mdp_config():
            raise ConfigError(f"policy MDP {policy.mdp} differs from configured {cfg.mdp_config()}")
        policy = greedy_policy(policy, cfg.cost_map)
    cg = cfg.cg_config()
    baseline = fixed_policy("fp64")
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)

    rows = []
    for i, p in enumerate(problems):
        for solver, pol in (("rl", policy), ("fp64", baseline)):
            res = cg_solve(p.A, p.b, p.M, pol, cg)
            rows.append(_row(p, solver, res))
            if trace_dir is not None and i < cfg.trace_count:
                write_trace_csv(Path(trace_dir) / f"{solver}_{p.id}.csv", res.trace)
    meta = {
        "family": cfg.family,
        "cost_setting": cfg.cost_label,
        "emulation_mode": cfg.mode,
        "n_test": len(problems),
        "seed": cfg.seed,
    }
    return ExperimentReport(rows, cfg.precision_set, meta)


# -- commands ---------------------------------------------------------------------


def cmd_gen(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": cfg.to_dict(), "instances": []}
    for split in ("train", "test"):
        d = out / split
        d.mkdir(exist_ok=True)
        for p in build_problems(cfg, split):
            write_matrix_market(d / f"{p.id}.mtx", p.A)
            write_vector(d / f"{p.id}_b.txt", p.b)
            write_vector(d / f"{p.id}_x_true.txt", p.x_true)
            manifest["instances"].append({
                "id": p.id,
                "split": split,
                "seed": p.seed,
                "params": p.params,
                "files": {"A": f"{split}/{p.id}.mtx", "b": f"{split}/{p.id}_b.txt",
                          "x_true": f"{split}/{p.id}_x_true.txt"},
            })
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def cmd_train(cfg: ExperimentConfig, policy_path=None) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    policy_path = Path(policy_path) if policy_path else out / "policy.json"
    q, history = run_training(cfg)
    with open(out / "training_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "matrix", "epsilon", "final_rho", "iterations", "cumulative_reward", "status"])
        for h in history:
            w.writerow([h.episode, h.matrix, repr(h.epsilon), repr(h.final_rho), h.iterations,
                        repr(h.cumulative_reward), h.status])
    save_policy(q, policy_path)
    return policy_path


def cmd_bench(cfg: ExperimentConfig, policy_path=None) -> ExperimentReport:
    out = Path(cfg.out)
    policy_path = Path(policy_path) if policy_path else out / "policy.json"
    q = load_policy(policy_path)
    report = run_bench(cfg, q, trace_dir=out / "traces")
    report.write(out)
    return report
