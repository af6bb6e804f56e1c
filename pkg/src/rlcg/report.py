"""Per-matrix benchmark rows, aggregate statistics and their CSV/JSON forms."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInput

__all__ = ["Summary", "BenchRow", "ExperimentReport", "summarize", "precision_distribution", "sig3"]


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    min: float
    max: float
    p25: float
    p75: float


def summarize(values: Iterable[float]) -> Summary:
    """Mean, sample std (n-1; 0 for a single value), extremes and linear-interpolation quartiles."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise EmptyInput("cannot summarize an empty sequence")
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    p25, p75 = np.percentile(v, [25, 75], method="linear")
    return Summary(float(v.mean()), std, float(v.min()), float(v.max()), float(p25), float(p75))


def sig3(x: float) -> str:
    """Three significant digits, for presentation only."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{x:.3g}"


@dataclass
class BenchRow:
    matrix_id: str
    solver: str
    rel_error: float
    iterations: int
    status: str
    precond: str
    histogram: dict[str, int] = field(default_factory=dict)


def precision_distribution(rows: Sequence[BenchRow], precision_set: Sequence[str]) -> dict[str, float]:
    """Share of (operation x iteration x matrix) decisions per precision, in percent."""
    total = Counter()
    for row in rows:
        total.update(row.histogram)
    n = sum(total.values())
    if n == 0:
        return {p: 0.0 for p in precision_set}
    return {p: 100.0 * total[p] / n for p in precision_set}


@dataclass
class ExperimentReport:
    rows: list[BenchRow]
    precision_set: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def solvers(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.solver not in seen:
                seen.append(r.solver)
        return seen

    def rows_for(self, solver: str) -> list[BenchRow]:
        return [r for r in self.rows if r.solver == solver]

    def aggregates(self) -> dict[str, dict[str, Summary]]:
        out = {}
        for s in self.solvers():
            rows = self.rows_for(s)
            out[s] = {
                "error": summarize(r.rel_error for r in rows),
                "iterations": summarize(r.iterations for r in rows),
            }
        return out

    def distribution(self) -> dict[str, dict[str, float]]:
        return {s: precision_distribution(self.rows_for(s), self.precision_set) for s in self.solvers()}

    # -- files --

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "per_matrix.csv", out / "aggregates.csv", out / "precision_distribution.csv",
                 out / "aggregates.json", out / "summary.txt"]

        with open(paths[0], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["matrix_id", "solver", "rel_error", "iterations", "status", "precond",
                        *self.precision_set])
            for r in sorted(self.rows, key=lambda r: (r.matrix_id, r.solver)):
                w.writerow([r.matrix_id, r.solver, repr(r.rel_error), r.iterations, r.status, r.precond,
                            *(r.histogram.get(p, 0) for p in self.precision_set)])

        aggs = self.aggregates()
        with open(paths[1], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["solver", "metric", "mean", "std", "min", "max", "p25", "p75"])
            for s, metrics in aggs.items():
                for m, summ in metrics.items():
                    w.writerow([s, m, *(repr(x) for x in asdict(summ).values())])

        dist = self.distribution()
        with open(paths[2], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["solver", *self.precision_set])
            for s, d in dist.items():
                w.writerow([s, *(repr(d[p]) for p in self.precision_set)])

        doc = {
            "meta": self.meta,
            "aggregates": {s: {m: asdict(v) for m, v in ms.items()} for s, ms in aggs.items()},
            "precision_distribution": dist,
        }
        paths[3].write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        paths[4].write_text(self.format_tables())
        return paths

    def format_tables(self) -> str:
        lines = [f"{'solver':<8}{'metric':<12}" + "".join(f"{h:>11}" for h in
                                                         ("Mean", "Std", "Min", "Max", "25%", "75%"))]
        for s, metrics in self.aggregates().items():
            for m, summ in metrics.items():
                lines.append(f"{s:<8}{m:<12}" + "".join(f"{sig3(x):>11}" for x in asdict(summ).values()))
        lines.append("")
        lines.append(f"{'solver':<8}" + "".join(f"{p:>9}" for p in self.precision_set))
        for s, d in self.distribution().items():
            lines.append(f"{s:<8}" + "".join(f"{sig3(d[p]) + '%':>9}" for p in self.precision_set))
        return "\n".join(lines) + "\n"
