"""Multi-seed sweeps and the ensemble-vs-baseline headline comparison."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ensemble import ExperimentReport, WilcoxonResult, wilcoxon_signed_rank
from .experiment import ExperimentConfig, emit_report, run_experiment


def seed_sweep(config: ExperimentConfig, seeds, out_root=None, progress=None) -> list[ExperimentReport]:
    """Run the experiment once per master seed; optionally emit each report under ``out_root/seed<k>``."""
    reports = []
    for seed in seeds:
        cfg = copy.deepcopy(config)
        cfg.seed = int(seed)
        report, raw = run_experiment(cfg, progress=progress)
        if out_root is not None:
            emit_report(report, Path(out_root) / f"seed{seed}", raw)
        reports.append(report)
    return reports


@dataclass
class Headline:
    datasets: list[str]
    mean: dict[str, np.ndarray]  # method -> per-dataset mean accuracy over seeds (percent)
    beats_single: list[bool]
    beats_baseline: list[bool]
    test: WilcoxonResult  # candidate vs baseline over (dataset, seed) pairs

    @property
    def single_ok(self) -> bool:
        return all(self.beats_single)

    @property
    def baseline_ok(self) -> bool:
        return sum(self.beats_baseline) >= 2

    def lines(self) -> list[str]:
        width = max(len(m) for m in self.mean)
        out = [" " * width + "  " + "  ".join(f"{d:>9}" for d in self.datasets)]
        out += [f"{m:<{width}}  " + "  ".join(f"{v:9.2f}" for v in vals) for m, vals in self.mean.items()]
        return out


def headline(reports: list[ExperimentReport], candidate: str, single: str, baseline: str) -> Headline:
    """Compare seed-averaged accuracies of ``candidate`` against ``single`` and ``baseline``."""
    datasets = reports[0].datasets
    stack = {m: np.array([r.accuracy[r.methods.index(m)] for r in reports]) for m in (candidate, single, baseline)}
    mean = {m: v.mean(axis=0) for m, v in stack.items()}
    test = wilcoxon_signed_rank(stack[candidate].ravel(), stack[baseline].ravel())
    return Headline(datasets, mean, [bool(v) for v in mean[candidate] >= mean[single]],
                    [bool(v) for v in mean[candidate] >= mean[baseline]], test)
