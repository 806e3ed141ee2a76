"""Benchmark harness: method runner, success statistics, eta grid search, one-shot evaluation."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Episode, success_rate
from .inference import (
    ExhaustiveCapError,
    InferenceResult,
    exhaustive_infer,
    greedy_infer,
    icm_infer,
    loopy_bp_infer,
    unary_only_infer,
)
from .potentials import Potentials, UnaryMode, cosine_baseline_provider
from .synth import OneShotEpisode

ALGORITHMS = ("greedy", "exhaustive", "loopy-bp", "icm", "unary-only", "pairwise-only")
DEFAULT_ETA_GRID = tuple(round(0.1 * i, 1) for i in range(25))
CI_METHOD = "normal approximation: mean +/- 1.96 * s / sqrt(n)"


def confidence_interval(samples: Sequence[float]) -> tuple:
    """Mean and 95% half-width ``1.96 * s / sqrt(n)`` with ``s`` the sample std."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise ValueError("a confidence interval needs at least 2 samples")
    return float(x.mean()), float(1.96 * x.std(ddof=1) / np.sqrt(x.size))


@dataclass(frozen=True)
class BenchConfig:
    k: int = 300
    eta: float = 1.0
    bp_max_iters: int = 200
    bp_damping: float = 0.5
    bp_tol: float = 1e-6
    icm_restarts: int = 10
    seed: int = 0
    exhaustive_cap: int = 10**6


def split_method(name: str) -> tuple:
    """``"cosine-greedy"`` -> ``("cosine", "greedy")``; unprefixed names use learned potentials."""
    family, algo = ("cosine", name[len("cosine-"):]) if name.startswith("cosine-") else ("learned", name)
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown method {name!r}; algorithms are {ALGORITHMS}")
    return family, algo


def run_method(algo: str, provider, config: BenchConfig, eta: Optional[float] = None,
               episode_index: int = 0) -> InferenceResult:
    """Run one algorithm on a fresh provider, timing only the inference call."""
    eta = config.eta if eta is None else eta
    start = time.perf_counter()
    if algo == "greedy":
        res = greedy_infer(provider, config.k, eta)
    elif algo == "pairwise-only":
        res = greedy_infer(provider, config.k, 0.0)
    elif algo == "exhaustive":
        res = exhaustive_infer(provider, eta, config.exhaustive_cap)
    elif algo == "loopy-bp":
        res = loopy_bp_infer(provider, eta, config.bp_max_iters, config.bp_damping, config.bp_tol)
    elif algo == "icm":
        res = icm_infer(provider, eta, config.icm_restarts, seed=config.seed + episode_index)
    elif algo == "unary-only":
        res = unary_only_infer(provider, eta)
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    res.seconds = time.perf_counter() - start
    res.method = algo
    return res


@dataclass
class ReportRow:
    method: str
    success_mean: float
    success_ci: float
    energy_mean: float
    seconds_mean: float
    pairwise_fraction_mean: float
    episodes: int
    skipped: bool = False


@dataclass
class BenchmarkReport:
    rows: list
    records: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    TIME_COLUMNS = ("seconds_mean", "seconds")

    def row(self, method: str) -> ReportRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def without_timing(self) -> tuple:
        """Rows and records with wall-time columns removed, for determinism checks."""
        rows = [{k: v for k, v in asdict(r).items() if k not in self.TIME_COLUMNS} for r in self.rows]
        recs = [{k: v for k, v in r.items() if k not in self.TIME_COLUMNS} for r in self.records]
        return rows, recs

    def write_csv(self, path) -> None:
        names = list(ReportRow.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for r in self.rows:
                writer.writerow([getattr(r, n) for n in names])

    def write_records(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")

    def write_runtime_vs_accuracy(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "mean_time", "mean_success"])
            for r in self.rows:
                if not r.skipped:
                    writer.writerow([r.method, r.seconds_mean, r.success_mean])


def _row(method: str, results: list, successes: list) -> ReportRow:
    if len(successes) >= 2:
        mean, half = confidence_interval(successes)
    else:
        mean, half = (float(successes[0]) if successes else float("nan")), float("nan")
    return ReportRow(
        method=method,
        success_mean=mean,
        success_ci=half,
        energy_mean=float(np.mean([r.energy for r in results])),
        seconds_mean=float(np.mean([r.seconds for r in results])),
        pairwise_fraction_mean=float(np.mean([r.pairwise_fraction for r in results])),
        episodes=len(results),
    )


def run_benchmark(episodes: Sequence[Episode], potentials: Optional[Potentials],
                  methods: Sequence[str], config: BenchConfig = BenchConfig(),
                  baseline: Optional[Potentials] = None, etas: Optional[dict] = None) -> BenchmarkReport:
    """Run every method over every episode, each with a fresh instrumented provider.

    ``etas`` optionally maps a method name to its own eta (e.g. from grid
    search); other methods use ``config.eta``.
    """
    if not episodes:
        raise ValueError("no episodes to benchmark")
    if any(not ep.is_labeled or ep.target_class is None for ep in episodes):
        raise ValueError("benchmark episodes must be labeled with a target class")
    etas = etas or {}
    rows, records = [], []
    for method in methods:
        family, algo = split_method(method)
        if family == "cosine":
            pots = baseline
            if pots is None:
                mode = potentials.unary_mode if potentials is not None else UnaryMode.SOFTMAX
                pots = cosine_baseline_provider(episodes[0].dim, mode)
        else:
            pots = potentials
            if pots is None:
                raise ValueError(f"method {method!r} needs learned potentials")
        eta = etas.get(method, config.eta)
        results, successes = [], []
        try:
            for idx, ep in enumerate(episodes):
                res = run_method(algo, pots(ep), config, eta, episode_index=idx)
                res.method = method
                succ = success_rate(res.selection, ep)
                results.append(res)
                successes.append(succ)
                records.append({"episode": idx, **res.to_record(), "success": succ})
        except ExhaustiveCapError:
            records[:] = [r for r in records if r["method"] != method]
            nan = float("nan")
            rows.append(ReportRow(method, nan, nan, nan, nan, nan, 0, skipped=True))
            continue
        rows.append(_row(method, results, successes))
    meta = {"ci": CI_METHOD, "config": asdict(config), "etas": {m: etas.get(m, config.eta) for m in methods}}
    return BenchmarkReport(rows, records, meta)


def score_etas(episodes: Sequence[Episode], potentials: Callable, method: str = "greedy",
               grid: Sequence[float] = DEFAULT_ETA_GRID, config: BenchConfig = BenchConfig()) -> dict:
    """Mean success rate per eta; one provider per episode is shared across the grid."""
    _, algo = split_method(method)
    totals = {float(e): 0.0 for e in grid}
    for idx, ep in enumerate(episodes):
        provider = potentials(ep)
        for eta in totals:
            res = run_method(algo, provider, config, eta, episode_index=idx)
            totals[eta] += success_rate(res.selection, ep)
    return {eta: s / len(episodes) for eta, s in totals.items()}


def grid_search_eta(episodes: Sequence[Episode], potentials: Callable, method: str = "greedy",
                    grid: Sequence[float] = DEFAULT_ETA_GRID,
                    config: BenchConfig = BenchConfig()) -> float:
    """The eta with the best validation success rate; ties go to the smaller eta."""
    if len(grid) == 0:
        raise ValueError("empty eta grid")
    scores = score_etas(episodes, potentials, method, grid, config)
    best = None
    for eta in sorted(scores):
        if best is None or scores[eta] > scores[best]:
            best = eta
    return best


def one_shot_eval(scorer, episodes: Sequence[OneShotEpisode]) -> tuple:
    """Accuracy of labelling each query by its highest-scoring support item (first on ties).

    Returns ``(mean, ci_half_width)`` over episodes.
    """
    hits = []
    for ep in episodes:
        if not isinstance(ep, OneShotEpisode):
            raise TypeError(f"expected OneShotEpisode, got {type(ep).__name__}")
        queries = np.broadcast_to(ep.query, ep.support.shape)
        scores = scorer.pair_scores(queries, ep.support)
        hits.append(float(ep.support_labels[int(np.argmax(scores))] == ep.query_label))
    return confidence_interval(hits)
