import csv
import json

import numpy as np
import pytest

from cofind.bench import (
    BenchConfig,
    confidence_interval,
    grid_search_eta,
    one_shot_eval,
    run_benchmark,
    score_etas,
    split_method,
)
from cofind.potentials import CosineRelation, Potentials, RelationModel
from cofind.synth import GeneratorConfig, generate_episodes, generate_one_shot_episode, iter_episodes
from cofind.training import TrainConfig, train

SMALL = GeneratorConfig(dim=4, noise_sigma=0.05, N=4, B=3, M_range=(3, 6)).with_separation(3.0)


def unary_driven():
    """Constant pairwise scorer, informative cosine unary: only eta > 0 can help."""
    return Potentials(RelationModel.zeros(4), CosineRelation(nu=5.0), "max")


class TestConfidenceInterval:
    def test_two_samples(self):
        mean, half = confidence_interval([0, 1])
        assert mean == 0.5 and half == pytest.approx(0.98, abs=1e-12)

    def test_constant_samples(self):
        assert confidence_interval([0.3] * 5) == (pytest.approx(0.3), 0.0)

    def test_too_few(self):
        with pytest.raises(ValueError):
            confidence_interval([1.0])


class TestMethods:
    def test_split_method(self):
        assert split_method("cosine-loopy-bp") == ("cosine", "loopy-bp")
        assert split_method("icm") == ("learned", "icm")
        with pytest.raises(ValueError):
            split_method("trws")


class TestBenchmark:
    def episodes(self, n=12):
        return generate_episodes(SMALL, "test", n)

    def test_report_rows(self):
        report = run_benchmark(self.episodes(), unary_driven(),
                               ["greedy", "exhaustive", "loopy-bp", "icm", "unary-only", "pairwise-only",
                                "cosine-greedy"], BenchConfig(k=81))
        for row in report.rows:
            assert 0.0 <= row.success_mean <= 1.0 and row.success_ci >= 0.0 and row.episodes == 12
        # k covers every selection of 4 bags of 3 items, so greedy is exact
        assert report.row("greedy").energy_mean == pytest.approx(report.row("exhaustive").energy_mean, abs=1e-9)
        assert len(report.records) == 7 * 12

    def test_exhaustive_over_cap_is_skipped(self):
        report = run_benchmark(self.episodes(3), unary_driven(), ["exhaustive", "greedy"],
                               BenchConfig(exhaustive_cap=10))
        assert report.row("exhaustive").skipped and not report.row("greedy").skipped
        assert all(r["method"] == "greedy" for r in report.records)

    def test_deterministic_except_timing(self):
        methods = ["greedy", "icm", "loopy-bp", "cosine-greedy"]
        a = run_benchmark(self.episodes(), unary_driven(), methods)
        b = run_benchmark(self.episodes(), unary_driven(), methods)
        assert a.without_timing() == b.without_timing()

    def test_outputs(self, tmp_path):
        report = run_benchmark(self.episodes(4), unary_driven(), ["greedy", "unary-only"])
        report.write_csv(tmp_path / "r.csv")
        report.write_records(tmp_path / "r.jsonl")
        report.write_runtime_vs_accuracy(tmp_path / "rt.csv")
        rows = list(csv.DictReader(open(tmp_path / "r.csv")))
        assert [r["method"] for r in rows] == ["greedy", "unary-only"]
        assert len((tmp_path / "r.jsonl").read_text().splitlines()) == 8
        assert json.loads((tmp_path / "r.jsonl").read_text().splitlines()[0])["episode"] == 0
        assert open(tmp_path / "rt.csv").readline().strip() == "method,mean_time,mean_success"

    def test_needs_labels(self):
        ep = self.episodes(1)[0]
        unlabeled = type(ep)(ep.positive_bags, None)
        with pytest.raises(ValueError):
            run_benchmark([unlabeled], unary_driven(), ["greedy"])


class TestEtaSearch:
    def test_unary_weight_helps(self):
        val = generate_episodes(SMALL, "val", 30)
        scores = score_etas(val, unary_driven(), "greedy", [0.0, 1.0])
        assert scores[1.0] > scores[0.0]
        assert grid_search_eta(val, unary_driven(), "greedy", [0.0, 1.0]) == 1.0

    def test_ties_go_to_smaller_eta(self):
        val = generate_episodes(SMALL, "val", 5)
        # every positive eta ranks selections identically when pairwise terms are constant
        assert grid_search_eta(val, unary_driven(), "greedy", [2.0, 0.5, 1.0]) == 0.5

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            grid_search_eta(generate_episodes(SMALL, "val", 2), unary_driven(), "greedy", [])


class TestOneShot:
    def test_constant_scorer_picks_first_support(self):
        rng = np.random.default_rng(0)
        eps = [generate_one_shot_episode(SMALL, "test", rng) for _ in range(2000)]
        mean, _ = one_shot_eval(RelationModel.zeros(4, b=1.0), eps)
        assert mean == pytest.approx(0.2, abs=0.03)

    def test_trained_scorer_is_accurate(self):
        cfg = SMALL.with_separation(6.0)
        tc = TrainConfig(learning_rate=2.0, num_steps=2000, decay_every=500, init_scale=3.0)
        model = train("pairwise", iter_episodes(cfg, "train"), tc).model
        rng = np.random.default_rng(1)
        mean, _ = one_shot_eval(model, [generate_one_shot_episode(cfg, "test", rng) for _ in range(500)])
        assert mean > 0.9
