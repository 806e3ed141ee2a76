import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cofind.core import Bag, Episode
from cofind.potentials import (
    CosineRelation,
    Potentials,
    RelationModel,
    RelationProvider,
    TableProvider,
    UnaryMode,
    aggregate_unary,
    cosine_baseline_provider,
    embed_pair,
    relation_score,
    unary_potential,
    unary_scores,
)

from conftest import random_episode


def reference_score(f, g, m):
    """Loop-level re-implementation of the gated scorer."""
    x = list(f) + list(g)
    d = len(f)
    total = m.b
    for k in range(d):
        a1 = sum(m.W1[k, t] * x[t] for t in range(2 * d)) + m.b1[k]
        a2 = sum(m.W2[k, t] * x[t] for t in range(2 * d)) + m.b2[k]
        h = math.tanh(a1) / (1.0 + math.exp(-a2)) + 0.5 * (f[k] + g[k])
        total += m.w[k] * h
    return total


class TestRelationModel:
    def test_scalar_embedding(self):
        m = RelationModel([[1.0, 0.0]], [[0.0, 0.0]], [0.0], [0.0], [1.0], 0.0)
        # tanh(1) * sigmoid(0) + (1 + 0) / 2, evaluated independently
        assert embed_pair([1.0], [0.0], m)[0] == pytest.approx(0.8807970779778824, abs=1e-12)

    def test_matches_loop_reference(self, rng):
        m = RelationModel.random(3, rng, scale=0.8)
        m = RelationModel(m.W1, m.W2, rng.normal(size=3), rng.normal(size=3), m.w, 0.3)
        for _ in range(5):
            f, g = rng.normal(size=3), rng.normal(size=3)
            assert relation_score(f, g, m) == pytest.approx(reference_score(f, g, m), abs=1e-12)

    def test_not_symmetric(self, rng):
        m = RelationModel.random(4, rng, scale=1.0)
        f, g = rng.normal(size=4), rng.normal(size=4)
        assert relation_score(f, g, m) != pytest.approx(relation_score(g, f, m))

    def test_batched_scores_match_single(self, rng):
        m = RelationModel.random(3, rng, scale=0.5)
        F, G = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        batched = m.pair_scores(F, G)
        singles = [relation_score(f, g, m) for f, g in zip(F, G)]
        np.testing.assert_allclose(batched, singles, atol=1e-12)

    def test_compiled_scores_match(self, rng):
        m = RelationModel.random(3, rng, scale=0.5)
        X = rng.normal(size=(7, 3))
        ia, ib = rng.integers(7, size=10), rng.integers(7, size=10)
        np.testing.assert_allclose(m.compile(X)(ia, ib), m.pair_scores(X[ia], X[ib]), atol=1e-12)

    def test_dimension_checks(self, rng):
        m = RelationModel.random(3, rng)
        with pytest.raises(ValueError):
            m.pair_scores(np.zeros((1, 2)), np.zeros((1, 2)))
        with pytest.raises(ValueError):
            RelationModel(np.zeros((2, 4)), np.zeros((2, 3)), np.zeros(2), np.zeros(2), np.zeros(2), 0.0)

    def test_vector_round_trip(self, rng):
        m = RelationModel.random(3, rng, nu=2.5)
        assert m.from_vector(m.to_vector()) == m
        assert m.to_vector().size == 2 * (2 * 9) + 3 * 3 + 1 + 1

    def test_file_round_trip_is_bit_exact(self, rng, tmp_path):
        m = RelationModel.random(5, rng, scale=1.0 / 3.0, nu=0.1)
        m.save(tmp_path / "m.json")
        again = RelationModel.load(tmp_path / "m.json")
        assert again == m
        assert again.to_vector().tobytes() == m.to_vector().tobytes()

    def test_from_dict_missing_field(self):
        with pytest.raises(ValueError, match="W2"):
            RelationModel.from_dict({"W1": [[0.0, 0.0]]})


class TestCosine:
    def test_identical_vectors(self):
        assert CosineRelation().pair_scores([1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.0)

    def test_zero_vector_scores_zero(self):
        assert CosineRelation().pair_scores([0.0, 0.0], [1.0, 2.0]) == 0.0

    def test_baseline_pairwise_is_negative_cosine(self):
        bags = (Bag([[1.0, 0.0]]), Bag([[1.0, 1.0]]))
        provider = cosine_baseline_provider(2)(Episode(bags))
        assert provider.pairwise(1, 0, 0, 0) == pytest.approx(-1 / np.sqrt(2))

    def test_baseline_checks_dimension(self):
        with pytest.raises(ValueError):
            cosine_baseline_provider(3)(Episode((Bag([[1.0, 0.0]]), Bag([[1.0, 1.0]]))))


class TestAggregation:
    def test_softmax_value(self):
        # (1 e^1 + 2 e^2) / (e^1 + e^2)
        assert aggregate_unary([1.0, 2.0], 1.0, "softmax") == pytest.approx(1.7310585786300049, abs=1e-12)

    def test_modes(self):
        u = np.array([[1.0, 4.0, -2.0]])
        np.testing.assert_allclose(aggregate_unary(u, 3.0, UnaryMode.MEAN), [1.0])
        np.testing.assert_allclose(aggregate_unary(u, 3.0, UnaryMode.MAX), [4.0])
        np.testing.assert_allclose(aggregate_unary(u, 3.0, UnaryMode.NONE), [0.0])

    def test_negative_temperature_is_clamped(self):
        u = [0.0, 1.0, 5.0]
        assert aggregate_unary(u, -4.0, "softmax") == pytest.approx(np.mean(u))

    def test_no_overflow_for_large_temperature(self):
        assert aggregate_unary([1000.0, 999.0], 1e6, "softmax") == pytest.approx(1000.0)

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
           st.floats(0, 100))
    @settings(max_examples=200, deadline=None)
    def test_softmax_between_mean_and_max(self, u, nu):
        value = aggregate_unary(u, nu, "softmax")
        assert np.mean(u) - 1e-9 <= value <= np.max(u) + 1e-9

    @given(arrays(np.float64, 6, elements=st.floats(-5, 5)), st.floats(0, 10), st.floats(0, 10))
    @settings(max_examples=200, deadline=None)
    def test_softmax_monotone_in_temperature(self, u, a, b):
        lo, hi = sorted((a, b))
        assert aggregate_unary(u, lo, "softmax") <= aggregate_unary(u, hi, "softmax") + 1e-9

    def test_unary_potential_against_scores(self, rng):
        m = RelationModel.random(3, rng, scale=0.5, nu=2.0)
        neg = Bag(rng.normal(size=(4, 3)))
        e = rng.normal(size=3)
        u = unary_scores(e, neg, m)
        assert unary_potential(e, neg, m, "softmax") == pytest.approx(aggregate_unary(u, 2.0, "softmax"))
        assert unary_potential(e, None, m, "softmax") == 0.0
        with pytest.raises(ValueError):
            unary_scores(e, None, m)


class TestProviders:
    def test_relation_provider_values(self, rng):
        ep = random_episode(rng, [3, 2, 4], dim=3)
        pw, un = RelationModel.random(3, rng, 0.5), RelationModel.random(3, rng, 0.5, nu=1.5)
        provider = RelationProvider(ep, pw, un, "softmax")
        f, g = ep.positive_bags[2].features[1], ep.positive_bags[0].features[2]
        assert provider.pairwise(2, 1, 0, 2) == pytest.approx(-relation_score(f, g, pw))
        expected = [unary_potential(x, ep.negative_bag, un, "softmax") for x in ep.positive_bags[1].features]
        np.testing.assert_allclose(provider.unary(1), expected, atol=1e-12)

    def test_canonical_order_enforced(self):
        provider = TableProvider.from_sizes([2, 2], {})
        with pytest.raises(ValueError):
            provider.pairwise_block(0, 1, [0], [0])

    def test_cross_either_order(self, rng):
        provider = TableProvider.random([2, 3], rng)
        np.testing.assert_array_equal(provider.cross(0, 1, [0, 1], [2]), provider.cross(1, 0, [2], [0, 1]).T)

    def test_counts_unique_evaluations(self, rng):
        provider = TableProvider.random([3, 4, 2], rng)
        assert provider.pairwise_total_possible == 3 * 4 + 3 * 2 + 4 * 2
        provider.pairwise_block(1, 0, [0, 0, 1], [2, 2])
        assert provider.pairwise_evaluated == 2
        provider.pairwise_block(1, 0, [0, 1, 2], [2])
        assert provider.pairwise_evaluated == 3
        provider.pairwise(1, 0, 0, 2)
        assert provider.pairwise_evaluated == 3

    def test_lazy_scorer_calls(self, rng):
        calls = []

        class Counting(CosineRelation):
            def compile(self, X):
                inner = super().compile(X)
                return lambda ia, ib: calls.append(len(ia)) or inner(ia, ib)

        provider = Potentials(Counting(), None, "none")(random_episode(rng, [5, 5]))
        provider.pairwise(1, 0, 0, 0)
        provider.pairwise(1, 0, 0, 0)
        assert calls == [1]

    def test_concurrent_reads_agree(self, rng):
        ep = random_episode(rng, [6, 6, 6], dim=3)
        provider = Potentials(RelationModel.random(3, rng, 0.5))(ep)
        reference = Potentials(provider.pairwise_scorer)(ep)
        results = []

        def worker(seed):
            r = np.random.default_rng(seed)
            for _ in range(50):
                i, j = sorted(r.choice(3, size=2, replace=False))[::-1]
                p, q = r.integers(6, size=2)
                results.append(provider.pairwise(i, p, j, q) == reference.pairwise(i, p, j, q))

        threads = [threading.Thread(target=worker, args=(s,)) for s in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(results) and provider.pairwise_evaluated <= provider.pairwise_total_possible

    def test_no_unary_without_negative_bag(self, rng):
        ep = random_episode(rng, [2, 2], negative=0)
        provider = Potentials(CosineRelation(), CosineRelation(), "softmax")(ep)
        np.testing.assert_array_equal(provider.unary(0), [0.0, 0.0])

    def test_table_shape_validation(self):
        with pytest.raises(ValueError):
            TableProvider.from_sizes([2, 2], {(1, 0): np.zeros((3, 2))})
