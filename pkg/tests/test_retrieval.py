import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_problem
from jtm.model import zero_params
from jtm.retrieval import beam_search, brute_force_topk, count_scored_nodes, format_result
from jtm.tree import TreeIndex, init_random


def _query(seed, tree, n=5):
    r = np.random.default_rng(seed)
    return [int(x) for x in r.choice(sorted(tree.leaf_of), size=n)]


def planted_path_model(tree, favourite):
    """Only target nodes on the favourite item's path get a positive logit."""
    p = zero_params(tree.l_max, emb_dim=1, hidden_dims=(1,), window_len=2)
    for node in tree.path(favourite)[1:]:
        p.embeddings[node, 0] = 1.0
    p.weights[0][1, 0] = 1.0
    p.weights[1][0, 0] = 1.0
    return p


class TestBeamSearch:
    @given(st.integers(0, 2000))
    @settings(max_examples=30, deadline=None)
    def test_exhaustive_beam_equals_scan(self, seed):
        r = np.random.default_rng(seed)
        params, tree, _ = random_problem(seed, n_items=int(r.integers(1, 64)))
        q = _query(seed, tree)
        k = len(tree.leaf_of)
        m = int(r.integers(1, k + 1))
        beam = beam_search(params, tree, q, k, m)
        scan = brute_force_topk(params, tree, q, m)
        assert beam.items == scan.items
        assert beam.scores == scan.scores

    def test_planted_argmax_path(self):
        tree = init_random(range(32), seed=4)
        params = planted_path_model(tree, 17)
        assert beam_search(params, tree, [3], 1, 1).items == [17]

    def test_dead_subtrees_never_scored(self):
        tree = TreeIndex(3, {0: 8, 1: 9, 2: 10})
        params, _, _ = random_problem(0, n_items=8)
        res = beam_search(params.__class__(**{**params.__dict__, "l_max": 3}), tree, [], 4, 2)
        for nodes in res.trace:
            assert all(tree.occupancy[n] > 0 for n in nodes)
        assert 3 not in res.trace[0]

    def test_scores_sorted_and_items_distinct(self):
        params, tree, _ = random_problem(5, n_items=50)
        res = beam_search(params, tree, _query(1, tree), 8, 8)
        assert res.scores == sorted(res.scores, reverse=True)
        assert len(set(res.items)) == len(res.items) == 8

    def test_deterministic(self):
        params, tree, _ = random_problem(6, n_items=40)
        q = _query(2, tree)
        assert beam_search(params, tree, q, 5, 3) == beam_search(params, tree, q, 5, 3)

    def test_needs_beam_at_least_result(self):
        params, tree, _ = random_problem(0)
        with pytest.raises(ValueError):
            beam_search(params, tree, [], 2, 3)

    def test_recall_non_decreasing_in_beam(self):
        params, tree, _ = random_problem(7, n_items=60)
        m = 5
        recalls = []
        for k in (5, 10, 20, 40, 60):
            hits = 0
            for seed in range(30):
                q = _query(seed, tree)
                truth = set(brute_force_topk(params, tree, q, m).items)
                hits += len(truth & set(beam_search(params, tree, q, k, m).items))
            recalls.append(hits / (30 * m))
        assert all(b >= a for a, b in zip(recalls, recalls[1:])), recalls
        assert recalls[-1] == 1.0


class TestBruteForce:
    def test_all_items(self):
        params, tree, _ = random_problem(8, n_items=12)
        res = brute_force_topk(params, tree, [], 50)
        assert sorted(res.items) == sorted(tree.leaf_of)
        assert res.scores == sorted(res.scores, reverse=True)

    def test_ties_by_node(self):
        tree = TreeIndex(2, {7: 6, 3: 5})
        res = brute_force_topk(zero_params(2, 2, (2,), 2), tree, [], 2)
        assert res.items == [3, 7]

    def test_zero_m(self):
        params, tree, _ = random_problem(0)
        with pytest.raises(ValueError):
            brute_force_topk(params, tree, [], 0)


class TestScoredNodes:
    @given(st.integers(0, 500), st.integers(1, 16))
    @settings(max_examples=40, deadline=None)
    def test_bound(self, seed, k):
        params, tree, _ = random_problem(seed, n_items=int(np.random.default_rng(seed).integers(2, 64)))
        res = beam_search(params, tree, _query(seed, tree), k, 1)
        assert count_scored_nodes(res.trace) <= 2 * k * tree.l_max

    def test_k1_three_levels(self):
        params, tree, _ = random_problem(3, n_items=8)
        assert count_scored_nodes(beam_search(params, tree, [], 1, 1)) <= 6

    def test_full_beam_is_full_scan_order(self):
        params, tree, _ = random_problem(4, n_items=16)
        res = beam_search(params, tree, [], 16, 1)
        assert count_scored_nodes(res) == 2 + 4 + 8 + 16

    def test_doubling_adds_at_most_2k(self):
        k = 4
        counts = []
        for L in (5, 6):
            params, tree, _ = random_problem(L, n_items=2 ** L)
            counts.append(count_scored_nodes(beam_search(params, tree, [], k, 1)))
        assert counts[1] - counts[0] <= 2 * k


def test_output_format():
    from jtm.retrieval import RetrievalResult

    assert format_result(7, RetrievalResult([3, 9], [1.5, -0.25])) == "7\t3:1.500000,9:-0.250000"
