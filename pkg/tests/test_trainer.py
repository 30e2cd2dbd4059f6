import math

import numpy as np
import pytest

from jtm.corpus import EvalCase
from jtm.errors import DataError
from jtm.model import OptimizerConfig, init_params
from jtm.trainer import JointConfig, eval_checkpoint, run_joint
from jtm.tree import init_by_category, init_random, write_tree

SMALL = dict(emb_dim=4, hidden_dims=(8, 4), window_len=8, loss_instances=600, result_size=5, beam_width=5,
             optimizer=OptimizerConfig("adam", 0.01, 64, 2))


def _config(**kw):
    return JointConfig(**{**SMALL, "iterations": 2, "epochs": 1, **kw})


def _tree(ds):
    return init_by_category(ds.corpus.categories, seed=1)


def test_without_tree_learning_tree_is_unchanged(small_dataset, small_samples, tmp_path):
    tree = _tree(small_dataset)
    write_tree(tree, tmp_path / "init.txt")
    res = run_joint(small_samples, tree, _config(do_tree_learning=False), out_dir=tmp_path / "run")
    assert res.tree == tree
    assert all(r.items_moved == 0 for r in res.records)
    initial = (tmp_path / "init.txt").read_bytes()
    for t in range(2):
        assert (tmp_path / "run" / f"iter_{t}" / "tree.txt").read_bytes() == initial


def test_zero_epochs_keeps_params(small_dataset, small_samples):
    tree = _tree(small_dataset)
    cfg = _config(iterations=1, epochs=0, do_tree_learning=False)
    start = init_params(tree.l_max, 4, (8, 4), 8, rng=np.random.default_rng(0))
    res = run_joint(small_samples, tree, cfg, params=start.copy())
    assert res.params.equals(start)


def test_deterministic_trajectory(small_dataset, small_samples, tmp_path):
    tree = init_random(small_dataset.corpus.items, seed=2)
    cases = small_dataset.eval_cases("validation")
    runs = [run_joint(small_samples, tree, _config(), cases, tmp_path / f"r{i}") for i in range(2)]
    strip = lambda rs: [(r.loss_after_train, r.loss_after_tree, r.items_moved, r.recall) for r in rs]
    assert strip(runs[0].records) == strip(runs[1].records)
    for t in range(2):
        for name in ("tree.txt", "model.bin"):
            a = (tmp_path / "r0" / f"iter_{t}" / name).read_bytes()
            assert a == (tmp_path / "r1" / f"iter_{t}" / name).read_bytes()
    header = (tmp_path / "r0" / "trajectory.csv").read_text().splitlines()[0]
    assert header == "iter,loss_after_train,loss_after_tree,items_moved,seconds"


def test_training_lowers_tracked_bce(small_dataset, small_samples):
    tree = _tree(small_dataset)
    res = run_joint(small_samples, tree, _config(iterations=3, epochs=2))
    for r in res.records:
        assert r.bce_after_train <= r.bce_before_train
        assert math.isfinite(r.loss_after_tree)


def test_flat_variant_runs(small_dataset, small_samples):
    tree = _tree(small_dataset)
    res = run_joint(small_samples, tree, _config(use_hierarchical=False))
    assert res.params.hierarchical is False
    assert len(res.records) == 2


def test_bad_config():
    with pytest.raises(ValueError):
        JointConfig(iterations=0)
    with pytest.raises(ValueError):
        JointConfig(result_size=10, beam_width=5)


class TestEvalCheckpoint:
    def test_full_beam_full_recall(self):
        tree = init_random(range(16), seed=0)
        params = init_params(tree.l_max, 4, (4,), 4, rng=np.random.default_rng(1))
        cases = [EvalCase(1, (0, 1), frozenset({3, 7, 9}))]
        assert eval_checkpoint(params, tree, cases, 16).recall == 1.0

    def test_random_model_near_chance(self):
        n, m = 256, 16
        recalls = []
        for seed in range(20):
            r = np.random.default_rng(seed)
            tree = init_random(range(n), seed=r)
            params = init_params(tree.l_max, 8, (8,), 4, rng=r, scale=1.0)
            cases = [EvalCase(u, tuple(int(x) for x in r.choice(n, 3)), frozenset(int(x) for x in r.choice(n, 8)))
                     for u in range(10)]
            recalls.append(eval_checkpoint(params, tree, cases, m).recall)
        assert np.mean(recalls) == pytest.approx(m / n, rel=0.5)

    def test_empty_truth_skipped(self):
        tree = init_random(range(8), seed=0)
        params = init_params(tree.l_max, 2, (2,), 2, rng=np.random.default_rng(0))
        cases = [EvalCase(1, (0,), frozenset()), EvalCase(2, (0,), frozenset(range(8)))]
        rep = eval_checkpoint(params, tree, cases, 8)
        assert rep.users_evaluated == 1 and rep.users_skipped == 1 and rep.recall == 1.0

    def test_no_cases(self):
        tree = init_random(range(8), seed=0)
        with pytest.raises(DataError):
            eval_checkpoint(init_params(tree.l_max, 2, (2,), 2), tree, [], 2)
