"""Alternating optimisation of the preference model and the tree."""

import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from jtm.errors import ConfigError, DataError, DivergenceError
from jtm.metrics import aggregate, metrics_for_user
from jtm.model import (
    OptimizerConfig,
    Optimizer,
    bce_loss,
    build_instances,
    encode_samples,
    global_loss,
    init_params,
    save_params,
    train_epoch,
)
from jtm.retrieval import beam_search
from jtm.rng import substream
from jtm.tree import validate, write_tree
from jtm.tree_learning import DEFAULT_GAP, DEFAULT_SAMPLE_CAP, DEFAULT_STICKINESS, learn_tree

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = "iter,loss_after_train,loss_after_tree,items_moved,seconds"


@dataclass
class JointConfig:
    iterations: int = 6
    epochs: int = 2
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    gap: int = DEFAULT_GAP
    sample_cap: int = DEFAULT_SAMPLE_CAP
    stickiness: float = DEFAULT_STICKINESS
    use_hierarchical: bool = True
    do_tree_learning: bool = True
    seed: int = 0
    emb_dim: int = 24
    hidden_dims: tuple = (128, 64, 24)
    window_len: int = 70
    loss_instances: int = 10_000
    result_size: int = 20
    beam_width: int = 20
    threads: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.beam_width < self.result_size:
            raise ConfigError("beam_width must be >= result_size")


@dataclass
class TrajectoryRecord:
    iteration: int
    loss_after_train: float
    loss_after_tree: float
    items_moved: int
    seconds: float
    bce_before_train: float = math.nan
    bce_after_train: float = math.nan
    train_loss: float = math.nan
    recall: float = math.nan
    precision: float = math.nan
    f_measure: float = math.nan

    def csv_line(self):
        return (f"{self.iteration},{self.loss_after_train:.6f},{self.loss_after_tree:.6f},"
                f"{self.items_moved},{self.seconds:.3f}")


@dataclass
class JointResult:
    params: object
    tree: object
    records: list


def eval_checkpoint(params, tree, cases, result_size=20, beam_width=None):
    """Average beam-search metrics over ``cases``; empty-truth cases are skipped."""
    beam_width = result_size if beam_width is None else beam_width
    if not cases:
        raise DataError("no evaluation cases")
    per_user, skipped = [], 0
    for case in cases:
        if not case.ground_truth:
            skipped += 1
            continue
        result = beam_search(params, tree, case.known_behaviors, beam_width, result_size)
        if len(result) < result_size:
            logger.warning("user %d: only %d items retrieved", case.user_id, len(result))
        per_user.append(metrics_for_user(result.items, case.ground_truth))
    if skipped:
        logger.warning("skipped %d cases with empty ground truth", skipped)
    return aggregate(per_user, skipped)


def write_atomic(path, writer):
    """Write via ``writer(tmp_path)`` then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(out_dir, tag, params, tree):
    base = Path(out_dir) / tag
    write_atomic(base / "tree.txt", lambda p: write_tree(tree, p))
    write_atomic(base / "model.bin", lambda p: save_params(params, p))


def run_joint(samples, initial_tree, config, eval_cases=None, out_dir=None, params=None):
    """Alternate ``epochs`` of model training with one tree-learning pass, ``iterations`` times.

    Returns a :class:`JointResult`. When ``out_dir`` is given, writes
    ``iter_<t>/tree.txt``, ``iter_<t>/model.bin`` and ``trajectory.csv``.
    """
    problem = validate(initial_tree)
    if problem:
        raise DataError(f"initial tree invalid: {problem}")
    seed = config.seed
    tree = initial_tree
    L = tree.l_max
    if params is None:
        params = init_params(L, config.emb_dim, config.hidden_dims, config.window_len,
                             rng=substream(seed, "model-init"), hierarchical=config.use_hierarchical)
    enc = encode_samples(samples, params.window_len)
    if len(enc) == 0:
        raise DataError("no training samples")
    n_track = min(len(enc), max(1, config.loss_instances // L))
    track = enc.subset(np.sort(substream(seed, "loss-subsample").permutation(len(enc))[:n_track]))

    optimizer = Optimizer(config.optimizer)
    train_rng = substream(seed, "train")
    tree_rng = substream(seed, "tree-learn")
    records = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        traj = [TRAJECTORY_HEADER]

    for t in range(config.iterations):
        started = time.perf_counter()
        frozen = build_instances(params, track, tree, config.optimizer.neg_per_level,
                                 substream(seed, f"loss-negatives-{t}"))
        bce_before = bce_loss(params, frozen)
        good = params.copy()
        train_loss = math.nan
        try:
            for _ in range(config.epochs):
                params, train_loss = train_epoch(params, enc, tree, config.optimizer, train_rng, optimizer)
        except DivergenceError:
            if out_dir is not None:
                save_checkpoint(out_dir, "last_good", good, tree)
            raise
        bce_after = bce_loss(params, frozen)
        if bce_after > bce_before:
            logger.warning("iteration %d: tracked BCE rose from %.6f to %.6f", t, bce_before, bce_after)
        loss_train = global_loss(params, track, tree)

        metrics = eval_checkpoint(params, tree, eval_cases, config.result_size, config.beam_width) if eval_cases else None

        if config.do_tree_learning:
            new_tree = learn_tree(params, tree, enc, config.gap, config.sample_cap, config.stickiness,
                                  tree_rng, threads=config.threads)
            moved = int(np.sum(new_tree.leaves != tree.leaves))
            tree = new_tree
            loss_tree = global_loss(params, track, tree)
        else:
            moved = 0
            loss_tree = loss_train
        if loss_tree > loss_train:
            logger.info("iteration %d: tree learning raised tracked loss %.6f -> %.6f", t, loss_train, loss_tree)

        rec = TrajectoryRecord(t, loss_train, loss_tree, moved, time.perf_counter() - started,
                               bce_before, bce_after, train_loss)
        if metrics is not None:
            rec.recall, rec.precision, rec.f_measure = metrics.recall, metrics.precision, metrics.f_measure
        records.append(rec)
        logger.info("iteration %d: loss %.4f -> %.4f, moved %d, recall %.4f, %.1fs",
                    t, loss_train, loss_tree, moved, rec.recall, rec.seconds)
        if out_dir is not None:
            save_checkpoint(out_dir, f"iter_{t}", params, tree)
            traj.append(rec.csv_line())
            # seconds vary run to run; everything else in the file is deterministic
            write_atomic(out_dir / "trajectory.csv", lambda p: Path(p).write_text("\n".join(traj) + "\n"))
    return JointResult(params, tree, records)
