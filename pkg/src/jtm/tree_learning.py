"""Segmented tree learning.

With the model fixed, items are re-placed top-down ``d`` levels at a
time. Each round keeps every item under the level-``(l - d)`` node it
already sits under and solves a capacity-constrained assignment of those
items to that node's level-``l`` descendants, using as weight the summed
log preference of the item's training users along each candidate's path.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from jtm.model import (
    abstract_leaves,
    behavior_level,
    encode_samples,
    head,
    log_sigmoid,
    pool,
    target_preactivation,
    user_preactivation,
)
from jtm.rng import child_seed, keyed
from jtm.tree import TreeIndex, level

logger = logging.getLogger(__name__)

DEFAULT_GAP = 7
DEFAULT_SAMPLE_CAP = 256
DEFAULT_STICKINESS = 1e-9
EXACT_MAX_ITEMS = 12
EXACT_MAX_SLOTS = 16
_CHUNK_ELEMENTS = 1 << 21


@dataclass
class AssignmentWeights:
    """``matrix[i, j]``: weight of placing ``items[i]`` on ``candidates[j]``."""

    parent: int
    level: int
    items: np.ndarray
    candidates: np.ndarray
    matrix: np.ndarray
    has_samples: np.ndarray


@dataclass
class RoundStats:
    level: int
    parents: int
    total_weight: float
    items_moved: int


def total_weight(matrix, assignment):
    """Sum of ``matrix[i, assignment[i]]`` accumulated in item order."""
    return math.fsum(matrix[np.arange(len(assignment)), assignment].tolist())


class WeightComputer:
    """Snapshot of (model, old tree, samples) used throughout one learning pass."""

    def __init__(self, params, tree_old, samples):
        self.params = params
        self.tree = tree_old
        self.enc = encode_samples(samples, params.window_len)
        self.prefix_leaves = self.enc.prefix_leaves(tree_old)
        order = np.argsort(self.enc.targets, kind="stable")
        targets = self.enc.targets[order]
        uniq, starts = np.unique(targets, return_index=True)
        bounds = np.append(starts, len(targets))
        self.by_item = {int(u): order[bounds[i]:bounds[i + 1]] for i, u in enumerate(uniq)}
        self.target_pre = target_preactivation(params, np.arange(params.embeddings.shape[0]))

    def samples_of(self, item, cap, rng):
        idx = self.by_item.get(int(item))
        if idx is None:
            return np.zeros(0, dtype=np.int64)
        if cap is not None and len(idx) > cap:
            idx = np.sort(rng.choice(idx, size=cap, replace=False))
        return idx

    def weights(self, parent, lv, gap, items, cap=DEFAULT_SAMPLE_CAP, rng=None):
        params, L = self.params, self.tree.l_max
        top = lv - gap
        if top != level(parent) or gap < 1 or lv > L:
            raise ValueError(f"parent {parent} is not at level {lv} - {gap}")
        items = np.asarray(items, dtype=np.int64)
        candidates = (parent << gap) + np.arange(1 << gap, dtype=np.int64)
        sub_levels = list(range(top + 1, lv + 1))
        sub_nodes = np.concatenate([(parent << (j - top)) + np.arange(1 << (j - top)) for j in sub_levels])
        sub_rank = np.concatenate([np.full(1 << (j - top), k) for k, j in enumerate(sub_levels)])
        # path[s, c] = 1 when sub node s lies on the path from the parent to candidate c
        shift = lv - np.concatenate([np.full(1 << (j - top), j) for j in sub_levels])
        path = ((candidates[None, :] >> shift[:, None]) == sub_nodes[:, None]).astype(np.float64)

        rng = np.random.default_rng(rng)
        chosen = [self.samples_of(i, cap, rng) for i in items.tolist()]
        has = np.array([len(c) > 0 for c in chosen], dtype=bool)
        matrix = np.zeros((len(items), len(candidates)))
        if not has.any():
            return AssignmentWeights(parent, lv, items, candidates, matrix, has)
        sample_idx = np.concatenate(chosen)
        owner = np.repeat(np.arange(len(items)), [len(c) for c in chosen])

        h1 = params.weights[0].shape[1]
        target_sub = self.target_pre[sub_nodes]
        chunk = max(1, _CHUNK_ELEMENTS // (len(sub_nodes) * h1))
        per_sample = np.empty((len(sample_idx), len(candidates)))
        for start in range(0, len(sample_idx), chunk):
            idx = sample_idx[start:start + chunk]
            leaves = self.prefix_leaves[idx]
            user = np.stack([
                user_preactivation(params, pool(params, abstract_leaves(leaves, behavior_level(params, j), L))[0])
                for j in sub_levels
            ], axis=1)
            z1 = user[:, sub_rank, :] + target_sub[None, :, :]
            per_sample[start:start + len(idx)] = log_sigmoid(head(params, z1)) @ path
        owner_matrix = sp.csr_matrix(
            (np.ones(len(owner)), (owner, np.arange(len(owner)))), shape=(len(items), len(owner))
        )
        matrix = np.asarray(owner_matrix @ per_sample)
        return AssignmentWeights(parent, lv, items, candidates, matrix, has)


def compute_weights(params, tree_old, parent, lv, gap, samples, cap=DEFAULT_SAMPLE_CAP, rng=None, items=None):
    """Assignment weights for the items under ``parent`` (by default, under ``tree_old``)."""
    comp = samples if isinstance(samples, WeightComputer) else WeightComputer(params, tree_old, samples)
    if items is None:
        items = sorted(tree_old.items_under(parent))
    return comp.weights(parent, lv, gap, items, cap, rng)


def _choose(rows, allowed, prev, eps):
    """Best allowed column per row; near-ties go to ``prev``, then to the lowest column."""
    masked = np.where(allowed[None, :], rows, -np.inf)
    near = masked >= masked.max(axis=1, keepdims=True) - eps
    first = np.argmax(near, axis=1)
    keep = (prev >= 0) & near[np.arange(len(rows)), np.maximum(prev, 0)]
    return np.where(keep, prev, first)


def greedy_assign_with_rebalance(W, capacities, previous=None, eps=DEFAULT_STICKINESS, filler=None):
    """Greedy argmax placement followed by regret-ordered rebalancing.

    Parameters
    ----------
    W : (n_items, n_candidates) array, columns in ascending node order.
    capacities : per-candidate item limits.
    previous : per-item previous column, or -1 / None when there is none.
    eps : weight margin within which a choice counts as a tie.
    filler : mask of items without training samples; they are placed
        after everything else, into their previous column when it still
        has room, otherwise into the lowest column with room.

    Returns an int array with the chosen column per item.
    """
    W = np.asarray(W, dtype=np.float64)
    caps = np.asarray(capacities, dtype=np.int64)
    n, m = W.shape
    if caps.shape != (m,):
        raise ValueError("one capacity per candidate is required")
    if caps.sum() < n:
        raise ValueError(f"infeasible: {n} items but total capacity {int(caps.sum())}")
    prev = np.full(n, -1, dtype=np.int64) if previous is None else np.asarray(previous, dtype=np.int64)
    filler = np.zeros(n, dtype=bool) if filler is None else np.asarray(filler, dtype=bool)
    assign = np.full(n, -1, dtype=np.int64)
    everywhere = np.ones(m, dtype=bool)

    active = np.flatnonzero(~filler)
    assign[active] = _choose(W[active], everywhere, prev[active], eps)
    counts = np.bincount(assign[active], minlength=m)

    while True:
        over = np.flatnonzero(counts > caps)
        if len(over) == 0:
            break
        col = over[0]
        free = counts < caps
        members = np.flatnonzero(assign == col)
        dest = _choose(W[members], free, prev[members], eps)
        regret = W[members, col] - W[members, dest]
        # equal regret: the first item past the column's capacity moves, so earlier
        # items keep their places and columns fill in item order
        tied = np.flatnonzero(regret <= regret.min() + eps)
        beyond = tied[tied >= caps[col]]
        pick = beyond[0] if len(beyond) else tied[0]
        i, to = members[pick], dest[pick]
        assign[i] = to
        counts[col] -= 1
        counts[to] += 1

    for i in np.flatnonzero(filler):
        free = counts < caps
        p = prev[i]
        to = int(p) if p >= 0 and free[p] else int(np.argmax(free))
        assign[i] = to
        counts[to] += 1
    return assign


def exact_assign(W, capacities):
    """Optimal capacity-feasible assignment by exhaustive search with memoisation.

    Returns ``(assignment, total)``. Limited to small instances.
    """
    W = np.asarray(W, dtype=np.float64)
    caps = tuple(int(c) for c in capacities)
    n, m = W.shape
    if n > EXACT_MAX_ITEMS or sum(caps) > EXACT_MAX_SLOTS:
        raise ValueError(f"instance too large for exact search ({n} items, {sum(caps)} slots)")
    if sum(caps) < n:
        raise ValueError("infeasible capacities")
    rows = W.tolist()

    @lru_cache(maxsize=None)
    def best(i, remaining):
        if i == n:
            return 0.0, ()
        top = None
        for j in range(m):
            if remaining[j] == 0:
                continue
            rest = remaining[:j] + (remaining[j] - 1,) + remaining[j + 1:]
            sub_val, sub_choice = best(i + 1, rest)
            val = rows[i][j] + sub_val
            if top is None or val > top[0]:
                top = (val, (j,) + sub_choice)
        return top

    _, choice = best(0, caps)
    assignment = np.array(choice, dtype=np.int64)
    return assignment, total_weight(W, assignment)


def _solve_parent(comp, parent, lv, gap, items, old_nodes, cap, eps, seed):
    """One subproblem; returns the new level-``lv`` node per item and the solution weight."""
    aw = comp.weights(parent, lv, gap, items, cap, keyed(seed, parent, lv))
    base = parent << gap
    prev = old_nodes - base
    prev[(prev < 0) | (prev >= len(aw.candidates))] = -1
    caps = np.full(len(aw.candidates), 1 << (comp.tree.l_max - lv), dtype=np.int64)
    choice = greedy_assign_with_rebalance(aw.matrix, caps, prev, eps, filler=~aw.has_samples)
    value = total_weight(aw.matrix, choice)
    if np.all(prev >= 0) and np.all(np.bincount(prev, minlength=len(caps)) <= caps):
        incumbent = total_weight(aw.matrix, prev)
        if incumbent > value:
            choice, value = prev, incumbent
    return aw.candidates[choice], value


def learn_tree(params, tree_old, samples, gap=DEFAULT_GAP, cap=DEFAULT_SAMPLE_CAP, eps=DEFAULT_STICKINESS,
               rng=None, threads=1, stats=None):
    """Re-place every item on a leaf so as to raise the summed path log likelihood.

    Rounds resolve ``gap`` levels at a time (the last round may be
    shorter). Weights always use ``tree_old`` for behavior features. A
    subproblem solution never replaces the items' previous placement when
    that placement is feasible and scores higher. ``cap=None`` uses every
    sample. Returns a new :class:`TreeIndex`; per-round
    :class:`RoundStats` are appended to ``stats`` when given.
    """
    L = tree_old.l_max
    if gap < 1:
        raise ValueError("gap must be >= 1")
    gap = min(gap, L)
    comp = samples if isinstance(samples, WeightComputer) else WeightComputer(params, tree_old, samples)
    seed = child_seed(np.random.default_rng(rng))
    items = tree_old.items
    old_leaves = tree_old.leaves
    current = np.ones(len(items), dtype=np.int64)
    top, d = 0, gap
    while d > 0:
        lv = top + d
        parents = np.unique(current)
        groups = [np.flatnonzero(current == p) for p in parents]
        old_at_lv = old_leaves >> (L - lv)

        def task(k):
            g = groups[k]
            return _solve_parent(comp, int(parents[k]), lv, d, items[g], old_at_lv[g].copy(), cap, eps, seed)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool_:
                results = list(pool_.map(task, range(len(groups))))
        else:
            results = [task(k) for k in range(len(groups))]
        for g, (nodes, _) in zip(groups, results):
            current[g] = nodes
        moved = int(np.sum(current != old_at_lv))
        round_weight = math.fsum(v for _, v in results)
        logger.info("tree round level=%d parents=%d weight=%.6f moved=%d", lv, len(groups), round_weight, moved)
        if stats is not None:
            stats.append(RoundStats(lv, len(groups), round_weight, moved))
        top = lv
        d = min(d, L - lv)
    return TreeIndex(L, dict(zip(items.tolist(), current.tolist())))
