"""Layer-wise beam search over the tree and a linear-scan baseline.

Both rank by raw logits; ties go to the lower node id. Candidate sets
are scored in ascending node order so the two paths do identical
arithmetic whenever they score the same nodes.
"""

from dataclasses import dataclass, field

import numpy as np

from jtm.model import abstract_leaves, behavior_level, head, pool, target_preactivation, user_preactivation


@dataclass
class RetrievalResult:
    items: list
    scores: list
    trace: list = field(default_factory=list)

    def __len__(self):
        return len(self.items)

    def pairs(self):
        return list(zip(self.items, self.scores))


class QueryScorer:
    """Per-query cache of the user half of the first layer, for every level."""

    def __init__(self, params, tree, known_behaviors):
        self.params = params
        self.tree = tree
        recent = list(known_behaviors)[-params.window_len:] if params.window_len > 0 else []
        leaves = np.zeros((1, max(1, params.window_len)), dtype=np.int64)
        if recent:
            leaves[0, :len(recent)] = tree.leaf_array(recent)
        L = tree.l_max
        rows = [abstract_leaves(leaves, behavior_level(params, lv), L)[0] for lv in range(L + 1)]
        pooled, _ = pool(params, np.stack(rows))
        self.user = user_preactivation(params, pooled)

    def score(self, nodes, lv):
        nodes = np.asarray(nodes, dtype=np.int64)
        z1 = self.user[lv][None, :] + target_preactivation(self.params, nodes)
        return head(self.params, z1)


def _rank(nodes, scores, k):
    order = np.lexsort((nodes, -scores))[:k]
    return nodes[order], scores[order]


def beam_search(params, tree, known_behaviors, beam_width, result_size, scorer=None):
    """Top-``result_size`` items by keeping the best ``beam_width`` nodes per level.

    Children with no items beneath are never scored. ``trace`` holds the
    nodes scored at each level.
    """
    if not beam_width >= result_size >= 1:
        raise ValueError(f"need beam_width >= result_size >= 1, got k={beam_width}, M={result_size}")
    scorer = scorer or QueryScorer(params, tree, known_behaviors)
    occ = tree.occupancy
    beam = np.array([1], dtype=np.int64)
    trace = []
    L = tree.l_max
    for lv in range(1, L + 1):
        kids = np.sort(np.concatenate([2 * beam, 2 * beam + 1]))
        kids = kids[occ[kids] > 0]
        scores = scorer.score(kids, lv)
        trace.append(kids.tolist())
        keep = result_size if lv == L else beam_width
        beam, beam_scores = _rank(kids, scores, keep)
    item_of = tree.item_of
    return RetrievalResult([item_of[int(n)] for n in beam], beam_scores.tolist(), trace)


def brute_force_topk(params, tree, known_behaviors, result_size, scorer=None):
    """Score every occupied leaf and return the best ``result_size`` items."""
    if result_size < 1:
        raise ValueError("result_size must be >= 1")
    scorer = scorer or QueryScorer(params, tree, known_behaviors)
    leaves = np.sort(tree.leaves)
    scores = scorer.score(leaves, tree.l_max)
    top, top_scores = _rank(leaves, scores, result_size)
    item_of = tree.item_of
    return RetrievalResult([item_of[int(n)] for n in top], top_scores.tolist(), [leaves.tolist()])


def count_scored_nodes(trace):
    """Number of node scores computed during a search."""
    if isinstance(trace, RetrievalResult):
        trace = trace.trace
    return sum(len(level_nodes) for level_nodes in trace)


def format_result(user_id, result):
    body = ",".join(f"{item}:{s:.6f}" for item, s in result.pairs())
    return f"{user_id}\t{body}"
