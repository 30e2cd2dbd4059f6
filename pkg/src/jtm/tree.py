"""Complete binary tree index with heap numbering.

Nodes are the integers ``1 .. 2**(l_max + 1) - 1``. The root is 1, the
children of ``n`` are ``2n`` and ``2n + 1`` and ``level(n) = floor(log2 n)``.
Items live on leaves (level ``l_max``); some leaves may be vacant.
"""

from functools import cached_property
from pathlib import Path

import numpy as np

from jtm.errors import DataError

TREE_MAGIC = "JTM-TREE v1"


def level(node):
    node = int(node)
    if node < 1:
        raise ValueError(f"invalid node id {node}")
    return node.bit_length() - 1


def levels(nodes):
    """Vectorised :func:`level` for positive integer arrays."""
    return np.frexp(np.asarray(nodes, dtype=np.float64))[1].astype(np.int64) - 1


def ancestor(node, j):
    """Ancestor of ``node`` at level ``j`` (the node itself when ``j`` is its level)."""
    lv = level(node)
    if not 0 <= j <= lv:
        raise ValueError(f"level {j} outside [0, {lv}] for node {node}")
    return int(node) >> (lv - j)


def parent(node):
    if int(node) <= 1:
        raise ValueError("root has no parent")
    return int(node) >> 1


def children(node):
    node = int(node)
    return 2 * node, 2 * node + 1


def level_nodes(j):
    """All node ids at level ``j``, ascending."""
    return np.arange(1 << j, 1 << (j + 1), dtype=np.int64)


def depth_for(n_items):
    """Smallest ``l_max >= 1`` with ``2**l_max >= n_items``."""
    if n_items < 1:
        raise DataError("corpus is empty")
    return max(1, (n_items - 1).bit_length())


class TreeIndex:
    """Item to leaf projection over a complete binary tree.

    ``leaf_of`` maps item id to leaf node id. Instances are treated as
    immutable; tree learning builds a new one.
    """

    def __init__(self, l_max, leaf_of):
        self.l_max = int(l_max)
        self.leaf_of = {int(k): int(v) for k, v in leaf_of.items()}

    def __repr__(self):
        return f"TreeIndex(l_max={self.l_max}, items={len(self.leaf_of)})"

    def __eq__(self, other):
        return (
            isinstance(other, TreeIndex)
            and self.l_max == other.l_max
            and self.leaf_of == other.leaf_of
        )

    @property
    def n_nodes(self):
        return (1 << (self.l_max + 1)) - 1

    @property
    def n_leaves(self):
        return 1 << self.l_max

    @cached_property
    def item_of(self):
        return {leaf: item for item, leaf in self.leaf_of.items()}

    @cached_property
    def items(self):
        return np.array(sorted(self.leaf_of), dtype=np.int64)

    @cached_property
    def leaves(self):
        """Leaf node per entry of :attr:`items`."""
        return np.array([self.leaf_of[i] for i in self.items.tolist()], dtype=np.int64)

    @cached_property
    def occupancy(self):
        """Item count beneath every node; index 0 unused."""
        counts = np.zeros(self.n_nodes + 1, dtype=np.int64)
        leaves = self.leaves
        for j in range(self.l_max + 1):
            np.add.at(counts, leaves >> (self.l_max - j), 1)
        return counts

    def leaf_array(self, item_ids):
        """Map an array of item ids to leaf node ids, raising on unknown items."""
        item_ids = np.asarray(item_ids, dtype=np.int64)
        if item_ids.size == 0:
            return item_ids.copy()
        pos = np.searchsorted(self.items, item_ids)
        pos_c = np.minimum(pos, len(self.items) - 1)
        bad = self.items[pos_c] != item_ids
        if np.any(bad):
            raise KeyError(f"item {int(item_ids[bad][0])} not in tree")
        return self.leaves[pos_c]

    def path(self, item_id):
        """``[b_0, ..., b_lmax]`` for the item's leaf."""
        leaf = self.leaf_of[int(item_id)]
        return [leaf >> (self.l_max - j) for j in range(self.l_max + 1)]

    def items_under(self, node):
        node = int(node)
        shift = self.l_max - level(node)
        if shift < 0:
            raise ValueError(f"node {node} is below the leaf level")
        return {item for item, leaf in self.leaf_of.items() if leaf >> shift == node}

    def occupied_nodes(self, j):
        nodes = level_nodes(j)
        return nodes[self.occupancy[nodes] > 0]

    def capacity(self, j):
        return 1 << (self.l_max - j)


def _assign_in_order(ordered_items, l_max=None):
    l_max = depth_for(len(ordered_items)) if l_max is None else l_max
    first_leaf = 1 << l_max
    return TreeIndex(l_max, {item: first_leaf + i for i, item in enumerate(ordered_items)})


def init_random(items, seed=0):
    """Shuffle items by ``seed`` and place them on the leftmost leaves."""
    items = sorted({int(i) for i in items})
    if not items:
        raise DataError("cannot build a tree over zero items")
    rng = np.random.default_rng(seed)
    order = [items[i] for i in rng.permutation(len(items))]
    return _assign_in_order(order)


def init_by_category(item_categories, seed=0):
    """Place items so same-category items occupy contiguous leaves.

    ``item_categories`` maps item id to category id. Category order is a
    seeded random permutation; within a category items are in id order.
    """
    if not item_categories:
        raise DataError("cannot build a tree over zero items")
    cats = sorted(set(item_categories.values()))
    rng = np.random.default_rng(seed)
    rank = {cats[i]: r for r, i in enumerate(rng.permutation(len(cats)))}
    return init_by_category_order(item_categories, sorted(cats, key=rank.__getitem__))


def init_by_category_order(item_categories, category_order):
    """Deterministic category layout for an explicit category order."""
    rank = {c: r for r, c in enumerate(category_order)}
    order = sorted(item_categories, key=lambda i: (rank[item_categories[i]], i))
    return _assign_in_order(order)


def validate(tree):
    """Return ``None`` for a valid tree, otherwise a description of the first violation."""
    if tree.l_max < 1:
        return f"l_max must be >= 1, got {tree.l_max}"
    if len(tree.leaf_of) > tree.n_leaves:
        return f"{len(tree.leaf_of)} items exceed {tree.n_leaves} leaves"
    seen = {}
    for item in sorted(tree.leaf_of):
        leaf = tree.leaf_of[item]
        if leaf < 1 or leaf > tree.n_nodes:
            return f"item {item} mapped to node {leaf} outside the tree"
        if level(leaf) != tree.l_max:
            return f"item {item} mapped to node {leaf} at level {level(leaf)}, not leaf level {tree.l_max}"
        if leaf in seen:
            return f"injectivity: items {seen[leaf]} and {item} share leaf {leaf}"
        seen[leaf] = item
    return None


def write_tree(tree, path):
    lines = [TREE_MAGIC, f"lmax={tree.l_max}"]
    lines += [f"{item}\t{tree.leaf_of[item]}" for item in sorted(tree.leaf_of)]
    data = "\n".join(lines) + "\n"
    Path(path).write_text(data, encoding="utf-8")


def read_tree(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"tree file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if len(lines) < 2 or lines[0] != TREE_MAGIC or not lines[1].startswith("lmax="):
        raise DataError(f"{path}: not a {TREE_MAGIC} file")
    try:
        l_max = int(lines[1][len("lmax="):])
        leaf_of = {}
        for line in lines[2:]:
            item, leaf = line.split("\t")
            leaf_of[int(item)] = int(leaf)
    except ValueError as exc:
        raise DataError(f"{path}: malformed tree file ({exc})") from None
    return TreeIndex(l_max, leaf_of)
