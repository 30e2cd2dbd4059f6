"""Named random substreams derived from a single root seed."""

import zlib

import numpy as np


def substream(seed, name):
    """Return a Generator keyed by ``(seed, name)``.

    Streams for different names are independent, so adding a new consumer
    never shifts the draws seen by existing ones.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def child_seed(rng):
    """Draw an integer seed from ``rng`` for deriving keyed child streams."""
    return int(rng.integers(0, 2**63 - 1))


def keyed(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))
