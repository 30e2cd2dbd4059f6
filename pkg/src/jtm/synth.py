"""Planted synthetic corpora: every user sticks to one latent item cluster."""

from dataclasses import dataclass

import numpy as np

from jtm.corpus import Interaction
from jtm.errors import ConfigError


@dataclass(frozen=True)
class SyntheticSpec:
    num_items: int = 1024
    num_users: int = 2000
    num_clusters: int = 16
    behaviors_per_user: int = 20
    noise_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.num_items < 1 or self.num_users < 1 or self.behaviors_per_user < 1:
            raise ConfigError("num_items, num_users and behaviors_per_user must be >= 1")
        if not 1 <= self.num_clusters <= self.num_items:
            raise ConfigError("need 1 <= num_clusters <= num_items")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigError("noise_rate must lie in [0, 1]")


def item_clusters(spec):
    """Balanced random cluster id for each item id ``0 .. num_items - 1``."""
    rng = np.random.default_rng([spec.seed, 1])
    clusters = np.empty(spec.num_items, dtype=np.int64)
    clusters[rng.permutation(spec.num_items)] = np.arange(spec.num_items) % spec.num_clusters
    return clusters


def generate(spec):
    """Interactions for the given settings; category ids are the cluster ids."""
    clusters = item_clusters(spec)
    members = [np.flatnonzero(clusters == c) for c in range(spec.num_clusters)]
    rng = np.random.default_rng([spec.seed, 2])
    out = []
    for user in range(spec.num_users):
        home = members[int(rng.integers(spec.num_clusters))]
        noisy = rng.random(spec.behaviors_per_user) < spec.noise_rate
        in_cluster = home[rng.integers(len(home), size=spec.behaviors_per_user)]
        anywhere = rng.integers(spec.num_items, size=spec.behaviors_per_user)
        items = np.where(noisy, anywhere, in_cluster)
        for t, item in enumerate(items.tolist()):
            out.append(Interaction(user, item, int(clusters[item]), t))
    return out
