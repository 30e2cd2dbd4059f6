import numpy as np
import pytest

from jtm.corpus import SplitSpec, TrainingSample, make_training_samples, prepare_dataset
from jtm.model import init_params
from jtm.synth import SyntheticSpec, generate
from jtm.tree import init_random

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    spec = SyntheticSpec(num_items=64, num_users=120, num_clusters=4, behaviors_per_user=12,
                         noise_rate=0.1, seed=3)
    return prepare_dataset(generate(spec), 10, SplitSpec(0.8, 0.1, 0.1, seed=3))


@pytest.fixture(scope="session")
def small_samples(small_dataset):
    return small_dataset.training_samples(8)


def random_problem(seed, n_items=16, window=4, n_samples=60, hidden=(6, 4), emb=4, scale=0.5,
                   hierarchical=True):
    """Random (params, tree, samples) triple for property tests."""
    r = np.random.default_rng(seed)
    items = list(range(100, 100 + n_items))
    tree = init_random(items, r)
    params = init_params(tree.l_max, emb, hidden, window, rng=r, scale=scale, hierarchical=hierarchical)
    samples = []
    for u in range(n_samples):
        k = int(r.integers(0, window + 1))
        prefix = tuple(int(x) for x in r.choice(items, size=k))
        samples.append(TrainingSample(u, prefix, int(r.choice(items))))
    return params, tree, samples


def planted_samples(n_items=4, users=40, length=6, seed=0):
    """Two disjoint item groups; each user draws only from one."""
    r = np.random.default_rng(seed)
    groups = [list(range(0, n_items // 2)), list(range(n_items // 2, n_items))]
    from jtm.corpus import UserSequence

    seqs = []
    for u in range(users):
        g = groups[u % 2]
        seqs.append(UserSequence(u, tuple(int(x) for x in r.choice(g, size=length))))
    return make_training_samples(seqs, window_len=length)
