"""Interaction ingestion, user splits and sample construction.

Interaction files are tab-separated ``user_id, item_id, category_id,
timestamp`` records, one per line, no header.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from jtm.errors import ConfigError, DataError, EmptyCorpusError, ParseError

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_LEN = 70
DEFAULT_MIN_INTERACTIONS = 10


@dataclass(frozen=True)
class Interaction:
    user_id: int
    item_id: int
    category_id: int
    timestamp: int


@dataclass(frozen=True)
class UserSequence:
    user_id: int
    behaviors: tuple

    def __len__(self):
        return len(self.behaviors)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    validation_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_fraction, self.validation_fraction, self.test_fraction)
        if any(not 0.0 < f < 1.0 for f in fracs):
            raise ConfigError(f"split fractions must lie in (0, 1), got {fracs}")
        if not math.isclose(sum(fracs), 1.0, abs_tol=1e-9):
            raise ConfigError(f"split fractions must sum to 1, got {sum(fracs)}")

    @classmethod
    def parse(cls, text, seed=0):
        try:
            parts = [float(p) for p in text.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad split {text!r}") from exc
        if len(parts) != 3:
            raise ConfigError(f"split needs three fractions, got {text!r}")
        return cls(*parts, seed=seed)


@dataclass(frozen=True)
class TrainingSample:
    user_id: int
    behavior_prefix: tuple
    target_item: int


@dataclass(frozen=True)
class EvalCase:
    user_id: int
    known_behaviors: tuple
    ground_truth: frozenset


@dataclass
class Corpus:
    """All interactions plus the derived item set and category map."""

    interactions: list
    categories: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.categories:
            for rec in self.interactions:
                self.categories.setdefault(rec.item_id, rec.category_id)

    @property
    def items(self):
        return sorted(self.categories)


def load_interactions(path):
    """Parse an interaction file into a list of :class:`Interaction`."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"interaction file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(path, lineno, f"expected 4 tab-separated fields, got {len(fields)}")
            try:
                values = [int(f) for f in fields]
            except ValueError:
                raise ParseError(path, lineno, f"non-integer field in {line!r}") from None
            if any(v < 0 for v in values):
                raise ParseError(path, lineno, "fields must be non-negative")
            records.append(Interaction(*values))
    if not records:
        raise EmptyCorpusError(f"no interactions in {path}")
    return records


def write_interactions(interactions, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in interactions:
            fh.write(f"{r.user_id}\t{r.item_id}\t{r.category_id}\t{r.timestamp}\n")


def build_user_sequences(interactions, min_interactions=DEFAULT_MIN_INTERACTIONS):
    """Group events per user, sort by (timestamp, item_id), drop short users."""
    if min_interactions < 1:
        raise ConfigError("min_interactions must be >= 1")
    per_user = {}
    for rec in interactions:
        per_user.setdefault(rec.user_id, []).append((rec.timestamp, rec.item_id))
    sequences = []
    for user_id in sorted(per_user):
        events = per_user[user_id]
        if len(events) < min_interactions:
            continue
        events.sort()
        sequences.append(UserSequence(user_id, tuple(item for _, item in events)))
    return sequences


def split_users(sequences, spec):
    """Partition users disjointly into (train, validation, test) id sets.

    Sizes follow ``round`` of each fraction, with the remainder going to
    the training side; validation and test each get at least one user.
    """
    users = sorted({s.user_id for s in sequences})
    n = len(users)
    if n < 3:
        raise DataError(f"need at least 3 users to split, got {n}")
    rng = np.random.default_rng(spec.seed)
    order = [users[i] for i in rng.permutation(n)]
    n_val = max(1, int(round(spec.validation_fraction * n)))
    n_test = max(1, int(round(spec.test_fraction * n)))
    n_train = n - n_val - n_test
    if n_train < 1:
        n_train, n_val = 1, n - 1 - n_test
    train = set(order[:n_train])
    validation = set(order[n_train:n_train + n_val])
    test = set(order[n_train + n_val:])
    return train, validation, test


def make_training_samples(sequences, window_len=DEFAULT_WINDOW_LEN):
    """One sample per behavior; its features are the preceding behaviors."""
    if window_len < 1:
        raise ConfigError("window_len must be >= 1")
    samples = []
    for seq in sequences:
        behaviors = seq.behaviors
        for i, target in enumerate(behaviors):
            start = max(0, i - window_len)
            samples.append(TrainingSample(seq.user_id, tuple(behaviors[start:i]), target))
    return samples


def make_eval_cases(sequences):
    """Split each sequence into a known first half and a ground-truth rest.

    Returns ``(cases, skipped)``; sequences shorter than two are skipped.
    """
    cases = []
    skipped = 0
    for seq in sequences:
        n = len(seq.behaviors)
        if n < 2:
            skipped += 1
            continue
        cut = (n + 1) // 2
        cases.append(EvalCase(seq.user_id, tuple(seq.behaviors[:cut]), frozenset(seq.behaviors[cut:])))
    if skipped:
        logger.warning("skipped %d sequences shorter than 2", skipped)
    return cases, skipped


@dataclass
class Dataset:
    """Ingested corpus split into train/validation/test sequences."""

    corpus: Corpus
    train: list
    validation: list
    test: list

    def training_samples(self, window_len=DEFAULT_WINDOW_LEN):
        return make_training_samples(self.train, window_len)

    def eval_cases(self, which="test"):
        cases, _ = make_eval_cases(getattr(self, which))
        return cases


def prepare_dataset(interactions, min_interactions=DEFAULT_MIN_INTERACTIONS, split=None):
    split = split or SplitSpec()
    corpus = Corpus(interactions)
    sequences = build_user_sequences(interactions, min_interactions)
    train_ids, val_ids, test_ids = split_users(sequences, split)
    return Dataset(
        corpus,
        [s for s in sequences if s.user_id in train_ids],
        [s for s in sequences if s.user_id in val_ids],
        [s for s in sequences if s.user_id in test_ids],
    )


def write_sequences(dataset, path):
    """Write ``user_id<TAB>split<TAB>item,item,...`` lines."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for name in ("train", "validation", "test"):
            for seq in getattr(dataset, name):
                fh.write(f"{seq.user_id}\t{name}\t{','.join(map(str, seq.behaviors))}\n")


def read_queries(path):
    """Read ``user_id<TAB>item,item,...`` query lines for retrieval."""
    queries = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            try:
                user = int(parts[0])
                items = tuple(int(x) for x in parts[-1].split(",") if x) if len(parts) > 1 else ()
            except ValueError:
                raise ParseError(path, lineno, f"bad query line {line!r}") from None
            queries.append((user, items))
    return queries
