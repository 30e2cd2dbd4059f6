"""User-node preference model.

Every tree node owns an embedding row (row 0 is the all-zero padding
vector). A user's behaviors are abstracted to their ancestors at the
level being scored, mean-pooled, concatenated with the target node's
embedding and passed through a ReLU MLP that emits one logit. One scorer
is shared across levels; level specificity comes from the embeddings.

Gradients are written out by hand. The first layer is split into a user
half and a target half so that the user half can be computed once per
(sample, level) and reused for every candidate node.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from jtm.corpus import DEFAULT_WINDOW_LEN
from jtm.errors import ConfigError, DataError, DivergenceError

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"JTM-MODEL v1"
PROB_EPS = 1e-12
INIT_SCALE = 0.05


@dataclass
class ModelParams:
    l_max: int
    emb_dim: int
    hidden_dims: tuple
    window_len: int
    embeddings: np.ndarray
    weights: list
    biases: list
    hierarchical: bool = True

    @property
    def n_layers(self):
        return len(self.weights)

    def arrays(self):
        """Parameter arrays in checkpoint order."""
        out = [self.embeddings]
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return ModelParams(
            self.l_max, self.emb_dim, tuple(self.hidden_dims), self.window_len,
            self.embeddings.copy(), [w.copy() for w in self.weights],
            [b.copy() for b in self.biases], self.hierarchical,
        )

    def equals(self, other):
        if (self.l_max, self.emb_dim, tuple(self.hidden_dims), self.window_len, self.hierarchical) != (
            other.l_max, other.emb_dim, tuple(other.hidden_dims), other.window_len, other.hierarchical
        ):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def layer_shapes(emb_dim, hidden_dims):
    dims = [2 * emb_dim, *hidden_dims, 1]
    return list(zip(dims[:-1], dims[1:]))


def init_params(l_max, emb_dim=24, hidden_dims=(128, 64, 24), window_len=DEFAULT_WINDOW_LEN,
                rng=None, hierarchical=True, scale=INIT_SCALE):
    """Uniform(-scale, scale) initialisation with a zero padding row."""
    rng = np.random.default_rng(rng)
    n_rows = (1 << (l_max + 1))
    emb = rng.uniform(-scale, scale, size=(n_rows, emb_dim))
    emb[0] = 0.0
    weights, biases = [], []
    for fan_in, fan_out in layer_shapes(emb_dim, hidden_dims):
        weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(l_max, emb_dim, tuple(hidden_dims), window_len, emb, weights, biases, hierarchical)


def zero_params(l_max, emb_dim=24, hidden_dims=(128, 64, 24), window_len=DEFAULT_WINDOW_LEN, hierarchical=True):
    p = init_params(l_max, emb_dim, hidden_dims, window_len, rng=0, hierarchical=hierarchical)
    for a in p.arrays():
        a[...] = 0.0
    return p


# -- features ---------------------------------------------------------------

@dataclass(frozen=True)
class HierarchicalFeature:
    level: int
    behavior_nodes: tuple
    target_node: int


@dataclass(frozen=True)
class LevelInstance:
    feature: HierarchicalFeature
    label: int


def abstract_leaves(leaves, level, l_max):
    """Ancestors at ``level`` of an array of leaf ids; 0 stays padding."""
    leaves = np.asarray(leaves, dtype=np.int64)
    return np.where(leaves > 0, leaves >> (l_max - level), 0)


def abstract_behaviors(behavior_prefix, level, tree, window_len=None):
    """Element-wise ``b_level(leaf(item))`` for a behavior list.

    With ``window_len`` the most recent ``window_len`` behaviors are kept
    and the list is right-padded with 0.
    """
    if not 1 <= level <= tree.l_max:
        raise ValueError(f"level {level} outside [1, {tree.l_max}]")
    prefix = list(behavior_prefix)
    if window_len is not None:
        prefix = prefix[-window_len:] if window_len > 0 else []
    nodes = abstract_leaves(tree.leaf_array(prefix), level, tree.l_max).tolist() if prefix else []
    if window_len is not None:
        nodes += [0] * (window_len - len(nodes))
    return nodes


def behavior_level(params, level):
    """Level the behaviors are abstracted to when scoring ``level``."""
    return level if params.hierarchical else params.l_max


@dataclass
class EncodedSamples:
    """Array form of training samples: item ids, -1 padded on the right."""

    users: np.ndarray
    prefix: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return len(self.targets)

    def subset(self, idx):
        return EncodedSamples(self.users[idx], self.prefix[idx], self.targets[idx])

    def prefix_leaves(self, tree):
        mask = self.prefix >= 0
        out = np.zeros(self.prefix.shape, dtype=np.int64)
        if mask.any():
            out[mask] = tree.leaf_array(self.prefix[mask])
        return out


def encode_samples(samples, window_len):
    if isinstance(samples, EncodedSamples):
        return samples
    n = len(samples)
    prefix = np.full((n, window_len), -1, dtype=np.int64)
    users = np.empty(n, dtype=np.int64)
    targets = np.empty(n, dtype=np.int64)
    for i, s in enumerate(samples):
        beh = s.behavior_prefix[-window_len:] if window_len > 0 else ()
        prefix[i, :len(beh)] = beh
        users[i] = s.user_id
        targets[i] = s.target_item
    return EncodedSamples(users, prefix, targets)


def canonical_order(enc):
    """Permutation sorting samples by (user, target, prefix)."""
    keys = [enc.prefix[:, j] for j in range(enc.prefix.shape[1] - 1, -1, -1)]
    return np.lexsort(keys + [enc.targets, enc.users])


# -- forward pieces ----------------------------------------------------------

def pool(params, nodes):
    """Masked mean of the embeddings of ``nodes`` (P, w); returns (pooled, counts)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    counts = (nodes > 0).sum(axis=1)
    summed = params.embeddings[nodes].sum(axis=1)
    return summed / np.maximum(counts, 1)[:, None], counts


def user_preactivation(params, pooled):
    return pooled @ params.weights[0][:params.emb_dim] + params.biases[0]


def target_preactivation(params, nodes):
    return params.embeddings[nodes] @ params.weights[0][params.emb_dim:]


def head(params, z1):
    """Logits from first-layer pre-activations of any leading shape."""
    if len(params.weights) == 1:
        return z1[..., 0]
    h = np.maximum(z1, 0.0)
    for w, b in zip(params.weights[1:], params.biases[1:]):
        z = h @ w + b
        h = np.maximum(z, 0.0)
    return z[..., 0]


def score(params, feature):
    """Logit for one user-node feature; ``sigmoid(logit)`` is the preference."""
    nodes = np.asarray(feature.behavior_nodes, dtype=np.int64).reshape(1, -1)
    if nodes.shape[1] == 0:
        nodes = np.zeros((1, 1), dtype=np.int64)
    if np.any(nodes >= params.embeddings.shape[0]) or feature.target_node >= params.embeddings.shape[0]:
        raise ValueError("node id outside the embedding table")
    pooled, _ = pool(params, nodes)
    z1 = user_preactivation(params, pooled) + target_preactivation(params, [feature.target_node])
    return float(head(params, z1)[0])


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def log_sigmoid(x, eps=PROB_EPS):
    """``log(clip(sigmoid(x), eps, 1 - eps))``; never -inf."""
    x = np.asarray(x, dtype=np.float64)
    val = -np.logaddexp(0.0, -x)
    return np.clip(val, math.log(eps), math.log1p(-eps))


# -- level instances -----------------------------------------------------------

@dataclass
class InstanceBatch:
    """Level instances in array form.

    ``pair_nodes[p]`` are the abstracted behaviors of one (sample, level)
    pair; each instance points at its pair through ``pair_idx``.
    """

    pair_nodes: np.ndarray
    pair_level: np.ndarray
    pair_sample: np.ndarray
    pair_idx: np.ndarray
    targets: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.targets)


def _draw_distinct(rng, n_rows, n_choices, k):
    """``k`` distinct ints in [0, n_choices) per row."""
    if k == 0:
        return np.zeros((n_rows, 0), dtype=np.int64)
    if n_choices <= 64 or 4 * k > n_choices:
        return np.argsort(rng.random((n_rows, n_choices)), axis=1)[:, :k].astype(np.int64)
    draws = rng.integers(0, n_choices, size=(n_rows, k))
    while True:
        s = np.sort(draws, axis=1)
        dup = np.any(s[:, 1:] == s[:, :-1], axis=1)
        if not dup.any():
            return draws
        draws[dup] = rng.integers(0, n_choices, size=(int(dup.sum()), k))


def build_instances(params, enc, tree, neg_per_level, rng, prefix_leaves=None):
    """Positive and sampled negative instances for levels 1..l_max.

    Negatives for a level are drawn without replacement from that level's
    occupied nodes other than the positive; their count is capped at the
    number of such nodes.
    """
    if neg_per_level < 0:
        raise ConfigError("neg_per_level must be >= 0")
    n = len(enc)
    L = tree.l_max
    leaves = prefix_leaves if prefix_leaves is not None else enc.prefix_leaves(tree)
    target_leaves = tree.leaf_array(enc.targets)
    pair_nodes, pair_level, pair_sample, pair_idx, targets, labels = [], [], [], [], [], []
    offset = 0
    for lv in range(1, L + 1):
        pos = target_leaves >> (L - lv)
        valid = tree.occupied_nodes(lv)
        k = min(neg_per_level, len(valid) - 1)
        pair_nodes.append(abstract_leaves(leaves, behavior_level(params, lv), L))
        pair_level.append(np.full(n, lv, dtype=np.int64))
        pair_sample.append(np.arange(n, dtype=np.int64))
        rows = offset + np.arange(n, dtype=np.int64)
        pair_idx.append(rows)
        targets.append(pos)
        labels.append(np.ones(n))
        if k > 0:
            pos_rank = np.searchsorted(valid, pos)
            draw = _draw_distinct(rng, n, len(valid) - 1, k)
            draw = draw + (draw >= pos_rank[:, None])
            pair_idx.append(np.repeat(rows, k))
            targets.append(valid[draw].reshape(-1))
            labels.append(np.zeros(n * k))
        offset += n
    return InstanceBatch(
        np.concatenate(pair_nodes), np.concatenate(pair_level), np.concatenate(pair_sample),
        np.concatenate(pair_idx), np.concatenate(targets), np.concatenate(labels),
    )


def build_level_instances(params, sample, tree, neg_per_level, rng):
    """Instances for a single :class:`TrainingSample`, as objects."""
    enc = encode_samples([sample], params.window_len)
    batch = build_instances(params, enc, tree, neg_per_level, rng)
    out = []
    for p, t, y in zip(batch.pair_idx, batch.targets, batch.labels):
        feat = HierarchicalFeature(int(batch.pair_level[p]), tuple(int(x) for x in batch.pair_nodes[p]), int(t))
        out.append(LevelInstance(feat, int(y)))
    return out


# -- loss and gradients ------------------------------------------------------------

@dataclass
class Grads:
    embeddings: np.ndarray
    weights: list
    biases: list

    def arrays(self):
        out = [self.embeddings]
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def logits(params, batch):
    pooled, _ = pool(params, batch.pair_nodes)
    z1 = user_preactivation(params, pooled)[batch.pair_idx] + target_preactivation(params, batch.targets)
    return head(params, z1)


def bce_loss(params, batch):
    z = logits(params, batch)
    return float(np.mean(np.logaddexp(0.0, z) - batch.labels * z))


def loss_and_grads(params, batch):
    """Mean binary cross-entropy over ``batch`` and its exact gradient."""
    D = params.emb_dim
    E = params.embeddings
    W, B = params.weights, params.biases
    n = len(batch)
    n_pairs = len(batch.pair_nodes)

    pooled, counts = pool(params, batch.pair_nodes)
    t_emb = E[batch.targets]
    z1 = (pooled @ W[0][:D])[batch.pair_idx] + t_emb @ W[0][D:] + B[0]
    pre = [z1]
    acts = [np.maximum(z1, 0.0)]
    for w, b in zip(W[1:], B[1:]):
        z = acts[-1] @ w + b
        pre.append(z)
        acts.append(np.maximum(z, 0.0))
    z = pre[-1][:, 0]
    loss = float(np.mean(np.logaddexp(0.0, z) - batch.labels * z))

    dz = ((sigmoid(z) - batch.labels) / n)[:, None]
    gW = [None] * len(W)
    gB = [None] * len(B)
    for i in range(len(W) - 1, 0, -1):
        gW[i] = acts[i - 1].T @ dz
        gB[i] = dz.sum(axis=0)
        dz = (dz @ W[i].T) * (pre[i - 1] > 0)
    # dz is now d loss / d z1, shape (n, H1)
    to_pair = sp.csr_matrix((np.ones(n), (batch.pair_idx, np.arange(n))), shape=(n_pairs, n))
    d_user = to_pair @ dz
    gW0 = np.empty_like(W[0])
    gW0[:D] = pooled.T @ d_user
    gW0[D:] = t_emb.T @ dz
    gW[0] = gW0
    gB[0] = dz.sum(axis=0)

    d_pooled = d_user @ W[0][:D].T
    d_target = dz @ W[0][D:].T
    rows_p, cols_p = np.nonzero(batch.pair_nodes > 0)
    nodes_p = batch.pair_nodes[rows_p, cols_p]
    scat_rows = np.concatenate([nodes_p, batch.targets])
    scat_cols = np.concatenate([rows_p, n_pairs + np.arange(n)])
    scat_vals = np.concatenate([1.0 / counts[rows_p], np.ones(n)])
    scatter = sp.csr_matrix((scat_vals, (scat_rows, scat_cols)), shape=(E.shape[0], n_pairs + n))
    gE = scatter @ np.vstack([d_pooled, d_target])
    gE[0] = 0.0
    return loss, Grads(np.asarray(gE), gW, gB)


def global_loss(params, samples, tree, chunk=4096):
    """Summed negative log preference of each sample's path nodes, levels 1..l_max.

    Samples are put in canonical order and terms are accumulated with
    ``math.fsum`` so the result does not depend on input order.
    """
    enc = encode_samples(samples, params.window_len)
    if len(enc) == 0:
        raise DataError("global_loss needs at least one sample")
    enc = enc.subset(canonical_order(enc))
    terms = []
    for start in range(0, len(enc), chunk):
        part = enc.subset(slice(start, start + chunk))
        batch = build_instances(params, part, tree, 0, None)
        terms.extend(log_sigmoid(logits(params, batch)).tolist())
    return -math.fsum(terms)


# -- optimisation --------------------------------------------------------------------

@dataclass
class OptimizerConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 256
    neg_per_level: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")


@dataclass
class Optimizer:
    config: OptimizerConfig
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads):
        cfg = self.config
        arrays = params.arrays()
        g_arrays = grads.arrays()
        if cfg.optimizer == "sgd":
            for a, g in zip(arrays, g_arrays):
                a -= cfg.lr * g
        else:
            if not self.m:
                self.m = [np.zeros_like(a) for a in arrays]
                self.v = [np.zeros_like(a) for a in arrays]
            self.step_count += 1
            t = self.step_count
            c1 = 1.0 - cfg.beta1 ** t
            c2 = 1.0 - cfg.beta2 ** t
            for a, g, m, v in zip(arrays, g_arrays, self.m, self.v):
                m *= cfg.beta1
                m += (1.0 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1.0 - cfg.beta2) * g * g
                a -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        params.embeddings[0] = 0.0


def train_epoch(params, samples, tree, config, rng, optimizer=None):
    """One pass of mini-batch descent on the level-instance BCE.

    ``config.batch_size`` counts training samples; each expands into its
    level instances. Updates ``params`` in place and returns it together
    with the mean per-batch loss.
    """
    if config.lr < 0 or config.batch_size < 1:
        raise ConfigError("need lr >= 0 and batch_size >= 1")
    enc = encode_samples(samples, params.window_len)
    if len(enc) == 0:
        raise DataError("no training samples")
    optimizer = optimizer or Optimizer(config)
    all_leaves = enc.prefix_leaves(tree)
    order = rng.permutation(len(enc))
    losses = []
    for start in range(0, len(order), config.batch_size):
        idx = order[start:start + config.batch_size]
        batch = build_instances(params, enc.subset(idx), tree, config.neg_per_level, rng,
                                prefix_leaves=all_leaves[idx])
        loss, grads = loss_and_grads(params, batch)
        if not (math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads.arrays())):
            raise DivergenceError(f"non-finite loss or gradient at batch starting {start} (loss={loss})")
        optimizer.step(params, grads)
        losses.append(loss)
    mean_loss = float(np.mean(losses))
    if not params.is_finite():
        raise DivergenceError("parameters became non-finite")
    return params, mean_loss


# -- checkpoint ------------------------------------------------------------------------

def save_params(params, path):
    header = (
        MODEL_MAGIC + b"\n"
        + f"lmax={params.l_max}\n".encode()
        + f"emb_dim={params.emb_dim}\n".encode()
        + f"hidden_dims={','.join(map(str, params.hidden_dims))}\n".encode()
        + f"window_len={params.window_len}\n".encode()
        + f"hierarchical={int(params.hierarchical)}\n".encode()
        + b"payload\n"
    )
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    Path(path).write_bytes(header + payload)


def load_params(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    data = path.read_bytes()
    marker = b"\npayload\n"
    cut = data.find(marker)
    if not data.startswith(MODEL_MAGIC + b"\n") or cut < 0:
        raise DataError(f"{path}: not a JTM-MODEL v1 checkpoint")
    fields = dict(line.split("=", 1) for line in data[len(MODEL_MAGIC) + 1:cut].decode().splitlines())
    try:
        l_max = int(fields["lmax"])
        emb_dim = int(fields["emb_dim"])
        hidden = tuple(int(x) for x in fields["hidden_dims"].split(",") if x)
        window_len = int(fields["window_len"])
        hierarchical = bool(int(fields.get("hierarchical", "1")))
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: bad checkpoint header ({exc})") from None
    payload = np.frombuffer(data[cut + len(marker):], dtype="<f8")
    shapes = [((1 << (l_max + 1)), emb_dim)]
    for fan_in, fan_out in layer_shapes(emb_dim, hidden):
        shapes += [(fan_in, fan_out), (fan_out,)]
    need = sum(int(np.prod(s)) for s in shapes)
    if payload.size != need:
        raise DataError(f"{path}: payload has {payload.size} values, expected {need}")
    arrays, pos = [], 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(payload[pos:pos + size].reshape(s).astype(np.float64))
        pos += size
    return ModelParams(l_max, emb_dim, hidden, window_len, arrays[0], arrays[1::2], arrays[2::2], hierarchical)
