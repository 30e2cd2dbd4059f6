"""Flat ``key=value`` run configuration.

One setting per line, ``#`` starts a comment, lists are comma-separated.
Unknown keys are rejected before any work starts.
"""

from dataclasses import dataclass, fields, replace
from pathlib import Path

from jtm.errors import ConfigError
from jtm.model import OptimizerConfig
from jtm.trainer import JointConfig


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text):
    if isinstance(text, (tuple, list)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _split(text):
    if isinstance(text, (tuple, list)):
        return tuple(float(x) for x in text)
    parts = tuple(float(x) for x in str(text).split(","))
    if len(parts) != 3:
        raise ValueError("split needs three comma-separated fractions")
    return parts


def _opt_int(text):
    if text is None or str(text).strip().lower() in ("", "none", "inf", "all"):
        return None
    return int(text)


@dataclass
class RunConfig:
    # corpus
    interactions: str = ""
    min_interactions: int = 10
    split: tuple = (0.8, 0.1, 0.1)
    window_len: int = 70
    # model
    emb_dim: int = 24
    hidden_dims: tuple = (128, 64, 24)
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 256
    neg_per_level: int = 5
    # tree learning
    gap_d: int = 7
    sample_cap_S: int = 256
    stickiness_eps: float = 1e-9
    # retrieval
    beam_k: int = 0
    result_M: int = 20
    # joint schedule
    T: int = 6
    E: int = 2
    seed: int = 0
    use_hierarchical: bool = True
    do_tree_learning: bool = True
    threads: int = 1
    loss_instances: int = 10_000
    # paths
    tree: str = ""
    model: str = ""
    out: str = ""

    def __post_init__(self):
        self.validate()

    @property
    def beam_width(self):
        return self.beam_k if self.beam_k > 0 else self.result_M

    def validate(self):
        if self.min_interactions < 1:
            raise ConfigError("min_interactions must be >= 1")
        if self.window_len < 1:
            raise ConfigError("window_len must be >= 1")
        if self.emb_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("dimensions must be positive")
        if self.result_M < 1:
            raise ConfigError("result_M must be >= 1")
        if self.beam_width < self.result_M:
            raise ConfigError(f"beam_k={self.beam_k} is smaller than result_M={self.result_M}")
        if self.gap_d < 1:
            raise ConfigError("gap_d must be >= 1")
        if self.sample_cap_S is not None and self.sample_cap_S < 1:
            raise ConfigError("sample_cap_S must be >= 1")
        if self.stickiness_eps < 0:
            raise ConfigError("stickiness_eps must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        self.optimizer_config()
        self.joint_config()

    def optimizer_config(self):
        return OptimizerConfig(self.optimizer, self.lr, self.batch_size, self.neg_per_level)

    def joint_config(self):
        return JointConfig(
            iterations=self.T, epochs=self.E, optimizer=self.optimizer_config(), gap=self.gap_d,
            sample_cap=self.sample_cap_S, stickiness=self.stickiness_eps,
            use_hierarchical=self.use_hierarchical, do_tree_learning=self.do_tree_learning,
            seed=self.seed, emb_dim=self.emb_dim, hidden_dims=tuple(self.hidden_dims),
            window_len=self.window_len, loss_instances=self.loss_instances,
            result_size=self.result_M, beam_width=self.beam_width, threads=self.threads,
        )

    def updated(self, **overrides):
        clean = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **coerce(clean))


_PARSERS = {
    bool: _bool,
    int: int,
    float: float,
    str: str,
    tuple: _int_list,
}


def coerce(raw):
    known = {f.name: f for f in fields(RunConfig)}
    out = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "split":
            parse = _split
        elif key == "sample_cap_S":
            parse = _opt_int
        else:
            parse = _PARSERS[type(getattr(RunConfig, key, known[key].default))]
        try:
            out[key] = parse(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None
    return out


def parse_config_text(text):
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return RunConfig(**coerce(raw))


def load_config(path=None):
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def dump_config(cfg):
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = int(value)
        elif value is None:
            value = "none"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"
