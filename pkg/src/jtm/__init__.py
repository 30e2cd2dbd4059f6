"""Joint learning of a tree retrieval index and a user-node preference model."""

from jtm.tree import TreeIndex, ancestor, init_by_category, init_random
from jtm.model import ModelParams, init_params

__all__ = [
    "TreeIndex",
    "ancestor",
    "init_random",
    "init_by_category",
    "ModelParams",
    "init_params",
]

__version__ = "0.1.0"
