"""Meta-path-free learning on heterogeneous graphs with composed relation types
and dual-level attention."""

__version__ = "0.1.0"

from .graph import (  # noqa: E402
    GraphFormatError,
    HeteroGraph,
    LabelTable,
    load_features,
    load_graph,
    load_labels,
    make_graph,
    save_graph,
    validate,
)
from .metrics import aggregate, f1_scores  # noqa: E402
from .model import ModelConfig, Regather  # noqa: E402
from .relations import (  # noqa: E402
    RelationError,
    RelationMatrix,
    RelationSet,
    build_relation_set,
    compose,
    decompose,
    finalize,
    homogeneous_relation_set,
    relation_catalog,
    with_reverses,
)
from .training import SplitSpec, TrainConfig, make_split, train  # noqa: E402

__all__ = [
    "GraphFormatError", "HeteroGraph", "LabelTable", "load_features", "load_graph", "load_labels",
    "make_graph", "save_graph", "validate", "aggregate", "f1_scores", "ModelConfig", "Regather",
    "RelationError", "RelationMatrix", "RelationSet", "build_relation_set", "compose", "decompose",
    "finalize", "homogeneous_relation_set", "relation_catalog", "with_reverses", "SplitSpec",
    "TrainConfig", "make_split", "train",
]
