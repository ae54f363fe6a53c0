"""Correlation-redundancy pruning planner for CNN/MLP weights.

Pipeline: parse an architecture manifest, score filter redundancy from the
trained weights, fold in parameter/FLOP regularizers, rank all prunable
filters network-wide, and emit a plan whose application to the weight
container reproduces the predicted savings exactly.
"""

from .errors import (
    ConfigError,
    ContainerError,
    ManifestError,
    PlanError,
    PruneKitError,
)
from .model_graph import (
    CouplingGroup,
    LayerSpec,
    ModelGraph,
    coupling_groups,
    infer_spatial_dims,
    parse_manifest,
    serialize_manifest,
)
from .weight_store import (
    WeightContainer,
    WeightTensor,
    container,
    read_container,
    slice_tensor,
    tensor,
    write_container,
)
from .importance import (
    ImportanceTable,
    SimilarityMatrix,
    normalize,
    pearson,
    similarity_matrix,
    topk_importance,
)
from .cost_model import (
    CostTable,
    Reduction,
    RegularizerTable,
    layer_costs,
    predict_reduction,
    regularized_importance,
    regularizer,
)
from .planner import (
    PlanConfig,
    PruningPlan,
    apply_plan,
    build_plan,
    merge_equivalence_check,
    plan_from_text,
    plan_to_text,
    score_graph,
)
from .fixtures import fixture_graph, fixture_manifest, fixture_names, synthesize_weights

__version__ = "0.1.0"
