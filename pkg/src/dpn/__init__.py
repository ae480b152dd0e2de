"""Category discovery over precomputed embedding vectors.

Recognizes both known and novel categories in unlabeled data given labels
for the known categories only: cluster prototypes are matched against
known-category prototypes to decouple the unlabeled data, and a small
projection head is trained with semantically weighted prototype losses.
"""

from ._version import __version__
from .alignment import (
    Decoupling,
    PrototypeMatch,
    PrototypeSet,
    decouple,
    labeled_prototypes,
    match_prototypes,
    minimum_cost_assignment,
    prototype_distance_matrix,
    unlabeled_prototypes,
)
from .config import Config, load_config
from .data import (
    Dataset,
    LabelSpace,
    Split,
    SynthSpec,
    datasets_equal,
    generate_synthetic,
    load_dataset,
    load_manifest,
    save_dataset,
)
from .estimator import DecoupledPrototypicalNetwork
from .evaluation import EvalReport, clustering_accuracy, estimate_k, evaluate
from .head import ProjectionHead, identity_head, random_head
from .kernels import cosine_similarity, euclidean_distance, softmax
from .kmeans import Clustering, assign_to_nearest, kmeans
from .losses import (
    hard_assignment_loss,
    linear_cross_entropy,
    prototype_cross_entropy,
    prototype_regularization_loss,
    soft_assignment_loss,
)
from .training import (
    LossBreakdown,
    TrainState,
    ema_update,
    fit_arrays,
    load_checkpoint,
    save_checkpoint,
    total_loss,
    train,
)

__all__ = [
    "__version__",
    "Clustering",
    "Config",
    "Dataset",
    "Decoupling",
    "DecoupledPrototypicalNetwork",
    "EvalReport",
    "LabelSpace",
    "LossBreakdown",
    "ProjectionHead",
    "PrototypeMatch",
    "PrototypeSet",
    "Split",
    "SynthSpec",
    "TrainState",
    "assign_to_nearest",
    "clustering_accuracy",
    "cosine_similarity",
    "datasets_equal",
    "decouple",
    "ema_update",
    "estimate_k",
    "euclidean_distance",
    "evaluate",
    "fit_arrays",
    "generate_synthetic",
    "hard_assignment_loss",
    "identity_head",
    "kmeans",
    "labeled_prototypes",
    "linear_cross_entropy",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "load_manifest",
    "match_prototypes",
    "minimum_cost_assignment",
    "prototype_cross_entropy",
    "prototype_distance_matrix",
    "prototype_regularization_loss",
    "random_head",
    "save_checkpoint",
    "save_dataset",
    "soft_assignment_loss",
    "softmax",
    "total_loss",
    "train",
    "unlabeled_prototypes",
]
