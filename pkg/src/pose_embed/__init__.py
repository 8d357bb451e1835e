"""Triplet-trained pose embeddings and pose retrieval evaluation."""

__version__ = "0.1.0"

from .pose import (
    DEFAULT_ROOT_INDEX,
    JOINT_NAMES,
    N_JOINTS,
    DistanceMatrix,
    MatrixBudgetError,
    Pose,
    PoseDataset,
    center_pose,
    pairwise_distance_matrix,
    pose_distance,
)
from .mining import (
    AugmentationSpec,
    Triplet,
    TripletSpec,
    TripletStream,
    augment_sample,
    enumerate_triplets,
    negative_set,
    positive_set,
)
from .render import CanvasSpec, fit_to_canvas, render_skeleton
from .model import (
    AdaGradState,
    EmbeddingModel,
    adagrad_update,
    gradient_check,
    gradients,
    triplet_loss,
)
from .train import TrainConfig, train
from .retrieval import (
    EmbeddingTable,
    MetricCurve,
    RankList,
    embed_all,
    fuse_distances,
    hit_at_k_absolute,
    hit_at_k_relative,
    oracle_ranklists,
    pose_difference_at_k,
    random_ranklists,
    rank_database,
)
from .data import generate_synthetic, load_annotations, split_dataset
from .config import RunConfig
from .pipeline import run_pipeline
