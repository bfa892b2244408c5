"""Self-context adaptation at desk scale: cluster unlabeled embeddings, give
the clusters arbitrary names, build interleaved image/pseudo-caption episodes,
adapt a tiny visual language model on them, and score open-ended few-shot
concept binding."""

__version__ = "0.1.0"

from .embeddings import EmbeddingMatrix, GroundTruth, SyntheticSpec, generate_synthetic
from .clustering import ClusterModel, DifficultyPools, centroid_distance_matrix, difficulty_pools, kmeans
from .matching import hungarian_match
from .naming import NameAssignment, Vocabulary, assign_names, build_vocabulary, name_cost_matrix
from .episodes import Episode, ModelInput, mixed_batch, render_sequence, sample_episode
from .model import TinyVLMConfig, backward, decode, forward_loss, init_params, map_visual
from .optim import AdamWConfig, AdamWState, lr_schedule, step_optimizer
from .training import RunConfig, TrainLog, pretrain_captioner, secat_adapt
from .evaluation import (
    DecodeConfig, EvalOptions, EvalReport, FewShotTask,
    build_benchmark, build_easy_hard, evaluate_open_ended, run_ablation,
)
from .pipeline import PipelineArtifacts, default_adapt_config, default_pretrain_config, run_pipeline
