"""End-to-end in-memory pipeline: data -> clusters -> pretrain -> names ->
adapt -> eval. The CLI mirrors these stages with file artifacts in between.

Synthetic classes split 50/50: the first half is clustered and adapted on,
the second half is reserved for evaluation, so every evaluated concept is
unseen during both training stages.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .clustering import ClusterModel, DifficultyPools, centroid_distance_matrix, difficulty_pools, kmeans
from .embeddings import EmbeddingMatrix, GroundTruth, RowLookup, SyntheticSpec, generate_synthetic
from .errors import ValidationError
from .evaluation import DecodeConfig, EvalReport, FewShotTask, build_benchmark, build_easy_hard, evaluate_open_ended
from .lexicon import Lexicon, build_lexicon
from .model import TinyVLMConfig
from .naming import NameAssignment, Vocabulary, assign_names, build_vocabulary
from .training import RunConfig, TrainLog, pretrain_captioner, secat_adapt
from .wordbank import BASE_NOUNS

EVAL_POOL_COUNT = 5
EVAL_POOL_CLASSES = 8
EVAL_POOL_ROW_BASE = 10_000_000


def default_adapt_config(**overrides) -> RunConfig:
    base = dict(
        stage="adapt", lr_peak=3e-4, warmup_steps=250, total_steps=5000, batch_size=16
    )
    base.update(overrides)
    return RunConfig(**base)


def default_pretrain_config(adapt_cfg: RunConfig, **overrides) -> RunConfig:
    cfg = replace(
        adapt_cfg,
        stage="pretrain",
        lr_peak=1e-3,
        warmup_steps=200,
        total_steps=3000,
        batch_size=32,
    )
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def build_dataset(cfg: RunConfig):
    spec = SyntheticSpec(
        n_classes=cfg.data_classes,
        per_class=cfg.data_per_class,
        dim=cfg.data_dim,
        separation=cfg.data_separation,
        seed=cfg.data_seed,
    )
    matrix, gt = generate_synthetic(spec)
    half = cfg.data_classes // 2
    adapt_classes = tuple(range(half))
    eval_classes = tuple(range(half, cfg.data_classes))
    return matrix, gt, adapt_classes, eval_classes


def slice_rows(matrix: EmbeddingMatrix, gt: GroundTruth, class_ids) -> EmbeddingMatrix:
    """Rows belonging to the given classes, global row ids preserved."""
    keep = np.isin(gt.labels, np.asarray(class_ids))
    return EmbeddingMatrix(np.array(matrix.data[keep]), matrix.row_ids[keep])


def cluster_stage(cfg: RunConfig, adapt_matrix: EmbeddingMatrix):
    model = kmeans(adapt_matrix, cfg.k, cfg.kmeans_iters, seed=cfg.data_seed)
    pools = difficulty_pools(centroid_distance_matrix(model), cfg.pool_fraction)
    return model, pools


def build_eval_pools(cfg: RunConfig) -> list[tuple[EmbeddingMatrix, GroundTruth]]:
    """Independent synthetic pools for the easy/hard splits, with disjoint
    class names and globally unique row ids."""
    pools = []
    for i in range(EVAL_POOL_COUNT):
        spec = SyntheticSpec(
            n_classes=EVAL_POOL_CLASSES,
            per_class=cfg.data_per_class,
            dim=cfg.data_dim,
            separation=cfg.data_separation,
            seed=cfg.data_seed + 1000 + i,
        )
        matrix, gt = generate_synthetic(spec)
        lo = i * EVAL_POOL_CLASSES
        names = BASE_NOUNS[lo : lo + EVAL_POOL_CLASSES]
        matrix = EmbeddingMatrix(
            np.array(matrix.data), matrix.row_ids + EVAL_POOL_ROW_BASE + i * 1_000_000
        )
        pools.append((matrix, GroundTruth(gt.labels, tuple(names))))
    return pools


def lexicon_stage(cfg: RunConfig, gt: GroundTruth, vocab: Vocabulary,
                  extra_names=()) -> Lexicon:
    names = list(gt.class_names) + list(extra_names)
    return build_lexicon(names, vocab.words, cfg.template, cfg.dynamic_slots)


@dataclass
class PipelineArtifacts:
    config: RunConfig
    pretrain_config: RunConfig
    matrix: EmbeddingMatrix
    gt: GroundTruth
    adapt_classes: tuple[int, ...]
    eval_classes: tuple[int, ...]
    clusters: ClusterModel
    pools: DifficultyPools
    vocab: Vocabulary
    lexicon: Lexicon
    names: NameAssignment
    model_config: TinyVLMConfig
    pretrained: dict
    adapted: dict
    lookup: RowLookup
    tasks: list[FewShotTask]
    report: EvalReport

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(
            beam_width=self.config.beam_width,
            max_new=self.config.eval_max_new,
            dynamic_init_std=self.config.dynamic_init_std,
            dynamic_bias_boost=self.config.dynamic_bias_boost,
        )


def build_tasks_for(cfg: RunConfig, matrix, gt, eval_classes, lex, names,
                    lookup_extra=None) -> tuple[list[FewShotTask], RowLookup]:
    if cfg.eval_split == "standard":
        tasks = build_benchmark(
            matrix, gt, eval_classes, cfg.eval_n, cfg.eval_j, cfg.eval_mode,
            cfg.eval_tasks, seed=cfg.data_seed, lex=lex, template=cfg.template,
            forbid_words=names.target_words(),
        )
        lookup = RowLookup(matrix)
    else:
        pools = lookup_extra or build_eval_pools(cfg)
        tasks = build_easy_hard(
            pools, cfg.eval_n, cfg.eval_j, cfg.eval_split, cfg.eval_tasks,
            seed=cfg.data_seed, template=cfg.template,
        )
        lookup = RowLookup(matrix, *[m for m, _ in pools])
    return tasks, lookup


def run_pipeline(cfg: RunConfig, pretrain_cfg: RunConfig | None = None,
                 logs: dict | None = None) -> PipelineArtifacts:
    """Full chain under one adaptation config; the pretraining config defaults
    to the desk pretraining recipe over the same data and model dims."""
    if cfg.stage != "adapt":
        raise ValidationError("run_pipeline expects an adapt-stage config")
    pre_cfg = pretrain_cfg or default_pretrain_config(cfg)
    for key in ("data_classes", "data_per_class", "data_dim", "data_separation",
                "data_seed", "d_model", "n_layers", "n_heads", "prefix_len",
                "template", "dynamic_slots"):
        if getattr(pre_cfg, key) != getattr(cfg, key):
            raise ValidationError(f"pretrain/adapt configs disagree on {key}")
    matrix, gt, adapt_classes, eval_classes = build_dataset(cfg)
    adapt_matrix = slice_rows(matrix, gt, adapt_classes)
    clusters, pools = cluster_stage(cfg, adapt_matrix)
    vocab = build_vocabulary(cfg.vocab_kind, cfg.effective_vocab_size, seed=cfg.data_seed)
    eval_pools = build_eval_pools(cfg) if cfg.eval_split != "standard" else None
    extra_names = []
    if eval_pools:
        for _, pgt in eval_pools:
            extra_names.extend(pgt.class_names)
    lex = lexicon_stage(cfg, gt, vocab, extra_names)
    pre_log = TrainLog(pre_cfg) if logs is not None else None
    pretrained, model_config = pretrain_captioner(pre_cfg, matrix, gt, adapt_classes, lex, log=pre_log)
    names = assign_names(
        clusters, vocab, pretrained, model_config, lex,
        method=cfg.matching, template=cfg.template, seed=cfg.data_seed,
    )
    adapt_log = TrainLog(cfg) if logs is not None else None
    adapted = secat_adapt(
        cfg, pretrained, model_config, lex, clusters, names, pools,
        RowLookup(matrix), log=adapt_log,
    )
    tasks, lookup = build_tasks_for(cfg, matrix, gt, eval_classes, lex, names, eval_pools)
    report = evaluate_open_ended(
        adapted, model_config, lex, tasks, lookup,
        decode_config=DecodeConfig(
            beam_width=cfg.beam_width, max_new=cfg.eval_max_new,
            dynamic_init_std=cfg.dynamic_init_std,
            dynamic_bias_boost=cfg.dynamic_bias_boost,
        ),
        template=cfg.template, seed=cfg.data_seed,
    )
    if logs is not None:
        logs["pretrain"] = pre_log
        logs["adapt"] = adapt_log
    return PipelineArtifacts(
        config=cfg, pretrain_config=pre_cfg, matrix=matrix, gt=gt,
        adapt_classes=adapt_classes, eval_classes=eval_classes,
        clusters=clusters, pools=pools, vocab=vocab, lexicon=lex, names=names,
        model_config=model_config, pretrained=pretrained, adapted=adapted,
        lookup=lookup, tasks=tasks, report=report,
    )
