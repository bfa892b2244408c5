"""Two training stages over one config schema.

Stage "pretrain" teaches plain captioning on single (embedding, caption)
pairs with ground-truth base names. Stage "adapt" optimizes the query-caption
loss over interleaved self-context batches while the visual-prefix mapping
network stays frozen.

Desk-scale defaults keep the full pipeline in the minutes range on one CPU;
reference-scale values from the original recipe (peak LR 2e-5/5e-6, batch
160/15, 370k/80k iterations, 5000 warmup) are documented in the README and
are far outside desk budgets.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .clustering import ClusterModel, DifficultyPools
from .embeddings import EmbeddingMatrix, GroundTruth, RowLookup
from .episodes import mixed_batch, render_caption_example
from .errors import OptimizerDivergenceError, ValidationError
from .lexicon import Lexicon
from .model import TinyVLMConfig, forward_loss, backward, init_params
from .naming import NameAssignment
from .optim import AdamWConfig, AdamWState, lr_schedule, step_optimizer

STAGES = ("pretrain", "adapt")
MAPPING_NET_KEYS = frozenset({"map.w1", "map.b1", "map.w2", "map.b2"})


@dataclass
class RunConfig:
    stage: str = "adapt"
    seed: int = 0
    # synthetic data (classes split 50/50 into adaptation and evaluation)
    data_classes: int = 64
    data_per_class: int = 50
    data_dim: int = 64
    data_separation: float = 5.0
    data_seed: int = 100
    # clustering
    k: int = 32
    kmeans_iters: int = 10
    pool_fraction: float = 0.05
    # naming
    vocab_kind: str = "nouns"
    vocab_size: int = 0  # 0 means "equal to k"
    matching: str = "cost_based"
    template: str = "This is a {}"
    # episode structure
    difficulty: str = "varying"
    task_mode: str = "mixed"
    # model dims
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    prefix_len: int = 5
    map_hidden: int = 128
    max_len: int = 160
    caption_cap: int = 10
    init_std: float = 0.02
    dynamic_slots: int = 16
    dynamic_init_std: float = 0.02
    dynamic_bias_boost: float = 10.0
    # optimization
    lr_peak: float = 1e-3
    warmup_steps: int = 200
    total_steps: int = 3000
    batch_size: int = 32
    weight_decay: float = 0.01
    adapt_token_embeddings: bool = True
    holdout_fraction: float = 0.2
    # evaluation
    eval_tasks: int = 1000
    eval_n: int = 2
    eval_j: int = 1
    eval_mode: str = "open_ended"
    eval_split: str = "standard"
    beam_width: int = 3
    eval_max_new: int = 1
    pseudo_labels: bool = False
    augment_shots: int = 0
    k_divisor: int = 1

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValidationError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.warmup_steps > self.total_steps:
            raise ValidationError("warmup_steps must not exceed total_steps")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.data_classes % 2 != 0:
            raise ValidationError("data_classes must be even for the 50/50 split")
        if not (0.0 <= self.holdout_fraction < 1.0):
            raise ValidationError("holdout_fraction must be in [0, 1)")

    @property
    def effective_vocab_size(self) -> int:
        return self.vocab_size if self.vocab_size > 0 else self.k

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(f.read())


def make_model_config(config: RunConfig, vocab_size: int) -> TinyVLMConfig:
    return TinyVLMConfig(
        vocab_size=vocab_size,
        input_dim=config.data_dim,
        d_model=config.d_model,
        n_layers=config.n_layers,
        n_heads=config.n_heads,
        d_ff=config.d_ff,
        prefix_len=config.prefix_len,
        map_hidden=config.map_hidden,
        max_len=config.max_len,
        init_std=config.init_std,
    )


class TrainLog:
    """One record per optimizer step, JSONL on disk, config snapshot first."""

    def __init__(self, config: RunConfig | None = None):
        self.records: list[dict] = []
        self.config_snapshot = asdict(config) if config else {}

    def add(self, step: int, loss: float, lr: float, wall_clock: float) -> None:
        if self.records and step <= self.records[-1]["step"]:
            raise ValidationError("train log steps must increase")
        self.records.append(
            {"step": step, "loss": loss, "lr": lr, "wall_clock": wall_clock}
        )

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps({"config": self.config_snapshot}, sort_keys=True) + "\n")
            for rec in self.records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")


def _train_rows(gt: GroundTruth, class_ids, per_class_holdout: float, n_rows: int):
    """Split the rows of the given classes into train and held-out indices."""
    train, held = [], []
    for c in class_ids:
        rows = np.flatnonzero(gt.labels == c)
        n_hold = int(round(per_class_holdout * len(rows)))
        if n_hold:
            held.extend(rows[-n_hold:])
            train.extend(rows[:-n_hold])
        else:
            train.extend(rows)
    return np.asarray(train, dtype=np.int64), np.asarray(held, dtype=np.int64)


def caption_token_accuracy(
    params, model_config, lex: Lexicon, matrix: EmbeddingMatrix,
    gt: GroundTruth, rows, template: str, caption_cap: int = 10,
) -> float:
    """Teacher-forced argmax accuracy over caption token positions."""
    lookup = RowLookup(matrix)
    correct = total = 0
    rows = list(rows)
    for lo in range(0, len(rows), 64):
        chunk = rows[lo : lo + 64]
        batch = [
            render_caption_example(
                int(matrix.row_ids[r]),
                template.format(gt.class_names[gt.labels[r]]),
                lex, model_config.max_len, model_config.prefix_len, caption_cap,
            )
            for r in chunk
        ]
        _, trace = forward_loss(params, model_config, batch, lookup)
        pred = trace.logits.argmax(axis=1)
        correct += int((pred == trace.tgt_ids).sum())
        total += len(trace.tgt_ids)
    return correct / total if total else 0.0


def pretrain_captioner(
    config: RunConfig,
    matrix: EmbeddingMatrix,
    gt: GroundTruth,
    class_ids,
    lex: Lexicon,
    log: TrainLog | None = None,
) -> tuple[dict, TinyVLMConfig]:
    """Caption single embeddings with their base names for total_steps."""
    model_config = make_model_config(config, len(lex))
    params = init_params(model_config, seed=config.seed)
    train_rows, _ = _train_rows(gt, class_ids, config.holdout_fraction, matrix.n_rows)
    if len(train_rows) == 0:
        raise ValidationError("no training rows available")
    lookup = RowLookup(matrix)
    state = AdamWState.init(params)
    adamw = AdamWConfig(weight_decay=config.weight_decay)
    t0 = time.monotonic()
    for step in range(config.total_steps):
        rng = np.random.default_rng([config.seed, step, 37])
        rows = rng.choice(train_rows, size=config.batch_size, replace=True)
        batch = [
            render_caption_example(
                int(matrix.row_ids[r]),
                config.template.format(gt.class_names[gt.labels[r]]),
                lex, model_config.max_len, model_config.prefix_len, config.caption_cap,
            )
            for r in rows
        ]
        loss, trace = forward_loss(params, model_config, batch, lookup)
        if not np.isfinite(loss):
            raise OptimizerDivergenceError(f"pretraining diverged at step {step}")
        grads = backward(params, model_config, trace)
        lr = lr_schedule(step + 1, config.lr_peak, config.warmup_steps, config.total_steps)
        step_optimizer(params, grads, state, lr, adamw)
        if log is not None:
            log.add(step, loss, lr, time.monotonic() - t0)
    return params, model_config


def secat_adapt(
    config: RunConfig,
    params: dict,
    model_config: TinyVLMConfig,
    lex: Lexicon,
    clusters: ClusterModel,
    names: NameAssignment,
    pools: DifficultyPools | None,
    lookup: RowLookup,
    log: TrainLog | None = None,
) -> dict:
    """Self-context adaptation from a pretrained checkpoint; the mapping
    network never moves, token embeddings move only if configured."""
    params = {k: v.copy() for k, v in params.items()}
    frozen = set(MAPPING_NET_KEYS)
    if not config.adapt_token_embeddings:
        frozen.add("tok_emb")
    frozen = frozenset(frozen)
    state = AdamWState.init(params)
    adamw = AdamWConfig(weight_decay=config.weight_decay)
    t0 = time.monotonic()
    for step in range(config.total_steps):
        batch, _eps = mixed_batch(
            clusters, names, pools, lex,
            batch_size=config.batch_size,
            seed=int(np.random.default_rng([config.seed, step, 41]).integers(2**31)),
            difficulty=config.difficulty,
            task_mode=config.task_mode,
            max_len=model_config.max_len,
            prefix_len=model_config.prefix_len,
            caption_cap=config.caption_cap,
            template=config.template,
        )
        loss, trace = forward_loss(params, model_config, batch, lookup)
        if not np.isfinite(loss):
            raise OptimizerDivergenceError(f"adaptation diverged at step {step}")
        grads = backward(params, model_config, trace)
        lr = lr_schedule(step + 1, config.lr_peak, config.warmup_steps, config.total_steps)
        step_optimizer(params, grads, state, lr, adamw, frozen=frozen)
        if log is not None:
            log.add(step, loss, lr, time.monotonic() - t0)
    return params
