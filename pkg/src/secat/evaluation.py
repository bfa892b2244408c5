"""Few-shot benchmark construction, open-ended scoring, and the ablation grid.

Open-ended tasks bind fresh nonsense words to the lexicon's reserved dynamic
slots. Per task the active slots get re-initialized embeddings (seeded
Gaussian) plus a fixed logit-bias boost so a never-trained word is emittable
at all; unused slots are disabled. A model with no context skill therefore
coin-flips among the task's fresh names, while a context-reading model must
rank them correctly. The boost shifts all candidates equally, so it never
changes which candidate wins. Scoring is exact match of the generated name
(up to <EOS>, after whitespace/case normalization) against the target; the
desk-scale generation horizon is the atomic name length.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .clustering import ClusterModel
from .embeddings import EmbeddingMatrix, GroundTruth, RowLookup
from .episodes import Episode, render_sequence
from .errors import ConfigurationError, SamplingError, ValidationError
from .lexicon import Lexicon, normalize_text, template_stem, words_of
from .model import TinyVLMConfig, decode
from .naming import NameAssignment, fresh_nonsense_words

NAMING_MODES = ("real_name", "open_ended")
SPLITS = ("standard", "easy", "hard")
ABLATION_KINDS = (
    "difficulty", "vocabulary", "matching", "task_mode", "model_size", "template", "k_sweep",
)
K_SWEEP_GRID = (25, 50, 75, 100, 200)
DISABLED_SLOT_BIAS = -30.0


@dataclass(frozen=True)
class FewShotTask:
    episode: Episode
    naming_mode: str
    split: str = "standard"
    fresh_words: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.naming_mode not in NAMING_MODES:
            raise ValidationError(f"unknown naming mode {self.naming_mode!r}")
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split {self.split!r}")
        if self.naming_mode == "open_ended" and len(self.fresh_words) != self.episode.n:
            raise ValidationError("open-ended task needs one fresh word per way")


@dataclass
class EvalOptions:
    pseudo_labels: bool = False
    augment_shots: int = 0
    cluster_model: ClusterModel | None = None
    names: NameAssignment | None = None

    def __post_init__(self):
        if (self.pseudo_labels or self.augment_shots) and (
            self.cluster_model is None or self.names is None
        ):
            raise ValidationError(
                "pseudo_labels/augment_shots need a cluster model and a name assignment"
            )


@dataclass
class DecodeConfig:
    beam_width: int = 3
    max_new: int = 1
    dynamic_init_std: float = 0.02
    dynamic_bias_boost: float = 10.0


@dataclass(frozen=True)
class EvalReport:
    n: int
    j: int
    mode: str
    split: str
    task_count: int
    accuracy: float
    ci_half_width: float
    seed: int
    kind: str = ""
    factor: str = ""
    k: int = 0
    options: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def confidence_half_width(p: float, count: int) -> float:
    return 1.96 * math.sqrt(max(p * (1.0 - p), 0.0) / count)


def _rows_by_class(gt: GroundTruth, class_ids) -> dict[int, np.ndarray]:
    return {int(c): np.flatnonzero(gt.labels == c) for c in class_ids}


def _interleave(class_rows, captions, j):
    """Round-robin (shot-major) support order: c1 s1, c2 s1, ..., c1 s2, ..."""
    out = []
    for s in range(j):
        for c, rows in class_rows:
            out.append((int(rows[s]), captions[c]))
    return out


def build_benchmark(
    matrix: EmbeddingMatrix,
    gt: GroundTruth,
    class_ids,
    n: int,
    j: int,
    mode: str,
    count: int,
    seed: int,
    lex: Lexicon,
    template: str = "This is a {}",
    forbid_words=(),
) -> list[FewShotTask]:
    """`count` i.i.d. n-way j-shot tasks over the given (held-out) classes."""
    if mode not in NAMING_MODES:
        raise ValidationError(f"unknown naming mode {mode!r}")
    if count < 1:
        raise ValidationError("count must be >= 1")
    by_class = _rows_by_class(gt, class_ids)
    usable = [c for c, rows in by_class.items() if len(rows) >= j + 1]
    if len(usable) < n:
        raise SamplingError(
            f"only {len(usable)} classes have >= {j + 1} items; need {n}"
        )
    avoid = set(lex.words) | {normalize_text(w) for w in forbid_words}
    tasks = []
    for t in range(count):
        rng = np.random.default_rng([seed, t, 29])
        classes = [int(c) for c in rng.choice(usable, size=n, replace=False)]
        query_cls = classes[0]  # classes are already in random order
        picks = []
        for c in classes:
            need = j + 1 if c == query_cls else j
            picks.append((c, rng.choice(by_class[c], size=need, replace=False)))
        query_row = int(matrix.row_ids[picks[0][1][-1]])
        if mode == "real_name":
            words = {c: gt.class_names[c] for c in classes}
            fresh: tuple[str, ...] = ()
        else:
            fw = fresh_nonsense_words(n, rng, avoid=avoid)
            words = {c: fw[i] for i, c in enumerate(classes)}
            fresh = tuple(fw)
        captions = {c: normalize_text(template.format(w)) for c, w in words.items()}
        class_rows = [(c, matrix.row_ids[rows]) for c, rows in picks]
        support = _interleave(class_rows, captions, j)
        ep = Episode(
            n=n, j=j, support=tuple(support), query_row=query_row,
            target=captions[query_cls], difficulty="unrestricted", seed=int(rng.integers(2**31)),
        )
        tasks.append(FewShotTask(ep, naming_mode=mode, split="standard", fresh_words=fresh, seed=t))
    return tasks


def build_easy_hard(
    pools: list[tuple[EmbeddingMatrix, GroundTruth]],
    n: int,
    j: int,
    split: str,
    count: int,
    seed: int,
    template: str = "This is a {}",
) -> list[FewShotTask]:
    """Easy tasks draw each way's class from a different dataset pool; hard
    tasks draw every class within one pool. The query class contributes j+1
    samples; pairs interleave round-robin."""
    if split not in ("easy", "hard"):
        raise ValidationError("split must be 'easy' or 'hard'")
    if split == "easy" and len(pools) < n:
        raise SamplingError(f"easy split needs >= {n} dataset pools, have {len(pools)}")
    if split == "hard" and not any(gt.n_classes >= n for _, gt in pools):
        raise SamplingError(f"hard split needs a pool with >= {n} classes")
    tasks = []
    for t in range(count):
        rng = np.random.default_rng([seed, t, 43])
        chosen: list[tuple[EmbeddingMatrix, GroundTruth, int]] = []
        if split == "easy":
            ds_idx = rng.choice(len(pools), size=n, replace=False)
            for d in ds_idx:
                matrix, gt = pools[int(d)]
                ok = [c for c in range(gt.n_classes)
                      if (gt.labels == c).sum() >= j + 1]
                chosen.append((matrix, gt, int(ok[rng.integers(len(ok))])))
        else:
            ok_pools = [i for i, (_, gt) in enumerate(pools) if gt.n_classes >= n]
            matrix, gt = pools[int(ok_pools[rng.integers(len(ok_pools))])]
            ok = [c for c in range(gt.n_classes) if (gt.labels == c).sum() >= j + 1]
            if len(ok) < n:
                raise SamplingError("hard split: not enough large classes in pool")
            for c in rng.choice(ok, size=n, replace=False):
                chosen.append((matrix, gt, int(c)))
        captions = []
        class_rows = []
        query_row = None
        target = None
        for i, (matrix, gt, c) in enumerate(chosen):
            rows = np.flatnonzero(gt.labels == c)
            need = j + 1 if i == 0 else j
            sel = rng.choice(rows, size=need, replace=False)
            cap = normalize_text(template.format(gt.class_names[c]))
            captions.append(cap)
            class_rows.append((i, matrix.row_ids[sel]))
            if i == 0:
                query_row = int(matrix.row_ids[sel[-1]])
                target = cap
        support = _interleave(class_rows, captions, j)
        ep = Episode(
            n=n, j=j, support=tuple(support), query_row=query_row,
            target=target, difficulty="unrestricted", seed=int(rng.integers(2**31)),
        )
        tasks.append(FewShotTask(ep, naming_mode="real_name", split=split, seed=t))
    return tasks


def _target_name(task_target: str, template: str) -> str:
    stem = template_stem(template)
    words = words_of(task_target)
    if words[: len(stem)] == stem:
        words = words[len(stem) :]
    return " ".join(words)


def _nearest_cluster(vec: np.ndarray, model: ClusterModel) -> int:
    d = ((model.centroids.astype(np.float64) - vec.astype(np.float64)) ** 2).sum(axis=1)
    return int(np.argmin(d))


def _apply_options(
    task: FewShotTask, options: EvalOptions, lookup: RowLookup, rng: np.random.Generator
) -> Episode:
    ep = task.episode
    if options.pseudo_labels:
        cm, names = options.cluster_model, options.names
        support = tuple(
            (row, names.caption(_nearest_cluster(lookup.vectors([row])[0], cm)))
            for row, _ in ep.support
        )
        target = names.caption(_nearest_cluster(lookup.vectors([ep.query_row])[0], cm))
        ep = Episode(
            n=ep.n, j=ep.j, support=support, query_row=ep.query_row,
            target=target, difficulty=ep.difficulty, seed=ep.seed,
        )
    if options.augment_shots:
        cm, names = options.cluster_model, options.names
        row_ids = cm.row_ids if cm.row_ids is not None else np.arange(len(cm.assignments))
        seen = {r for r, _ in ep.support} | {ep.query_row}
        extra = []
        first_of_way: dict[str, int] = {}
        for row, cap in ep.support:
            first_of_way.setdefault(cap, row)
        for cap, row in first_of_way.items():
            c = _nearest_cluster(lookup.vectors([row])[0], cm)
            members = [int(row_ids[m]) for m in cm.members(c) if int(row_ids[m]) not in seen]
            if len(members) < options.augment_shots:
                raise SamplingError(f"cluster {c} too small to augment by {options.augment_shots}")
            for m in rng.choice(members, size=options.augment_shots, replace=False):
                extra.append((int(m), cap))
                seen.add(int(m))
        support = list(ep.support) + extra
        order = rng.permutation(len(support))
        ep = Episode(
            n=ep.n, j=ep.j + options.augment_shots,
            support=tuple(support[i] for i in order),
            query_row=ep.query_row, target=ep.target,
            difficulty=ep.difficulty, seed=ep.seed,
        )
    return ep


def evaluate_open_ended(
    params: dict,
    model_config: TinyVLMConfig,
    lex: Lexicon,
    tasks: list[FewShotTask],
    lookup: RowLookup,
    decode_config: DecodeConfig | None = None,
    options: EvalOptions | None = None,
    template: str = "This is a {}",
    seed: int = 0,
    decode_fn=None,
) -> EvalReport:
    """Render each task's query with the template stem, generate, and score
    exact-match of the generated name against the target."""
    if not tasks:
        raise ValidationError("no tasks to evaluate")
    if len(lex) != model_config.vocab_size:
        raise ConfigurationError(
            f"lexicon size {len(lex)} != checkpoint vocab {model_config.vocab_size}"
        )
    dc = decode_config or DecodeConfig()
    options = options or EvalOptions()
    ns = {t.episode.n for t in tasks}
    js = {t.episode.j for t in tasks}
    modes = {t.naming_mode for t in tasks}
    splits = {t.split for t in tasks}
    if len(ns) > 1 or len(js) > 1 or len(modes) > 1 or len(splits) > 1:
        raise ValidationError("a report covers a single (n, j, mode, split) setting")
    correct = 0
    for idx, task in enumerate(tasks):
        rng = np.random.default_rng([seed, idx, 31])
        ep = _apply_options(task, options, lookup, rng)
        dyn = None
        task_params = params
        if task.naming_mode == "open_ended" and not options.pseudo_labels:
            dyn = lex.bind_dynamic(list(task.fresh_words))
            tok = params["tok_emb"].copy()
            bias = params["head.b"].copy()
            for slot in lex.dynamic_ids():
                tok[slot] = 0.0
                bias[slot] = DISABLED_SLOT_BIAS
            for word, slot in dyn.items():
                tok[slot] = rng.normal(0.0, dc.dynamic_init_std, model_config.d_model).astype(
                    tok.dtype
                )
                bias[slot] = dc.dynamic_bias_boost
            task_params = dict(params)
            task_params["tok_emb"] = tok
            task_params["head.b"] = bias
        prompt = render_sequence(
            ep, lex, model_config.max_len,
            prefix_len=model_config.prefix_len,
            template=template, with_target=False, dynamic=dyn,
        )
        if decode_fn is not None:
            out_ids = decode_fn(task, ep, prompt, task_params, dyn)
        else:
            out_ids = decode(
                task_params, model_config, prompt, lookup,
                beam_width=dc.beam_width, max_new=dc.max_new, eos_id=lex.eos_id,
            )
        generated = normalize_text(" ".join(lex.decode(out_ids, dyn)))
        target = normalize_text(_target_name(ep.target, template))
        if generated == target:
            correct += 1
    acc = correct / len(tasks)
    return EvalReport(
        n=ns.pop(), j=js.pop(), mode=modes.pop(), split=splits.pop(),
        task_count=len(tasks), accuracy=acc,
        ci_half_width=confidence_half_width(acc, len(tasks)), seed=seed,
        options={"pseudo_labels": options.pseudo_labels, "augment_shots": options.augment_shots},
    )


def write_reports_jsonl(path, reports) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in reports:
            f.write(r.to_json() + "\n")


def write_reports_csv(path, reports) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["kind", "factor", "n", "j", "mode", "split", "K", "accuracy", "ci", "seed", "tasks"])
        for r in reports:
            w.writerow(
                [r.kind, r.factor, r.n, r.j, r.mode, r.split, r.k,
                 f"{r.accuracy:.6f}", f"{r.ci_half_width:.6f}", r.seed, r.task_count]
            )


def plot_data_lines(reports) -> list[str]:
    """(x, y) pairs for the cluster-count sweep figure."""
    return [f"{r.k} {r.accuracy:.6f}" for r in reports if r.kind == "k_sweep"]


def run_ablation(kind: str, base: "RunConfig") -> list["EvalReport"]:
    """Re-run adapt+eval varying exactly one factor; one report per cell."""
    from dataclasses import replace

    from .pipeline import run_pipeline
    from .training import RunConfig  # noqa: F401  (type only)

    if kind not in ABLATION_KINDS:
        raise ValidationError(f"unknown ablation kind {kind!r}; choose from {ABLATION_KINDS}")
    cells: list[tuple[str, dict]] = []
    if kind == "difficulty":
        cells = [(v, {"difficulty": v}) for v in ("hard", "easy", "varying")]
    elif kind == "vocabulary":
        cells = [(v, {"vocab_kind": v}) for v in ("nonsense", "numbers", "nouns")]
    elif kind == "matching":
        cells = [(v, {"matching": v}) for v in ("random", "cost_based")]
    elif kind == "task_mode":
        cells = [(v, {"task_mode": v}) for v in ("single", "mixed")]
    elif kind == "model_size":
        cells = [(str(d), {"d_model": d}) for d in (32, 64, 128)]
    elif kind == "template":
        cells = [(t, {"template": t}) for t in
                 ("A photo of a {}", "On this picture there is a {}", "This is a {}")]
    elif kind == "k_sweep":
        for kk in K_SWEEP_GRID:
            eff = max(2, round(kk / base.k_divisor))
            cells.append((str(kk), {"k": eff}))
    reports = []
    for factor, overrides in cells:
        cfg = replace(base, **overrides)
        art = run_pipeline(cfg)
        r = art.report
        reports.append(
            EvalReport(
                n=r.n, j=r.j, mode=r.mode, split=r.split, task_count=r.task_count,
                accuracy=r.accuracy, ci_half_width=r.ci_half_width, seed=r.seed,
                kind=kind, factor=factor, k=cfg.k, options=r.options,
            )
        )
    return reports
