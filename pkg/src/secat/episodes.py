"""Episode sampling and rendering into interleaved token sequences.

A rendered sequence lays out each support pair as

    <IMG> [P visual slots] <CAP> caption... <EOS>

followed by the query as `<IMG> [P slots] <CAP> stem...`; training inputs
append the target (name + <EOS>) with the loss mask set on those positions.
Visual slot positions hold the <PAD> id; their embeddings are overwritten by
the mapped visual prefix at forward time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterModel, DifficultyPools, centroid_distance_matrix, pool_band
from .errors import LengthError, SamplingError, ValidationError
from .lexicon import Lexicon, normalize_text, template_stem
from .naming import NameAssignment

DIFFICULTIES = ("easy", "hard", "varying", "unrestricted")
MIXED_SHOTS = (1, 3, 5)


@dataclass(frozen=True)
class Episode:
    n: int
    j: int
    support: tuple[tuple[int, str], ...]  # (row id, caption)
    query_row: int
    target: str  # full target caption; its name completes the query stem
    difficulty: str
    seed: int = 0

    def __post_init__(self):
        if len(self.support) != self.n * self.j:
            raise ValidationError("support must hold n*j items")
        if self.query_row in {r for r, _ in self.support}:
            raise ValidationError("query row must not appear in support")
        caps = {normalize_text(c) for _, c in self.support}
        if normalize_text(self.target) not in caps:
            raise ValidationError("target caption must match one support caption")

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "j": self.j,
                "support": [[r, c] for r, c in self.support],
                "query_row": self.query_row,
                "target": self.target,
                "difficulty": self.difficulty,
                "seed": self.seed,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "Episode":
        d = json.loads(line)
        return cls(
            n=d["n"],
            j=d["j"],
            support=tuple((int(r), c) for r, c in d["support"]),
            query_row=int(d["query_row"]),
            target=d["target"],
            difficulty=d["difficulty"],
            seed=d.get("seed", 0),
        )


@dataclass
class ModelInput:
    token_ids: np.ndarray  # (T,) int64
    image_slots: tuple[tuple[int, int], ...]  # (first slot position, row id)
    loss_mask: np.ndarray  # (T,) bool

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.loss_mask = np.asarray(self.loss_mask, dtype=bool)
        if self.token_ids.shape != self.loss_mask.shape:
            raise ValidationError("token_ids and loss_mask must align")
        if self.loss_mask.any() and int(np.flatnonzero(self.loss_mask)[0]) == 0:
            raise ValidationError("loss mask cannot start at position 0")

    def __len__(self) -> int:
        return len(self.token_ids)


def _select_clusters(
    rng: np.random.Generator,
    model: ClusterModel,
    pools: DifficultyPools | None,
    n: int,
    difficulty: str,
    usable: np.ndarray,
) -> list[int]:
    """Pick n distinct clusters whose pairwise centroid distances sit inside
    the chosen pool's band. 2-way draws a pool pair directly; wider episodes
    extend greedily."""
    if difficulty == "unrestricted":
        ok = np.flatnonzero(usable)
        if len(ok) < n:
            raise SamplingError(f"only {len(ok)} clusters have enough members for {n}-way")
        return [int(c) for c in rng.choice(ok, size=n, replace=False)]
    if pools is None:
        raise SamplingError("difficulty pools required for non-unrestricted sampling")
    if difficulty == "hard":
        pairs = list(pools.hard_pairs)
    elif difficulty == "easy":
        pairs = list(pools.easy_pairs)
    elif difficulty == "varying":
        pairs = list(pools.hard_pairs) + list(pools.easy_pairs)
    else:
        raise ValidationError(f"unknown difficulty {difficulty!r}")
    pairs = [p for p in pairs if usable[p[0]] and usable[p[1]]]
    if not pairs:
        raise SamplingError(
            f"difficulty pool {difficulty!r} exhausted: no pair with enough members"
        )
    first = pairs[int(rng.integers(len(pairs)))]
    chosen = [first[0], first[1]]
    if n == 2:
        return chosen
    dist = centroid_distance_matrix(model)
    lo, hi = pool_band(dist, pools, difficulty)
    cands = [c for c in np.flatnonzero(usable) if c not in chosen]
    rng.shuffle(cands)
    for c in cands:
        if len(chosen) == n:
            break
        ds = [dist[c, o] for o in chosen]
        if min(ds) >= lo and max(ds) <= hi:
            chosen.append(int(c))
    if len(chosen) < n:
        raise SamplingError(
            f"could not extend {difficulty!r} pool pair to {n} clusters inside its distance band"
        )
    return chosen


def sample_episode(
    model: ClusterModel,
    names: NameAssignment,
    pools: DifficultyPools | None,
    n: int,
    j: int,
    difficulty: str,
    seed: int,
) -> Episode:
    """n-way j-shot episode over named clusters; every selected cluster needs
    j+1 members so any of them can serve as the query class."""
    if n < 2 or j < 1:
        raise ValidationError("need n >= 2 and j >= 1")
    if difficulty not in DIFFICULTIES:
        raise ValidationError(f"unknown difficulty {difficulty!r}")
    rng = np.random.default_rng([seed, 17])
    counts = np.bincount(model.assignments, minlength=model.k)
    usable = counts >= j + 1
    clusters = _select_clusters(rng, model, pools, n, difficulty, usable)
    query_cls = clusters[int(rng.integers(n))]
    row_ids = model.row_ids if model.row_ids is not None else np.arange(len(model.assignments))
    picks: dict[int, np.ndarray] = {}
    for c in clusters:
        members = np.flatnonzero(model.assignments == c)
        need = j + 1 if c == query_cls else j
        if len(members) < need:
            raise SamplingError(f"cluster {c} has {len(members)} members, needs {need}")
        picks[c] = rng.choice(members, size=need, replace=False)
    query_row = int(row_ids[picks[query_cls][-1]])
    support: list[tuple[int, str]] = []
    for shot in range(j):  # round-robin over classes, then shuffled
        for c in clusters:
            support.append((int(row_ids[picks[c][shot]]), names.caption(c)))
    order = rng.permutation(len(support))
    support = [support[i] for i in order]
    return Episode(
        n=n,
        j=j,
        support=tuple(support),
        query_row=query_row,
        target=names.caption(query_cls),
        difficulty=difficulty,
        seed=seed,
    )


def render_sequence(
    episode: Episode,
    lex: Lexicon,
    max_len: int,
    prefix_len: int = 5,
    caption_cap: int = 10,
    template: str = "This is a {}",
    with_target: bool = True,
    dynamic: dict[str, int] | None = None,
) -> ModelInput:
    """Render an episode into token ids, visual slot positions and loss mask."""
    stem_ids = [lex.encode_word(w, dynamic) for w in template_stem(template)]
    ids: list[int] = []
    mask: list[bool] = []
    slots: list[tuple[int, int]] = []

    def emit(tok_ids, flagged=False):
        ids.extend(tok_ids)
        mask.extend([flagged] * len(tok_ids))

    for row, caption in episode.support:
        emit([lex.img_id])
        slots.append((len(ids), row))
        emit([lex.pad_id] * prefix_len)
        emit([lex.cap_id])
        emit(lex.encode_words(caption, dynamic)[:caption_cap])
        emit([lex.eos_id])
    emit([lex.img_id])
    slots.append((len(ids), episode.query_row))
    emit([lex.pad_id] * prefix_len)
    emit([lex.cap_id])
    emit(stem_ids)
    if with_target:
        target_ids = lex.encode_words(episode.target, dynamic)[:caption_cap]
        if target_ids[: len(stem_ids)] == stem_ids:
            target_ids = target_ids[len(stem_ids) :]
        emit(target_ids, flagged=True)
        emit([lex.eos_id], flagged=True)
    if len(ids) > max_len:
        raise LengthError(f"sequence length {len(ids)} exceeds max_len {max_len}")
    return ModelInput(np.array(ids), tuple(slots), np.array(mask))


def render_caption_example(
    row_id: int,
    caption: str,
    lex: Lexicon,
    max_len: int,
    prefix_len: int = 5,
    caption_cap: int = 10,
) -> ModelInput:
    """Single captioning pair `<IMG> [P slots] <CAP> caption <EOS>` with the
    loss over every caption token (no interleaving)."""
    ids = [lex.img_id]
    slots = ((len(ids), row_id),)
    ids += [lex.pad_id] * prefix_len
    ids.append(lex.cap_id)
    mask = [False] * len(ids)
    cap_ids = lex.encode_words(caption)[:caption_cap]
    ids += cap_ids + [lex.eos_id]
    mask += [True] * (len(cap_ids) + 1)
    if len(ids) > max_len:
        raise LengthError(f"sequence length {len(ids)} exceeds max_len {max_len}")
    return ModelInput(np.array(ids), slots, np.array(mask))


def mixed_batch(
    model: ClusterModel,
    names: NameAssignment,
    pools: DifficultyPools | None,
    lex: Lexicon,
    batch_size: int,
    seed: int,
    difficulty: str = "varying",
    task_mode: str = "mixed",
    max_len: int = 160,
    prefix_len: int = 5,
    caption_cap: int = 10,
    template: str = "This is a {}",
) -> tuple[list[ModelInput], list[Episode]]:
    """One adaptation batch. Mixed mode draws j uniformly from {1, 3, 5} per
    element (2-way); single mode pins every element to 2-way 1-shot."""
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    if task_mode not in ("mixed", "single"):
        raise ValidationError(f"unknown task_mode {task_mode!r}")
    rng = np.random.default_rng([seed, 19])
    inputs, episodes = [], []
    for b in range(batch_size):
        j = int(MIXED_SHOTS[rng.integers(len(MIXED_SHOTS))]) if task_mode == "mixed" else 1
        ep = sample_episode(
            model, names, pools, 2, j, difficulty, seed=int(rng.integers(2**31))
        )
        episodes.append(ep)
        inputs.append(
            render_sequence(
                ep, lex, max_len, prefix_len=prefix_len, caption_cap=caption_cap,
                template=template, with_target=True,
            )
        )
    return inputs, episodes


def write_episodes_jsonl(path, episodes) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ep in episodes:
            f.write(ep.to_json() + "\n")
