"""Cluster naming: vocabularies of semantically-unrelated words, the
centroid-to-word cost matrix, and caption rendering.

The cost of pairing cluster i with word j is 1 - cosine between the
centroid's mean-pooled visual prefix and the word's token embedding, so the
minimum-cost matching picks the most aligned injective naming.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterModel
from .errors import ConfigurationError, ValidationError
from .lexicon import Lexicon, normalize_text, template_stem
from .matching import hungarian_match
from .wordbank import CONSONANTS, UNRELATED_NOUNS, VOWELS

VOCAB_KINDS = ("nouns", "numbers", "nonsense", "base")


@dataclass(frozen=True)
class Vocabulary:
    kind: str
    words: tuple[str, ...]
    seed: int

    def __post_init__(self):
        if self.kind not in VOCAB_KINDS:
            raise ValidationError(f"unknown vocabulary kind {self.kind!r}")
        if not self.words:
            raise ValidationError("vocabulary is empty")
        if len(set(self.words)) != len(self.words):
            raise ValidationError("vocabulary words must be unique")

    def __len__(self) -> int:
        return len(self.words)


def nonsense_word(rng: np.random.Generator) -> str:
    """Pronounceable consonant-vowel syllable string, 2-3 syllables."""
    n_syll = int(rng.integers(2, 4))
    return "".join(
        CONSONANTS[rng.integers(len(CONSONANTS))] + VOWELS[rng.integers(len(VOWELS))]
        for _ in range(n_syll)
    )


def fresh_nonsense_words(n: int, rng: np.random.Generator, avoid=()) -> list[str]:
    avoid = set(normalize_text(w) for w in avoid)
    out: list[str] = []
    while len(out) < n:
        w = nonsense_word(rng)
        if w not in avoid:
            avoid.add(w)
            out.append(w)
    return out


def build_vocabulary(kind: str, size: int, seed: int) -> Vocabulary:
    if size < 1:
        raise ValidationError("vocabulary size must be >= 1")
    rng = np.random.default_rng([seed, 11])
    if kind == "nouns":
        if size > len(UNRELATED_NOUNS):
            raise ValidationError(
                f"size {size} exceeds bundled noun list ({len(UNRELATED_NOUNS)})"
            )
        idx = rng.choice(len(UNRELATED_NOUNS), size=size, replace=False)
        words = tuple(UNRELATED_NOUNS[i] for i in idx)
    elif kind == "numbers":
        nums = rng.choice(100_000, size=size, replace=False)
        words = tuple(str(int(v)) for v in nums)
    elif kind == "nonsense":
        words = tuple(fresh_nonsense_words(size, rng))
    elif kind == "base":
        from .wordbank import BASE_NOUNS

        if size > len(BASE_NOUNS):
            raise ValidationError(f"size {size} exceeds base lexicon ({len(BASE_NOUNS)})")
        idx = rng.choice(len(BASE_NOUNS), size=size, replace=False)
        words = tuple(BASE_NOUNS[i] for i in idx)
    else:
        raise ValidationError(f"unknown vocabulary kind {kind!r}")
    return Vocabulary(kind=kind, words=words, seed=seed)


@dataclass(frozen=True)
class NameAssignment:
    mapping: dict[int, str]  # cluster id -> word, injective
    method: str  # cost_based | random
    template: str

    def __post_init__(self):
        words = list(self.mapping.values())
        if len(set(words)) != len(words):
            raise ValidationError("cluster-name mapping must be injective")
        template_stem(self.template)  # validates placeholder

    def caption(self, cluster: int) -> str:
        return normalize_text(self.template.format(self.mapping[cluster]))

    def word(self, cluster: int) -> str:
        return self.mapping[cluster]

    def target_words(self) -> set[str]:
        return {normalize_text(w) for w in self.mapping.values()}

    def to_tsv(self) -> str:
        lines = [
            f"{cid}\t{self.mapping[cid]}\t{self.caption(cid)}"
            for cid in sorted(self.mapping)
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str, method: str, template: str) -> "NameAssignment":
        mapping = {}
        for line in text.strip().split("\n"):
            cid, word, _caption = line.split("\t")
            mapping[int(cid)] = word
        return cls(mapping=mapping, method=method, template=template)


def pooled_centroid_embedding(params, config, centroids: np.ndarray) -> np.ndarray:
    """Push each centroid through the visual-prefix mapping network and
    mean-pool its prefix vectors into token-embedding space."""
    from .model import map_visual_batch

    prefixes = map_visual_batch(params, config, centroids)  # (K, P, d_model)
    return prefixes.mean(axis=1)


def name_cost_matrix(
    model: ClusterModel, vocab: Vocabulary, params, config, lex: Lexicon
) -> np.ndarray:
    """K x |vocab| costs, cost = 1 - cosine(pooled centroid, word embedding)."""
    if len(vocab) < model.k:
        raise ConfigurationError(f"vocabulary ({len(vocab)}) smaller than K ({model.k})")
    if model.centroids.shape[1] != config.input_dim:
        raise ConfigurationError(
            f"centroid dim {model.centroids.shape[1]} != model input dim {config.input_dim}"
        )
    pooled = pooled_centroid_embedding(params, config, model.centroids).astype(np.float64)
    word_ids = [lex.encode_word(w) for w in vocab.words]
    wv = params["tok_emb"][word_ids].astype(np.float64)
    pn = np.linalg.norm(pooled, axis=1)
    wn = np.linalg.norm(wv, axis=1)
    pn[pn == 0.0] = 1.0
    wn[wn == 0.0] = 1.0
    cos = (pooled @ wv.T) / (pn[:, None] * wn[None, :])
    return np.clip(1.0 - cos, 0.0, 2.0)


def assign_names(
    model: ClusterModel,
    vocab: Vocabulary,
    params,
    config,
    lex: Lexicon,
    method: str = "cost_based",
    template: str = "This is a {}",
    seed: int = 0,
) -> NameAssignment:
    if len(vocab) < model.k:
        raise ConfigurationError(f"vocabulary ({len(vocab)}) smaller than K ({model.k})")
    if method == "cost_based":
        cost = name_cost_matrix(model, vocab, params, config, lex)
        cols = hungarian_match(cost)
    elif method == "random":
        rng = np.random.default_rng([seed, 13])
        cols = rng.permutation(len(vocab))[: model.k]
    else:
        raise ValidationError(f"unknown naming method {method!r}")
    mapping = {cid: vocab.words[int(c)] for cid, c in enumerate(cols)}
    return NameAssignment(mapping=mapping, method=method, template=template)
