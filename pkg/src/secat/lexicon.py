"""Word-level lexicon with reserved special tokens and a dynamic block.

Names are atomic tokens, so open-ended scoring is exact-match on words.
The dynamic block is a fixed-size run of slots at the end of the table;
evaluation binds fresh words to those slots per task without growing the
embedding table.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ConfigurationError, ValidationError

PAD, EOS, IMG, CAP = "<PAD>", "<EOS>", "<IMG>", "<CAP>"
SPECIALS = (PAD, EOS, IMG, CAP)

# templates the pipeline knows how to render; their words are always in the
# lexicon so an adapted checkpoint can be probed with any of them
KNOWN_TEMPLATES = (
    "This is a {}",
    "A photo of a {}",
    "On this picture there is a {}",
)


def normalize_text(s: str) -> str:
    return re.sub(r"\s+", " ", s.strip().lower())


def words_of(text: str) -> list[str]:
    text = normalize_text(text.replace("{}", " "))
    return [w for w in text.split(" ") if w]


def template_stem(template: str) -> list[str]:
    """Words preceding the name placeholder, e.g. 'This is a {}' -> this is a."""
    if template.count("{}") != 1:
        raise ValidationError(f"template must contain exactly one {{}}: {template!r}")
    return words_of(template.split("{}")[0])


class Lexicon:
    def __init__(self, words: list[str], dynamic_slots: int = 16):
        """`words` are the non-special, non-dynamic entries (template words,
        base names, vocabulary words); order is preserved after dedup."""
        if dynamic_slots < 0:
            raise ValidationError("dynamic_slots must be >= 0")
        seen: dict[str, None] = {}
        for w in words:
            w = normalize_text(w)
            if not w or " " in w:
                raise ValidationError(f"lexicon words must be single tokens: {w!r}")
            if w in SPECIALS:
                raise ValidationError(f"word collides with special token: {w!r}")
            seen.setdefault(w)
        self.words: tuple[str, ...] = tuple(seen)
        self.dynamic_slots = dynamic_slots
        dyn = tuple(f"<DYN{i}>" for i in range(dynamic_slots))
        self._tokens: tuple[str, ...] = SPECIALS + self.words + dyn
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        self.pad_id = self._ids[PAD]
        self.eos_id = self._ids[EOS]
        self.img_id = self._ids[IMG]
        self.cap_id = self._ids[CAP]
        self.dynamic_start = len(SPECIALS) + len(self.words)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, word: str) -> bool:
        return normalize_text(word) in self._ids

    def dynamic_ids(self) -> range:
        return range(self.dynamic_start, self.dynamic_start + self.dynamic_slots)

    def encode_word(self, word: str, dynamic: dict[str, int] | None = None) -> int:
        w = normalize_text(word)
        if dynamic and w in dynamic:
            return dynamic[w]
        if w not in self._ids:
            raise ValidationError(f"word not in lexicon: {w!r}")
        return self._ids[w]

    def encode_words(self, text: str, dynamic: dict[str, int] | None = None) -> list[int]:
        return [self.encode_word(w, dynamic) for w in words_of(text)]

    def decode(self, ids, dynamic: dict[str, int] | None = None) -> list[str]:
        rev = {v: k for k, v in dynamic.items()} if dynamic else {}
        out = []
        for i in ids:
            i = int(i)
            if i in rev:
                out.append(rev[i])
            elif 0 <= i < len(self._tokens):
                out.append(self._tokens[i])
            else:
                raise ValidationError(f"token id out of range: {i}")
        return out

    def bind_dynamic(self, fresh_words: list[str]) -> dict[str, int]:
        """Map fresh words onto the first dynamic slots; words must be new."""
        if len(fresh_words) > self.dynamic_slots:
            raise ConfigurationError(
                f"{len(fresh_words)} fresh words exceed {self.dynamic_slots} dynamic slots"
            )
        out = {}
        for i, w in enumerate(fresh_words):
            w = normalize_text(w)
            if w in self._ids:
                raise ValidationError(f"fresh word already in lexicon: {w!r}")
            out[w] = self.dynamic_start + i
        return out


def build_lexicon(
    base_names,
    vocab_words,
    template: str = KNOWN_TEMPLATES[0],
    dynamic_slots: int = 16,
) -> Lexicon:
    """Fixed run-start lexicon: specials + known-template words + base names +
    the naming vocabulary + the dynamic block."""
    words: list[str] = []
    for t in KNOWN_TEMPLATES:
        words.extend(words_of(t))
    if template not in KNOWN_TEMPLATES:
        words.extend(template_stem(template))
    words.extend(base_names)
    words.extend(vocab_words)
    return Lexicon(words, dynamic_slots=dynamic_slots)
