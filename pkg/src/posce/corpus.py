"""Dataset ingestion, tokenization, and a synthetic aspect-sentiment corpus.

The native dataset format is line-oriented: one record per line, either a JSON
object or a tab-separated row with fields ``id, text, aspect_char_from,
aspect_char_to, polarity``. Character offsets are converted to token indices
at load time.

The synthetic generator builds sentences whose polarity is decided by a single
opinion token placed at a seeded stochastic offset from the aspect term, on a
side determined by the aspect's position; a decoy opinion token of a different
polarity sits on the opposite side. The label is therefore recoverable only by
reading the opinion token at the positionally regular slot, which is exactly
the kind of aspect-position pattern the contribution tables are meant to pick
up from history.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError


class Polarity(IntEnum):
    POSITIVE = 0
    NEUTRAL = 1
    NEGATIVE = 2

    @classmethod
    def parse(cls, text: str) -> "Polarity":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValidationError(
                f"unknown polarity {text!r}; expected one of "
                f"{[p.name.lower() for p in cls]}"
            ) from None

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class Sentence:
    """Tokenized text with an aspect token span and a polarity label."""

    tokens: tuple[str, ...]
    aspect_from: int
    aspect_to: int
    polarity: Polarity
    id: str

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ValidationError(f"sentence {self.id!r} has no tokens")
        if not 0 <= self.aspect_from < self.aspect_to <= len(self.tokens):
            raise ValidationError(
                f"sentence {self.id!r}: aspect span [{self.aspect_from}, "
                f"{self.aspect_to}) invalid for {len(self.tokens)} tokens"
            )

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def aspect_position(self) -> int:
        """Index of the aspect's first token."""
        return self.aspect_from


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[Sentence, ...]
    split: str = "train"

    def __post_init__(self) -> None:
        ids = [s.id for s in self.sentences]
        if len(set(ids)) != len(ids):
            dupes = sorted(i for i, c in Counter(ids).items() if c > 1)
            raise ValidationError(f"duplicate sentence ids in corpus: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def token_counts(self) -> Counter:
        counts: Counter = Counter()
        for s in self.sentences:
            counts.update(s.tokens)
        return counts

    def class_histogram(self) -> dict[Polarity, int]:
        hist = {p: 0 for p in Polarity}
        for s in self.sentences:
            hist[s.polarity] += 1
        return hist


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip leading/trailing ASCII punctuation.

    Tokens that are pure punctuation vanish. Idempotent on its own output
    joined by single spaces.
    """
    return [tok for tok, _, _ in _tokenize_with_spans(text)]


def _tokenize_with_spans(text: str) -> list[tuple[str, int, int]]:
    """Tokens plus the character span each kept token occupies in `text`."""
    out = []
    pos = 0
    for chunk in text.split():
        start = text.index(chunk, pos)
        pos = start + len(chunk)
        stripped = chunk.strip(string.punctuation)
        if not stripped:
            continue
        lead = len(chunk) - len(chunk.lstrip(string.punctuation))
        out.append((stripped.lower(), start + lead, start + lead + len(stripped)))
    return out


_REQUIRED_FIELDS = ("id", "text", "aspect_char_from", "aspect_char_to", "polarity")


def load_dataset(path: str | Path, fmt: str = "auto", split: str = "train") -> Corpus:
    """Read a line-record dataset file into a Corpus.

    ``fmt`` is "jsonl", "tsv", or "auto" (sniffed from the extension, falling
    back to the first non-blank line). Records that fail validation raise
    :class:`ParseError` with their line number.
    """
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    lines = raw.splitlines()
    fmt = _resolve_format(fmt, path, lines)

    sentences = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        record = _parse_record(path, lineno, line, fmt)
        sentences.append(_record_to_sentence(path, lineno, record))
    return Corpus(sentences=tuple(sentences), split=split)


def save_dataset(corpus: Corpus, path: str | Path, fmt: str = "jsonl") -> None:
    """Write a corpus in the native line-record format.

    Text is reconstructed by joining tokens with single spaces, so a saved
    corpus reloads to identical token sequences and spans.
    """
    if fmt not in ("jsonl", "tsv"):
        raise ValidationError(f"unknown dataset format {fmt!r}")
    lines = []
    for s in corpus:
        char_from = sum(len(t) + 1 for t in s.tokens[: s.aspect_from])
        char_to = char_from + len(" ".join(s.tokens[s.aspect_from : s.aspect_to]))
        text = " ".join(s.tokens)
        if fmt == "jsonl":
            lines.append(
                json.dumps(
                    {
                        "id": s.id,
                        "text": text,
                        "aspect_char_from": char_from,
                        "aspect_char_to": char_to,
                        "polarity": s.polarity.label,
                    },
                    sort_keys=True,
                )
            )
        else:
            lines.append(
                "\t".join([s.id, text, str(char_from), str(char_to), s.polarity.label])
            )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _resolve_format(fmt: str, path: Path, lines: list[str]) -> str:
    if fmt in ("jsonl", "tsv"):
        return fmt
    if fmt != "auto":
        raise ValidationError(f"unknown dataset format {fmt!r}")
    suffix = path.suffix.lower()
    if suffix in (".jsonl", ".json"):
        return "jsonl"
    if suffix == ".tsv":
        return "tsv"
    for line in lines:
        if line.strip():
            return "jsonl" if line.lstrip().startswith("{") else "tsv"
    return "jsonl"


def _parse_record(path: Path, lineno: int, line: str, fmt: str) -> dict:
    if fmt == "jsonl":
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(path, lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(record, dict):
            raise ParseError(path, lineno, "record is not a JSON object")
        missing = [k for k in _REQUIRED_FIELDS if k not in record]
        if missing:
            raise ParseError(path, lineno, f"missing fields: {missing}")
        return record
    parts = line.split("\t")
    if len(parts) != len(_REQUIRED_FIELDS):
        raise ParseError(
            path, lineno, f"expected {len(_REQUIRED_FIELDS)} tab-separated fields, got {len(parts)}"
        )
    return dict(zip(_REQUIRED_FIELDS, parts))


def resolve_aspect_span(text: str, char_from: int, char_to: int) -> tuple[list[str], int, int]:
    """Tokenize `text` and convert a character-offset aspect span into token
    indices: every token whose kept characters overlap the span belongs to it."""
    if not 0 <= char_from < char_to <= len(text):
        raise ValidationError(
            f"aspect span [{char_from}, {char_to}) outside text of length {len(text)}"
        )
    spans = _tokenize_with_spans(text)
    if not spans:
        raise ValidationError("text has no tokens")
    overlapping = [
        i for i, (_, s, e) in enumerate(spans) if s < char_to and e > char_from
    ]
    if not overlapping:
        raise ValidationError(f"aspect span [{char_from}, {char_to}) covers no token")
    return [tok for tok, _, _ in spans], overlapping[0], overlapping[-1] + 1


def _record_to_sentence(path: Path, lineno: int, record: dict) -> Sentence:
    try:
        char_from = int(record["aspect_char_from"])
        char_to = int(record["aspect_char_to"])
    except (TypeError, ValueError):
        raise ParseError(path, lineno, "aspect offsets must be integers") from None
    text = record["text"]
    if not isinstance(text, str):
        raise ParseError(path, lineno, "text must be a string")
    try:
        polarity = Polarity.parse(str(record["polarity"]))
        tokens, aspect_from, aspect_to = resolve_aspect_span(text, char_from, char_to)
        return Sentence(
            tokens=tuple(tokens),
            aspect_from=aspect_from,
            aspect_to=aspect_to,
            polarity=polarity,
            id=str(record["id"]),
        )
    except ValidationError as exc:
        raise ParseError(path, lineno, str(exc)) from None


# ---------------------------------------------------------------------------
# Synthetic corpus generator
# ---------------------------------------------------------------------------

ASPECT_TERMS = ("screen", "battery", "keyboard", "camera", "speaker", "display")

OPINION_WORDS: dict[Polarity, tuple[str, ...]] = {
    Polarity.POSITIVE: ("love", "great", "excellent", "superb", "fantastic"),
    Polarity.NEUTRAL: ("okay", "average", "ordinary", "standard", "typical"),
    Polarity.NEGATIVE: ("hate", "awful", "terrible", "poor", "dreadful"),
}

FILLER_WORDS = (
    "the", "a", "this", "that", "its", "with", "and", "for",
    "on", "quite", "rather", "really", "just", "so",
)

_OPINION_POLARITY = {w: p for p, words in OPINION_WORDS.items() for w in words}
_OFFSET_MAGNITUDES = (1, 2, 3)
_OFFSET_WEIGHTS = (0.1, 0.8, 0.1)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for :func:`generate_synthetic`.

    ``size`` is the training-set size; the test set gets ``test_size``
    sentences (half the training size by default). ``decoy_prob`` is the
    chance a sentence carries a misleading opinion token on the wrong side;
    sentences without one are solvable from word presence alone, the rest
    need the positional rule.
    """

    size: int
    max_len: int
    seed: int
    test_size: int | None = None
    decoy_prob: float = 0.5

    def __post_init__(self) -> None:
        if self.size < 30:
            raise ValidationError(f"size must be >= 30, got {self.size}")
        if self.max_len < 5:
            raise ValidationError(f"max_len must be >= 5, got {self.max_len}")
        if self.test_size is not None and self.test_size < 3:
            raise ValidationError(f"test_size must be >= 3, got {self.test_size}")
        if not 0.0 <= self.decoy_prob <= 1.0:
            raise ValidationError(f"decoy_prob must be in [0, 1], got {self.decoy_prob}")

    @property
    def resolved_test_size(self) -> int:
        return self.size // 2 if self.test_size is None else self.test_size


def synthetic_vocabulary() -> list[str]:
    """All tokens the generator can emit, sorted."""
    words = set(ASPECT_TERMS) | set(FILLER_WORDS) | set(_OPINION_POLARITY)
    return sorted(words)


def opinion_side(aspect_position: int, length: int) -> int:
    """+1 if the opinion token sits right of the aspect, -1 if left.

    The side flips with the parity of the aspect position: that is the
    positional regularity the generator plants and the tables should recover.
    """
    return 1 if aspect_position % 2 == 0 else -1


def generate_synthetic(config: SynthConfig) -> tuple[Corpus, Corpus]:
    """Deterministically generate balanced (train, test) corpora.

    Every sentence: filler tokens, one aspect term at position t, one opinion
    token that decides the label at offset 1..3 on the side given by
    :func:`opinion_side`, and one decoy opinion token of another polarity
    mirrored on the opposite side. Train and test ids are disjoint.
    """
    train = _generate_split(config, "train", config.size, 0)
    test = _generate_split(config, "test", config.resolved_test_size, 1)
    return train, test


def _generate_split(config: SynthConfig, split: str, size: int, stream: int) -> Corpus:
    rng = np.random.default_rng([config.seed, stream])
    sentences = []
    for i in range(size):
        label = Polarity(i % 3)
        sentences.append(_generate_sentence(rng, config, label, f"{split}-{i:04d}"))
    return Corpus(sentences=tuple(sentences), split=split)


def _generate_sentence(
    rng: np.random.Generator, config: SynthConfig, label: Polarity, sid: str
) -> Sentence:
    max_len = config.max_len
    length = int(rng.integers(max(5, max_len - 2), max_len + 1))
    t = int(rng.integers(2, length - 2))  # both sides keep >= 2 slots
    side = opinion_side(t, length)
    room_opinion = (length - 1 - t) if side > 0 else t
    room_decoy = t if side > 0 else (length - 1 - t)

    magnitudes = [m for m in _OFFSET_MAGNITUDES if m <= room_opinion]
    weights = np.array(_OFFSET_WEIGHTS[: len(magnitudes)])
    distance = int(rng.choice(magnitudes, p=weights / weights.sum()))
    opinion_pos = t + side * distance
    place_decoy = rng.random() < config.decoy_prob
    decoy_pos = t - side * min(distance, room_decoy)

    tokens = [str(rng.choice(FILLER_WORDS)) for _ in range(length)]
    tokens[t] = str(rng.choice(ASPECT_TERMS))
    tokens[opinion_pos] = str(rng.choice(OPINION_WORDS[label]))
    if place_decoy:
        others = [p for p in Polarity if p != label]
        decoy_polarity = others[int(rng.integers(len(others)))]
        tokens[decoy_pos] = str(rng.choice(OPINION_WORDS[decoy_polarity]))

    return Sentence(
        tokens=tuple(tokens),
        aspect_from=t,
        aspect_to=t + 1,
        polarity=label,
        id=sid,
    )


def oracle_label(sentence: Sentence) -> Polarity:
    """Recover the label by the generator's own rule.

    Reads the nearest opinion-lexicon token on the aspect's regular side
    (within 3 positions), falling back to the other side if that yields
    nothing. Raises if the sentence carries no opinion token at all.
    """
    t = sentence.aspect_position
    length = sentence.length
    side = opinion_side(t, length)
    for s in (side, -side):
        for distance in (1, 2, 3):
            pos = t + s * distance
            if 0 <= pos < length:
                polarity = _OPINION_POLARITY.get(sentence.tokens[pos])
                if polarity is not None:
                    return polarity
    raise ValidationError(f"sentence {sentence.id!r} has no opinion token near the aspect")
