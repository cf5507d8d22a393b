"""Per-aspect-position contribution tables built from a trained classifier.

A sentence defines a coalition game: the aspect span is always present, the
context positions are players, and the payoff of a coalition is the model's
probability on a designated class for the phrase formed by keeping exactly the
aspect plus that coalition (original word order, re-embedded at the shorter
length, zero contribution profile). Per-position Shapley values from these
games, averaged over all corpus sentences sharing an aspect position and
pushed through a softmax, form one table row: the historical contribution
profile served back to the classifier at that aspect position.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, Sentence
from .errors import ParseError, ValidationError
from .shapley import (
    ENUMERATION_CAP,
    CoalitionGame,
    shapley_exact,
    shapley_permutation,
)
from .textmodel import Model, compose_input, forward, softmax

SIMPLEX_TOLERANCE = 1e-9


@dataclass(frozen=True)
class EstimatorConfig:
    """Chooses exact enumeration for small contexts, permutation sampling above.

    The per-sentence sampling seed is derived from (seed, sentence id), so a
    build is reproducible regardless of sentence order or parallelism.
    """

    exact_limit: int = 12
    samples: int = 2000
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.exact_limit <= ENUMERATION_CAP:
            raise ValidationError(
                f"exact_limit must be in [0, {ENUMERATION_CAP}], got {self.exact_limit}"
            )
        if self.samples < 1:
            raise ValidationError(f"samples must be >= 1, got {self.samples}")

    def to_dict(self) -> dict:
        return {
            "exact_limit": self.exact_limit,
            "samples": self.samples,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class AspectGameSpec:
    """A sentence plus the class whose probability defines the payoff."""

    sentence: Sentence
    payoff_class: int

    def __post_init__(self) -> None:
        if self.payoff_class not in (0, 1, 2):
            raise ValidationError(
                f"payoff_class must be 0, 1, or 2, got {self.payoff_class}"
            )

    @classmethod
    def true_class(cls, sentence: Sentence) -> "AspectGameSpec":
        """Payoff taken at the ground-truth class probability."""
        return cls(sentence=sentence, payoff_class=int(sentence.polarity))

    @property
    def aspect_position(self) -> int:
        return self.sentence.aspect_position

    @property
    def label(self) -> int:
        return int(self.sentence.polarity)


def context_positions(sentence: Sentence) -> list[int]:
    """Positions outside the aspect span, in original order; these are the
    game's players (player i = i-th context position)."""
    return [
        p
        for p in range(sentence.length)
        if not sentence.aspect_from <= p < sentence.aspect_to
    ]


def kept_positions(sentence: Sentence, subset: frozenset[int]) -> list[int]:
    """Original positions retained for a coalition: the aspect span plus the
    selected context positions, sorted."""
    contexts = context_positions(sentence)
    keep = list(range(sentence.aspect_from, sentence.aspect_to))
    keep.extend(contexts[i] for i in subset)
    return sorted(keep)


def subset_phrase(sentence: Sentence, subset: frozenset[int]) -> tuple[str, ...]:
    """The phrase a coalition evaluates: selected words in original order."""
    return tuple(sentence.tokens[p] for p in kept_positions(sentence, subset))


def game_from_sentence(model: Model, spec: AspectGameSpec) -> CoalitionGame:
    """Coalition game whose payoff is the model's payoff-class probability on
    the coalition's phrase.

    Phrases are re-embedded at their own length with a zero contribution
    profile, so building a table never depends on a previously built one.
    """
    sentence = spec.sentence
    if sentence.length < 1:
        raise ValidationError(f"sentence {sentence.id!r} is empty")
    contexts = context_positions(sentence)
    span = list(range(sentence.aspect_from, sentence.aspect_to))
    rows_full = model.embeddings.rows(sentence.tokens)
    params = model.params
    payoff_class = spec.payoff_class
    aspect_first = sentence.aspect_from

    def payoff(subset: frozenset[int]) -> float:
        positions = sorted(span + [contexts[i] for i in subset])
        inp = compose_input(
            rows_full[positions],
            np.zeros(len(positions)),
            params,
            positions.index(aspect_first),
        )
        return float(forward(params, inp)[payoff_class])

    return CoalitionGame(player_count=len(contexts), payoff=payoff)


def sentence_seed(seed: int, sentence_id: str) -> int:
    """Stable 64-bit sampling seed for one sentence within a global seed."""
    digest = hashlib.blake2b(
        f"{seed}:{sentence_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


def sentence_profile(
    model: Model, spec: AspectGameSpec, estimator: EstimatorConfig
) -> np.ndarray:
    """Raw (pre-softmax) contribution vector over original sentence positions.

    Aspect positions get exactly 0; each context position gets its Shapley
    value in the sentence's game, exact when the context count is within
    ``estimator.exact_limit`` and permutation-sampled otherwise.
    """
    game = game_from_sentence(model, spec)
    if game.player_count <= estimator.exact_limit:
        values = shapley_exact(game)
    else:
        values = shapley_permutation(
            game, estimator.samples, sentence_seed(estimator.seed, spec.sentence.id)
        )
    profile = np.zeros(spec.sentence.length)
    contexts = context_positions(spec.sentence)
    if contexts:
        profile[contexts] = values.values
    return profile


@dataclass(frozen=True)
class PosCETable:
    """Softmax-normalized historical contribution profiles, one row per
    absolute aspect position; rows without data stay at the uniform fallback."""

    max_len: int
    profiles: np.ndarray
    counts: np.ndarray
    built_at_epoch: int = -1
    estimator: EstimatorConfig | None = None

    def __post_init__(self) -> None:
        if self.max_len < 1:
            raise ValidationError(f"max_len must be >= 1, got {self.max_len}")
        if self.profiles.shape != (self.max_len, self.max_len):
            raise ValidationError(
                f"profiles must be {self.max_len} x {self.max_len}, got {self.profiles.shape}"
            )
        if self.counts.shape != (self.max_len,):
            raise ValidationError(
                f"counts must have shape ({self.max_len},), got {self.counts.shape}"
            )
        uniform = 1.0 / self.max_len
        for t in range(self.max_len):
            row = self.profiles[t]
            if self.counts[t] > 0:
                if row.min() < 0 or abs(row.sum() - 1.0) > SIMPLEX_TOLERANCE:
                    raise ValidationError(f"built row {t} is not a probability profile")
            elif not np.allclose(row, uniform, rtol=0.0, atol=SIMPLEX_TOLERANCE):
                raise ValidationError(f"row {t} has no data but is not the uniform fallback")

    @classmethod
    def unbuilt(cls, max_len: int) -> "PosCETable":
        return cls(
            max_len=max_len,
            profiles=np.full((max_len, max_len), 1.0 / max_len),
            counts=np.zeros(max_len, dtype=int),
        )


def build_table(
    model: Model,
    corpus: Corpus,
    max_len: int,
    estimator: EstimatorConfig,
    built_at_epoch: int = 0,
    threads: int = 1,
) -> PosCETable:
    """Aggregate per-sentence contribution profiles into a table.

    Sentences group by aspect position (clamped to the last row); profiles pad
    with zeros or truncate to ``max_len``; each built row is the softmax of the
    group mean. Deterministic for fixed inputs; sentence-level work may run on
    a thread pool, with accumulation always in corpus order.
    """
    if len(corpus) == 0:
        raise ValidationError("cannot build a table from an empty corpus")
    if max_len < 1:
        raise ValidationError(f"max_len must be >= 1, got {max_len}")

    def profile_of(sentence: Sentence) -> np.ndarray:
        return sentence_profile(model, AspectGameSpec.true_class(sentence), estimator)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            raw_profiles = list(pool.map(profile_of, corpus.sentences))
    else:
        raw_profiles = [profile_of(s) for s in corpus.sentences]

    sums = np.zeros((max_len, max_len))
    counts = np.zeros(max_len, dtype=int)
    for sentence, raw in zip(corpus.sentences, raw_profiles):
        row = min(sentence.aspect_position, max_len - 1)
        width = min(sentence.length, max_len)
        sums[row, :width] += raw[:width]
        counts[row] += 1

    profiles = np.full((max_len, max_len), 1.0 / max_len)
    for t in range(max_len):
        if counts[t] > 0:
            profiles[t] = softmax(sums[t] / counts[t])
    return PosCETable(
        max_len=max_len,
        profiles=profiles,
        counts=counts,
        built_at_epoch=built_at_epoch,
        estimator=estimator,
    )


def lookup_profile(table: PosCETable, aspect_position: int, length: int) -> np.ndarray:
    """Length-L profile for a sentence with its aspect at ``aspect_position``.

    Takes the first L entries of the clamped row, renormalized to sum 1; rows
    without history come back uniform. Positions beyond the table get zero
    historical mass. Never raises: clamping and fallbacks cover all inputs.
    """
    if aspect_position < 0:
        raise ValidationError(f"aspect position must be >= 0, got {aspect_position}")
    if length < 1:
        raise ValidationError(f"length must be >= 1, got {length}")
    row = table.profiles[min(aspect_position, table.max_len - 1)]
    if length <= table.max_len:
        head = row[:length].copy()
    else:
        head = np.concatenate([row, np.zeros(length - table.max_len)])
    total = head.sum()
    if total <= 0.0:
        return np.full(length, 1.0 / length)
    return head / total


# ---------------------------------------------------------------------------
# Table container
# ---------------------------------------------------------------------------

TABLE_FORMAT = "posce-table"
TABLE_VERSION = 1


def save_table(table: PosCETable, path: str | Path, config: dict | None = None) -> None:
    """Serialize to JSON with bit-exact float round-tripping."""
    payload = {
        "format": TABLE_FORMAT,
        "format_version": TABLE_VERSION,
        "max_len": table.max_len,
        "profiles": table.profiles.tolist(),
        "counts": table.counts.tolist(),
        "built_at_epoch": table.built_at_epoch,
        "estimator": table.estimator.to_dict() if table.estimator else None,
        "config": config or {},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_table(path: str | Path) -> PosCETable:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if payload.get("format") != TABLE_FORMAT:
        raise ParseError(path, 1, f"not a {TABLE_FORMAT} file")
    if payload.get("format_version") != TABLE_VERSION:
        raise ParseError(path, 1, f"unsupported table version {payload.get('format_version')}")
    estimator = payload.get("estimator")
    return PosCETable(
        max_len=int(payload["max_len"]),
        profiles=np.array(payload["profiles"], dtype=float),
        counts=np.array(payload["counts"], dtype=int),
        built_at_epoch=int(payload["built_at_epoch"]),
        estimator=EstimatorConfig(**estimator) if estimator else None,
    )


def export_table_tsv(table: PosCETable) -> str:
    """Human-readable tab-separated dump: one row per aspect position."""
    header = ["aspect_position", "count"] + [f"p{j}" for j in range(table.max_len)]
    lines = ["\t".join(header)]
    for t in range(table.max_len):
        cells = [str(t), str(int(table.counts[t]))]
        cells.extend(repr(float(v)) for v in table.profiles[t])
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
