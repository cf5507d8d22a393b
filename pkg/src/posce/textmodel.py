"""Embedding tables, input composition, and the small softmax classifier.

The input representation of a phrase is the elementwise sum of three L x k
matrices: frozen token embeddings, a fixed sinusoidal positional encoding, and
a rank-1 expansion of the per-position contribution profile. The classifier is
tanh(F M + b) row-wise, mean pooling over positions, then an affine layer into
a 3-class softmax. Gradients are analytic; the optimizer is Adam.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericError, ParseError, ValidationError

UNK_TOKEN = "<unk>"
CLASS_COUNT = 3

#: Probability floor applied before the log in the cross-entropy loss.
PROB_FLOOR = 1e-12

_PARAM_FIELDS = ("M", "b", "W_out", "b_out", "u_posce")


@dataclass(frozen=True)
class EmbeddingTable:
    """Token -> row lookup over a V x k matrix with a reserved UNK row."""

    vocabulary: dict[str, int]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2:
            raise ValidationError("embedding matrix must be 2-dimensional")
        rows = sorted(self.vocabulary.values())
        if rows != list(range(self.matrix.shape[0])):
            raise ValidationError(
                "vocabulary must map tokens one-to-one onto matrix rows"
            )
        if UNK_TOKEN not in self.vocabulary:
            raise ValidationError(f"vocabulary is missing the reserved {UNK_TOKEN!r} row")
        if not np.isfinite(self.matrix).all():
            raise NumericError("embedding matrix contains non-finite values")

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    def row_index(self, token: str) -> int:
        return self.vocabulary.get(token, self.vocabulary[UNK_TOKEN])

    def rows(self, tokens) -> np.ndarray:
        """L x k matrix of embeddings, unknown tokens falling back to UNK."""
        return self.matrix[[self.row_index(t) for t in tokens]]


def load_word_vectors(path: str | Path) -> EmbeddingTable:
    """Parse a plain-text word-vector file: one "token v1 ... vk" per line."""
    path = Path(path)
    vocabulary: dict[str, int] = {}
    vectors: list[np.ndarray] = []
    dim = None
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            parts = line.split()
            if not parts:
                continue
            token, coords = parts[0], parts[1:]
            if not coords:
                raise ParseError(path, lineno, f"no coordinates for token {token!r}")
            if dim is None:
                dim = len(coords)
            elif len(coords) != dim:
                raise ParseError(
                    path, lineno, f"expected {dim} coordinates, got {len(coords)}"
                )
            if token in vocabulary:
                raise ParseError(path, lineno, f"duplicate token {token!r}")
            try:
                vector = np.array([float(c) for c in coords])
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric coordinate for {token!r}") from None
            vocabulary[token] = len(vectors)
            vectors.append(vector)
    if not vectors:
        raise ParseError(path, 1, "word-vector file contains no vectors")
    if UNK_TOKEN not in vocabulary:
        vocabulary[UNK_TOKEN] = len(vectors)
        vectors.append(np.zeros(dim))
    return EmbeddingTable(vocabulary=vocabulary, matrix=np.array(vectors))


def write_word_vectors(table: EmbeddingTable, path: str | Path) -> None:
    """Inverse of :func:`load_word_vectors`; floats use shortest round-trip repr."""
    by_row = sorted(table.vocabulary.items(), key=lambda kv: kv[1])
    lines = [
        " ".join([token] + [repr(float(v)) for v in table.matrix[idx]])
        for token, idx in by_row
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def random_embedding_table(tokens, dimension: int, seed: int) -> EmbeddingTable:
    """Seeded standard-normal embeddings for a fixed token list."""
    if dimension < 2:
        raise ValidationError(f"embedding dimension must be >= 2, got {dimension}")
    tokens = list(tokens)
    if UNK_TOKEN not in tokens:
        tokens.append(UNK_TOKEN)
    if len(set(tokens)) != len(tokens):
        raise ValidationError("token list contains duplicates")
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((len(tokens), dimension))
    return EmbeddingTable(
        vocabulary={t: i for i, t in enumerate(tokens)}, matrix=matrix
    )


@dataclass(frozen=True)
class ClassifierParams:
    """All trainable tensors: hidden projection, output layer, and the
    contribution-profile expansion direction."""

    M: np.ndarray        # k x h
    b: np.ndarray        # h
    W_out: np.ndarray    # h x 3
    b_out: np.ndarray    # 3
    u_posce: np.ndarray  # k

    def __post_init__(self) -> None:
        k, h = self.M.shape
        if self.b.shape != (h,):
            raise ValidationError(f"b must have shape ({h},), got {self.b.shape}")
        if self.W_out.shape != (h, CLASS_COUNT):
            raise ValidationError(
                f"W_out must have shape ({h}, {CLASS_COUNT}), got {self.W_out.shape}"
            )
        if self.b_out.shape != (CLASS_COUNT,):
            raise ValidationError(
                f"b_out must have shape ({CLASS_COUNT},), got {self.b_out.shape}"
            )
        if self.u_posce.shape != (k,):
            raise ValidationError(
                f"u_posce must have shape ({k},), got {self.u_posce.shape}"
            )
        for name in _PARAM_FIELDS:
            if not np.isfinite(getattr(self, name)).all():
                raise NumericError(f"parameter tensor {name} contains non-finite values")

    @property
    def k(self) -> int:
        return self.M.shape[0]

    @property
    def h(self) -> int:
        return self.M.shape[1]


def init_params(k: int, h: int, seed: int, posce_scale: float = 8.0) -> ClassifierParams:
    """Seeded init: scaled-normal weights, zero biases.

    The expansion direction starts large: contribution profiles are
    probability-sized, so a unit-scale start would leave their per-position
    contrast invisible next to the token features and stall its training.
    """
    rng = np.random.default_rng(seed)
    return ClassifierParams(
        M=rng.standard_normal((k, h)) / math.sqrt(k),
        b=np.zeros(h),
        W_out=rng.standard_normal((h, CLASS_COUNT)) / math.sqrt(h),
        b_out=np.zeros(CLASS_COUNT),
        u_posce=rng.standard_normal(k) * posce_scale,
    )


def zero_params(k: int, h: int) -> ClassifierParams:
    return ClassifierParams(
        M=np.zeros((k, h)),
        b=np.zeros(h),
        W_out=np.zeros((h, CLASS_COUNT)),
        b_out=np.zeros(CLASS_COUNT),
        u_posce=np.zeros(k),
    )


@dataclass(frozen=True)
class InputRepresentation:
    """Composed L x k input plus the addends it was built from."""

    F: np.ndarray
    token_rows: np.ndarray
    posce_profile: np.ndarray
    aspect_position: int

    def __post_init__(self) -> None:
        if not np.isfinite(self.F).all():
            raise NumericError("input representation contains non-finite values")

    @property
    def length(self) -> int:
        return self.F.shape[0]


_ENCODING_CACHE: dict[tuple[int, int], np.ndarray] = {}


def positional_encoding(length: int, dimension: int) -> np.ndarray:
    """Fixed sinusoidal encoding: (p, 2j) -> sin(p / 10000^(2j/k)),
    (p, 2j+1) -> cos of the same angle. Returned read-only and cached."""
    if length < 1:
        raise ValidationError(f"length must be >= 1, got {length}")
    if dimension < 2 or dimension % 2:
        raise ValidationError(f"encoding dimension must be even and >= 2, got {dimension}")
    key = (length, dimension)
    cached = _ENCODING_CACHE.get(key)
    if cached is None:
        positions = np.arange(length)[:, None]
        rates = 10000.0 ** (np.arange(0, dimension, 2) / dimension)
        angles = positions / rates
        cached = np.empty((length, dimension))
        cached[:, 0::2] = np.sin(angles)
        cached[:, 1::2] = np.cos(angles)
        cached.flags.writeable = False
        _ENCODING_CACHE[key] = cached
    return cached


def expand_posce(profile: np.ndarray, u_posce: np.ndarray) -> np.ndarray:
    """Rank-1 lift of an L-vector profile into L x k: row i = profile[i] * u."""
    profile = np.asarray(profile, dtype=float)
    if profile.ndim != 1:
        raise ValidationError("profile must be a vector")
    if not np.isfinite(profile).all():
        raise NumericError("profile contains non-finite values")
    return np.outer(profile, u_posce)


def compose_input(
    token_rows: np.ndarray,
    posce_profile: np.ndarray,
    params: ClassifierParams,
    aspect_position: int,
) -> InputRepresentation:
    """Sum token embeddings, positional encoding, and the expanded profile."""
    token_rows = np.asarray(token_rows, dtype=float)
    posce_profile = np.asarray(posce_profile, dtype=float)
    if token_rows.ndim != 2:
        raise ValidationError("token rows must form an L x k matrix")
    length, dim = token_rows.shape
    if dim != params.k:
        raise ValidationError(
            f"token rows have dimension {dim} but parameters expect {params.k}"
        )
    if posce_profile.shape != (length,):
        raise ValidationError(
            f"profile must have shape ({length},), got {posce_profile.shape}"
        )
    if not 0 <= aspect_position < length:
        raise ValidationError(
            f"aspect position {aspect_position} outside [0, {length})"
        )
    F = token_rows + positional_encoding(length, dim) + expand_posce(posce_profile, params.u_posce)
    return InputRepresentation(
        F=F,
        token_rows=token_rows,
        posce_profile=posce_profile,
        aspect_position=aspect_position,
    )


def softmax(x: np.ndarray) -> np.ndarray:
    shifted = np.exp(x - np.max(x))
    return shifted / shifted.sum()


def forward(params: ClassifierParams, inp: InputRepresentation) -> np.ndarray:
    """Class probability 3-vector; entries positive and summing to 1."""
    hidden = np.tanh(inp.F @ params.M + params.b)
    pooled = hidden.mean(axis=0)
    return softmax(pooled @ params.W_out + params.b_out)


@dataclass
class Gradients:
    """Partials of the loss with respect to every parameter tensor."""

    M: np.ndarray
    b: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray
    u_posce: np.ndarray

    @classmethod
    def zeros(cls, k: int, h: int) -> "Gradients":
        return cls(
            M=np.zeros((k, h)),
            b=np.zeros(h),
            W_out=np.zeros((h, CLASS_COUNT)),
            b_out=np.zeros(CLASS_COUNT),
            u_posce=np.zeros(k),
        )

    def add_(self, other: "Gradients") -> None:
        for name in _PARAM_FIELDS:
            getattr(self, name).__iadd__(getattr(other, name))

    def scale_(self, factor: float) -> None:
        for name in _PARAM_FIELDS:
            getattr(self, name).__imul__(factor)


def loss_and_gradients(
    params: ClassifierParams,
    inp: InputRepresentation,
    label: int,
    l2: float,
) -> tuple[float, Gradients]:
    """Cross-entropy loss (with L2 on the weight matrices M and W_out) and its
    exact analytic gradients, including the profile expansion direction."""
    if label not in (0, 1, 2):
        raise ValidationError(f"label must be 0, 1, or 2, got {label}")
    if l2 < 0:
        raise ValidationError(f"l2 must be >= 0, got {l2}")

    length = inp.length
    z = inp.F @ params.M + params.b
    hidden = np.tanh(z)
    pooled = hidden.mean(axis=0)
    logits = pooled @ params.W_out + params.b_out
    probs = softmax(logits)

    loss = -math.log(max(probs[label], PROB_FLOOR))
    loss += l2 * (float(np.sum(params.M**2)) + float(np.sum(params.W_out**2)))

    dlogits = probs.copy()
    dlogits[label] -= 1.0
    dW_out = np.outer(pooled, dlogits) + 2.0 * l2 * params.W_out
    db_out = dlogits
    dpooled = params.W_out @ dlogits
    dz = (1.0 - hidden**2) * (dpooled / length)
    dM = inp.F.T @ dz + 2.0 * l2 * params.M
    db = dz.sum(axis=0)
    dF = dz @ params.M.T
    du = dF.T @ inp.posce_profile

    return loss, Gradients(M=dM, b=db, W_out=dW_out, b_out=db_out, u_posce=du)


@dataclass(frozen=True)
class AdamState:
    m: Gradients
    v: Gradients
    step: int = 0


def init_adam_state(k: int, h: int) -> AdamState:
    return AdamState(m=Gradients.zeros(k, h), v=Gradients.zeros(k, h), step=0)


def adam_step(
    params: ClassifierParams,
    grads: Gradients,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ClassifierParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    step = state.step + 1
    new_params = {}
    new_m = {}
    new_v = {}
    for name in _PARAM_FIELDS:
        g = getattr(grads, name)
        m = beta1 * getattr(state.m, name) + (1.0 - beta1) * g
        v = beta2 * getattr(state.v, name) + (1.0 - beta2) * g**2
        m_hat = m / (1.0 - beta1**step)
        v_hat = v / (1.0 - beta2**step)
        new_params[name] = getattr(params, name) - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return (
        ClassifierParams(**new_params),
        AdamState(m=Gradients(**new_m), v=Gradients(**new_v), step=step),
    )


@dataclass(frozen=True)
class Model:
    """A parameter set bound to the embedding table it was trained with."""

    params: ClassifierParams
    embeddings: EmbeddingTable


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "posce-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    model: Model
    max_len: int
    config: dict


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    """Serialize to JSON; float64 entries round-trip bit-exactly through
    Python's shortest-repr float encoding."""
    params = checkpoint.model.params
    payload = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "k": params.k,
        "h": params.h,
        "max_len": checkpoint.max_len,
        "config": checkpoint.config,
        "params": {name: getattr(params, name).tolist() for name in _PARAM_FIELDS},
        "vocabulary": checkpoint.model.embeddings.vocabulary,
        "embedding_matrix": checkpoint.model.embeddings.matrix.tolist(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(path, 1, f"not a {CHECKPOINT_FORMAT} file")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ParseError(
            path, 1, f"unsupported checkpoint version {payload.get('format_version')}"
        )
    raw = payload["params"]
    params = ClassifierParams(
        M=np.array(raw["M"], dtype=float),
        b=np.array(raw["b"], dtype=float),
        W_out=np.array(raw["W_out"], dtype=float),
        b_out=np.array(raw["b_out"], dtype=float),
        u_posce=np.array(raw["u_posce"], dtype=float),
    )
    embeddings = EmbeddingTable(
        vocabulary={str(t): int(i) for t, i in payload["vocabulary"].items()},
        matrix=np.array(payload["embedding_matrix"], dtype=float),
    )
    return Checkpoint(
        model=Model(params=params, embeddings=embeddings),
        max_len=int(payload["max_len"]),
        config=payload.get("config", {}),
    )
