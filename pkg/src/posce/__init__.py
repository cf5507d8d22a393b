"""Position-based contributive embeddings for aspect-level sentiment analysis.

A Shapley-value coalition engine over word positions, a small embedding
classifier, per-aspect-position contribution tables built from model payoffs,
and a seeded training/evaluation harness with a CLI.
"""

from .corpus import (
    Corpus,
    Polarity,
    Sentence,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    oracle_label,
    save_dataset,
    tokenize,
)
from .harness import (
    EvalReport,
    ScheduleExpression,
    TrainConfig,
    TrainResult,
    evaluate,
    schedule_experiment,
    train,
)
from .shapley import (
    CoalitionGame,
    EstimationMethod,
    ShapleyValues,
    coalition_weight,
    enumerate_coalitions,
    marginal_contribution,
    shapley_exact,
    shapley_permutation,
    verify_axioms,
)
from .table import (
    AspectGameSpec,
    EstimatorConfig,
    PosCETable,
    build_table,
    game_from_sentence,
    load_table,
    lookup_profile,
    save_table,
    sentence_profile,
)
from .textmodel import (
    ClassifierParams,
    EmbeddingTable,
    Model,
    adam_step,
    compose_input,
    expand_posce,
    forward,
    init_params,
    load_checkpoint,
    load_word_vectors,
    loss_and_gradients,
    positional_encoding,
    save_checkpoint,
)

__version__ = "0.1.0"
