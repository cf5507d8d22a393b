"""Training loop with scheduled contribution-table rebuilds, plus evaluation.

A schedule expression decides at which epoch ends the table is (re)built from
a snapshot of the current parameters; fresh profiles take effect from the next
step onward. Until the first build every sentence sees the uniform fallback
profile, which makes a `never` schedule the no-table baseline. Per-epoch
evaluation runs after any build at that epoch, so the last record always
describes the returned (params, table) pair.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .errors import ValidationError
from .table import (
    EstimatorConfig,
    PosCETable,
    build_table,
    lookup_profile,
)
from .textmodel import (
    ClassifierParams,
    EmbeddingTable,
    Gradients,
    Model,
    adam_step,
    compose_input,
    forward,
    init_adam_state,
    init_params,
    loss_and_gradients,
)


@dataclass(frozen=True)
class ScheduleExpression:
    """When to (re)build the contribution table.

    ``never``: no builds; ``at:E``: once, at the end of epoch E; ``upto:E``:
    at the end of every epoch 1..E.
    """

    kind: str
    epoch: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("never", "at", "upto"):
            raise ValidationError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "never":
            if self.epoch is not None:
                raise ValidationError("schedule 'never' takes no epoch")
        elif self.epoch is None or self.epoch < 1:
            raise ValidationError(f"schedule '{self.kind}' needs an epoch >= 1")

    @classmethod
    def never(cls) -> "ScheduleExpression":
        return cls(kind="never")

    @classmethod
    def at(cls, epoch: int) -> "ScheduleExpression":
        return cls(kind="at", epoch=epoch)

    @classmethod
    def up_to(cls, epoch: int) -> "ScheduleExpression":
        return cls(kind="upto", epoch=epoch)

    @classmethod
    def parse(cls, text: str) -> "ScheduleExpression":
        text = text.strip()
        if text == "never":
            return cls.never()
        for kind in ("at", "upto"):
            prefix = kind + ":"
            if text.startswith(prefix):
                try:
                    epoch = int(text[len(prefix):])
                except ValueError:
                    raise ValidationError(f"bad schedule epoch in {text!r}") from None
                return cls(kind=kind, epoch=epoch)
        raise ValidationError(
            f"bad schedule {text!r}; expected never, at:E, or upto:E"
        )

    def build_epochs(self, max_epochs: int) -> frozenset[int]:
        if self.kind == "never":
            return frozenset()
        if self.kind == "at":
            return frozenset({self.epoch})
        return frozenset(range(1, self.epoch + 1))

    def __str__(self) -> str:
        return "never" if self.kind == "never" else f"{self.kind}:{self.epoch}"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    l2: float = 1e-5
    batch_size: int = 16
    max_epochs: int = 20
    seed: int = 0
    schedule: ScheduleExpression = ScheduleExpression.never()
    estimator: EstimatorConfig = EstimatorConfig()
    max_len: int = 11
    k: int = 32
    h: int = 16
    threads: int = 1

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.l2 < 0:
            raise ValidationError(f"l2 must be >= 0, got {self.l2}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValidationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.max_len < 1:
            raise ValidationError(f"max_len must be >= 1, got {self.max_len}")
        if self.k < 2:
            raise ValidationError(f"k must be >= 2, got {self.k}")
        if self.h < 1:
            raise ValidationError(f"h must be >= 1, got {self.h}")
        if self.threads < 1:
            raise ValidationError(f"threads must be >= 1, got {self.threads}")
        if self.schedule.kind != "never" and self.schedule.epoch > self.max_epochs:
            raise ValidationError(
                f"schedule {self.schedule} exceeds max_epochs={self.max_epochs}"
            )

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "l2": self.l2,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "seed": self.seed,
            "schedule": str(self.schedule),
            "estimator": self.estimator.to_dict(),
            "max_len": self.max_len,
            "k": self.k,
            "h": self.h,
            "threads": self.threads,
        }


@dataclass(frozen=True)
class EvalReport:
    """Accuracy, per-class precision/recall/F1 (0/0 counted as 0), and the
    unweighted macro-F1, over a 3 x 3 confusion matrix of counts."""

    accuracy: float
    macro_f1: float
    precision: tuple[float, float, float]
    recall: tuple[float, float, float]
    f1: tuple[float, float, float]
    confusion: np.ndarray

    def to_tsv(self) -> str:
        lines = ["metric\tvalue"]
        lines.append(f"accuracy\t{self.accuracy!r}")
        lines.append(f"macro_f1\t{self.macro_f1!r}")
        for c in range(3):
            lines.append(f"precision_{c}\t{self.precision[c]!r}")
            lines.append(f"recall_{c}\t{self.recall[c]!r}")
            lines.append(f"f1_{c}\t{self.f1[c]!r}")
        for i in range(3):
            for j in range(3):
                lines.append(f"confusion_{i}{j}\t{int(self.confusion[i, j])}")
        return "\n".join(lines) + "\n"

    def format_human(self) -> str:
        lines = [
            f"accuracy  {self.accuracy:.4f}",
            f"macro-F1  {self.macro_f1:.4f}",
            "class      precision  recall  f1",
        ]
        for c, name in enumerate(("positive", "neutral", "negative")):
            lines.append(
                f"{name:<10} {self.precision[c]:>9.4f} {self.recall[c]:>7.4f} {self.f1[c]:>5.4f}"
            )
        lines.append("confusion (rows true, cols predicted):")
        for i in range(3):
            lines.append("  " + "  ".join(f"{int(v):>5}" for v in self.confusion[i]))
        return "\n".join(lines)


@dataclass(frozen=True)
class BuildEvent:
    epoch: int
    sentence_count: int
    estimator: EstimatorConfig
    duration_s: float  # operator feedback only; kept out of persisted logs

    def to_record(self) -> dict:
        return {
            "epoch": self.epoch,
            "sentences": self.sentence_count,
            "estimator": self.estimator.to_dict(),
        }


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    eval: EvalReport | None
    build: BuildEvent | None


@dataclass(frozen=True)
class TrainResult:
    params: ClassifierParams
    table: PosCETable
    log: tuple[EpochRecord, ...]
    config: TrainConfig

    @property
    def final_eval(self) -> EvalReport | None:
        return self.log[-1].eval if self.log else None


def predict(model: Model, table: PosCETable, sentence) -> np.ndarray:
    """Class probabilities for one sentence under a model and table."""
    profile = lookup_profile(table, sentence.aspect_position, sentence.length)
    inp = compose_input(
        model.embeddings.rows(sentence.tokens),
        profile,
        model.params,
        sentence.aspect_position,
    )
    return forward(model.params, inp)


def evaluate(model: Model, table: PosCETable, corpus: Corpus, threads: int = 1) -> EvalReport:
    """Argmax predictions (ties to the lowest class index) scored against the
    corpus labels."""
    if len(corpus) == 0:
        raise ValidationError("cannot evaluate on an empty corpus")

    def predicted_class(sentence) -> int:
        return int(np.argmax(predict(model, table, sentence)))

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            predictions = list(pool.map(predicted_class, corpus.sentences))
    else:
        predictions = [predicted_class(s) for s in corpus.sentences]

    confusion = np.zeros((3, 3), dtype=int)
    for sentence, pred in zip(corpus.sentences, predictions):
        confusion[int(sentence.polarity), pred] += 1
    return report_from_confusion(confusion)


def report_from_confusion(confusion: np.ndarray) -> EvalReport:
    total = int(confusion.sum())
    accuracy = float(np.trace(confusion)) / total
    precision, recall, f1 = [], [], []
    for c in range(3):
        tp = float(confusion[c, c])
        predicted = float(confusion[:, c].sum())
        actual = float(confusion[c, :].sum())
        p = tp / predicted if predicted > 0 else 0.0
        r = tp / actual if actual > 0 else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(f)
    return EvalReport(
        accuracy=accuracy,
        macro_f1=float(np.mean(f1)),
        precision=tuple(precision),
        recall=tuple(recall),
        f1=tuple(f1),
        confusion=confusion,
    )


def train(
    train_corpus: Corpus,
    test_corpus: Corpus | None,
    embeddings: EmbeddingTable,
    config: TrainConfig,
) -> TrainResult:
    """Seeded minibatch training with scheduled table builds.

    Single-threaded runs are fully deterministic per (corpus, config, seed);
    with ``config.threads > 1`` only sentence-level work parallelizes and
    results are accumulated in corpus order, so builds stay deterministic too.
    """
    if len(train_corpus) == 0:
        raise ValidationError("training corpus is empty")
    if embeddings.dimension != config.k:
        raise ValidationError(
            f"config.k={config.k} does not match embedding dimension "
            f"{embeddings.dimension}"
        )

    params = init_params(config.k, config.h, seed=config.seed)
    state = init_adam_state(config.k, config.h)
    table = PosCETable.unbuilt(config.max_len)
    build_epochs = config.schedule.build_epochs(config.max_epochs)
    shuffle_rng = np.random.default_rng([config.seed, 1])

    sentences = train_corpus.sentences
    token_rows = [embeddings.rows(s.tokens) for s in sentences]
    labels = [int(s.polarity) for s in sentences]

    log = []
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(sentences))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            grads = Gradients.zeros(config.k, config.h)
            for idx in batch:
                s = sentences[idx]
                profile = lookup_profile(table, s.aspect_position, s.length)
                inp = compose_input(token_rows[idx], profile, params, s.aspect_position)
                loss, g = loss_and_gradients(params, inp, labels[idx], config.l2)
                grads.add_(g)
                epoch_losses.append(loss)
            grads.scale_(1.0 / len(batch))
            params, state = adam_step(params, grads, state, config.lr)

        build_event = None
        if epoch in build_epochs:
            started = time.perf_counter()
            table = build_table(
                Model(params=params, embeddings=embeddings),
                train_corpus,
                config.max_len,
                config.estimator,
                built_at_epoch=epoch,
                threads=config.threads,
            )
            build_event = BuildEvent(
                epoch=epoch,
                sentence_count=len(train_corpus),
                estimator=config.estimator,
                duration_s=time.perf_counter() - started,
            )

        report = None
        if test_corpus is not None and len(test_corpus) > 0:
            report = evaluate(
                Model(params=params, embeddings=embeddings),
                table,
                test_corpus,
                threads=config.threads,
            )
        log.append(
            EpochRecord(
                epoch=epoch,
                mean_loss=float(np.mean(epoch_losses)),
                eval=report,
                build=build_event,
            )
        )

    return TrainResult(params=params, table=table, log=tuple(log), config=config)


RUN_LOG_FORMAT = "posce-run-log"
RUN_LOG_VERSION = 1


def write_run_log(result: TrainResult, path: str | Path, config: dict | None = None) -> None:
    """Line-oriented log: a header record, then one JSON record per epoch.

    Build durations are deliberately not persisted so identical seeded runs
    produce byte-identical files.
    """
    lines = [
        json.dumps(
            {
                "format": RUN_LOG_FORMAT,
                "format_version": RUN_LOG_VERSION,
                "config": config if config is not None else result.config.to_dict(),
            },
            sort_keys=True,
        )
    ]
    for record in result.log:
        payload = {
            "epoch": record.epoch,
            "mean_loss": record.mean_loss,
            "accuracy": record.eval.accuracy if record.eval else None,
            "macro_f1": record.eval.macro_f1 if record.eval else None,
            "build": record.build.to_record() if record.build else None,
        }
        lines.append(json.dumps(payload, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class ScheduleRow:
    schedule: str
    accuracy: float
    macro_f1: float
    delta_accuracy_pp: float
    delta_macro_f1: float


@dataclass(frozen=True)
class ScheduleComparison:
    baseline_accuracy: float
    baseline_macro_f1: float
    rows: tuple[ScheduleRow, ...]

    def to_tsv(self) -> str:
        lines = ["schedule\taccuracy\tmacro_f1\tdelta_acc_pp\tdelta_f1"]
        for row in self.rows:
            lines.append(
                "\t".join(
                    [
                        row.schedule,
                        repr(row.accuracy),
                        repr(row.macro_f1),
                        repr(row.delta_accuracy_pp),
                        repr(row.delta_macro_f1),
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    def format_strategy_table(self) -> str:
        """Deltas-vs-baseline in the update-strategy table shape: one column
        per schedule, accuracy deltas in percentage points, F1 absolute."""
        header = ["epoch"] + [row.schedule for row in self.rows]
        acc = ["acc_delta_pp"] + [f"{row.delta_accuracy_pp:+.2f}" for row in self.rows]
        f1 = ["f1_delta"] + [f"{row.delta_macro_f1:+.4f}" for row in self.rows]
        widths = [max(len(col[i]) for col in (header, acc, f1)) for i in range(len(header))]

        def fmt(cells):
            return "  ".join(c.ljust(w) for c, w in zip(cells, widths))

        return "\n".join([fmt(header), fmt(acc), fmt(f1)])


def schedule_experiment(
    train_corpus: Corpus,
    test_corpus: Corpus,
    embeddings: EmbeddingTable,
    base_config: TrainConfig,
    schedules: list[ScheduleExpression],
) -> ScheduleComparison:
    """Train once per schedule under a shared seed and report deltas against
    the implicit `never` baseline."""
    if not schedules:
        raise ValidationError("schedules list is empty")
    if test_corpus is None or len(test_corpus) == 0:
        raise ValidationError("schedule experiment needs a test corpus")

    results: dict[str, EvalReport] = {}

    def run(schedule: ScheduleExpression) -> EvalReport:
        key = str(schedule)
        if key not in results:
            config = dataclasses.replace(base_config, schedule=schedule)
            results[key] = train(train_corpus, test_corpus, embeddings, config).final_eval
        return results[key]

    baseline = run(ScheduleExpression.never())
    rows = []
    for schedule in schedules:
        report = run(schedule)
        rows.append(
            ScheduleRow(
                schedule=str(schedule),
                accuracy=report.accuracy,
                macro_f1=report.macro_f1,
                delta_accuracy_pp=(report.accuracy - baseline.accuracy) * 100.0,
                delta_macro_f1=report.macro_f1 - baseline.macro_f1,
            )
        )
    return ScheduleComparison(
        baseline_accuracy=baseline.accuracy,
        baseline_macro_f1=baseline.macro_f1,
        rows=tuple(rows),
    )
