"""Command-line front door: train, eval, posce-build, attribute, synth.

Option precedence is flags > config file (``--config``, a JSON object keyed by
flag name with underscores) > built-in defaults. Every artifact a subcommand
writes embeds the effective configuration and a format version. Errors exit
with a class-partitioned code (usage 2, io 3, parse 4, validation 5,
numeric 6) after printing a single machine-parsable line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import harness, table as table_mod, textmodel
from .errors import (
    EXIT_IO,
    EXIT_NUMERIC,
    EXIT_PARSE,
    EXIT_VALIDATION,
    NumericError,
    ParseError,
    PosceError,
    ValidationError,
)

_TRAIN_DEFAULTS = {
    "lr": 1e-3,
    "l2": 1e-5,
    "batch": 16,
    "epochs": 20,
    "schedule": "never",
    "max_len": 11,
    "hidden": 16,
    "seed": 0,
    "threads": 1,
    "samples": 2000,
    "exact_limit": 12,
}

_SYNTH_DEFAULTS = {"size": 300, "max_len": 11, "seed": 0, "dim": 32}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ParseError as exc:
        return _fail("parse", exc, EXIT_PARSE)
    except NumericError as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except (ValidationError, PosceError) as exc:
        return _fail("validation", exc, EXIT_VALIDATION)
    except OSError as exc:
        return _fail("io", exc, EXIT_IO)


def _fail(error_class: str, exc: Exception, code: int) -> int:
    print(f"error: {error_class}: {exc}", file=sys.stderr)
    return code


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posce",
        description="Aspect-sentiment classifier with position-based "
        "contributive embeddings and Shapley-value attribution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--threads", type=int, help="data-parallel workers (default 1)")
    common.add_argument("--out", help="output directory for artifacts")

    p_train = sub.add_parser("train", parents=[common], help="train a classifier")
    p_train.add_argument("--data", help="training dataset file")
    p_train.add_argument("--test-data", help="held-out dataset for per-epoch metrics")
    p_train.add_argument("--vectors", help="word-vector text file")
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--l2", type=float)
    p_train.add_argument("--batch", type=int)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--schedule", help="never, at:E, or upto:E")
    p_train.add_argument("--max-len", type=int, dest="max_len")
    p_train.add_argument("--hidden", type=int)
    p_train.add_argument("--samples", type=int, help="permutation samples per large game")
    p_train.add_argument("--exact-limit", type=int, dest="exact_limit")
    p_train.set_defaults(handler=_cmd_train)

    p_eval = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--table", help="contribution table file (uniform if absent)")
    p_eval.add_argument("--data", required=True)
    p_eval.set_defaults(handler=_cmd_eval)

    p_build = sub.add_parser(
        "posce-build", parents=[common], help="build a contribution table"
    )
    p_build.add_argument("--checkpoint", required=True)
    p_build.add_argument("--data", required=True)
    p_build.add_argument("--max-len", type=int, dest="max_len")
    p_build.add_argument("--samples", type=int)
    p_build.add_argument("--exact-limit", type=int, dest="exact_limit")
    p_build.set_defaults(handler=_cmd_posce_build)

    p_attr = sub.add_parser(
        "attribute", parents=[common], help="explain one sentence per position"
    )
    p_attr.add_argument("--checkpoint", required=True)
    p_attr.add_argument("--table", help="contribution table file (uniform if absent)")
    p_attr.add_argument("--text", required=True)
    p_attr.add_argument("--aspect-from", type=int, required=True, dest="aspect_from",
                        help="aspect start, character offset")
    p_attr.add_argument("--aspect-to", type=int, required=True, dest="aspect_to",
                        help="aspect end, character offset")
    p_attr.add_argument("--class", dest="payoff_class", default="true",
                        choices=["0", "1", "2", "true"],
                        help="payoff class; 'true' uses the model's prediction")
    p_attr.add_argument("--samples", type=int)
    p_attr.add_argument("--exact-limit", type=int, dest="exact_limit")
    p_attr.set_defaults(handler=_cmd_attribute)

    p_synth = sub.add_parser(
        "synth", parents=[common], help="generate a synthetic corpus"
    )
    p_synth.add_argument("--size", type=int, help="training sentences (test gets half)")
    p_synth.add_argument("--max-len", type=int, dest="max_len")
    p_synth.add_argument("--vectors-out", dest="vectors_out",
                         help="also write seeded random vectors for the vocabulary")
    p_synth.add_argument("--dim", type=int, help="dimension for --vectors-out")
    p_synth.set_defaults(handler=_cmd_synth)

    return parser


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------


class _Resolver:
    """flags > config file > defaults, recording the effective values."""

    def __init__(self, args: argparse.Namespace, defaults: dict):
        self.args = args
        self.defaults = defaults
        self.file_config = _load_config_file(args.config) if args.config else {}
        self.effective: dict = {}

    def get(self, key: str, default=None):
        value = getattr(self.args, key, None)
        if value is None:
            value = self.file_config.get(key, self.defaults.get(key, default))
        self.effective[key] = value
        return value

    def require_path(self, key: str, description: str) -> Path:
        value = self.get(key)
        if value is None:
            raise ValidationError(f"missing required {description} ({key})")
        path = Path(value)
        if not path.exists():
            raise FileNotFoundError(f"{description} not found: {path}")
        return path


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        payload = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(p, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(payload, dict):
        raise ParseError(p, 1, "config file must hold a JSON object")
    return payload


def _out_dir(resolver: _Resolver) -> Path:
    out = resolver.get("out", ".")
    path = Path(out if out is not None else ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_train(args: argparse.Namespace) -> int:
    r = _Resolver(args, _TRAIN_DEFAULTS)
    data_path = r.require_path("data", "training dataset")
    vectors_path = r.require_path("vectors", "word-vector file")
    test_value = r.get("test_data")

    embeddings = textmodel.load_word_vectors(vectors_path)
    train_corpus = corpus_mod.load_dataset(data_path, split="train")
    test_corpus = None
    if test_value is not None:
        test_path = Path(test_value)
        if not test_path.exists():
            raise FileNotFoundError(f"test dataset not found: {test_path}")
        test_corpus = corpus_mod.load_dataset(test_path, split="test")

    config = harness.TrainConfig(
        lr=float(r.get("lr")),
        l2=float(r.get("l2")),
        batch_size=int(r.get("batch")),
        max_epochs=int(r.get("epochs")),
        seed=int(r.get("seed")),
        schedule=harness.ScheduleExpression.parse(str(r.get("schedule"))),
        estimator=table_mod.EstimatorConfig(
            exact_limit=int(r.get("exact_limit")),
            samples=int(r.get("samples")),
            seed=int(r.get("seed")),
        ),
        max_len=int(r.get("max_len")),
        k=embeddings.dimension,
        h=int(r.get("hidden")),
        threads=int(r.get("threads")),
    )
    out = _out_dir(r)
    effective = dict(sorted({**r.effective, "k": embeddings.dimension}.items()))

    result = harness.train(train_corpus, test_corpus, embeddings, config)

    checkpoint = textmodel.Checkpoint(
        model=textmodel.Model(params=result.params, embeddings=embeddings),
        max_len=config.max_len,
        config=effective,
    )
    textmodel.save_checkpoint(checkpoint, out / "checkpoint.json")
    table_mod.save_table(result.table, out / "table.json", config=effective)
    harness.write_run_log(result, out / "run_log.jsonl", config=effective)

    for record in result.log:
        build = ""
        if record.build:
            build = f"  [table built in {record.build.duration_s:.2f}s]"
        metrics = ""
        if record.eval:
            metrics = f"  acc={record.eval.accuracy:.4f}  macroF1={record.eval.macro_f1:.4f}"
        print(f"epoch {record.epoch:>3}  loss={record.mean_loss:.4f}{metrics}{build}")
    print(f"wrote {out / 'checkpoint.json'}, {out / 'table.json'}, {out / 'run_log.jsonl'}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    r = _Resolver(args, {"threads": 1})
    checkpoint_path = r.require_path("checkpoint", "checkpoint")
    data_path = r.require_path("data", "dataset")
    table_value = r.get("table")
    threads = int(r.get("threads"))

    checkpoint = textmodel.load_checkpoint(checkpoint_path)
    if table_value is not None:
        table_path = Path(table_value)
        if not table_path.exists():
            raise FileNotFoundError(f"table not found: {table_path}")
        table = table_mod.load_table(table_path)
    else:
        table = table_mod.PosCETable.unbuilt(checkpoint.max_len)
    corpus = corpus_mod.load_dataset(data_path, split="eval")

    report = harness.evaluate(checkpoint.model, table, corpus, threads=threads)
    effective = dict(sorted(r.effective.items()))
    print(report.format_human())
    print()
    tsv = f"# config: {json.dumps(effective, sort_keys=True)}\n" + report.to_tsv()
    print(tsv, end="")
    if args.out:
        out = _out_dir(r)
        (out / "eval.tsv").write_text(tsv, encoding="utf-8")
        print(f"wrote {out / 'eval.tsv'}")
    return 0


def _cmd_posce_build(args: argparse.Namespace) -> int:
    r = _Resolver(args, {"threads": 1, "seed": 0, "samples": 2000, "exact_limit": 12})
    checkpoint_path = r.require_path("checkpoint", "checkpoint")
    data_path = r.require_path("data", "dataset")

    checkpoint = textmodel.load_checkpoint(checkpoint_path)
    corpus = corpus_mod.load_dataset(data_path, split="build")
    max_len_value = r.get("max_len")
    max_len = int(max_len_value) if max_len_value is not None else checkpoint.max_len
    r.effective["max_len"] = max_len
    estimator = table_mod.EstimatorConfig(
        exact_limit=int(r.get("exact_limit")),
        samples=int(r.get("samples")),
        seed=int(r.get("seed")),
    )

    built = table_mod.build_table(
        checkpoint.model,
        corpus,
        max_len,
        estimator,
        built_at_epoch=0,
        threads=int(r.get("threads")),
    )
    out = _out_dir(r)
    effective = dict(sorted(r.effective.items()))
    table_mod.save_table(built, out / "table.json", config=effective)
    (out / "table.tsv").write_text(table_mod.export_table_tsv(built), encoding="utf-8")
    rows_built = int((built.counts > 0).sum())
    print(f"built {rows_built}/{max_len} rows from {len(corpus)} sentences")
    print(f"wrote {out / 'table.json'} and {out / 'table.tsv'}")
    return 0


def _cmd_attribute(args: argparse.Namespace) -> int:
    r = _Resolver(args, {"threads": 1, "seed": 0, "samples": 2000, "exact_limit": 12})
    checkpoint_path = r.require_path("checkpoint", "checkpoint")
    table_value = r.get("table")
    text = r.get("text")
    char_from = int(r.get("aspect_from"))
    char_to = int(r.get("aspect_to"))

    checkpoint = textmodel.load_checkpoint(checkpoint_path)
    if table_value is not None:
        table_path = Path(table_value)
        if not table_path.exists():
            raise FileNotFoundError(f"table not found: {table_path}")
        table = table_mod.load_table(table_path)
    else:
        table = table_mod.PosCETable.unbuilt(checkpoint.max_len)

    tokens, aspect_from, aspect_to = corpus_mod.resolve_aspect_span(text, char_from, char_to)
    sentence = corpus_mod.Sentence(
        tokens=tuple(tokens),
        aspect_from=aspect_from,
        aspect_to=aspect_to,
        polarity=corpus_mod.Polarity.NEUTRAL,  # placeholder; payoff class is explicit
        id="attribute",
    )

    model = checkpoint.model
    probs = harness.predict(model, table, sentence)
    class_arg = str(r.get("payoff_class"))
    if class_arg == "true":
        payoff_class = int(np.argmax(probs))
        class_note = f"{payoff_class} (predicted)"
    else:
        payoff_class = int(class_arg)
        class_note = str(payoff_class)

    estimator = table_mod.EstimatorConfig(
        exact_limit=int(r.get("exact_limit")),
        samples=int(r.get("samples")),
        seed=int(r.get("seed")),
    )
    spec = table_mod.AspectGameSpec(sentence=sentence, payoff_class=payoff_class)
    raw = table_mod.sentence_profile(model, spec, estimator)
    normalized = textmodel.softmax(raw)
    historical = table_mod.lookup_profile(table, sentence.aspect_position, sentence.length)

    game = table_mod.game_from_sentence(model, spec)
    n = game.player_count
    full_gap = game.payoff(frozenset(range(n))) - game.payoff(frozenset())
    exact = n <= estimator.exact_limit
    if exact:
        estimator_note = "exact enumeration"
    else:
        estimator_note = (
            f"permutation sampling, samples={estimator.samples}, "
            f"seed={table_mod.sentence_seed(estimator.seed, sentence.id)}"
        )

    effective = dict(sorted(r.effective.items()))
    lines = [f"# config: {json.dumps(effective, sort_keys=True)}"]
    lines.append(
        "predicted probabilities: "
        + "  ".join(
            f"{p.label}={probs[int(p)]:.4f}" for p in corpus_mod.Polarity
        )
    )
    lines.append(f"payoff class: {class_note}    estimator: {estimator_note}")
    header = f"{'position':>8}  {'token':<16} {'role':<7} {'raw_shapley':>12}  {'profile':>8}  {'historical':>10}"
    lines.append(header)
    for i, token in enumerate(sentence.tokens):
        role = "aspect" if sentence.aspect_from <= i < sentence.aspect_to else "context"
        lines.append(
            f"{i:>8}  {token:<16} {role:<7} {raw[i]:>+12.6f}  {normalized[i]:>8.4f}  {historical[i]:>10.4f}"
        )
    check = abs(raw.sum() - full_gap)
    lines.append(
        f"efficiency check: sum(raw)={raw.sum():+.6f}  "
        f"P(full)-P(aspect-only)={full_gap:+.6f}  |diff|={check:.2e}"
    )
    report = "\n".join(lines)
    print(report)

    if args.out:
        out = _out_dir(r)
        tsv_lines = [f"# config: {json.dumps(effective, sort_keys=True)}"]
        tsv_lines.append("position\ttoken\trole\traw_shapley\tprofile\thistorical")
        for i, token in enumerate(sentence.tokens):
            role = "aspect" if sentence.aspect_from <= i < sentence.aspect_to else "context"
            tsv_lines.append(
                f"{i}\t{token}\t{role}\t{raw[i]!r}\t{normalized[i]!r}\t{historical[i]!r}"
            )
        (out / "attribution.tsv").write_text("\n".join(tsv_lines) + "\n", encoding="utf-8")
        print(f"wrote {out / 'attribution.tsv'}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    r = _Resolver(args, _SYNTH_DEFAULTS)
    config = corpus_mod.SynthConfig(
        size=int(r.get("size")),
        max_len=int(r.get("max_len")),
        seed=int(r.get("seed")),
    )
    vectors_out = r.get("vectors_out")
    dim = int(r.get("dim"))
    out = _out_dir(r)

    train_corpus, test_corpus = corpus_mod.generate_synthetic(config)
    corpus_mod.save_dataset(train_corpus, out / "train.jsonl")
    corpus_mod.save_dataset(test_corpus, out / "test.jsonl")
    hist = train_corpus.class_histogram()
    print(
        f"wrote {len(train_corpus)} train / {len(test_corpus)} test sentences to {out} "
        f"(class histogram: " + ", ".join(f"{p.label}={hist[p]}" for p in corpus_mod.Polarity) + ")"
    )
    if vectors_out is not None:
        embeddings = textmodel.random_embedding_table(
            corpus_mod.synthetic_vocabulary(), dim, seed=int(r.get("seed"))
        )
        textmodel.write_word_vectors(embeddings, vectors_out)
        print(f"wrote {len(embeddings.vocabulary)} vectors of dimension {dim} to {vectors_out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
