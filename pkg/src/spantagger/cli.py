"""Command-line entry point: train, eval, predict, gradcheck, validate.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure. Failures print one ``error=<kind> ... reason=<text>`` line on stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields

from spantagger.checkpoint import load_checkpoint, save_checkpoint
from spantagger.config import TrainConfig, camel, load_config
from spantagger.corpus import TASKS, Sentence, Token, parse_corpus, read_corpus
from spantagger.errors import CheckpointError, ConfigError, DataError, NumericError
from spantagger.evaluation import evaluate, predict
from spantagger.model import Sidecar
from spantagger.training import grad_check, train

GRADCHECK_TOLERANCE = 1e-3

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _toy_sentence() -> Sentence:
    # "the pasta was really good": good is the root; pasta is its subject.
    rows = [
        ("the", "DT", 1, "det", "O", "O"),
        ("pasta", "NN", 4, "nsubj", "S-POS", "O"),
        ("was", "VBD", 4, "cop", "O", "O"),
        ("really", "RB", 4, "advmod", "O", "B"),
        ("good", "JJ", None, "root", "O", "E"),
    ]
    return Sentence("toy", tuple(Token(*r) for r in rows))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value configuration file")
    group = p.add_argument_group("configuration overrides (keys as in the config file)")
    for f in fields(TrainConfig):
        group.add_argument(f"--{camel(f.name)}", dest=f"cfg_{f.name}", metavar="VALUE")


def _overrides(args) -> dict[str, str]:
    return {
        camel(f.name): getattr(args, f"cfg_{f.name}")
        for f in fields(TrainConfig)
        if getattr(args, f"cfg_{f.name}", None) is not None
    }


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spantagger", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--train", required=True, dest="train_path", help="training corpus")
    p.add_argument("--dev", dest="dev_path", help="development corpus for model selection")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="metrics log (default: <out>.metrics)")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on a gold corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sidecar", help="sidecar embedding file for sidecar-encoder checkpoints")

    p = sub.add_parser("predict", help="tag a corpus with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sidecar")

    p = sub.add_parser("gradcheck", help="compare tape gradients with finite differences")
    p.add_argument("--data", help="corpus whose first sentence (at most 6 tokens) is checked")
    _add_config_flags(p)

    p = sub.add_parser("validate", help="check a corpus against every format invariant")
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=TASKS, help="also require gold tags for this task")
    return parser


def _require_file(path: str | None, what: str) -> None:
    if path is not None and not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


def _load_sidecar(path: str | None) -> Sidecar | None:
    if not path:
        return None
    _require_file(path, "sidecar file")
    return Sidecar.load(path)


def cmd_train(args) -> int:
    for path, what in ((args.train_path, "training corpus"), (args.dev_path, "dev corpus"), (args.config, "config file")):
        _require_file(path, what)
    config = load_config(args.config, _overrides(args))
    sidecar = _load_sidecar(config.sidecar) if config.encoder_source == "sidecar" else None
    train_corpus = read_corpus(args.train_path, config.task)
    dev_corpus = read_corpus(args.dev_path, config.task) if args.dev_path else None
    metrics_path = args.metrics or f"{args.out}.metrics"
    with open(metrics_path, "a", encoding="utf-8") as metrics:

        def on_epoch(line: str) -> None:
            metrics.write(line + "\n")
            metrics.flush()

        result = train(config, train_corpus, dev_corpus, sidecar=sidecar, on_epoch=on_epoch)
    save_checkpoint(args.out, result.model)
    best = "nan" if result.best_dev_f1 is None else f"{result.best_dev_f1:.6f}"
    print(f"checkpoint={args.out} bestEpoch={result.best_epoch} bestDevF1={best}")
    return EXIT_OK


def _load_model(args):
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.data, "corpus")
    return load_checkpoint(args.checkpoint, sidecar=_load_sidecar(args.sidecar))


def cmd_eval(args) -> int:
    model = _load_model(args)
    report = evaluate(model, read_corpus(args.data, model.config.task), model.config.task)
    print(report)
    print(report.line())
    return EXIT_OK


def cmd_predict(args) -> int:
    model = _load_model(args)
    predict(model, read_corpus(args.data), args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    _require_file(args.config, "config file")
    _require_file(args.data, "corpus")
    config = load_config(args.config, _overrides(args))
    sentence = read_corpus(args.data)[0] if args.data else _toy_sentence()
    sidecar = _load_sidecar(config.sidecar) if config.encoder_source == "sidecar" else None
    error = grad_check(config, sentence, sidecar=sidecar)
    print(f"maxRelError={error:.3e}")
    if error >= GRADCHECK_TOLERANCE:
        raise NumericError(f"gradient check failed: max relative error {error:.3e} >= {GRADCHECK_TOLERANCE}")
    return EXIT_OK


def cmd_validate(args) -> int:
    _require_file(args.data, "corpus")
    with open(args.data, encoding="utf-8") as fh:
        text = fh.read()
    problems = []
    # Validate block by block so every bad sentence is reported, not just the first.
    offset = 0
    count = 0
    for block in text.split("\n\n"):
        if block.strip():
            try:
                sentences = parse_corpus("\n" * offset + block, source=args.data)
                for s in sentences:
                    if args.task and not s.has_gold(args.task):
                        raise DataError(f"sentence {s.id!r}: missing gold {args.task} tags", s.id)
                count += len(sentences)
            except DataError as exc:
                problems.append(str(exc))
        offset += block.count("\n") + 2
    for msg in problems:
        print(msg)
    if problems:
        raise DataError(f"{len(problems)} invalid sentence(s) in {args.data}")
    print(f"ok sentences={count}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "validate": cmd_validate,
}


def _fail(kind: str, message: str, key: str | None = None) -> None:
    reason = " ".join(str(message).split())
    extra = f" key={key}" if key else ""
    print(f"error={kind}{extra} reason={reason}", file=sys.stderr)


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _fail("usage", str(exc))
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _fail("usage", str(exc))
        return EXIT_USAGE
    except ConfigError as exc:
        _fail("usage", str(exc), exc.key)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError) as exc:
        _fail("data", str(exc))
        return EXIT_DATA
    except NumericError as exc:
        _fail("numeric", str(exc))
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
