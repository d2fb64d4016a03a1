"""Entity-level scoring and prediction output."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from spantagger.corpus import (
    Sentence,
    Span,
    atomic_write_text,
    check_task,
    format_corpus,
    spans_to_tags,
    tags_to_spans,
)
from spantagger.errors import DataError
from spantagger.model import TaggerModel


@dataclass
class EvalReport:
    task: str
    num_gold: int
    num_pred: int
    num_correct: int
    by_label: dict[str, tuple[int, int, int]] = field(default_factory=dict)

    @property
    def precision(self) -> float:
        return self.num_correct / self.num_pred if self.num_pred else 0.0

    @property
    def recall(self) -> float:
        return self.num_correct / self.num_gold if self.num_gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def line(self) -> str:
        return (
            f"task={self.task} P={self.precision:.6f} R={self.recall:.6f} F1={self.f1:.6f} "
            f"gold={self.num_gold} pred={self.num_pred} correct={self.num_correct}"
        )

    def __str__(self) -> str:
        rows = [
            f"{self.task} extraction",
            f"  precision {100 * self.precision:6.2f}",
            f"  recall    {100 * self.recall:6.2f}",
            f"  F1        {100 * self.f1:6.2f}",
            f"  spans: gold {self.num_gold}, predicted {self.num_pred}, correct {self.num_correct}",
        ]
        for label, (g, p, c) in sorted(self.by_label.items()):
            rows.append(f"  {label:<8} gold {g:4d} pred {p:4d} correct {c:4d}")
        return "\n".join(rows)


def score_spans(task: str, gold: Iterable[Sequence[Span]], pred: Iterable[Sequence[Span]]) -> EvalReport:
    """Micro-averaged exact-match counts over (start, end, label) spans."""
    g_count, p_count, c_count = Counter(), Counter(), Counter()
    for gs, ps in zip(gold, pred, strict=True):
        gs, ps = set(gs), set(ps)
        for s in gs:
            g_count[s.label] += 1
        for s in ps:
            p_count[s.label] += 1
        for s in gs & ps:
            c_count[s.label] += 1
    labels = set(g_count) | set(p_count)
    by_label = {lab: (g_count[lab], p_count[lab], c_count[lab]) for lab in labels}
    return EvalReport(task, sum(g_count.values()), sum(p_count.values()), sum(c_count.values()), by_label)


def evaluate(model: TaggerModel, corpus: Sequence[Sentence], task: str) -> EvalReport:
    """Decode every sentence (Viterbi or per-token argmax) and score strict spans."""
    check_task(task)
    if model.config.task != task:
        raise ValueError(f"model was trained for {model.config.task!r}, not {task!r}")
    gold, pred = [], []
    for s in corpus:
        if not s.has_gold(task):
            raise DataError(f"sentence {s.id!r}: missing gold {task} tags", s.id)
        gold.append(tags_to_spans(s.tags(task)))
        pred.append(tags_to_spans(model.predict_tags(s)))
    return score_spans(task, gold, pred)


def predict_sentences(model: TaggerModel, sentences: Iterable[Sentence]) -> list[Sentence]:
    """Copies of ``sentences`` carrying predicted tags in the task column.

    Tags are re-rendered from their strict spans, so fragments that scoring
    would ignore become O and the output always reads back as a valid corpus.
    """
    task = model.config.task
    out = []
    for s in sentences:
        tags = spans_to_tags(tags_to_spans(model.predict_tags(s)), len(s))
        out.append(s.with_tags(task, tags))
    return out


def predict(model: TaggerModel, sentences: Iterable[Sentence], path: str | os.PathLike | None = None) -> str:
    """Tag ``sentences`` with the model's task column; write to ``path`` when given."""
    text = format_corpus(predict_sentences(model, sentences))
    if path is not None:
        atomic_write_text(path, text)
    return text
