"""Losses, Adam, the per-sentence training loop and gradient verification."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from spantagger import crf
from spantagger import numerics as nx
from spantagger.config import TrainConfig
from spantagger.corpus import Sentence, build_vocabs
from spantagger.depgraph import build, choose_pivot, reorient
from spantagger.errors import DataError, NumericError
from spantagger.model import GraphIndex, Sidecar, TaggerModel, index_graph, sentence_seed

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def token_ce_loss(probs: nx.Tensor, gold: Sequence[int], counter: Counter | None = None) -> nx.Tensor:
    """Summed -log p(gold) over tokens; probabilities below 1e-12 are clamped and counted."""
    probs = nx.as_tensor(probs)
    gold = np.asarray(gold, dtype=np.int64)
    if probs.ndim != 2 or len(gold) != probs.shape[0]:
        raise ValueError(f"expected {len(gold)}×K probabilities, got {probs.shape}")
    picked = probs[np.arange(len(gold)), gold]
    low = picked.data < PROB_FLOOR
    if low.any():
        n = int(low.sum())
        if counter is not None:
            counter["clamped"] += n
        log.warning("clamped %d gold probabilities to %g", n, PROB_FLOOR)
        picked = nx.add(nx.mul(picked, ~low), PROB_FLOOR * low)
    return -nx.tsum(nx.log(picked))


def sentence_loss(model: TaggerModel, emission: nx.Tensor, gold: Sequence[int]) -> nx.Tensor:
    if model.config.uses_crf:
        return crf.crf_nll(emission, gold, model.params["crf.A"])
    return token_ce_loss(nx.softmax(emission), gold)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], moments: AdamState,
              config: TrainConfig, frozen: Mapping[str, np.ndarray] | None = None,
              ) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new parameter arrays and moments.

    Entries flagged in ``frozen`` keep their value and never accumulate moments.
    """
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_eps, config.learning_rate
    t = moments.step + 1
    new_m, new_v, out = dict(moments.m), dict(moments.v), {}
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(value)
        if g.shape != value.shape:
            raise ValueError(f"gradient shape {g.shape} differs from parameter {name} {value.shape}")
        fixed = frozen.get(name) if frozen else None
        if fixed is not None:
            g = np.where(fixed, 0.0, g)
        m = b1 * moments.m.get(name, np.zeros_like(value)) + (1 - b1) * g
        v = b2 * moments.v.get(name, np.zeros_like(value)) + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        updated = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        if fixed is not None:
            updated = np.where(fixed, value, updated)
        new_m[name], new_v[name], out[name] = m, v, updated
    return out, AdamState(t, new_m, new_v)


def loss_and_grads(model: TaggerModel, sentence: Sentence, graph: GraphIndex, gold: Sequence[int],
                   train: bool, rng: np.random.Generator | None) -> tuple[float, dict[str, np.ndarray]]:
    with nx.Tape() as tape:
        loss = sentence_loss(model, model.forward(sentence, graph, train=train, rng=rng), gold)
    raw = nx.backward(tape, loss)
    grads = {t.name: g for t, g in raw.items() if t.name in model.params}
    return float(loss), grads


@dataclass
class TrainResult:
    model: TaggerModel
    log_lines: list[str]
    best_dev_f1: float | None
    best_epoch: int
    grad_seen: dict[str, float]


def _format_metric(value: float | None) -> str:
    return "nan" if value is None else f"{value:.6f}"


def train(config: TrainConfig, train_corpus: Sequence[Sentence], dev_corpus: Sequence[Sentence] | None = None,
          sidecar: Sidecar | None = None, on_epoch: Callable[[str], None] | None = None) -> TrainResult:
    """Train with per-sentence Adam steps and keep the best-dev parameters.

    Each epoch shuffles the training order, draws a fresh pivot per sentence
    (unless ``freeze_pivots``), and logs ``epoch=<e> loss=<l> devF1=<f>``.
    Without a dev corpus the final parameters are kept. Training stops early
    once dev F1 reaches ``early_stop_f1`` when that is positive.
    """
    from spantagger.evaluation import evaluate

    config.validate()
    if not train_corpus:
        raise DataError("training corpus is empty")
    for s in list(train_corpus) + list(dev_corpus or []):
        if not s.has_gold(config.task):
            raise DataError(f"sentence {s.id!r}: missing gold {config.task} tags", s.id)
    if config.encoder_source == "sidecar":
        if sidecar is None:
            raise DataError("encoderSource=sidecar needs a sidecar file")
        for s in list(train_corpus) + list(dev_corpus or []):
            sidecar.lookup(s)

    vocabs = build_vocabs(train_corpus, config.task)
    model = TaggerModel(config, vocabs, sidecar=sidecar)
    golds = [model.gold_ids(s) for s in train_corpus]
    trees = [build(s) for s in train_corpus]
    frozen_graphs: list[GraphIndex | None] = [None] * len(train_corpus)
    rng = np.random.default_rng([config.seed, 1])
    moments = AdamState()
    pending: dict[str, np.ndarray] = {}
    pending_count = 0
    log_lines: list[str] = []
    best_f1, best_epoch, best_state = None, 0, None
    grad_seen = {name: 0.0 for name in model.params}

    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for idx in rng.permutation(len(train_corpus)):
            sent = train_corpus[idx]
            if config.freeze_pivots:
                if frozen_graphs[idx] is None:
                    pivot = choose_pivot(sent, config.task, sentence_seed(config.seed, sent))
                    frozen_graphs[idx] = index_graph(reorient(trees[idx], pivot, config.reorient_mode), vocabs.deprel)
                graph = frozen_graphs[idx]
            else:
                pivot = choose_pivot(sent, config.task, rng)
                graph = index_graph(reorient(trees[idx], pivot, config.reorient_mode), vocabs.deprel)
            loss, grads = loss_and_grads(model, sent, graph, golds[idx], True, rng)
            if not math.isfinite(loss):
                log.error("non-finite loss on sentence %s: %s", sent.id, " ".join(sent.surfaces))
                raise NumericError(f"non-finite loss {loss} on sentence {sent.id!r} (epoch {epoch})")
            total += loss
            for name, g in grads.items():
                pending[name] = pending[name] + g if name in pending else g
                peak = float(np.abs(g).max())
                if peak > grad_seen[name]:
                    grad_seen[name] = peak
            pending_count += 1
            if pending_count == config.grad_accum:
                moments = _apply(model, pending, moments)
                pending, pending_count = {}, 0
        if pending_count:
            moments = _apply(model, pending, moments)
            pending, pending_count = {}, 0

        dev_f1 = evaluate(model, dev_corpus, config.task).f1 if dev_corpus else None
        line = f"epoch={epoch} loss={_format_metric(total)} devF1={_format_metric(dev_f1)}"
        log_lines.append(line)
        log.info(line)
        if on_epoch is not None:
            on_epoch(line)
        if dev_f1 is not None and (best_f1 is None or dev_f1 > best_f1):
            best_f1, best_epoch, best_state = dev_f1, epoch, model.state()
        if dev_f1 is not None and config.early_stop_f1 > 0 and dev_f1 >= config.early_stop_f1:
            break

    if best_state is not None:
        model.load_state(best_state)
    else:
        best_epoch = len(log_lines)
    return TrainResult(model, log_lines, best_f1, best_epoch, grad_seen)


def _apply(model: TaggerModel, grads: dict[str, np.ndarray], moments: AdamState) -> AdamState:
    current = {name: t.data for name, t in model.params.items()}
    updated, moments = adam_step(current, grads, moments, model.config, model.frozen)
    for name, value in updated.items():
        model.params[name].data = value
    return moments


# --- gradient verification ---------------------------------------------------


def grad_check_report(config: TrainConfig, sentence: Sentence, sidecar: Sidecar | None = None,
                      eps: float = 1e-4, max_entries: int = 12, floor: float = 1e-6,
                      seed: int | None = None) -> dict[str, float]:
    """Max relative error between tape and central-difference gradients, per tensor.

    Dropout stays active with an identical mask on every evaluation. Each
    tensor is probed at its largest-magnitude gradient entries plus random
    ones (``max_entries`` in total); frozen CRF entries are skipped.
    """
    config.validate()
    seed = config.seed if seed is None else seed
    vocabs = build_vocabs([sentence], config.task)
    model = TaggerModel(config, vocabs, sidecar=sidecar)
    gold = model.gold_ids(sentence) if sentence.has_gold(config.task) else [0] * len(sentence)
    graph = model.graph_for(sentence, np.random.default_rng([seed, 2]))
    # Perturb parameters away from zero-initialized values so every path is exercised.
    init_rng = np.random.default_rng([seed, 3])
    for name, t in model.params.items():
        noise = init_rng.normal(scale=0.1, size=t.shape)
        fixed = model.frozen.get(name)
        if fixed is not None:
            noise = np.where(fixed, 0.0, noise)
        t.data = t.data + noise

    def run(tape: bool):
        rng = np.random.default_rng([seed, 4])
        if tape:
            return loss_and_grads(model, sentence, graph, gold, True, rng)
        return float(sentence_loss(model, model.forward(sentence, graph, train=True, rng=rng), gold))

    _, grads = run(True)
    pick_rng = np.random.default_rng([seed, 5])
    report = {}
    for name, tensor in model.params.items():
        g = grads.get(name, np.zeros_like(tensor.data))
        candidates = np.arange(tensor.data.size)
        fixed = model.frozen.get(name)
        if fixed is not None:
            candidates = candidates[~fixed.ravel()]
        flat = np.abs(g.ravel())[candidates]
        top = candidates[np.argsort(-flat, kind="stable")[: max_entries // 2]]
        rest = np.setdiff1d(candidates, top)
        extra = pick_rng.choice(rest, size=min(len(rest), max_entries - len(top)), replace=False)
        worst = 0.0
        for flat_idx in np.concatenate([top, extra]):
            index = np.unravel_index(int(flat_idx), tensor.shape)
            numeric = nx.central_difference(lambda: run(False), tensor, index, eps)
            worst = max(worst, float(nx.relative_error(g[index], numeric, floor)))
        report[name] = worst
    return report


def grad_check(config: TrainConfig, sentence: Sentence, sidecar: Sidecar | None = None, **kwargs) -> float:
    """Largest relative gradient error over every parameter tensor."""
    if len(sentence) > 6:
        raise ValueError("grad_check is limited to sentences of at most 6 tokens")
    return max(grad_check_report(config, sentence, sidecar=sidecar, **kwargs).values())
