import numpy as np
import pytest

from spantagger.corpus import Span, build_vocabs, is_well_formed, parse_corpus, tags_to_spans
from spantagger.evaluation import EvalReport, evaluate, predict, score_spans
from spantagger.model import TaggerModel, sentence_seed


class TestScoreSpans:
    def test_identical(self):
        spans = [[Span(0, 1, "POS")], [Span(2, 2, "NEG"), Span(4, 5, "NEU")]]
        r = score_spans("aspect", spans, spans)
        assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)

    def test_no_predictions(self):
        r = score_spans("aspect", [[Span(0, 0, "POS")]], [[]])
        assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)

    def test_one_extra_prediction(self):
        r = score_spans("aspect", [[Span(1, 2, "POS")]], [[Span(1, 2, "POS"), Span(4, 4, "NEG")]])
        assert r.precision == 0.5 and r.recall == 1.0
        assert r.f1 == pytest.approx(2 / 3, abs=1e-15)

    def test_sentiment_must_match(self):
        r = score_spans("aspect", [[Span(1, 2, "POS")]], [[Span(1, 2, "NEG")]])
        assert r.num_correct == 0

    def test_counts_and_f1_consistent(self, rng):
        for _ in range(50):
            gold, pred = [], []
            for _ in range(5):
                gold.append([Span(i, i, "POS") for i in range(8) if rng.random() < 0.3])
                pred.append([Span(i, i, "POS") for i in range(8) if rng.random() < 0.3])
            r = score_spans("aspect", gold, pred)
            assert r.num_correct <= min(r.num_gold, r.num_pred)
            assert 0 <= r.f1 <= 1
            if r.num_correct:
                direct = 2 * r.num_correct / (r.num_gold + r.num_pred)
                assert abs(direct - r.f1) < 1e-12

    def test_report_line(self):
        line = EvalReport("opinion", 4, 2, 1).line()
        assert line == "task=opinion P=0.500000 R=0.250000 F1=0.333333 gold=4 pred=2 correct=1"


def linear_model(toy_config, corpus, **overrides):
    return TaggerModel(toy_config.updated({"variant": "rgat", **overrides}), build_vocabs(corpus))


class TestEvaluate:
    def test_order_invariant(self, toy_config, overfit_corpus):
        m = linear_model(toy_config, overfit_corpus)
        a = evaluate(m, overfit_corpus, "aspect")
        b = evaluate(m, list(reversed(overfit_corpus)), "aspect")
        assert a.line() == b.line()

    def test_linear_tags_are_argmax_of_probabilities(self, toy_config, overfit_corpus):
        m = linear_model(toy_config, overfit_corpus)
        for s in overfit_corpus[:5]:
            P = m.forward(s, m.graph_for(s, sentence_seed(m.config.seed, s))).data
            probs = np.exp(P - P.max(axis=1, keepdims=True))
            probs /= probs.sum(axis=1, keepdims=True)
            assert m.predict_tags(s) == [m.tags[i] for i in probs.argmax(axis=1)]

    def test_task_mismatch(self, toy_config, overfit_corpus):
        with pytest.raises(ValueError):
            evaluate(linear_model(toy_config, overfit_corpus), overfit_corpus, "opinion")


class TestPredict:
    def test_round_trip_and_determinism(self, toy_config, overfit_corpus, tmp_path):
        m = linear_model(toy_config, overfit_corpus)
        unlabeled = [s.with_tags("aspect", ["_"] * len(s)) for s in overfit_corpus]
        first = predict(m, unlabeled, tmp_path / "a.txt")
        second = predict(m, unlabeled, tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
        assert first == second
        back = parse_corpus(first)
        assert [s.id for s in back] == [s.id for s in overfit_corpus]
        assert all(s.has_gold("aspect") for s in back)

    def test_bieos_mask_gives_well_formed_tags(self, toy_config, overfit_corpus):
        m = TaggerModel(toy_config.updated({"variant": "rgat-crf", "bieosMask": "true"}),
                        build_vocabs(overfit_corpus))
        # Random allowed transitions so the mask, not initialization, does the work.
        rng = np.random.default_rng(0)
        A = m.params["crf.A"].data
        A[~m.frozen["crf.A"]] = rng.normal(scale=5, size=(~m.frozen["crf.A"]).sum())
        for s in overfit_corpus:
            tags = m.predict_tags(s)
            assert is_well_formed(tags)
            assert sum(e.end - e.start + 1 for e in tags_to_spans(tags)) == sum(t != "O" for t in tags)
