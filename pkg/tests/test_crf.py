import math

import mpmath
import numpy as np
import pytest

from spantagger import numerics as nx
from spantagger.corpus import ASPECT_TAGS, is_well_formed
from spantagger.crf import (
    FORBIDDEN,
    bieos_forbidden,
    crf_nll,
    init_transitions,
    log_partition,
    pinned_mask,
    sequence_score,
    viterbi,
)
from spantagger.errors import ShapeError

from oracles import brute_force_crf, crf_marginals


def random_instance(rng, T=None, K=None):
    T = T or int(rng.integers(1, 7))
    K = K or int(rng.integers(1, 6))
    P = rng.normal(size=(T, K))
    A = rng.normal(size=(K + 2, K + 2))
    A[pinned_mask(K)] = FORBIDDEN
    return P, A


class TestSequenceScore:
    def test_single_token_zero_transitions(self):
        P = np.array([[0.3, -1.2, 2.0]])
        assert float(sequence_score(P, [2], init_transitions(3))) == 2.0

    def test_transitions_only(self):
        A = init_transitions(2)
        A[2, 0], A[0, 1], A[1, 3] = 1.0, 2.0, 3.0
        assert float(sequence_score(np.zeros((2, 2)), [0, 1], A)) == 6.0

    def test_direct_sum(self, rng):
        P, A = random_instance(rng, 5, 4)
        y = list(rng.integers(4, size=5))
        ref = A[4, y[0]] + A[y[-1], 5] + sum(P[t, y[t]] for t in range(5)) + sum(A[y[t], y[t + 1]] for t in range(4))
        assert float(sequence_score(P, y, A)) == pytest.approx(ref, abs=1e-12)

    def test_tag_out_of_range(self):
        with pytest.raises(ValueError):
            sequence_score(np.zeros((2, 2)), [0, 2], init_transitions(2))

    def test_wrong_transition_shape(self):
        with pytest.raises(ShapeError):
            sequence_score(np.zeros((2, 2)), [0, 1], np.zeros((3, 3)))


class TestLogPartition:
    def test_two_tags_high_precision(self):
        got = float(log_partition(np.array([[1.0, 2.0]]), init_transitions(2)))
        ref = float(mpmath.log(mpmath.e + mpmath.e**2))
        assert abs(got - ref) < 1e-12
        assert round(got, 5) == 2.31326

    def test_factorizes_with_zero_transitions(self, rng):
        P = rng.normal(size=(5, 3))
        expected = sum(math.log(sum(math.exp(v) for v in row)) for row in P)
        assert float(log_partition(P, init_transitions(3))) == pytest.approx(expected, abs=1e-9)

    def test_enumeration(self, rng):
        for _ in range(30):
            P, A = random_instance(rng)
            _, log_z, _, _ = brute_force_crf(P, A)
            assert abs(float(log_partition(P, A)) - log_z) < 1e-6

    def test_probabilities_sum_to_one(self, rng):
        P, A = random_instance(rng, 4, 3)
        scores, _, _, _ = brute_force_crf(P, A)
        log_z = float(log_partition(P, A))
        assert sum(math.exp(s - log_z) for s in scores.values()) == pytest.approx(1.0, abs=1e-12)

    def test_bounds_every_sequence(self, rng):
        P, A = random_instance(rng, 4, 3)
        scores, _, _, _ = brute_force_crf(P, A)
        log_z = float(log_partition(P, A))
        assert all(log_z >= s for s in scores.values())

    def test_long_sequence_finite(self, rng):
        P = rng.normal(scale=50, size=(300, 5))
        assert math.isfinite(float(log_partition(P, init_transitions(5))))


class TestNll:
    def test_peaked_emissions(self):
        P = np.full((3, 4), -50.0)
        y = [2, 0, 3]
        P[np.arange(3), y] = 50.0
        assert float(crf_nll(P, y, init_transitions(4))) < 1e-12

    def test_uniform_single_token(self):
        assert float(crf_nll(np.zeros((1, 4)), [1], init_transitions(4))) == pytest.approx(math.log(4), abs=1e-14)

    def test_matches_enumerated_probability(self, rng):
        for _ in range(10):
            P, A = random_instance(rng)
            y = list(rng.integers(P.shape[1], size=P.shape[0]))
            scores, log_z, _, _ = brute_force_crf(P, A)
            assert float(crf_nll(P, y, A)) == pytest.approx(log_z - scores[tuple(y)], abs=1e-9)
            assert float(crf_nll(P, y, A)) >= 0.0

    def test_shift_invariance(self, rng):
        P, A = random_instance(rng, 4, 3)
        y = [0, 2, 2, 1]
        shifted_A = A.copy()
        shifted_A[~pinned_mask(3)] += 0.7
        base = float(crf_nll(P, y, A))
        assert float(crf_nll(P + 0.7, y, shifted_A)) == pytest.approx(base, abs=1e-9)
        assert viterbi(P + 0.7, shifted_A)[0] == viterbi(P, A)[0]

    def test_emission_gradient_is_marginal_minus_gold(self, rng):
        for T in range(1, 6):
            P0, A = random_instance(rng, T, 3)
            y = list(rng.integers(3, size=T))
            P = nx.parameter(P0, "P")
            with nx.Tape() as tape:
                loss = crf_nll(P, y, A)
            grad = nx.backward(tape, loss)[P]
            expected = crf_marginals(P0, A)
            expected[np.arange(T), y] -= 1.0
            np.testing.assert_allclose(grad, expected, atol=1e-9)

    def test_transition_gradient_finite_differences(self, rng):
        P0, A0 = random_instance(rng, 4, 3)
        y = [1, 1, 0, 2]
        A = nx.parameter(A0, "A")
        with nx.Tape() as tape:
            loss = crf_nll(P0, y, A)
        grad = nx.backward(tape, loss)[A]
        for index in zip(*np.nonzero(~pinned_mask(3))):
            numeric = nx.central_difference(lambda: float(crf_nll(P0, y, A)), A, index)
            assert nx.relative_error(grad[index], numeric) < 1e-6


class TestViterbi:
    def test_zero_transitions_is_argmax(self, rng):
        P = rng.normal(size=(6, 4))
        assert viterbi(P, init_transitions(4))[0] == list(np.argmax(P, axis=1))

    def test_dominant_transition(self, rng):
        P = rng.normal(size=(4, 3))
        A = init_transitions(3)
        A[0, 1] = 1e3
        A[1, 0] = 1e3
        path, score = viterbi(P, A)
        _, _, best, best_score = brute_force_crf(P, A)
        assert path == best
        assert all({a, b} == {0, 1} for a, b in zip(path, path[1:]))

    def test_ties_prefer_smallest_latest(self):
        path, score = viterbi(np.zeros((3, 3)), init_transitions(3))
        assert path == [0, 0, 0] and score == 0.0

    def test_score_equals_sequence_score(self, rng):
        P, A = random_instance(rng, 5, 4)
        path, score = viterbi(P, A)
        assert score == float(sequence_score(P, path, A))

    def test_enumeration(self, rng):
        for _ in range(50):
            P, A = random_instance(rng)
            path, score = viterbi(P, A)
            _, _, best, best_score = brute_force_crf(P, A)
            assert path == best
            assert abs(score - best_score) < 1e-9

    def test_enumeration_with_ties(self, rng):
        # Integer-valued instances make exact ties common.
        for _ in range(50):
            T, K = int(rng.integers(1, 5)), int(rng.integers(2, 4))
            P = rng.integers(-1, 2, size=(T, K)).astype(float)
            A = rng.integers(-1, 2, size=(K + 2, K + 2)).astype(float)
            A[pinned_mask(K)] = FORBIDDEN
            assert viterbi(P, A)[0] == brute_force_crf(P, A)[2]


class TestBieosMask:
    def test_pins_structurally_illegal_moves(self):
        tags = list(ASPECT_TAGS)
        bad = bieos_forbidden(tags)
        k = len(tags)
        idx = {t: i for i, t in enumerate(tags)}
        assert bad[idx["B-POS"], idx["O"]]
        assert bad[idx["B-POS"], idx["E-NEG"]]
        assert not bad[idx["B-POS"], idx["E-POS"]]
        assert not bad[idx["E-POS"], idx["S-NEG"]]
        assert bad[k, idx["I-POS"]]
        assert bad[idx["I-NEU"], k + 1]

    def test_masked_decoding_always_well_formed(self, rng):
        tags = list(ASPECT_TAGS)
        A = rng.normal(size=(15, 15))
        A[bieos_forbidden(tags)] = FORBIDDEN
        for _ in range(100):
            P = rng.normal(scale=3, size=(int(rng.integers(1, 9)), 13))
            path, _ = viterbi(P, A)
            assert is_well_formed([tags[i] for i in path])
