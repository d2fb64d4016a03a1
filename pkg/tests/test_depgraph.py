import numpy as np
import pytest

from spantagger.depgraph import Pivot, build, choose_pivot, distance_label, reorient
from spantagger.errors import DataError

from conftest import make_sentence, random_sentence
from oracles import bfs_distances


def chain():
    # a <- b <- c : b heads a, c heads b, c is the root
    return make_sentence([1, 2, None], deprels=["amod", "nsubj", "root"])


class TestBuild:
    def test_single_token(self):
        g = build(make_sentence([None]))
        assert g.rels == {(0, 0): "self"}
        assert g.neighborhoods() == [[(0, "self")]]

    def test_chain(self):
        g = build(chain())
        assert g.edges == {(0, 1, "amod"), (1, 0, "amod"), (1, 2, "nsubj"), (2, 1, "nsubj")}
        assert all((i, i) in g.rels for i in range(3))
        assert g.root == 2

    def test_random_tree_edge_count(self, rng):
        for _ in range(20):
            g = build(random_sentence(rng, 10))
            undirected = {frozenset((i, j)) for i, j, _ in g.edges}
            assert len(undirected) == 9

    def test_symmetric_and_self_loops(self, rng):
        g = build(random_sentence(rng, 8))
        for (i, j), r in g.rels.items():
            assert g.rels[(j, i)] == r
        assert all(g.neighborhood(i) for i in range(g.n))

    def test_non_tree_rejected(self):
        with pytest.raises(DataError):
            build(make_sentence([1, 0, None]))
        with pytest.raises(DataError):
            build(make_sentence([None, None]))


class TestPivot:
    def test_single_noun_forced(self):
        s = make_sentence([1, None, 1, 1, 1], pos=["DT", "VB", "RB", "NN", "IN"])
        assert choose_pivot(s, "aspect", np.random.default_rng(0)) == Pivot(3, "noun")

    def test_middle_fallback(self):
        s = make_sentence([1, None, 1, 1, 1], pos=["DT", "VB", "RB", "IN", "CC"])
        assert choose_pivot(s, "aspect", np.random.default_rng(0)) == Pivot(2, "middle")

    def test_adjective_for_opinion(self):
        s = make_sentence([1, None, 1], pos=["NN", "VB", "ADJ"])
        assert choose_pivot(s, "opinion", np.random.default_rng(0)) == Pivot(2, "adjective")

    def test_universal_tags_count_as_nouns(self):
        s = make_sentence([1, None, 1], pos=["DET", "PROPN", "VERB"])
        assert choose_pivot(s, "aspect", np.random.default_rng(0)).index == 1

    def test_deterministic_under_seed(self):
        s = make_sentence([1, None, 1, 1, 1, 1], pos=["NN", "VB", "NNS", "NN", "NNP", "DT"])
        picks = {choose_pivot(s, "aspect", np.random.default_rng(42)) for _ in range(100)}
        assert len(picks) == 1

    def test_uniform_over_nouns(self):
        s = make_sentence([1, None, 1, 1], pos=["NN", "VB", "NN", "NN"])
        rng = np.random.default_rng(1)
        counts = np.bincount([choose_pivot(s, "aspect", rng).index for _ in range(3000)], minlength=4)
        assert counts[1] == 0
        assert all(abs(c / 3000 - 1 / 3) < 0.04 for c in counts[[0, 2, 3]])


class TestReorient:
    def test_reroot_at_root_is_fixed_point(self, rng):
        for _ in range(20):
            g = build(random_sentence(rng, int(rng.integers(1, 12))))
            assert reorient(g, g.root, "reroot") == g

    def test_reroot_keeps_edges_changes_direction(self):
        g = build(chain())
        r = reorient(g, Pivot(0, "noun"), "reroot")
        assert r.rels == g.rels
        assert r.parent == (-1, 0, 1)

    def test_star_on_chain(self):
        g = reorient(build(chain()), Pivot(0, "noun"), "star")
        assert g.edges == {(0, 1, "amod"), (1, 0, "amod"), (0, 2, "con:2"), (2, 0, "con:2")}

    def test_star_neighbourhoods(self, rng):
        for _ in range(20):
            s = random_sentence(rng, int(rng.integers(2, 12)))
            p = int(rng.integers(len(s)))
            g = reorient(build(s), p, "star")
            for i in range(g.n):
                if i != p:
                    assert [j for j, _ in g.neighborhood(i)] == sorted({i, p})
            assert len(g.edges) == 2 * (g.n - 1)
            assert len([k for k in g.rels if k[0] == k[1]]) == g.n

    def test_distance_labels(self):
        assert distance_label(2) == "con:2"
        assert distance_label(4) == "con:4"
        assert distance_label(5) == "con:far"

    def test_invalid_pivot(self):
        with pytest.raises(ValueError):
            reorient(build(chain()), 3)

    def test_star_distances_match_bfs(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 13))
            s = random_sentence(rng, n)
            p = int(rng.integers(n))
            g = reorient(build(s), p, "star")
            dist = bfs_distances(n, s.heads, p)
            assert g.n == n
            for j in range(n):
                if j == p:
                    continue
                label = g.rels[(p, j)]
                if dist[j] == 1:
                    assert label == s.tokens[j].deprel if s.tokens[j].head == p else s.tokens[p].deprel
                else:
                    assert label == distance_label(dist[j])
