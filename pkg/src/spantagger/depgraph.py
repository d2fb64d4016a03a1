"""Dependency graphs, pivot selection and pivot-centred reorientation."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from spantagger.corpus import FAR_REL, MAX_REL_DISTANCE, ROOT, SELF_REL, Sentence, check_task
from spantagger.errors import DataError

MODES = ("star", "reroot")


def is_noun(pos: str) -> bool:
    return pos.startswith("NN") or pos in ("NOUN", "PROPN")


def is_adjective(pos: str) -> bool:
    return pos.startswith("JJ") or pos == "ADJ"


class Pivot(NamedTuple):
    index: int
    how: str  # noun, adjective or middle


@dataclass(frozen=True)
class DepGraph:
    """Labelled graph over sentence positions.

    ``rels`` maps every ordered pair (i, j) with j in N_i to its relation
    label; it always holds (i, i) -> "self" and is symmetric. ``parent``
    records the current orientation (parent index per node, -1 at the root).
    """

    n: int
    rels: dict[tuple[int, int], str]
    parent: tuple[int, ...]

    @property
    def root(self) -> int:
        return self.parent.index(-1)

    @property
    def edges(self) -> set[tuple[int, int, str]]:
        """Non-self message-passing edges, both directions."""
        return {(i, j, r) for (i, j), r in self.rels.items() if i != j}

    def neighborhood(self, i: int) -> list[tuple[int, str]]:
        return sorted((j, r) for (a, j), r in self.rels.items() if a == i)

    def neighborhoods(self) -> list[list[tuple[int, str]]]:
        out: list[list[tuple[int, str]]] = [[] for _ in range(self.n)]
        for (i, j), r in sorted(self.rels.items()):
            out[i].append((j, r))
        return out

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {i: [] for i in range(self.n)}
        for (i, j) in sorted(self.rels):
            if i != j:
                adj[i].append(j)
        return adj

    def mask(self) -> np.ndarray:
        """Boolean n×n matrix, True where j is in N_i."""
        m = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.rels:
            m[i, j] = True
        return m


def build(sentence: Sentence) -> DepGraph:
    """One symmetrized edge per (head, dependent) labelled by deprel, plus self-loops."""
    n = len(sentence.tokens)
    heads = sentence.heads
    roots = [i for i, h in enumerate(heads) if h is ROOT]
    if n == 0 or len(roots) != 1:
        raise DataError(f"sentence {sentence.id!r} is not a single-rooted tree", sentence.id)
    rels: dict[tuple[int, int], str] = {(i, i): SELF_REL for i in range(n)}
    for dep, tok in enumerate(sentence.tokens):
        h = tok.head
        if h is ROOT:
            continue
        if not 0 <= h < n or h == dep:
            raise DataError(f"sentence {sentence.id!r}: bad head at token {dep + 1}", sentence.id)
        rels[(h, dep)] = tok.deprel
        rels[(dep, h)] = tok.deprel
    parent = tuple(-1 if h is ROOT else h for h in heads)
    graph = DepGraph(n, rels, parent)
    if len(_bfs(graph, roots[0])[0]) != n:
        raise DataError(f"sentence {sentence.id!r}: head links do not form a tree", sentence.id)
    return graph


def _bfs(graph: DepGraph, source: int) -> tuple[dict[int, int], dict[int, int]]:
    """Distances and BFS parents from ``source`` over non-self edges."""
    adj = graph.adjacency()
    dist = {source: 0}
    parent = {source: -1}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                parent[v] = u
                queue.append(v)
    return dist, parent


def choose_pivot(sentence: Sentence, task: str, rng: np.random.Generator) -> Pivot:
    """Random noun (aspect) or adjective (opinion) position, else the middle token."""
    check_task(task)
    n = len(sentence.tokens)
    if n == 0:
        raise ValueError("cannot choose a pivot in an empty sentence")
    test, how = (is_noun, "noun") if task == "aspect" else (is_adjective, "adjective")
    candidates = [i for i, t in enumerate(sentence.tokens) if test(t.pos)]
    if not candidates:
        return Pivot(n // 2, "middle")
    return Pivot(int(candidates[rng.integers(len(candidates))]), how)


def distance_label(d: int) -> str:
    return f"con:{d}" if d <= MAX_REL_DISTANCE else FAR_REL


def reorient(graph: DepGraph, pivot: Pivot | int, mode: str = "star") -> DepGraph:
    """Rebuild the graph around ``pivot``.

    ``reroot`` keeps the edge set and relabels directions away from the
    pivot. ``star`` links the pivot to every other node, keeping the tree
    relation for direct neighbours and ``con:<distance>`` otherwise
    (``con:far`` beyond 4); all other non-self edges are dropped.
    """
    p = pivot.index if isinstance(pivot, Pivot) else int(pivot)
    if not 0 <= p < graph.n:
        raise ValueError(f"pivot {p} outside sentence of length {graph.n}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    dist, bfs_parent = _bfs(graph, p)
    if len(dist) != graph.n:
        raise DataError("graph is not connected")
    parent = tuple(bfs_parent[i] for i in range(graph.n))
    if mode == "reroot":
        return DepGraph(graph.n, dict(graph.rels), parent)
    rels = {(i, i): SELF_REL for i in range(graph.n)}
    for j in range(graph.n):
        if j == p:
            continue
        label = graph.rels[(p, j)] if dist[j] == 1 else distance_label(dist[j])
        rels[(p, j)] = label
        rels[(j, p)] = label
    star_parent = tuple(-1 if i == p else p for i in range(graph.n))
    return DepGraph(graph.n, rels, star_parent)
