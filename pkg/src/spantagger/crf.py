"""Linear-chain CRF with virtual start/end tags.

For K real tags the transition matrix is (K+2)×(K+2); index K is the start
tag and K+1 the end tag. Entries into start and out of end are pinned to
``FORBIDDEN``. Scoring functions accept numpy arrays or tape tensors so the
negative log-likelihood can be differentiated; decoding works on arrays.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from spantagger import numerics as nx
from spantagger.corpus import split_tag
from spantagger.errors import ShapeError

FORBIDDEN = -1e4


def init_transitions(num_tags: int) -> np.ndarray:
    a = np.zeros((num_tags + 2, num_tags + 2))
    a[pinned_mask(num_tags)] = FORBIDDEN
    return a


def pinned_mask(num_tags: int) -> np.ndarray:
    """Entries that are never reachable and stay at FORBIDDEN."""
    m = np.zeros((num_tags + 2, num_tags + 2), dtype=bool)
    m[:, num_tags] = True
    m[num_tags + 1, :] = True
    return m


def bieos_forbidden(tags: Sequence[str]) -> np.ndarray:
    """Transitions that can never occur inside a well-formed BIEOS sequence.

    Covers start and end: nothing may open with I/E or close after B/I.
    """
    k = len(tags)
    parsed = [split_tag(t) for t in tags]
    bad = np.zeros((k + 2, k + 2), dtype=bool)
    for a in range(k + 2):
        for b in range(k + 2):
            pa, la = parsed[a] if a < k else ("START" if a == k else "END", None)
            pb, lb = parsed[b] if b < k else ("START" if b == k else "END", None)
            inside = pa in ("B", "I")
            if inside:
                ok = pb in ("I", "E") and lb == la
            else:
                ok = pb in ("O", "B", "S", "END")
            bad[a, b] = not ok
    bad |= pinned_mask(k)
    return bad


def _check(P, A) -> int:
    if P.ndim != 2 or P.shape[0] < 1:
        raise ShapeError(f"emissions must be T×K with T ≥ 1, got {P.shape}")
    k = P.shape[1]
    if A.shape != (k + 2, k + 2):
        raise ShapeError(f"transitions must be {(k + 2, k + 2)}, got {A.shape}")
    return k


def sequence_score(P, y: Sequence[int], A) -> nx.Tensor:
    """S(x, y): transitions start→y_1 … y_T→end plus emissions P[t, y_t]."""
    P, A = nx.as_tensor(P), nx.as_tensor(A)
    k = _check(P, A)
    y = [int(t) for t in y]
    if len(y) != P.shape[0]:
        raise ShapeError(f"tag sequence length {len(y)} differs from T={P.shape[0]}")
    if any(not 0 <= t < k for t in y):
        raise ValueError(f"tag ids must lie in [0, {k})")
    emit = nx.tsum(P[np.arange(len(y)), np.array(y)])
    prev = np.array([k] + y)
    nxt = np.array(y + [k + 1])
    trans = nx.tsum(A[prev, nxt])
    return emit + trans


def log_partition(P, A) -> nx.Tensor:
    """log Σ_y exp S(x, y) by the forward recursion in log space."""
    P, A = nx.as_tensor(P), nx.as_tensor(A)
    k = _check(P, A)
    inner = A[:k, :k]
    alpha = A[k, :k] + P[0]
    for t in range(1, P.shape[0]):
        alpha = nx.logsumexp(alpha.reshape(k, 1) + inner, axis=0) + P[t]
    return nx.logsumexp(alpha + A[:k, k + 1], axis=0)


def crf_nll(P, y: Sequence[int], A) -> nx.Tensor:
    return log_partition(P, A) - sequence_score(P, y, A)


def viterbi(P, A) -> tuple[list[int], float]:
    """Highest-scoring tag sequence and its score.

    Ties prefer the smallest tag id at the latest position where tied paths
    differ (first-max argmax at the end and along back-pointers).
    """
    P = np.asarray(P.data if isinstance(P, nx.Tensor) else P, dtype=np.float64)
    A = np.asarray(A.data if isinstance(A, nx.Tensor) else A, dtype=np.float64)
    k = _check(P, A)
    n = P.shape[0]
    inner = A[:k, :k]
    delta = A[k, :k] + P[0]
    back = np.zeros((n, k), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + inner
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(k)] + P[t]
    last = int(np.argmax(delta + A[:k, k + 1]))
    path = [last]
    for t in range(n - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return path, float(sequence_score(P, path, A))
