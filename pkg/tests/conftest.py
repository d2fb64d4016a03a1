import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from oracles import random_heads  # noqa: E402

from spantagger.config import TrainConfig  # noqa: E402
from spantagger.corpus import Sentence, Token, read_corpus  # noqa: E402

DATA = os.path.join(os.path.dirname(__file__), "data")
OVERFIT = os.path.join(DATA, "overfit.txt")

POS_CYCLE = ("DT", "NN", "VBZ", "JJ", "RB", "NNS", "IN")
DEPRELS = ("det", "nsubj", "amod", "obj", "advmod", "case", "cop")


def make_sentence(heads, sid="s", pos=None, deprels=None, aspect=None, opinion=None, words=None):
    n = len(heads)
    pos = pos or [POS_CYCLE[i % len(POS_CYCLE)] for i in range(n)]
    deprels = deprels or ["root" if h is None else DEPRELS[i % len(DEPRELS)] for i, h in enumerate(heads)]
    words = words or [f"w{i}" for i in range(n)]
    aspect = aspect or ["O"] * n
    opinion = opinion or ["O"] * n
    return Sentence(sid, tuple(Token(words[i], pos[i], heads[i], deprels[i], aspect[i], opinion[i]) for i in range(n)))


def random_sentence(rng, n, sid="r"):
    return make_sentence(random_heads(rng, n), sid=sid, words=[f"w{rng.integers(20)}" for _ in range(n)])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def overfit_corpus():
    return read_corpus(OVERFIT, "aspect")


@pytest.fixture
def toy_config():
    """Small dimensions so finite-difference checks stay quick."""
    return TrainConfig(hidden=8, att_heads=2, rel_heads=2, tok_dim=5, pos_dim=3, rel_dim=6,
                       rel_mlp_dim=4, trf_heads=2, layers=2)


@pytest.fixture
def five_token():
    # "the staff was very friendly": friendly is the root.
    return make_sentence(
        [1, 4, 4, 4, None],
        sid="five",
        words=["the", "staff", "was", "very", "friendly"],
        pos=["DT", "NN", "VBD", "RB", "JJ"],
        deprels=["det", "nsubj", "cop", "advmod", "root"],
        aspect=["O", "S-POS", "O", "O", "O"],
        opinion=["O", "O", "O", "B", "E"],
    )


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
