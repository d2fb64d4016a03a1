"""Token encoder, relational graph attention stack and sequence heads.

The functional building blocks (``attention_head``, ``relational_head``,
``rgat_layer``, ``bilstm``, ``transformer_layer``, ``emissions``) take
tensors explicitly. :class:`TaggerModel` owns the named parameters and wires
the blocks together for one of the four variants.
"""

from __future__ import annotations

import math
import os
import zlib
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from spantagger import crf
from spantagger import numerics as nx
from spantagger.config import TrainConfig
from spantagger.corpus import TAGSETS, Sentence, Vocabs
from spantagger.depgraph import DepGraph, build, choose_pivot, reorient
from spantagger.errors import ConfigError, DataError, ShapeError

Params = Mapping[str, nx.Tensor]


# --- sidecar embeddings --------------------------------------------------------


@dataclass
class Sidecar:
    """Precomputed per-token vectors keyed by sentence id (frozen inputs)."""

    dim: int
    vectors: dict[str, np.ndarray]

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Sidecar":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read(), source=os.fspath(path))

    @classmethod
    def parse(cls, text: str, source: str = "<sidecar>") -> "Sidecar":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("dim "):
            raise DataError(f"{source}: first line must be 'dim <d>'")
        try:
            dim = int(lines[0].split()[1])
        except (IndexError, ValueError):
            raise DataError(f"{source}: bad header {lines[0]!r}") from None
        vectors: dict[str, list[list[float]]] = {}
        current = None
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("id") and "=" in body:
                    current = body.split("=", 1)[1].strip()
                    vectors[current] = []
                continue
            if current is None:
                raise DataError(f"{source} line {lineno}: vector before any '# id =' line", line=lineno)
            try:
                row = [float(v) for v in line.split()]
            except ValueError:
                raise DataError(f"{source} line {lineno}: non-numeric value", current, lineno) from None
            if len(row) != dim:
                raise DataError(
                    f"sentence {current!r} (line {lineno}): expected {dim} values, got {len(row)}",
                    current,
                    lineno,
                )
            vectors[current].append(row)
        return cls(dim, {k: np.array(v, dtype=np.float64).reshape(len(v), dim) for k, v in vectors.items()})

    def dumps(self) -> str:
        out = [f"dim {self.dim}"]
        for sid, mat in self.vectors.items():
            out.append(f"# id = {sid}")
            out.extend(" ".join(repr(float(x)) for x in row) for row in mat)
        return "\n".join(out) + "\n"

    def lookup(self, sentence: Sentence) -> np.ndarray:
        mat = self.vectors.get(sentence.id)
        if mat is None:
            raise DataError(f"sidecar has no vectors for sentence {sentence.id!r}", sentence.id)
        if mat.shape != (len(sentence), self.dim):
            raise DataError(
                f"sidecar vectors for sentence {sentence.id!r} have shape {mat.shape}, "
                f"expected {(len(sentence), self.dim)}",
                sentence.id,
            )
        return mat


# --- initialization ----------------------------------------------------------


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def embedding(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.uniform(-0.1, 0.1, size=(rows, cols))


# --- graph tensors -------------------------------------------------------------


@dataclass(frozen=True)
class GraphIndex:
    """Dense view of a DepGraph for one forward pass.

    ``rel_ids`` lists the distinct relation ids present; ``edge_rel`` maps
    each (i, j) to a row of ``rel_ids`` (0 where there is no edge, masked).
    """

    mask: np.ndarray
    rel_ids: np.ndarray
    edge_rel: np.ndarray


def index_graph(graph: DepGraph, rel_vocab) -> GraphIndex:
    ids = np.zeros((graph.n, graph.n), dtype=np.int64)
    mask = np.zeros((graph.n, graph.n), dtype=bool)
    for (i, j), label in graph.rels.items():
        ids[i, j] = rel_vocab[label]
        mask[i, j] = True
    uniq, inverse = np.unique(ids[mask], return_inverse=True)
    edge_rel = np.zeros_like(ids)
    edge_rel[mask] = inverse
    return GraphIndex(mask, uniq, edge_rel)


# --- building blocks ---------------------------------------------------------


def encode_tokens(sentence: Sentence, params: Params, vocabs: Vocabs, source: str = "lookup",
                  sidecar: Sidecar | None = None) -> nx.Tensor:
    """Initial node features H0 (T×d).

    ``lookup`` concatenates token and POS embeddings (unseen strings fall back
    to the UNK rows); ``sidecar`` returns the stored vectors as a constant.
    """
    if source == "sidecar":
        if sidecar is None:
            raise DataError("sidecar encoder selected but no sidecar file loaded", sentence.id)
        return nx.Tensor(sidecar.lookup(sentence))
    if source != "lookup":
        raise ConfigError(f"unknown encoder source {source!r}", key="encoderSource")
    tok = np.array(vocabs.token.ids(t.surface for t in sentence.tokens))
    pos = np.array(vocabs.pos.ids(t.pos for t in sentence.tokens))
    return nx.concat([params["enc.tok"][tok], params["enc.pos"][pos]], axis=1)


def attention_head(H: nx.Tensor, mask: np.ndarray, W: nx.Tensor, a: nx.Tensor,
                   slope: float = nx.LEAKY_SLOPE) -> tuple[nx.Tensor, nx.Tensor]:
    """One attention head over neighbourhoods.

    alpha_ij = softmax_{j in N_i} leakyrelu(a . [W h_i || W h_j]);
    out_i = sum_j alpha_ij W h_j. ``a`` has shape (2*d_head, 1).
    Returns (out, alpha).
    """
    Z = H @ W
    d = W.shape[1]
    src = Z @ a[:d]
    dst = Z @ a[d:]
    scores = nx.leaky_relu(src + dst.reshape(1, -1), slope)
    alpha = nx.softmax(scores, mask)
    return alpha @ Z, alpha


def relation_gates(rel_rows: nx.Tensor, W1: nx.Tensor, b1: nx.Tensor, W2: nx.Tensor,
                   b2: nx.Tensor) -> nx.Tensor:
    """g = sigmoid(relu(r W1 + b1) W2 + b2) for each relation row; shape (U, 1)."""
    return nx.sigmoid(nx.relu(rel_rows @ W1 + b1) @ W2 + b2)


def relational_head(H: nx.Tensor, rel_rows: nx.Tensor, edge_rel: np.ndarray, mask: np.ndarray,
                    W1: nx.Tensor, b1: nx.Tensor, W2: nx.Tensor, b2: nx.Tensor,
                    V: nx.Tensor) -> tuple[nx.Tensor, nx.Tensor, nx.Tensor]:
    """Relation-gated head: beta = softmax over N_i of g(r_ij); out_i = sum_j beta_ij V h_j.

    The gate depends only on relation embeddings, never on node features.
    Returns (out, beta, g) with g as a T×T matrix (meaningful where masked in).
    """
    gates = relation_gates(rel_rows, W1, b1, W2, b2)
    g = gates[edge_rel, 0]
    beta = nx.softmax(g, mask)
    return beta @ (H @ V), beta, g


def rgat_layer(H: nx.Tensor, graph: GraphIndex, params: Params, prefix: str, rel_table: nx.Tensor,
               att_heads: int, rel_heads: int, dropout: float = 0.0, train: bool = False,
               rng: np.random.Generator | None = None, drop_relations: bool = True,
               drop_output: bool = True, trace: dict | None = None) -> nx.Tensor:
    """h'_i = relu(W [att_1 .. att_K || rel_1 .. rel_M]_i + b), then dropout.

    Expected parameter names under ``prefix``: ``att.{k}.W``, ``att.{k}.a``,
    ``rel.{m}.W1``/``b1``/``W2``/``b2``/``V``, ``out.W``, ``out.b``.
    """
    rel_rows = rel_table[graph.rel_ids]
    if drop_relations:
        rel_rows = nx.dropout(rel_rows, dropout, train, rng)
    parts = []
    for k in range(att_heads):
        out, alpha = attention_head(H, graph.mask, params[f"{prefix}.att.{k}.W"], params[f"{prefix}.att.{k}.a"])
        parts.append(out)
        if trace is not None:
            trace.setdefault("alpha", []).append(alpha.data)
    for m in range(rel_heads):
        p = f"{prefix}.rel.{m}"
        out, beta, g = relational_head(
            H, rel_rows, graph.edge_rel, graph.mask,
            params[f"{p}.W1"], params[f"{p}.b1"], params[f"{p}.W2"], params[f"{p}.b2"], params[f"{p}.V"],
        )
        parts.append(out)
        if trace is not None:
            trace.setdefault("beta", []).append(beta.data)
            trace.setdefault("g", []).append(g.data)
    x = nx.concat(parts, axis=1)
    W = params[f"{prefix}.out.W"]
    if x.shape[1] != W.shape[0]:
        raise ConfigError(f"{prefix}: concatenated width {x.shape[1]} differs from projection input {W.shape[0]}")
    h = nx.relu(x @ W + params[f"{prefix}.out.b"])
    if drop_output:
        h = nx.dropout(h, dropout, train, rng)
    return h


GATES = ("i", "f", "o", "c")


def lstm_direction(H: nx.Tensor, params: Params, prefix: str, reverse: bool = False) -> nx.Tensor:
    """Run one LSTM direction; rows of the result are in original order.

    Gates use ``{prefix}.W_{g}`` of shape (d_in + d_h, d_h) applied to
    [x_t; h_{t-1}] and biases ``{prefix}.b_{g}``.
    """
    W = nx.concat([params[f"{prefix}.W_{g}"] for g in GATES], axis=1)
    b = nx.concat([params[f"{prefix}.b_{g}"] for g in GATES], axis=0)
    dh = params[f"{prefix}.b_i"].shape[0]
    T = H.shape[0]
    h = nx.Tensor(np.zeros((1, dh)))
    c = nx.Tensor(np.zeros((1, dh)))
    outs: list[nx.Tensor | None] = [None] * T
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        z = nx.concat([H[t : t + 1], h], axis=1) @ W + b
        i = nx.sigmoid(z[:, 0:dh])
        f = nx.sigmoid(z[:, dh : 2 * dh])
        o = nx.sigmoid(z[:, 2 * dh : 3 * dh])
        cand = nx.tanh(z[:, 3 * dh :])
        c = f * c + i * cand
        h = o * nx.tanh(c)
        outs[t] = h
    return nx.concat(outs, axis=0)


def bilstm(H: nx.Tensor, params: Params, prefix: str = "lstm") -> nx.Tensor:
    """Row t is [forward h_t ; backward h_t], both cells started from zero state."""
    fwd = lstm_direction(H, params, f"{prefix}.fwd")
    bwd = lstm_direction(H, params, f"{prefix}.bwd", reverse=True)
    return nx.concat([fwd, bwd], axis=1)


def layer_norm(x: nx.Tensor, gain: nx.Tensor, bias: nx.Tensor, eps: float = 1e-5) -> nx.Tensor:
    centred = x - nx.mean(x, axis=1, keepdims=True)
    var = nx.mean(centred * centred, axis=1, keepdims=True)
    return centred * nx.power(var + eps, -0.5) * gain + bias


def transformer_layer(H: nx.Tensor, params: Params, heads: int, prefix: str = "trf",
                      trace: dict | None = None) -> nx.Tensor:
    """Post-norm encoder layer: unmasked multi-head self-attention and a ReLU feed-forward.

    No positional encoding is added, so the layer is permutation-equivariant.
    """
    d = H.shape[1]
    if d % heads:
        raise ConfigError(f"width {d} is not divisible by {heads} heads", key="trfHeads")
    dh = d // heads
    p = lambda name: params[f"{prefix}.{name}"]  # noqa: E731
    Q = H @ p("Wq") + p("bq")
    K = H @ p("Wk") + p("bk")
    V = H @ p("Wv") + p("bv")
    scale = 1.0 / math.sqrt(dh)
    outs = []
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        weights = nx.softmax((Q[:, cols] @ K[:, cols].T) * scale)
        if trace is not None:
            trace.setdefault("attn", []).append(weights.data)
        outs.append(weights @ V[:, cols])
    attended = nx.concat(outs, axis=1) @ p("Wo") + p("bo")
    x = layer_norm(H + attended, p("ln1.g"), p("ln1.b"))
    ff = nx.relu(x @ p("ff.W1") + p("ff.b1")) @ p("ff.W2") + p("ff.b2")
    return layer_norm(x + ff, p("ln2.g"), p("ln2.b"))


def emissions(H: nx.Tensor, W: nx.Tensor, b: nx.Tensor) -> nx.Tensor:
    """Tag scores P = H W + b (T×K)."""
    return H @ W + b


# --- the model -----------------------------------------------------------------


def sentence_seed(seed: int, sentence: Sentence) -> np.random.Generator:
    """Per-sentence generator that depends on content, not corpus position."""
    key = zlib.crc32("\x1f".join([sentence.id] + sentence.surfaces).encode("utf-8"))
    return np.random.default_rng([seed, key])


class TaggerModel:
    """Parameters plus forward computation for one configured variant."""

    def __init__(self, config: TrainConfig, vocabs: Vocabs, sidecar: Sidecar | None = None,
                 init: bool = True):
        config.validate()
        self.config = config
        self.vocabs = vocabs
        self.tags: tuple[str, ...] = tuple(vocabs.tag.items)
        if self.tags != TAGSETS[config.task]:
            raise ConfigError(f"tag vocabulary does not match task {config.task!r}", key="task")
        self.sidecar = sidecar
        self.params: dict[str, nx.Tensor] = {}
        self.frozen: dict[str, np.ndarray] = {}
        shapes = self.param_shapes()
        if init:
            self._initialize(shapes)
        else:
            for name, shape in shapes.items():
                self.params[name] = nx.parameter(np.zeros(shape), name)
        if config.uses_crf:
            k = len(self.tags)
            fixed = crf.bieos_forbidden(self.tags) if config.bieos_mask else crf.pinned_mask(k)
            self.frozen["crf.A"] = fixed

    @property
    def input_dim(self) -> int:
        c = self.config
        if c.encoder_source == "sidecar":
            if self.sidecar is None:
                raise DataError("sidecar encoder selected but no sidecar file loaded")
            return self.sidecar.dim
        return c.tok_dim + c.pos_dim

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.config
        shapes: dict[str, tuple[int, ...]] = {}
        if c.encoder_source == "lookup":
            shapes["enc.tok"] = (len(self.vocabs.token), c.tok_dim)
            shapes["enc.pos"] = (len(self.vocabs.pos), c.pos_dim)
        shapes["enc.rel"] = (len(self.vocabs.deprel), c.rel_dim)
        dh = c.hidden // c.att_heads
        width = self.input_dim
        for l in range(c.layers):
            pre = f"rgat.{l}"
            for k in range(c.att_heads):
                shapes[f"{pre}.att.{k}.W"] = (width, dh)
                shapes[f"{pre}.att.{k}.a"] = (2 * dh, 1)
            for m in range(c.rel_heads):
                shapes[f"{pre}.rel.{m}.W1"] = (c.rel_dim, c.rel_mlp_dim)
                shapes[f"{pre}.rel.{m}.b1"] = (c.rel_mlp_dim,)
                shapes[f"{pre}.rel.{m}.W2"] = (c.rel_mlp_dim, 1)
                shapes[f"{pre}.rel.{m}.b2"] = (1,)
                shapes[f"{pre}.rel.{m}.V"] = (width, dh)
            shapes[f"{pre}.out.W"] = ((c.att_heads + c.rel_heads) * dh, c.hidden)
            shapes[f"{pre}.out.b"] = (c.hidden,)
            width = c.hidden
        if c.head == "bilstm":
            half = c.hidden // 2
            for direction in ("fwd", "bwd"):
                for g in GATES:
                    shapes[f"lstm.{direction}.W_{g}"] = (width + half, half)
                    shapes[f"lstm.{direction}.b_{g}"] = (half,)
            width = 2 * half
        elif c.head == "transformer":
            for name in ("Wq", "Wk", "Wv", "Wo"):
                shapes[f"trf.{name}"] = (width, width)
                shapes[f"trf.b{name[1]}"] = (width,)
            for ln in ("ln1", "ln2"):
                shapes[f"trf.{ln}.g"] = (width,)
                shapes[f"trf.{ln}.b"] = (width,)
            shapes["trf.ff.W1"] = (width, 4 * width)
            shapes["trf.ff.b1"] = (4 * width,)
            shapes["trf.ff.W2"] = (4 * width, width)
            shapes["trf.ff.b2"] = (width,)
        shapes["out.W"] = (width, len(self.tags))
        shapes["out.b"] = (len(self.tags),)
        if c.uses_crf:
            k = len(self.tags)
            shapes["crf.A"] = (k + 2, k + 2)
        return shapes

    def _initialize(self, shapes: dict[str, tuple[int, ...]]) -> None:
        rng = np.random.default_rng(self.config.seed)
        for name, shape in shapes.items():
            leaf = name.rsplit(".", 1)[-1]
            if name.startswith("enc."):
                value = embedding(rng, *shape)
            elif name == "crf.A":
                value = crf.init_transitions(shape[0] - 2)
                if self.config.bieos_mask:
                    value[crf.bieos_forbidden(self.tags)] = crf.FORBIDDEN
            elif leaf == "g":
                value = np.ones(shape)
            elif len(shape) == 2:
                value = glorot(rng, *shape)
            else:
                value = np.zeros(shape)
            self.params[name] = nx.parameter(value, name)

    # -- forward ---------------------------------------------------------

    def graph_for(self, sentence: Sentence, rng: np.random.Generator) -> GraphIndex:
        pivot = choose_pivot(sentence, self.config.task, rng)
        graph = reorient(build(sentence), pivot, self.config.reorient_mode)
        return index_graph(graph, self.vocabs.deprel)

    def forward(self, sentence: Sentence, graph: GraphIndex, train: bool = False,
                rng: np.random.Generator | None = None, trace: dict | None = None) -> nx.Tensor:
        """Emission matrix P (T×K) for ``sentence`` over ``graph``."""
        c = self.config
        p = self.params
        H = encode_tokens(sentence, p, self.vocabs, c.encoder_source, self.sidecar)
        if H.shape[1] != self.input_dim:
            raise ShapeError(f"encoder width {H.shape[1]} differs from configured {self.input_dim}")
        for l in range(c.layers):
            H = rgat_layer(
                H, graph, p, f"rgat.{l}", p["enc.rel"], c.att_heads, c.rel_heads,
                dropout=c.dropout, train=train, rng=rng,
                drop_relations=c.dropout_relations, drop_output=c.dropout_layers, trace=trace,
            )
        if c.head == "bilstm":
            H = bilstm(H, p)
        elif c.head == "transformer":
            H = transformer_layer(H, p, c.trf_heads, trace=trace)
        return emissions(H, p["out.W"], p["out.b"])

    def decode(self, emission) -> list[int]:
        P = emission.data if isinstance(emission, nx.Tensor) else np.asarray(emission)
        if self.config.uses_crf:
            return crf.viterbi(P, self.params["crf.A"].data)[0]
        return [int(i) for i in np.argmax(P, axis=1)]

    def predict_ids(self, sentence: Sentence) -> list[int]:
        graph = self.graph_for(sentence, sentence_seed(self.config.seed, sentence))
        return self.decode(self.forward(sentence, graph))

    def predict_tags(self, sentence: Sentence) -> list[str]:
        return [self.tags[i] for i in self.predict_ids(sentence)]

    def gold_ids(self, sentence: Sentence) -> list[int]:
        tags = sentence.tags(self.config.task)
        try:
            return [self.vocabs.tag[t] for t in tags]
        except KeyError as exc:
            raise DataError(f"sentence {sentence.id!r}: tag {exc.args[0]!r} not in the {self.config.task} tag set",
                            sentence.id) from None

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        for name, value in state.items():
            self.params[name].data = np.array(value, dtype=np.float64)
