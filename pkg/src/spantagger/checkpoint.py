"""Plain-text checkpoint format.

Layout::

    spantagger-ckpt v1
    [config]
    key = value
    ...
    [vocab token] <n>
    <one entry per line>
    ... (pos, deprel, tag)
    [params] <count>
    param <name> <rank> <d1> .. <dk>
    <space-separated floats, 17 significant digits>
    ...
    [end]

Floats use ``%.17g`` so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import os

import numpy as np

from spantagger.config import TrainConfig, parse_config_text
from spantagger.corpus import TAGSETS, Vocabs, atomic_write_text
from spantagger.errors import CheckpointError, ConfigError
from spantagger.model import Sidecar, TaggerModel

HEADER = "spantagger-ckpt v1"


def dumps_checkpoint(model: TaggerModel) -> str:
    out = [HEADER, "[config]", model.config.to_text().rstrip("\n"), model.vocabs.dumps().rstrip("\n")]
    out.append(f"[params] {len(model.params)}")
    for name, tensor in model.params.items():
        dims = " ".join(str(d) for d in tensor.shape)
        out.append(f"param {name} {tensor.ndim} {dims}".rstrip())
        out.append(" ".join("%.17g" % x for x in tensor.data.ravel()))
    out.append("[end]")
    return "\n".join(out) + "\n"


def save_checkpoint(path: str | os.PathLike, model: TaggerModel) -> None:
    atomic_write_text(path, dumps_checkpoint(model))


def loads_checkpoint(text: str, sidecar: Sidecar | None = None) -> TaggerModel:
    lines = text.split("\n")
    if not lines or lines[0] != HEADER:
        got = lines[0] if lines else ""
        raise CheckpointError(f"unsupported checkpoint header {got!r}, expected {HEADER!r}", field="version")
    if len(lines) < 2 or lines[1] != "[config]":
        raise CheckpointError("missing [config] block", field="config")
    pos = 2
    cfg_lines = []
    while pos < len(lines) and not lines[pos].startswith("[vocab"):
        cfg_lines.append(lines[pos])
        pos += 1
    try:
        config = TrainConfig().updated(parse_config_text("\n".join(cfg_lines))).validate()
    except ConfigError as exc:
        raise CheckpointError(f"bad config block: {exc}", field=exc.key or "config") from None
    try:
        vocabs, pos = Vocabs.parse_lines(lines, pos)
    except ValueError as exc:
        raise CheckpointError(f"bad vocab block: {exc}", field="vocab") from None
    if tuple(vocabs.tag.items) != TAGSETS[config.task]:
        raise CheckpointError(
            f"tag set in checkpoint does not match task {config.task!r}: {vocabs.tag.items}", field="tag"
        )
    if pos >= len(lines) or not lines[pos].startswith("[params]"):
        raise CheckpointError("missing [params] block", field="params")
    try:
        count = int(lines[pos].split()[1])
    except (IndexError, ValueError):
        raise CheckpointError(f"bad params header {lines[pos]!r}", field="params") from None
    pos += 1
    if config.encoder_source == "sidecar" and sidecar is None and config.sidecar:
        sidecar = Sidecar.load(config.sidecar)
    model = TaggerModel(config, vocabs, sidecar=sidecar, init=False)
    expected = model.param_shapes()
    seen = set()
    for _ in range(count):
        if pos + 1 >= len(lines):
            raise CheckpointError("checkpoint truncated inside parameter records", field="params")
        head = lines[pos].split()
        if len(head) < 3 or head[0] != "param":
            raise CheckpointError(f"bad parameter record {lines[pos]!r}", field="params")
        name = head[1]
        try:
            rank = int(head[2])
            shape = tuple(int(d) for d in head[3:])
        except ValueError:
            raise CheckpointError(f"bad parameter record {lines[pos]!r}", field=name) from None
        if len(shape) != rank:
            raise CheckpointError(f"rank/shape mismatch for {name}", field=name)
        if name not in expected:
            raise CheckpointError(f"unexpected parameter {name!r}", field=name)
        if shape != expected[name]:
            raise CheckpointError(f"shape {shape} for {name} differs from expected {expected[name]}", field=name)
        try:
            values = np.array([float(v) for v in lines[pos + 1].split()], dtype=np.float64)
        except ValueError:
            raise CheckpointError(f"non-numeric values for {name}", field=name) from None
        if values.size != int(np.prod(shape)):
            raise CheckpointError(f"{name}: expected {int(np.prod(shape))} values, got {values.size}", field=name)
        model.params[name].data = values.reshape(shape)
        seen.add(name)
        pos += 2
    missing = set(expected) - seen
    if missing:
        raise CheckpointError(f"missing parameters: {sorted(missing)}", field=sorted(missing)[0])
    if pos >= len(lines) or lines[pos] != "[end]":
        raise CheckpointError("checkpoint truncated: no [end] marker", field="end")
    return model


def load_checkpoint(path: str | os.PathLike, sidecar: Sidecar | None = None) -> TaggerModel:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except UnicodeDecodeError:
        raise CheckpointError(f"{os.fspath(path)} is not a text checkpoint", field="version") from None
    return loads_checkpoint(text, sidecar=sidecar)
