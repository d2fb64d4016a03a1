"""Column corpus I/O, tag/span conversion and vocabularies.

File layout: UTF-8, one token per line with six tab-separated columns::

    SURFACE  POS  HEAD  DEPREL  ASPECT_TAG  OPINION_TAG

HEAD is 1-based with 0 meaning ROOT. Sentences are separated by blank lines
and open with ``# id = <string>``; other ``#`` lines are comments. A gold
column may hold ``_`` on every token of a sentence (prediction input).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

from spantagger.errors import DataError

ROOT = None
MISSING = "_"
SENTIMENTS = ("POS", "NEG", "NEU")
POSITIONS = ("B", "I", "E", "S")
OPINION = "OPINION"

ASPECT_TAGS: tuple[str, ...] = ("O",) + tuple(
    f"{p}-{s}" for s in SENTIMENTS for p in POSITIONS
)
OPINION_TAGS: tuple[str, ...] = ("O", "B", "I", "E", "S")
TAGSETS = {"aspect": ASPECT_TAGS, "opinion": OPINION_TAGS}
TASKS = tuple(TAGSETS)

UNK = "<unk>"


def check_task(task: str) -> str:
    if task not in TAGSETS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    return task


@dataclass(frozen=True)
class Token:
    surface: str
    pos: str
    head: int | None  # 0-based governor index, None for ROOT
    deprel: str
    aspect_tag: str = MISSING
    opinion_tag: str = MISSING


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple[Token, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    @property
    def heads(self) -> list[int | None]:
        return [t.head for t in self.tokens]

    def tags(self, task: str) -> list[str]:
        check_task(task)
        attr = "aspect_tag" if task == "aspect" else "opinion_tag"
        return [getattr(t, attr) for t in self.tokens]

    def has_gold(self, task: str) -> bool:
        return bool(self.tokens) and all(t != MISSING for t in self.tags(task))

    def with_tags(self, task: str, tags: Sequence[str]) -> "Sentence":
        check_task(task)
        if len(tags) != len(self.tokens):
            raise ValueError("tag count differs from token count")
        attr = "aspect_tag" if task == "aspect" else "opinion_tag"
        return replace(
            self, tokens=tuple(replace(t, **{attr: g}) for t, g in zip(self.tokens, tags))
        )

    def root(self) -> int:
        return next(i for i, t in enumerate(self.tokens) if t.head is ROOT)


class Span(NamedTuple):
    start: int
    end: int  # inclusive
    label: str


# --- tags <-> spans ----------------------------------------------------------


def split_tag(tag: str) -> tuple[str, str | None]:
    """Return (position, label) where label is a sentiment, OPINION or None for O."""
    if tag == "O":
        return "O", None
    if tag in OPINION_TAGS:
        return tag, OPINION
    pos, sep, label = tag.partition("-")
    if sep and pos in POSITIONS and label in SENTIMENTS:
        return pos, label
    raise ValueError(f"unknown tag {tag!r}")


def tags_to_spans(tags: Sequence[str], mode: str = "strict") -> list[Span]:
    """Extract labelled spans from a BIEOS tag sequence.

    ``strict`` keeps only complete ``B I* E`` runs with one label throughout
    and single ``S`` tags; every token of a broken pattern yields nothing.
    ``lenient`` closes a chunk at any boundary, the way chunk scorers treat
    truncated entities; it is meant for inspection, not scoring.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"mode must be 'strict' or 'lenient', got {mode!r}")
    parsed = [split_tag(t) for t in tags]
    if mode == "lenient":
        return _lenient_spans(parsed)
    spans: list[Span] = []
    open_start, open_label = None, None
    for i, (pos, label) in enumerate(parsed):
        if pos == "S":
            spans.append(Span(i, i, label))
            open_start = None
        elif pos == "B":
            open_start, open_label = i, label
        elif pos == "I":
            if open_start is None or label != open_label:
                open_start = None
        elif pos == "E":
            if open_start is not None and label == open_label:
                spans.append(Span(open_start, i, label))
            open_start = None
        else:
            open_start = None
    return spans


def _lenient_spans(parsed: list[tuple[str, str | None]]) -> list[Span]:
    spans: list[Span] = []
    start, cur = None, None
    for i, (pos, label) in enumerate(parsed):
        continues = start is not None and label == cur and pos in ("I", "E")
        if not continues and start is not None:
            spans.append(Span(start, i - 1, cur))
            start = None
        if pos == "O":
            continue
        if pos == "S":
            spans.append(Span(i, i, label))
        elif pos == "E":
            spans.append(Span(i if start is None else start, i, label))
            start = None
        elif start is None:
            start, cur = i, label
    if start is not None:
        spans.append(Span(start, len(parsed) - 1, cur))
    return spans


def spans_to_tags(spans: Iterable[Span], length: int) -> list[str]:
    """Render spans as BIEOS tags; ``OPINION`` spans use the plain tag set."""
    tags = ["O"] * length
    for start, end, label in sorted(spans):
        if not 0 <= start <= end < length:
            raise ValueError(f"span ({start}, {end}) outside [0, {length})")
        if any(t != "O" for t in tags[start : end + 1]):
            raise ValueError(f"span ({start}, {end}, {label}) overlaps another span")
        if label != OPINION and label not in SENTIMENTS:
            raise ValueError(f"unknown span label {label!r}")
        suffix = "" if label == OPINION else f"-{label}"
        if start == end:
            tags[start] = "S" + suffix
        else:
            tags[start] = "B" + suffix
            for i in range(start + 1, end):
                tags[i] = "I" + suffix
            tags[end] = "E" + suffix
    return tags


def is_well_formed(tags: Sequence[str]) -> bool:
    """True when every non-O tag belongs to a strict span."""
    covered = sum(s.end - s.start + 1 for s in tags_to_spans(tags))
    return covered == sum(1 for t in tags if t != "O")


# --- validation --------------------------------------------------------------


def validate_sentence(sentence: Sentence, line: int | None = None) -> None:
    """Raise DataError unless heads form a single-rooted tree and tags are well-formed."""

    def fail(msg):
        where = f" (line {line})" if line is not None else ""
        raise DataError(f"sentence {sentence.id!r}{where}: {msg}", sentence.id, line)

    n = len(sentence.tokens)
    if n == 0:
        fail("no tokens")
    for i, tok in enumerate(sentence.tokens):
        if tok.head is not ROOT and not (0 <= tok.head < n and tok.head != i):
            fail(f"token {i + 1} has invalid head {tok.head + 1}")
    roots = [i for i, t in enumerate(sentence.tokens) if t.head is ROOT]
    if len(roots) != 1:
        fail(f"expected exactly one ROOT head, found {len(roots)}")
    for i in range(n):
        seen = set()
        j = i
        while j is not ROOT:
            if j in seen:
                fail(f"head cycle through token {j + 1}")
            seen.add(j)
            j = sentence.tokens[j].head
    for task, allowed in TAGSETS.items():
        tags = sentence.tags(task)
        if all(t == MISSING for t in tags):
            continue
        for i, t in enumerate(tags):
            if t not in allowed:
                fail(f"token {i + 1} has bad {task} tag {t!r}")
        if not is_well_formed(tags):
            fail(f"ill-formed {task} tag sequence {' '.join(tags)}")


# --- reading / writing ---------------------------------------------------------


def _parse_head(raw: str) -> int | None:
    if raw in ("0", "ROOT"):
        return ROOT
    value = int(raw)
    if value < 0:
        raise ValueError(raw)
    return value - 1


def parse_corpus(text: str, source: str = "<string>") -> list[Sentence]:
    """Parse corpus text; every sentence is validated before it is returned."""
    sentences: list[Sentence] = []
    sid: str | None = None
    rows: list[Token] = []
    start_line = 0

    def flush():
        nonlocal sid, rows
        if rows:
            ident = sid if sid is not None else f"{source}:{start_line}"
            sent = Sentence(ident, tuple(rows))
            validate_sentence(sent, start_line)
            sentences.append(sent)
        elif sid is not None:
            raise DataError(f"sentence {sid!r} (line {start_line}): no tokens", sid, start_line)
        sid, rows = None, []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("id") and body[2:].lstrip().startswith("="):
                if rows:
                    flush()
                sid = body[2:].lstrip()[1:].strip()
                start_line = lineno
            continue
        if not rows and sid is None:
            start_line = lineno
        cols = line.split("\t")
        ident = sid or f"{source}:{start_line}"
        if len(cols) != 6:
            raise DataError(
                f"sentence {ident!r} (line {lineno}): expected 6 columns, got {len(cols)}",
                ident,
                lineno,
            )
        surface, pos, head, deprel, atag, otag = cols
        try:
            head_idx = _parse_head(head)
        except ValueError:
            raise DataError(
                f"sentence {ident!r} (line {lineno}): bad head {head!r}", ident, lineno
            ) from None
        rows.append(Token(surface, pos, head_idx, deprel, atag, otag))
    flush()
    return sentences


def read_corpus(path: str | os.PathLike, task: str | None = None) -> list[Sentence]:
    """Read and validate a corpus file.

    With ``task`` set, every sentence must carry gold tags for that task.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    sentences = parse_corpus(text, source=os.fspath(path))
    if task is not None:
        check_task(task)
        for s in sentences:
            if not s.has_gold(task):
                raise DataError(f"sentence {s.id!r}: missing gold {task} tags", s.id)
    return sentences


def format_corpus(sentences: Iterable[Sentence]) -> str:
    blocks = []
    for s in sentences:
        lines = [f"# id = {s.id}"]
        for t in s.tokens:
            head = "0" if t.head is ROOT else str(t.head + 1)
            lines.append("\t".join((t.surface, t.pos, head, t.deprel, t.aspect_tag, t.opinion_tag)))
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def write_corpus(sentences: Iterable[Sentence], path: str | os.PathLike) -> None:
    atomic_write_text(path, format_corpus(sentences))


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write to a sibling temp file and rename over ``path`` on success."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


# --- vocabularies ------------------------------------------------------------

# Synthetic relation labels produced by graph reorientation.
SELF_REL = "self"
FAR_REL = "con:far"
MAX_REL_DISTANCE = 4
SYNTHETIC_RELS = (SELF_REL,) + tuple(f"con:{d}" for d in range(2, MAX_REL_DISTANCE + 1)) + (FAR_REL,)


@dataclass
class Vocab:
    """String to dense id map in first-occurrence order."""

    items: list[str] = field(default_factory=list)
    unk: bool = True

    def __post_init__(self):
        if self.unk and (not self.items or self.items[0] != UNK):
            self.items.insert(0, UNK)
        self.index = {s: i for i, s in enumerate(self.items)}
        if len(self.index) != len(self.items):
            raise ValueError("duplicate vocabulary entries")

    def add(self, item: str) -> int:
        if item not in self.index:
            self.index[item] = len(self.items)
            self.items.append(item)
        return self.index[item]

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item) -> bool:
        return item in self.index

    def __getitem__(self, item: str) -> int:
        idx = self.index.get(item)
        if idx is None:
            if not self.unk:
                raise KeyError(item)
            return 0
        return idx

    def ids(self, items: Iterable[str]) -> list[int]:
        return [self[s] for s in items]


@dataclass
class Vocabs:
    token: Vocab
    pos: Vocab
    deprel: Vocab
    tag: Vocab

    NAMES = ("token", "pos", "deprel", "tag")

    def dumps(self) -> str:
        """Serialize as ``[name] count`` headers followed by one entry per line."""
        out = []
        for name in self.NAMES:
            vocab = getattr(self, name)
            out.append(f"[vocab {name}] {len(vocab)}")
            out.extend(vocab.items)
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocabs":
        lines = text.split("\n")
        vocabs, _ = cls.parse_lines(lines, 0)
        return vocabs

    @classmethod
    def parse_lines(cls, lines: list[str], pos: int) -> tuple["Vocabs", int]:
        found = {}
        for name in cls.NAMES:
            if pos >= len(lines):
                raise ValueError(f"missing vocab block {name!r}")
            header = lines[pos].split()
            if len(header) != 3 or header[0] != "[vocab" or header[1] != f"{name}]":
                raise ValueError(f"expected vocab block {name!r}, got {lines[pos]!r}")
            count = int(header[2])
            items = lines[pos + 1 : pos + 1 + count]
            if len(items) != count:
                raise ValueError(f"vocab block {name!r} truncated")
            found[name] = Vocab(list(items), unk=name != "tag")
            if len(found[name]) != count:
                raise ValueError(f"vocab block {name!r} lacks its UNK entry")
            pos += 1 + count
        return cls(**found), pos


def build_vocabs(corpus: Sequence[Sentence], task: str = "aspect") -> Vocabs:
    """Vocabularies in first-occurrence order; tags come from the fixed task tag set."""
    if not corpus:
        raise ValueError("cannot build vocabularies from an empty corpus")
    check_task(task)
    token, pos, deprel = Vocab(), Vocab(), Vocab(list(SYNTHETIC_RELS))
    for s in corpus:
        for t in s.tokens:
            token.add(t.surface)
            pos.add(t.pos)
            deprel.add(t.deprel)
    return Vocabs(token, pos, deprel, Vocab(list(TAGSETS[task]), unk=False))
