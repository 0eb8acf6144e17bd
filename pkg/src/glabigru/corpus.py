"""Data ingestion: SemEval-2010 Task 8 files, dependency sidecars,
word-vector text files, vocabularies, position indices and SDP masks."""

from __future__ import annotations

import re
import string
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import DataError, ParseError, UsageError
from .numcore import DTYPE, gaussian_init

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
UNKNOWN_LABEL = "?"
OTHER = "Other"
DIRECTIONS = ("(e1,e2)", "(e2,e1)")

SEMEVAL_TYPES = (
    "Cause-Effect",
    "Instrument-Agency",
    "Product-Producer",
    "Content-Container",
    "Entity-Origin",
    "Entity-Destination",
    "Component-Whole",
    "Member-Collection",
    "Message-Topic",
)

_LABEL_RE = re.compile(r"^(.+)\((e1,e2|e2,e1)\)$")
_RECORD_RE = re.compile(r'^\s*(\d+)\t"(.*)"\s*$')
_TAG_RE = re.compile(r"(</?e[12]>)")
_PUNCT = set(string.punctuation)


@dataclass
class Example:
    id: int
    tokens: list[str]
    e1: int
    e2: int
    label: str = UNKNOWN_LABEL
    heads: list[int] | None = None
    # token spans [start, end) of the tagged entities, kept for re-serialization
    e1_span: tuple[int, int] | None = None
    e2_span: tuple[int, int] | None = None

    def __post_init__(self):
        n = len(self.tokens)
        if not (0 <= self.e1 < n and 0 <= self.e2 < n) or self.e1 == self.e2:
            raise DataError(f"example {self.id}: bad entity anchors e1={self.e1} e2={self.e2} for {n} tokens")
        if self.heads is not None:
            validate_heads(self.heads, n, self.id)


@dataclass(frozen=True)
class LabelSet:
    """Ordered class names: every relation type in both directions plus Other."""

    names: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if list(self.names).count(OTHER) != 1:
            raise UsageError("label set must contain 'Other' exactly once")
        if len(set(self.names)) != len(self.names):
            raise UsageError("duplicate labels in label set")
        types = {}
        for name in self.names:
            if name == OTHER:
                continue
            m = _LABEL_RE.match(name)
            if m is None:
                raise UsageError(f"label {name!r} is neither Other nor Type(e1,e2)/Type(e2,e1)")
            types.setdefault(m.group(1), set()).add(m.group(2))
        for t, dirs in types.items():
            if len(dirs) != 2:
                raise UsageError(f"relation {t!r} lacks one of its two directions")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    @classmethod
    def from_types(cls, types: Sequence[str]) -> "LabelSet":
        names = [f"{t}{d}" for t in types for d in DIRECTIONS]
        return cls(tuple(names) + (OTHER,))

    @classmethod
    def semeval(cls) -> "LabelSet":
        return cls.from_types(SEMEVAL_TYPES)

    @classmethod
    def for_labels(cls, labels: Iterable[str]) -> "LabelSet":
        """SemEval's 19 classes when they cover ``labels``, else the types seen."""
        labels = [x for x in labels if x != UNKNOWN_LABEL]
        std = cls.semeval()
        if all(x in std for x in labels):
            return std
        types = []
        for x in labels:
            t = relation_type(x)
            if t is not None and t not in types:
                types.append(t)
        return cls.from_types(sorted(types))

    def __len__(self):
        return len(self.names)

    def __contains__(self, label):
        return label in self._index

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise UsageError(f"unknown label {label!r}") from None

    @property
    def types(self) -> list[str]:
        out = []
        for n in self.names:
            t = relation_type(n)
            if t is not None and t not in out:
                out.append(t)
        return out

    def type_of(self, label: str) -> str | None:
        self.index(label)
        return relation_type(label)


def relation_type(label: str) -> str | None:
    """``Cause-Effect(e1,e2)`` -> ``Cause-Effect``; Other -> None."""
    m = _LABEL_RE.match(label)
    return m.group(1) if m else None


# --- SemEval text format ---------------------------------------------------


def tokenize(text: str) -> list[str]:
    """Whitespace split, then peel leading/trailing ASCII punctuation off
    each chunk as one-character tokens."""
    out = []
    for chunk in text.split():
        lead, trail = [], []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(lead)
        if chunk:
            out.append(chunk)
        out.extend(reversed(trail))
    return out


def tokenize_tagged(sentence: str, rec_id: int) -> tuple[list[str], tuple[int, int], tuple[int, int]]:
    tokens: list[str] = []
    spans: dict[str, list[int]] = {}
    open_tag = None
    for piece in _TAG_RE.split(sentence):
        if not piece:
            continue
        if _TAG_RE.fullmatch(piece):
            name = piece.strip("</>")
            if piece.startswith("</"):
                if open_tag != name:
                    raise ParseError(f"record {rec_id}: closing {piece} without matching open tag")
                start = spans[name][0]
                if len(tokens) == start:
                    raise ParseError(f"record {rec_id}: empty <{name}> span")
                spans[name].append(len(tokens))
                open_tag = None
            else:
                if open_tag is not None:
                    raise ParseError(f"record {rec_id}: nested tag {piece} inside <{open_tag}>")
                if name in spans:
                    raise ParseError(f"record {rec_id}: repeated tag {piece}")
                spans[name] = [len(tokens)]
                open_tag = name
        else:
            tokens.extend(tokenize(piece))
    if open_tag is not None:
        raise ParseError(f"record {rec_id}: unclosed <{open_tag}>")
    for name in ("e1", "e2"):
        if name not in spans:
            raise ParseError(f"record {rec_id}: missing <{name}> tag")
    return tokens, tuple(spans["e1"]), tuple(spans["e2"])


def parse_semeval(stream: TextIO | Iterable[str]) -> list[Example]:
    """Parse the official SemEval-2010 Task 8 distribution format.

    Each entity is anchored on the last token of its tagged span.  Records
    without a relation line (the unlabeled test file) get ``UNKNOWN_LABEL``.
    """
    records: list[list] = []  # [id, sentence, label]
    seen: set[int] = set()
    for raw in stream:
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        m = _RECORD_RE.match(line)
        if m:
            rec_id = int(m.group(1))
            if rec_id in seen:
                raise ParseError(f"record {rec_id}: duplicate id")
            seen.add(rec_id)
            records.append([rec_id, m.group(2), None])
            continue
        text = line.strip()
        if text.startswith("Comment"):
            continue
        if not records or records[-1][2] is not None:
            where = f"after record {records[-1][0]}" if records else "before the first record"
            raise ParseError(f"unexpected line {where}: {text[:60]!r}")
        records[-1][2] = text

    examples = []
    for rec_id, sentence, label in records:
        tokens, s1, s2 = tokenize_tagged(sentence, rec_id)
        examples.append(
            Example(
                id=rec_id,
                tokens=tokens,
                e1=s1[1] - 1,
                e2=s2[1] - 1,
                label=label if label is not None else UNKNOWN_LABEL,
                e1_span=s1,
                e2_span=s2,
            )
        )
    return examples


def tagged_sentence(ex: Example) -> str:
    """Tokens joined by spaces with the entity tags reinserted."""
    s1 = ex.e1_span or (ex.e1, ex.e1 + 1)
    s2 = ex.e2_span or (ex.e2, ex.e2 + 1)
    opens = {s1[0]: ["<e1>"], s2[0]: ["<e2>"]}
    closes = {s1[1] - 1: ["</e1>"], s2[1] - 1: ["</e2>"]}
    parts = []
    for i, tok in enumerate(ex.tokens):
        parts.append("".join(opens.get(i, [])) + tok + "".join(closes.get(i, [])))
    return " ".join(parts)


def format_semeval(examples: Iterable[Example]) -> str:
    out = []
    for ex in examples:
        out.append(f'{ex.id}\t"{tagged_sentence(ex)}"\n{ex.label}\nComment:\n\n')
    return "".join(out)


# --- dependency sidecar ----------------------------------------------------


def validate_heads(heads: Sequence[int], n: int, ex_id=None) -> None:
    """Heads must index tokens (or be -1 for a root) and contain no cycle."""
    where = f"example {ex_id}" if ex_id is not None else "heads"
    if len(heads) != n:
        raise DataError(f"{where}: {len(heads)} heads for {n} tokens")
    if not any(h == -1 for h in heads):
        raise DataError(f"{where}: dependency heads have no root (-1)")
    for i, h in enumerate(heads):
        if h == i or not -1 <= h < n:
            raise DataError(f"{where}: invalid head {h} for token {i}")
    state = [0] * n  # 0 unvisited, 1 on current walk, 2 reaches a root
    for start in range(n):
        walk = []
        i = start
        while i != -1 and state[i] == 0:
            state[i] = 1
            walk.append(i)
            i = heads[i]
        if i != -1 and state[i] == 1:
            raise DataError(f"{where}: cyclic dependency heads through token {i}")
        for j in walk:
            state[j] = 2


def parse_deps(stream: TextIO | Iterable[str]) -> dict[int, list[int]]:
    """Read ``id<TAB>space-separated heads`` lines."""
    out: dict[int, list[int]] = {}
    for lineno, raw in enumerate(stream, 1):
        line = raw.strip()
        if not line:
            continue
        try:
            rec, _, rest = line.partition("\t")
            rec_id = int(rec)
            heads = [int(x) for x in rest.split()]
        except ValueError:
            raise ParseError(f"deps line {lineno}: expected 'id<TAB>heads', got {line[:60]!r}") from None
        if rec_id in out:
            raise ParseError(f"deps line {lineno}: duplicate id {rec_id}")
        out[rec_id] = heads
    return out


def format_deps(examples: Iterable[Example]) -> str:
    return "".join(
        f"{ex.id}\t{' '.join(map(str, ex.heads))}\n" for ex in examples if ex.heads is not None
    )


def attach_heads(examples: Sequence[Example], deps: dict[int, list[int]]) -> list[Example]:
    """Return copies of ``examples`` carrying their parse, validated."""
    out = []
    for ex in examples:
        heads = deps.get(ex.id)
        if heads is not None and len(heads) != len(ex.tokens):
            raise DataError(f"example {ex.id}: {len(heads)} heads but {len(ex.tokens)} tokens")
        out.append(replace(ex, heads=heads))
    return out


# --- shortest dependency path ----------------------------------------------


@dataclass
class SdpMask:
    m: np.ndarray
    source: str  # "hard" or "fallback"


def shortest_dependency_path(heads: Sequence[int] | None, e1: int, e2: int, n: int | None = None, ex_id=None) -> SdpMask:
    """Indicator of the tokens on the tree path between ``e1`` and ``e2``.

    Falls back to an all-ones mask when there is no parse or the two
    entities sit in different components of a forest.
    """
    if heads is None:
        if n is None:
            raise UsageError("need the sentence length when heads are absent")
        return SdpMask(np.ones(n, dtype=DTYPE), "fallback")
    n = len(heads)
    validate_heads(heads, n, ex_id)

    def ancestors(i):
        chain = [i]
        while heads[i] != -1:
            i = heads[i]
            chain.append(i)
        return chain

    up1, up2 = ancestors(e1), ancestors(e2)
    if up1[-1] != up2[-1]:
        return SdpMask(np.ones(n, dtype=DTYPE), "fallback")
    on2 = {t: k for k, t in enumerate(up2)}
    mask = np.zeros(n, dtype=DTYPE)
    for t in up1:
        mask[t] = 1.0
        if t in on2:
            mask[up2[: on2[t] + 1]] = 1.0
            break
    return SdpMask(mask, "hard")


def bfs_path_mask(heads: Sequence[int], e1: int, e2: int) -> np.ndarray | None:
    """Independent BFS over undirected tree edges; None if unreachable."""
    n = len(heads)
    adj = [[] for _ in range(n)]
    for i, h in enumerate(heads):
        if h >= 0:
            adj[i].append(h)
            adj[h].append(i)
    prev = {e1: None}
    queue = deque([e1])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in prev:
                prev[v] = u
                queue.append(v)
    if e2 not in prev:
        return None
    mask = np.zeros(n, dtype=DTYPE)
    u = e2
    while u is not None:
        mask[u] = 1.0
        u = prev[u]
    return mask


# --- positions, vocabulary, embeddings -------------------------------------


def relative_positions(length: int, e: int, clip: int) -> np.ndarray:
    """Clipped offsets ``i - e`` shifted into ``[0, 2*clip]``."""
    if clip < 1:
        raise UsageError(f"clip must be >= 1, got {clip}")
    if not 0 <= e < length:
        raise UsageError(f"entity index {e} out of range for length {length}")
    return np.clip(np.arange(length) - e, -clip, clip) + clip


class Vocab:
    """Token -> index map; 0 is padding and 1 the unknown token."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [PAD_TOKEN, UNK_TOKEN]
        self.stoi = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.stoi.get(t, UNK) for t in tokens], dtype=np.int64)


def load_embedding_text(stream: TextIO | Iterable[str], d_e: int) -> tuple[list[str], np.ndarray]:
    """Read word2vec/GloVe-style text vectors; an optional ``count dim``
    header line is skipped after checking ``dim`` against ``d_e``."""
    tokens: list[str] = []
    rows: list[list[float]] = []
    for lineno, raw in enumerate(stream, 1):
        parts = raw.split()
        if not parts:
            continue
        if lineno == 1 and len(parts) == 2:
            try:
                _, dim = int(parts[0]), int(parts[1])
            except ValueError:
                pass
            else:
                if dim != d_e:
                    raise ParseError(f"embedding header declares dim {dim}, expected {d_e}")
                continue
        if len(parts) != d_e + 1:
            raise ParseError(f"embedding line {lineno}: {len(parts) - 1} values, expected {d_e}")
        try:
            rows.append([float(x) for x in parts[1:]])
        except ValueError:
            raise ParseError(f"embedding line {lineno}: non-numeric value") from None
        tokens.append(parts[0])
    vectors = np.array(rows, dtype=DTYPE).reshape(len(rows), d_e)
    return tokens, vectors


@dataclass
class EmbeddingPlan:
    """Which vocabulary rows come from a pretrained table and which are drawn."""

    pretrained: dict[int, int]  # vocab row -> row of the pretrained table
    random_rows: list[int]

    def materialize(self, vocab_size: int, d_e: int, rng: np.random.Generator,
                    vectors: np.ndarray | None = None, std: float = 0.1) -> np.ndarray:
        table = np.zeros((vocab_size, d_e), dtype=DTYPE)
        if self.random_rows:
            table[self.random_rows] = gaussian_init((len(self.random_rows), d_e), std, rng)
        if self.pretrained:
            if vectors is None:
                raise UsageError("plan references pretrained rows but no vectors given")
            rows = list(self.pretrained)
            table[rows] = vectors[[self.pretrained[r] for r in rows]]
        return table


def build_vocab(examples: Sequence[Example], pretrained_tokens: Sequence[str] | None = None) -> tuple[Vocab, EmbeddingPlan]:
    """Vocabulary over training tokens in first-seen order."""
    vocab = Vocab()
    for ex in examples:
        for t in ex.tokens:
            vocab.add(t)
    where = {}
    for i, t in enumerate(pretrained_tokens or ()):
        where.setdefault(t, i)
    pretrained = {}
    random_rows = [UNK]
    for idx in range(2, len(vocab)):
        src = where.get(vocab.itos[idx])
        if src is None:
            random_rows.append(idx)
        else:
            pretrained[idx] = src
    return vocab, EmbeddingPlan(pretrained, random_rows)


# --- model-ready examples --------------------------------------------------


@dataclass
class Prepared:
    """Index arrays the model consumes for one example."""

    id: int
    token_ids: np.ndarray
    pos1: np.ndarray
    pos2: np.ndarray
    e1: int
    e2: int
    sdp: SdpMask
    label: int  # -1 when unknown
    tokens: list[str]

    @property
    def length(self) -> int:
        return len(self.token_ids)


def prepare(ex: Example, vocab: Vocab, labels: LabelSet, clip: int) -> Prepared:
    n = len(ex.tokens)
    if ex.label != UNKNOWN_LABEL and ex.label not in labels:
        raise DataError(f"example {ex.id}: label {ex.label!r} is not in the label set")
    return Prepared(
        id=ex.id,
        token_ids=vocab.encode(ex.tokens),
        pos1=relative_positions(n, ex.e1, clip),
        pos2=relative_positions(n, ex.e2, clip),
        e1=ex.e1,
        e2=ex.e2,
        sdp=shortest_dependency_path(ex.heads, ex.e1, ex.e2, n=n, ex_id=ex.id),
        label=labels.index(ex.label) if ex.label != UNKNOWN_LABEL else -1,
        tokens=list(ex.tokens),
    )


def fallback_share(prepared: Sequence[Prepared]) -> float:
    if not prepared:
        return 0.0
    return sum(p.sdp.source == "fallback" for p in prepared) / len(prepared)
