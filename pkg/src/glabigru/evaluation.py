"""Prediction, the directional macro-F1 scorer, attention dumps and the
planted-keyword synthetic benchmark."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import OTHER, Example, LabelSet, Prepared, shortest_dependency_path
from .errors import UsageError
from .model import ModelConfig, forward
from .numcore import Params, make_rng


def predict_probs(probs: np.ndarray) -> int:
    """Argmax with ties going to the lowest class index."""
    return int(np.argmax(probs))


def predict(params: Params, config: ModelConfig, ex: Prepared) -> int:
    trace, _ = forward(ex, params, config, training=False)
    return predict_probs(trace.probs)


@dataclass
class RelationScore:
    precision: float
    recall: float
    f1: float
    tp: int
    predicted: int
    gold: int


@dataclass
class EvalReport:
    per_relation: dict[str, RelationScore]
    macro_f1: float
    accuracy: float
    confusion: np.ndarray  # rows gold, columns predicted, over all classes
    labels: LabelSet = field(repr=False)

    def key_values(self) -> str:
        lines = [f"macro_f1={self.macro_f1!r}", f"accuracy={self.accuracy!r}",
                 f"examples={int(self.confusion.sum())}"]
        for t, sc in self.per_relation.items():
            lines += [f"precision.{t}={sc.precision!r}", f"recall.{t}={sc.recall!r}", f"f1.{t}={sc.f1!r}"]
        return "\n".join(lines) + "\n"

    def render(self) -> str:
        width = max(len(t) for t in self.per_relation) if self.per_relation else 8
        lines = [f"{'relation':<{width}}  {'P':>7} {'R':>7} {'F1':>7}   tp/pred/gold"]
        for t, sc in self.per_relation.items():
            lines.append(f"{t:<{width}}  {100 * sc.precision:7.2f} {100 * sc.recall:7.2f} {100 * sc.f1:7.2f}"
                         f"   {sc.tp}/{sc.predicted}/{sc.gold}")
        lines.append(f"macro-F1 (directional, excluding {OTHER}): {100 * self.macro_f1:.2f}")
        lines.append(f"accuracy over {len(self.labels)} classes: {100 * self.accuracy:.2f}")
        return "\n".join(lines) + "\n"


def macro_f1(gold: Sequence[str], pred: Sequence[str], labels: LabelSet) -> EvalReport:
    """Directional macro-F1 over the relation types; Other is excluded from
    the average but still counts as a wrong prediction or a missed one.

    A prediction is a true positive only when it matches the gold label
    including direction; predicted and gold counts merge both directions.
    """
    if len(gold) != len(pred):
        raise UsageError(f"{len(gold)} gold labels but {len(pred)} predictions")
    if not gold:
        raise UsageError("cannot score an empty prediction list")
    g_idx = np.array([labels.index(x) for x in gold])
    p_idx = np.array([labels.index(x) for x in pred])
    n = len(labels)
    confusion = np.zeros((n, n), dtype=np.int64)
    np.add.at(confusion, (g_idx, p_idx), 1)

    type_of = [labels.type_of(name) for name in labels.names]
    per = {}
    for t in labels.types:
        members = [i for i, tt in enumerate(type_of) if tt == t]
        tp = int(sum(confusion[i, i] for i in members))
        predicted = int(confusion[:, members].sum())
        gold_n = int(confusion[members, :].sum())
        p = tp / predicted if predicted else 0.0
        r = tp / gold_n if gold_n else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        per[t] = RelationScore(p, r, f, tp, predicted, gold_n)
    # left-to-right sum in label-set order, so the float result is reproducible by hand
    macro = sum(s.f1 for s in per.values()) / len(per) if per else 0.0
    accuracy = float(np.trace(confusion) / len(gold))
    return EvalReport(per, macro, accuracy, confusion, labels)


def evaluate(params: Params, config: ModelConfig, data: Sequence[Prepared], labels: LabelSet) -> EvalReport:
    gold = [labels.names[ex.label] for ex in data]
    pred = [labels.names[predict(params, config, ex)] for ex in data]
    return macro_f1(gold, pred, labels)


def format_predictions(ids: Sequence[int], labels: Sequence[str]) -> str:
    return "".join(f"{i}\t{lab}\n" for i, lab in zip(ids, labels))


# --- attention dumps -------------------------------------------------------


def dump_attention(params: Params, config: ModelConfig, ex: Prepared, labels: LabelSet | None = None) -> dict:
    """Per-token global, local and hybrid attention plus localization weight."""
    trace, _ = forward(ex, params, config, training=False)
    rec = {
        "id": ex.id,
        "e1": ex.e1,
        "e2": ex.e2,
        "mode": config.mode,
        "gamma": config.gamma,
        "columns": ["token", "alpha_g", "alpha_l", "alpha", "m"],
        "rows": [
            [tok, float(ag), float(al), float(a), float(m)]
            for tok, ag, al, a, m in zip(ex.tokens, trace.alpha_g, trace.alpha_l, trace.alpha, trace.m)
        ],
    }
    if labels is not None:
        rec["predicted"] = labels.names[predict_probs(trace.probs)]
    return rec


def format_attention_record(rec: dict) -> str:
    # json writes floats with repr(), which round-trips exactly
    return json.dumps(rec, ensure_ascii=False) + "\n"


# --- synthetic planted-keyword benchmark -----------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 4
    n_train: int = 500
    n_test: int = 200
    min_len: int = 8
    max_len: int = 16
    noise_vocab: int = 200
    keywords_per_class: int = 3
    entity_vocab: int = 20
    off_path_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.min_len < 3 or self.max_len < self.min_len:
            raise UsageError("sentence lengths must satisfy 3 <= min_len <= max_len")
        if self.n_classes < 2:
            raise UsageError("need at least two classes")
        if not 0.0 <= self.off_path_fraction <= 1.0:
            raise UsageError("off_path_fraction must lie in [0, 1]")
        if self.noise_vocab < 1 or self.keywords_per_class < 1 or self.entity_vocab < 2:
            raise UsageError("vocabulary sizes must be positive (entity_vocab >= 2)")
        if self.n_train < 0 or self.n_test < 0:
            raise UsageError("example counts must be >= 0")

    def label_set(self) -> LabelSet:
        return LabelSet.from_types([f"Rel{k}" for k in range((self.n_classes + 1) // 2)])

    def class_names(self) -> list[str]:
        return list(self.label_set().names[: self.n_classes])


def _synthetic_example(ex_id: int, cls: int, spec: SyntheticSpec, on_path: bool,
                       names: list[str], rng: np.random.Generator) -> Example:
    n = int(rng.integers(spec.min_len, spec.max_len + 1))
    e1, e2 = sorted(int(i) for i in rng.choice(n, size=2, replace=False))
    # keyword anywhere except on an entity
    kw_pos = int(rng.choice([i for i in range(n) if i not in (e1, e2)]))
    tokens = [f"w{int(rng.integers(spec.noise_vocab))}" for _ in range(n)]
    ents = rng.choice(spec.entity_vocab, size=2, replace=False)
    tokens[e1], tokens[e2] = f"ent{ents[0]}", f"ent{ents[1]}"
    tokens[kw_pos] = f"kw{cls}_{int(rng.integers(spec.keywords_per_class))}"

    # chain e1 .. e2 through the keyword (when on the path) and maybe one connector
    free = [i for i in range(n) if i not in (e1, e2, kw_pos)]
    middle = [kw_pos] if on_path else []
    if free and rng.random() < 0.5:
        middle.insert(int(rng.integers(len(middle) + 1)), int(rng.choice(free)))
    path = [int(e1)] + middle + [int(e2)]
    heads = [None] * n
    root = len(path) // 2
    heads[path[root]] = -1
    for k in range(root):
        heads[path[k]] = path[k + 1]
    for k in range(root + 1, len(path)):
        heads[path[k]] = path[k - 1]
    placed = list(path)
    rest = [i for i in range(n) if heads[i] is None]
    for i in rng.permutation(rest):
        heads[int(i)] = int(placed[int(rng.integers(len(placed)))])
        placed.append(int(i))
    return Example(id=ex_id, tokens=tokens, e1=int(e1), e2=int(e2), label=names[cls], heads=heads)


def make_synthetic(spec: SyntheticSpec) -> tuple[list[Example], list[Example]]:
    """Sentences whose class is fixed by one planted keyword among noise.

    Each sentence gets a dependency tree in which the keyword lies on the
    path between the two entities, except for ``off_path_fraction`` of them.
    Classes are assigned round-robin, so counts differ by at most one.
    """
    rng = make_rng(spec.seed)
    names = spec.class_names()
    out = []
    next_id = 1
    for size in (spec.n_train, spec.n_test):
        classes = rng.permutation(np.arange(size) % spec.n_classes)
        n_off = int(round(spec.off_path_fraction * size))
        off = np.zeros(size, dtype=bool)
        off[rng.choice(size, size=n_off, replace=False)] = True
        part = []
        for k in range(size):
            part.append(_synthetic_example(next_id, int(classes[k]), spec, not off[k], names, rng))
            next_id += 1
        out.append(part)
    return out[0], out[1]


def keyword_position(ex: Example | Prepared) -> int:
    return next(i for i, t in enumerate(ex.tokens) if t.startswith("kw"))


def keyword_on_path(ex: Example) -> bool:
    mask = shortest_dependency_path(ex.heads, ex.e1, ex.e2, n=len(ex.tokens)).m
    return bool(mask[keyword_position(ex)] == 1.0)


def keyword_attention(params: Params, config: ModelConfig, data: Sequence[Prepared]) -> tuple[float, float]:
    """Mean hybrid and mean global attention mass on the planted keyword."""
    hybrid_mass, global_mass = [], []
    for ex in data:
        trace, _ = forward(ex, params, config, training=False)
        k = keyword_position(ex)
        hybrid_mass.append(trace.alpha[k])
        global_mass.append(trace.alpha_g[k])
    return float(np.mean(hybrid_mass)), float(np.mean(global_mass))
