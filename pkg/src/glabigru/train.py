"""Training: Adadelta, periodic max-norm projection, the epoch loop,
binary checkpoints and the hybrid-ratio sweep."""

from __future__ import annotations

import logging
import math
import os
import struct
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import Example, LabelSet, Prepared, Vocab, build_vocab, prepare
from .errors import CheckpointError, NumericError, UsageError
from .model import ModelConfig, backward, check_params, forward, init_params, is_bias, is_embedding
from .numcore import Params, check_finite, spawn_rngs, zeros_like_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch: int = 10
    seed: int = 1
    maxnorm: float = 3.0
    maxnorm_period: int = 5
    lr: float = 1.0
    rho: float = 0.95
    eps: float = 1e-6

    def __post_init__(self):
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if self.batch < 1:
            raise UsageError("batch must be >= 1")
        if not self.maxnorm > 0:
            raise UsageError("maxnorm cap must be > 0")
        if self.maxnorm_period < 1:
            raise UsageError("maxnorm period must be >= 1")


# --- optimizer -------------------------------------------------------------


@dataclass
class AdadeltaState:
    sq_grad: Params  # running E[g^2]
    sq_delta: Params  # running E[dx^2]
    rho: float = 0.95
    eps: float = 1e-6
    lr: float = 1.0
    steps: int = 0

    @classmethod
    def for_params(cls, params: Params, rho=0.95, eps=1e-6, lr=1.0) -> "AdadeltaState":
        return cls(zeros_like_params(params), zeros_like_params(params), rho, eps, lr)


def adadelta_step(params: Params, grads: Params, state: AdadeltaState) -> None:
    """One in-place Adadelta update of every parameter tensor."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name} at step {state.steps + 1}")
    rho, eps = state.rho, state.eps
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise UsageError(f"gradient shape {g.shape} does not match parameter {name} {params[name].shape}")
        eg = state.sq_grad[name]
        ed = state.sq_delta[name]
        eg *= rho
        eg += (1 - rho) * g * g
        delta = -state.lr * np.sqrt(ed + eps) / np.sqrt(eg + eps) * g
        ed *= rho
        ed += (1 - rho) * delta * delta
        params[name] += delta
    state.steps += 1


def maxnorm_constrained(name: str) -> bool:
    """Rows of recurrent and classifier weight matrices; never biases or embeddings."""
    return not is_bias(name) and not is_embedding(name)


def maxnorm_project(params: Params, cap: float, step: int, period: int) -> None:
    """Rescale rows whose Euclidean norm exceeds ``cap``, every ``period`` steps."""
    if not cap > 0:
        raise UsageError("maxnorm cap must be > 0")
    if step % period:
        return
    for name, w in params.items():
        if w.ndim != 2 or not maxnorm_constrained(name):
            continue
        norms = np.sqrt((w * w).sum(axis=1))
        over = norms > cap
        if over.any():
            w[over] *= (cap / norms[over])[:, None]


# --- epoch loop ------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    j_cls: float
    j_loc: float
    f1: float | None = None
    accuracy: float | None = None

    def line(self) -> str:
        parts = [str(self.epoch), repr(self.loss), repr(self.j_cls), repr(self.j_loc)]
        parts.append("" if self.f1 is None else repr(self.f1))
        parts.append("" if self.accuracy is None else repr(self.accuracy))
        return "\t".join(parts)


HISTORY_HEADER = "epoch\tJ\tJ_cls\tJ_loc\tF1\taccuracy"


@dataclass
class FitResult:
    params: Params
    vocab: Vocab
    labels: LabelSet
    model_config: ModelConfig
    history: list[EpochRecord] = field(default_factory=list)
    optimizer: AdadeltaState | None = None

    @property
    def best_f1(self) -> float | None:
        scores = [r.f1 for r in self.history if r.f1 is not None]
        return max(scores) if scores else None


def run_epoch(data: Sequence[Prepared], params: Params, model_config: ModelConfig, train_config: TrainConfig,
              state: AdadeltaState, order_rng: np.random.Generator, dropout_rng: np.random.Generator) -> EpochRecord:
    order = order_rng.permutation(len(data))
    grads = zeros_like_params(params)
    total = cls_total = loc_total = 0.0
    pending = 0
    for k, i in enumerate(order):
        trace, cache = forward(data[i], params, model_config, dropout_rng, training=True)
        if not math.isfinite(trace.loss):
            raise NumericError(f"loss became {trace.loss} on example {data[i].id}")
        backward(trace, cache, params, model_config, grads)
        total += float(trace.loss)
        cls_total += float(trace.j_cls)
        loc_total += float(trace.j_loc)
        pending += 1
        if pending == train_config.batch or k == len(order) - 1:
            adadelta_step(params, grads, state)
            maxnorm_project(params, train_config.maxnorm, state.steps, train_config.maxnorm_period)
            for g in grads.values():
                g.fill(0.0)
            pending = 0
    return EpochRecord(epoch=0, loss=total, j_cls=cls_total, j_loc=loc_total)


def fit(
    train: Sequence[Example],
    model_config: ModelConfig,
    train_config: TrainConfig,
    eval_set: Sequence[Example] | None = None,
    labels: LabelSet | None = None,
    embeddings: tuple[list[str], np.ndarray] | None = None,
    out_dir: str | os.PathLike | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> FitResult:
    """Train from scratch; deterministic given ``train_config.seed``.

    The seed feeds three independent streams: parameter initialisation,
    epoch shuffling and dropout masks.  With ``out_dir`` the latest epoch is
    kept in ``last.ckpt`` and the per-epoch history in ``history.tsv``.
    """
    from .evaluation import evaluate  # evaluation imports this module

    if not train:
        raise UsageError("training set is empty")
    labels = labels or LabelSet.for_labels([ex.label for ex in train])
    if model_config.n_classes != len(labels):
        model_config = replace(model_config, n_classes=len(labels))
    init_rng, order_rng, dropout_rng = spawn_rngs(train_config.seed, 3)

    vocab, plan = build_vocab(train, embeddings[0] if embeddings else None)
    table = plan.materialize(len(vocab), model_config.d_e, init_rng,
                             embeddings[1] if embeddings else None, std=model_config.init_std)
    params = init_params(model_config, len(vocab), init_rng, word_vectors=table)

    data = [prepare(ex, vocab, labels, model_config.clip) for ex in train]
    held = [prepare(ex, vocab, labels, model_config.clip) for ex in eval_set] if eval_set else None
    state = AdadeltaState.for_params(params, train_config.rho, train_config.eps, train_config.lr)
    result = FitResult(params, vocab, labels, model_config, [], state)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "history.tsv").write_text(HISTORY_HEADER + "\n")

    best = -1.0
    for epoch in range(1, train_config.epochs + 1):
        rec = run_epoch(data, params, model_config, train_config, state, order_rng, dropout_rng)
        rec.epoch = epoch
        if not math.isfinite(rec.loss):
            raise NumericError(f"epoch {epoch}: loss diverged")
        for name, w in params.items():
            check_finite(name, w)
        if held:
            report = evaluate(params, model_config, held, labels)
            rec.f1, rec.accuracy = report.macro_f1, report.accuracy
        result.history.append(rec)
        log.info("epoch %d J=%.4f J_cls=%.4f J_loc=%.4f F1=%s", epoch, rec.loss, rec.j_cls, rec.j_loc, rec.f1)
        if out is not None:
            with open(out / "history.tsv", "a") as fh:
                fh.write(rec.line() + "\n")
            ck = Checkpoint(model_config, vocab, labels, params, state, epoch)
            save_checkpoint(out / "last.ckpt", ck)
            if rec.f1 is not None and rec.f1 > best:
                best = rec.f1
                save_checkpoint(out / "best.ckpt", ck)
        if on_epoch is not None:
            on_epoch(rec)
    return result


# --- checkpoints -----------------------------------------------------------

MAGIC = b"GLACKPT\x00"
VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    vocab: Vocab
    labels: LabelSet
    params: Params
    optimizer: AdadeltaState | None = None
    epoch: int = 0


def _config_text(cfg: ModelConfig) -> str:
    return "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n" for k, v in sorted(asdict(cfg).items()))


def _parse_config_text(text: str) -> ModelConfig:
    d = {}
    for line in text.splitlines():
        k, _, v = line.partition("=")
        d[k] = v
    return ModelConfig.from_dict(d)


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    """Serialize: magic, u32 version, u32 epoch, u64 optimizer steps, then
    length-prefixed UTF-8 blocks (config, labels, vocab), then tensors as
    name, rank, dims and raw little-endian float64 data."""
    opt = ck.optimizer
    out = [MAGIC, struct.pack("<IIQ", VERSION, ck.epoch, opt.steps if opt else 0)]
    meta = {"rho": 0.0, "eps": 0.0, "lr": 0.0}
    if opt:
        meta = {"rho": opt.rho, "eps": opt.eps, "lr": opt.lr}
    blocks = [
        _config_text(ck.model_config) + "".join(f"optimizer.{k}={v!r}\n" for k, v in meta.items()),
        "\n".join(ck.labels.names),
        "\n".join(ck.vocab.itos[2:]),
    ]
    for text in blocks:
        raw = text.encode("utf-8")
        out.append(struct.pack("<Q", len(raw)))
        out.append(raw)
    tensors = list(ck.params.items())
    if opt:
        tensors += [(f"adadelta.sq_grad/{k}", v) for k, v in opt.sq_grad.items()]
        tensors += [(f"adadelta.sq_delta/{k}", v) for k, v in opt.sq_delta.items()]
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def save_checkpoint(path: str | os.PathLike, ck: Checkpoint) -> None:
    """Atomic write via a temporary file in the same directory."""
    path = Path(path)
    data = checkpoint_bytes(ck)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic at offset 0: not a checkpoint file")
    version, epoch, steps = r.unpack("<IIQ")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset {len(MAGIC)} (expected {VERSION})")
    texts = []
    for _ in range(3):
        (n,) = r.unpack("<Q")
        start = r.pos
        try:
            texts.append(r.take(n).decode("utf-8"))
        except UnicodeDecodeError:
            raise CheckpointError(f"corrupt text block at offset {start}") from None
    cfg_lines, opt_meta = [], {}
    for line in texts[0].splitlines():
        if line.startswith("optimizer."):
            k, _, v = line[len("optimizer."):].partition("=")
            opt_meta[k] = float(v)
        else:
            cfg_lines.append(line)
    try:
        cfg = _parse_config_text("\n".join(cfg_lines))
        labels = LabelSet(tuple(texts[1].split("\n")))
    except UsageError as exc:
        raise CheckpointError(f"invalid checkpoint header: {exc}") from None
    vocab = Vocab(texts[2].split("\n") if texts[2] else ())

    (count,) = r.unpack("<I")
    params: Params = {}
    sq_grad: Params = {}
    sq_delta: Params = {}
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        if name.startswith("adadelta.sq_grad/"):
            sq_grad[name.split("/", 1)[1]] = arr
        elif name.startswith("adadelta.sq_delta/"):
            sq_delta[name.split("/", 1)[1]] = arr
        else:
            params[name] = arr
    if r.pos != len(data):
        raise CheckpointError(f"trailing bytes after offset {r.pos}")
    try:
        check_params(params, cfg)
    except UsageError as exc:
        raise CheckpointError(str(exc)) from None
    opt = None
    if sq_grad:
        opt = AdadeltaState(sq_grad, sq_delta, opt_meta["rho"], opt_meta["eps"], opt_meta["lr"], steps)
    return Checkpoint(cfg, vocab, labels, params, opt, epoch)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


# --- hybrid-ratio sweep ----------------------------------------------------


@dataclass
class SweepRow:
    gamma: float
    f1: list[float]  # best-epoch macro-F1 of each trial
    accuracy: list[float]

    @property
    def best(self) -> float:
        return max(self.f1)

    @property
    def mean(self) -> float:
        return float(np.mean(self.f1))


SWEEP_HEADER = "gamma\ttrials\tbest_f1\tmean_f1\tbest_accuracy"


def format_sweep(rows: Sequence[SweepRow]) -> str:
    lines = [SWEEP_HEADER]
    for row in rows:
        lines.append(f"{row.gamma!r}\t{len(row.f1)}\t{row.best!r}\t{row.mean!r}\t{max(row.accuracy)!r}")
    return "\n".join(lines) + "\n"


def _sweep_job(args):
    train, eval_set, model_config, train_config, labels, embeddings = args
    res = fit(train, model_config, train_config, eval_set=eval_set, labels=labels, embeddings=embeddings)
    f1 = max(r.f1 for r in res.history)
    acc = max(r.accuracy for r in res.history)
    return f1, acc


def gamma_sweep(train: Sequence[Example], eval_set: Sequence[Example], gammas: Sequence[float],
                model_config: ModelConfig, train_config: TrainConfig, trials: int = 1,
                labels: LabelSet | None = None, embeddings=None, jobs: int = 1) -> list[SweepRow]:
    """Train one model per (gamma, trial); trial ``k`` uses seed ``seed + k``
    for every gamma, so rows differ only in the hybrid ratio."""
    if not eval_set:
        raise UsageError("gamma sweep needs an evaluation set")
    if trials < 1:
        raise UsageError("trials must be >= 1")
    for g in gammas:
        if not 0.0 <= g <= 1.0:
            raise UsageError(f"gamma {g} outside [0, 1]")
    labels = labels or LabelSet.for_labels([ex.label for ex in list(train) + list(eval_set)])
    jobs_args = []
    for g in gammas:
        for k in range(trials):
            jobs_args.append((list(train), list(eval_set), replace(model_config, gamma=float(g)),
                              replace(train_config, seed=train_config.seed + k), labels, embeddings))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_job, jobs_args))
    else:
        results = [_sweep_job(a) for a in jobs_args]
    rows = []
    for i, g in enumerate(gammas):
        chunk = results[i * trials:(i + 1) * trials]
        rows.append(SweepRow(float(g), [f for f, _ in chunk], [a for _, a in chunk]))
    return rows


def train_config_from_dict(d: dict) -> TrainConfig:
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for k, v in d.items():
        if k not in kinds:
            raise UsageError(f"unknown train config key {k!r}")
        out[k] = {"int": int, "float": float}[kinds[k]](v)
    return TrainConfig(**out)
