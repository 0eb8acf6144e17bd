"""Command-line entry point.

Every flag can also be given in a flat ``key = value`` config file passed
with ``--config``; keys are the long flag names with dashes turned into
underscores.  Flags given on the command line win over the file.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import corpus
from .corpus import Example, LabelSet, attach_heads, fallback_share, load_embedding_text, parse_deps, parse_semeval, prepare
from .errors import DataError, GlaError, NumericError, UsageError
from .evaluation import (
    SyntheticSpec,
    dump_attention,
    evaluate,
    format_attention_record,
    format_predictions,
    make_synthetic,
    predict,
)
from .model import ModelConfig, extended_loss, init_params, loss_and_grad
from .numcore import grad_check, make_rng
from .train import TrainConfig, fit, format_sweep, gamma_sweep, load_checkpoint, save_checkpoint, Checkpoint

log = logging.getLogger("glabigru")

# flag -> (type, default, help); defaults follow the published setup where it exists
FLAGS = {
    "config": (str, None, "flat key = value file supplying defaults for any flag"),
    "out": (str, None, "output directory; nothing is written outside it"),
    "seed": (int, 1, "seed for every random choice"),
    "gamma": (float, 0.5, "hybrid ratio: 1 is purely global, 0 purely local attention"),
    "mode": (str, "soft", "localization: none, hard or soft"),
    "epochs": (int, 50, "training epochs"),
    "batch": (int, 10, "examples per gradient step"),
    "de": (int, 300, "word embedding size"),
    "dh": (int, 100, "GRU hidden size"),
    "dp": (int, 5, "position embedding size"),
    "clip": (int, 30, "relative positions are clipped to [-clip, clip]"),
    "dropout": (float, 0.5, "dropout rate on the input rows and the sentence vector"),
    "maxnorm": (float, 3.0, "row norm cap for weight matrices"),
    "maxnorm_period": (int, 5, "apply the norm cap every this many steps"),
    "embeddings": (str, None, "pretrained vectors in word2vec text format"),
    "data": (str, None, "SemEval-format data file"),
    "deps": (str, None, "dependency sidecar for --data (id<TAB>heads)"),
    "eval_data": (str, None, "held-out SemEval-format file scored after every epoch"),
    "eval_deps": (str, None, "dependency sidecar for --eval-data"),
    "checkpoint": (str, None, "model checkpoint file"),
    "trials": (int, 1, "trainings per gamma value in a sweep"),
    "jobs": (int, 1, "parallel trainings in a sweep"),
    "gammas": (str, "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1", "comma-separated gamma values to sweep"),
    "classes": (int, 4, "synthetic: number of keyword-determined classes"),
    "train": (int, 500, "synthetic: training examples"),
    "test": (int, 200, "synthetic: test examples"),
    "off_path": (float, 0.0, "synthetic: fraction of keywords placed off the dependency path"),
    "min_len": (int, 8, "synthetic: shortest sentence"),
    "max_len": (int, 16, "synthetic: longest sentence"),
}

MODEL_FLAGS = ["gamma", "mode", "de", "dh", "dp", "clip", "dropout"]
TRAIN_FLAGS = ["epochs", "batch", "maxnorm", "maxnorm_period"]

COMMANDS = {
    "prep": (["data", "deps"], "validate data and parses; report SDP fallback statistics"),
    "train": (["data", "deps", "eval_data", "eval_deps", "embeddings", *MODEL_FLAGS, *TRAIN_FLAGS],
              "train a model"),
    "eval": (["checkpoint", "data", "deps"], "score a checkpoint (directional macro-F1)"),
    "predict": (["checkpoint", "data", "deps"], "write <id>TAB<label> predictions"),
    "dump-attention": (["checkpoint", "data", "deps"], "write per-token attention weights as JSON lines"),
    "sweep": (["data", "deps", "eval_data", "eval_deps", "embeddings", "gammas", "trials", "jobs",
               *MODEL_FLAGS, *TRAIN_FLAGS], "train one model per gamma and tabulate F1"),
    "synth": (["classes", "train", "test", "off_path", "min_len", "max_len"],
              "generate the planted-keyword benchmark"),
    "grad-check": (["mode"], "finite-difference check of every gradient on a tiny model"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glabigru", description="Global-local attention BiGRU relation classifier")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name, (flags, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        for flag in ["config", "out", "seed", *flags]:
            kind, default, help_flag = FLAGS[flag]
            shown = f" (default: {default})" if default is not None else ""
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=kind, default=None,
                           help=help_flag + shown)
    return parser


def read_config(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                key, _, value = line.partition(" ")
            key = key.strip().replace("-", "_")
            if key not in FLAGS or key == "config":
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = FLAGS[key][0](value.strip())
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {value.strip()!r}") from None
    return values


def effective_options(args: argparse.Namespace) -> dict:
    command_flags = ["config", "out", "seed", *COMMANDS[args.command][0]]
    opts = {k: FLAGS[k][1] for k in command_flags}
    if args.config:
        file_values = read_config(args.config)
        opts.update({k: v for k, v in file_values.items() if k in opts})
    opts.update({k: v for k, v in vars(args).items() if k in opts and v is not None})
    return opts


def write_effective_config(opts: dict, out: Path) -> None:
    lines = [f"{k} = {v}\n" for k, v in sorted(opts.items()) if v is not None and k not in ("config", "out")]
    (out / "effective.cfg").write_text("".join(lines))


def _out_dir(opts, required=True) -> Path | None:
    if opts["out"] is None:
        if required:
            raise UsageError("--out is required for this command")
        return None
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_examples(data: str | None, deps: str | None, what: str = "--data") -> list[Example]:
    if data is None:
        raise UsageError(f"{what} is required")
    with open(data, encoding="utf-8") as fh:
        examples = parse_semeval(fh)
    if deps is not None:
        with open(deps, encoding="utf-8") as fh:
            examples = attach_heads(examples, parse_deps(fh))
    return examples


def model_config_from(opts: dict, n_classes: int) -> ModelConfig:
    return ModelConfig(d_e=opts["de"], d_p=opts["dp"], d_h=opts["dh"], gamma=opts["gamma"], mode=opts["mode"],
                       clip=opts["clip"], n_classes=n_classes, dropout=opts["dropout"])


def train_config_from(opts: dict) -> TrainConfig:
    return TrainConfig(epochs=opts["epochs"], batch=opts["batch"], seed=opts["seed"], maxnorm=opts["maxnorm"],
                       maxnorm_period=opts["maxnorm_period"])


def _training_inputs(opts):
    train = load_examples(opts["data"], opts["deps"])
    held = None
    if opts["eval_data"]:
        held = load_examples(opts["eval_data"], opts["eval_deps"], "--eval-data")
    labels = LabelSet.for_labels([ex.label for ex in train + (held or [])])
    embeddings = None
    if opts["embeddings"]:
        with open(opts["embeddings"], encoding="utf-8") as fh:
            embeddings = load_embedding_text(fh, opts["de"])
    return train, held, labels, embeddings


# --- commands --------------------------------------------------------------


def cmd_prep(opts) -> None:
    examples = load_examples(opts["data"], opts["deps"])
    labels = LabelSet.for_labels([ex.label for ex in examples])
    vocab, _ = corpus.build_vocab(examples) if examples else (corpus.Vocab(), None)
    prepared = [prepare(ex, vocab, labels, FLAGS["clip"][1]) for ex in examples]
    with_heads = sum(ex.heads is not None for ex in examples)
    counts: dict[str, int] = {}
    for ex in examples:
        counts[ex.label] = counts.get(ex.label, 0) + 1
    lines = [
        f"examples={len(examples)}",
        f"vocabulary={len(vocab) - 2}",
        f"labels={len(labels)}",
        f"with_parse={with_heads}",
        f"sdp_fallback_share={fallback_share(prepared)!r}",
        f"max_length={max((len(ex.tokens) for ex in examples), default=0)}",
    ]
    lines += [f"count.{k}={v}" for k, v in sorted(counts.items())]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    out = _out_dir(opts, required=False)
    if out is not None:
        (out / "prep.txt").write_text(text)


def cmd_train(opts) -> None:
    out = _out_dir(opts)
    write_effective_config(opts, out)
    train, held, labels, embeddings = _training_inputs(opts)
    result = fit(train, model_config_from(opts, len(labels)), train_config_from(opts), eval_set=held,
                 labels=labels, embeddings=embeddings, out_dir=out)
    last = result.history[-1]
    save_checkpoint(out / "model.ckpt", Checkpoint(result.model_config, result.vocab, result.labels,
                                                   result.params, result.optimizer, last.epoch))
    summary = [f"epochs={last.epoch}", f"final_J={last.loss!r}"]
    if result.best_f1 is not None:
        summary += [f"final_f1={last.f1!r}", f"final_accuracy={last.accuracy!r}", f"best_f1={result.best_f1!r}"]
    text = "\n".join(summary) + "\n"
    (out / "summary.txt").write_text(text)
    sys.stdout.write(text)


def _checkpoint_and_data(opts):
    if opts["checkpoint"] is None:
        raise UsageError("--checkpoint is required")
    ck = load_checkpoint(opts["checkpoint"])
    examples = load_examples(opts["data"], opts["deps"])
    prepared = [prepare(ex, ck.vocab, ck.labels, ck.model_config.clip) for ex in examples]
    return ck, prepared


def cmd_eval(opts) -> None:
    ck, data = _checkpoint_and_data(opts)
    if not data:
        raise DataError("no examples to evaluate")
    if any(ex.label < 0 for ex in data):
        raise DataError("evaluation data has unlabeled records")
    report = evaluate(ck.params, ck.model_config, data, ck.labels)
    sys.stdout.write(report.render())
    out = _out_dir(opts, required=False)
    if out is not None:
        (out / "report.txt").write_text(report.render())
        (out / "report.kv").write_text(report.key_values())


def cmd_predict(opts) -> None:
    ck, data = _checkpoint_and_data(opts)
    names = [ck.labels.names[predict(ck.params, ck.model_config, ex)] for ex in data]
    text = format_predictions([ex.id for ex in data], names)
    out = _out_dir(opts, required=False)
    if out is not None:
        (out / "predictions.txt").write_text(text)
    else:
        sys.stdout.write(text)


def cmd_dump_attention(opts) -> None:
    ck, data = _checkpoint_and_data(opts)
    out = _out_dir(opts)
    with open(out / "attention.jsonl", "w", encoding="utf-8") as fh:
        for ex in data:
            fh.write(format_attention_record(dump_attention(ck.params, ck.model_config, ex, ck.labels)))


def cmd_sweep(opts) -> None:
    out = _out_dir(opts)
    write_effective_config(opts, out)
    train, held, labels, embeddings = _training_inputs(opts)
    if not held:
        raise UsageError("sweep needs --eval-data")
    try:
        gammas = [float(x) for x in opts["gammas"].split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad --gammas list {opts['gammas']!r}") from None
    rows = gamma_sweep(train, held, gammas, model_config_from(opts, len(labels)), train_config_from(opts),
                       trials=opts["trials"], labels=labels, embeddings=embeddings, jobs=opts["jobs"])
    text = format_sweep(rows)
    (out / "sweep.tsv").write_text(text)
    sys.stdout.write(text)


def cmd_synth(opts) -> None:
    out = _out_dir(opts)
    spec = SyntheticSpec(n_classes=opts["classes"], n_train=opts["train"], n_test=opts["test"],
                         min_len=opts["min_len"], max_len=opts["max_len"],
                         off_path_fraction=opts["off_path"], seed=opts["seed"])
    train, test = make_synthetic(spec)
    for name, part in (("train", train), ("test", test)):
        (out / f"{name}.txt").write_text(corpus.format_semeval(part))
        (out / f"{name}.deps").write_text(corpus.format_deps(part))
    write_effective_config(opts, out)


def run_grad_check(mode: str, seed: int):
    """Tiny model (d_e=8, d_p=3, d_h=6) on a 5-token example, dropout off."""
    ex = Example(id=1, tokens=["the", "ring", "of", "his", "associates"], e1=1, e2=4,
                 label="Member-Collection(e2,e1)", heads=[1, -1, 1, 4, 2])
    labels = LabelSet.semeval()
    vocab, _ = corpus.build_vocab([ex])
    cfg = ModelConfig(d_e=8, d_p=3, d_h=6, mode=mode, clip=4, dropout=0.0, n_classes=len(labels), init_std=0.5)
    params = init_params(cfg, len(vocab), make_rng(seed))
    for name in params:
        if ".b" in name:
            params[name] = make_rng(seed + 1).normal(0.0, 0.1, params[name].shape)
    data = prepare(ex, vocab, labels, cfg.clip)

    def lg(p):
        trace, grads = loss_and_grad(data, p, cfg)
        return trace.loss, grads

    return grad_check(lg, params, h=1e-5, tol=1e-4, rng=make_rng(seed), numeric_loss=extended_loss(data, cfg))


def cmd_grad_check(opts) -> None:
    modes = [opts["mode"]] if opts["mode"] != "all" else ["none", "hard", "soft"]
    failed = False
    lines = []
    for mode in modes:
        rep = run_grad_check(mode, opts["seed"])
        name, err = rep.worst()
        lines.append(f"mode={mode} max_rel_error={rep.max_error:.3e} worst={name} "
                     f"tensors={len(rep.errors)} {'PASS' if rep.passed else 'FAIL'}")
        failed |= not rep.passed
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    out = _out_dir(opts, required=False)
    if out is not None:
        (out / "grad_check.txt").write_text(text)
    if failed:
        raise NumericError("gradient check failed")


HANDLERS = {
    "prep": cmd_prep,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "dump-attention": cmd_dump_attention,
    "sweep": cmd_sweep,
    "synth": cmd_synth,
    "grad-check": cmd_grad_check,
}


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        opts = effective_options(args)
        if args.command == "grad-check" and args.mode is None and not args.config:
            opts["mode"] = "all"
        HANDLERS[args.command](opts)
    except UsageError as exc:
        print(f"glabigru: usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"glabigru: data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"glabigru: I/O error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"glabigru: numeric failure: {exc}", file=sys.stderr)
        return 3
    except GlaError as exc:
        print(f"glabigru: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    sys.exit(run())


if __name__ == "__main__":
    main()
