"""Command line entry point: ``sern {ingest,train,eval,infer-stream,attn-dump}``.

Paths left unspecified fall back to files inside the data directory, which
is ``$SERN_DATA_DIR`` or the current directory. ``--corpus`` accepts either a
corpus file or a raw transcript directory.

Exit codes: 0 success, 1 runtime error, 2 usage error, 3 training diverged.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .attention import SCORE_KINDS
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .embeddings import skipgram_pretrain
from .ingest import IngestError, ingest_directory
from .model import ARCHITECTURES, CLASSIFIER_INPUTS, SernConfig, init_params, new_run_state, predict_dialog, stream_step
from .synthetic import bundled_corpus_dir
from .text import (
    RawDialog,
    build_vocabulary,
    corpus_stats,
    emotion_set,
    encode,
    format_counts,
    read_corpus,
    split_corpus,
    tokenize,
    write_corpus,
)
from .training import TrainingDiverged, evaluate, format_report, metrics, train

log = logging.getLogger("sern")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
DATA_DIR_ENV = "SERN_DATA_DIR"
CORPUS_NAME = "corpus.jsonl"
CHECKPOINT_NAME = "sern.ckpt"
DUMP_TEXT_WIDTH = 30


class CommandError(Exception):
    """A failure worth a one-line message rather than a traceback."""


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV) or ".")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0 or not np.isfinite(value):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _fraction(text: str) -> float:
    value = _positive_float(text)
    if value >= 1:
        raise argparse.ArgumentTypeError(f"expected a fraction in (0, 1), got {text}")
    return value


def _corpus_path(args) -> Path:
    return Path(args.corpus) if args.corpus else data_dir() / CORPUS_NAME


def _checkpoint_path(args) -> Path:
    return Path(args.checkpoint) if args.checkpoint else data_dir() / CHECKPOINT_NAME


def load_dialogs(path: Path) -> list[RawDialog]:
    if path.is_dir():
        return ingest_directory(path)
    if not path.exists():
        raise CommandError(f"{path}: no such corpus file or directory")
    try:
        dialogs = read_corpus(path)
    except (OSError, UnicodeDecodeError, ValueError) as exc:
        raise CommandError(str(exc)) from exc
    if not dialogs:
        raise CommandError(f"{path}: corpus is empty")
    return dialogs


def _default_holdout(dialogs: Sequence[RawDialog]) -> str:
    return sorted({d.session for d in dialogs})[-1]


def _splits(dialogs, holdout, fraction, seed):
    try:
        return split_corpus(dialogs, holdout, fraction, seed)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc


# -- ingest ------------------------------------------------------------------


def cmd_ingest(args, out: TextIO) -> int:
    raw = Path(args.raw_dir) if args.raw_dir else bundled_corpus_dir()
    dialogs = ingest_directory(raw)
    target = Path(args.output) if args.output else _corpus_path(args)
    target.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(dialogs, target)
    names = emotion_set(6).names
    vocab = build_vocabulary(dialogs, 1)
    counts = corpus_stats([encode(d, vocab, emotion_set(6)) for d in dialogs], len(names))
    n_utts = sum(len(d.utterances) for d in dialogs)
    print(f"{len(dialogs)} dialogs, {n_utts} utterances -> {target}", file=out)
    print(format_counts(names, counts), file=out)
    return EXIT_OK


# -- train -------------------------------------------------------------------


def cmd_train(args, out: TextIO) -> int:
    dialogs = load_dialogs(_corpus_path(args))
    holdout = args.holdout or _default_holdout(dialogs)
    train_raw, val_raw, test_raw = _splits(dialogs, holdout, args.validation_fraction, args.seed)
    emotions = emotion_set(args.regime)
    try:
        vocab = build_vocabulary(train_raw, args.min_frequency)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    train_enc = [encode(d, vocab, emotions) for d in train_raw]
    val_enc = [encode(d, vocab, emotions) for d in val_raw]
    config = SernConfig(
        vocab_size=len(vocab),
        n_classes=len(emotions),
        architecture=args.architecture,
        d_emb=args.d_emb,
        d_lstm=args.d_lstm,
        d_gru=args.d_gru,
        d_attn=args.d_attn,
        score=args.score,
        window=args.window,
        classifier_input=args.classifier_input,
    )
    params = init_params(config, args.seed)
    if args.pretrain_epochs:
        skipgram_pretrain(train_enc, params.embedding, epochs=args.pretrain_epochs, seed=args.seed)

    ckpt_path = _checkpoint_path(args)
    log_path = Path(args.log) if args.log else ckpt_path.with_name(ckpt_path.name + ".log")
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    print(
        f"train {len(train_raw)} / validation {len(val_raw)} / test {len(test_raw)} dialogs"
        f" (held-out session {holdout}), vocabulary {len(vocab)}",
        file=out,
    )
    with open(log_path, "w", encoding="utf-8", newline="\n") as log_fh:

        def write_row(row: dict) -> None:
            log_fh.write(json.dumps(row, sort_keys=True) + "\n")
            log_fh.flush()

        result = train(
            config,
            train_enc,
            val_enc,
            epochs=args.epochs,
            seed=args.seed,
            patience=args.patience,
            lr=args.lr,
            eps=args.eps,
            params=params,
            on_epoch=write_row,
        )
    run = {
        "seed": args.seed,
        "holdout": holdout,
        "validation_fraction": args.validation_fraction,
        "epochs": args.epochs,
        "patience": args.patience,
        "lr": args.lr,
        "eps": args.eps,
        "pretrain_epochs": args.pretrain_epochs,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.log),
        "stopped_early": result.stopped_early,
    }
    save_checkpoint(ckpt_path, Checkpoint(result.params, vocab, args.regime, run))
    best = result.log[result.best_epoch - 1]
    print(
        f"best epoch {result.best_epoch} of {len(result.log)}: val accuracy {best['val_accuracy']:.3f},"
        f" val macro-F1 {best['val_macro_f1']:.3f}",
        file=out,
    )
    print(f"checkpoint -> {ckpt_path}", file=out)
    print(f"log -> {log_path}", file=out)
    return EXIT_OK


# -- eval --------------------------------------------------------------------


def _load_checkpoint(args) -> Checkpoint:
    path = _checkpoint_path(args)
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise CommandError(str(exc)) from exc


def checkpoint_splits(ckpt: Checkpoint, dialogs: Sequence[RawDialog]) -> dict[str, list[RawDialog]]:
    """Rebuild the checkpoint's train/validation/test split of ``dialogs``.

    Refuses when the corpus does not reproduce the checkpoint's vocabulary,
    since the model's token ids would then mean different words.
    """
    run = ckpt.meta
    holdout = run.get("holdout") or _default_holdout(dialogs)
    train_raw, val_raw, test_raw = _splits(dialogs, holdout, run.get("validation_fraction", 0.07), run.get("seed", 0))
    try:
        rebuilt = build_vocabulary(train_raw, ckpt.vocab.min_frequency).content_hash()
    except ValueError:
        rebuilt = None
    if rebuilt != ckpt.vocab_hash:
        raise CommandError(
            f"vocabulary hash mismatch: checkpoint has {ckpt.vocab_hash}, the corpus training split gives {rebuilt};"
            " this checkpoint was not trained on this corpus"
        )
    return {"train": train_raw, "validation": val_raw, "test": test_raw, "all": list(dialogs)}


def cmd_eval(args, out: TextIO) -> int:
    ckpt = _load_checkpoint(args)
    dialogs = load_dialogs(_corpus_path(args))
    chosen = checkpoint_splits(ckpt, dialogs)[args.split]
    encoded = [encode(d, ckpt.vocab, ckpt.emotions) for d in chosen]
    cm, preds = evaluate(ckpt.params, encoded)
    if cm.total == 0:
        raise CommandError(f"the {args.split} split has no labeled utterances")
    report = metrics(cm)
    print(f"split\t{args.split}\t{len(chosen)} dialogs\t{cm.total} utterances", file=out)
    out.write(format_report(report, cm, ckpt.emotions.names))
    if args.predictions:
        names = ckpt.emotions.names
        with open(args.predictions, "w", encoding="utf-8", newline="\n") as fh:
            for d, p in zip(encoded, preds):
                for i, (pred, gold) in enumerate(zip(p, d.labels)):
                    fh.write(f"{d.dialog_id}\t{i + 1}\t{names[pred]}\t{names[gold] if gold >= 0 else ''}\n")
    return EXIT_OK


# -- infer-stream ------------------------------------------------------------


def format_stream_line(label: str, probs: np.ndarray, weights: np.ndarray | None) -> str:
    p = " ".join(f"{v:.3f}" for v in probs)
    w = "" if weights is None else " ".join(f"{v:.3f}" for v in weights)
    return f"{label}\t{p}\t[{w}]"


def run_stream(ckpt: Checkpoint, stdin, out: TextIO, err: TextIO, window: int | None = None) -> int:
    """Serve the line protocol until end of input.

    ``stdin`` yields bytes lines. Each utterance line is answered (and the
    answer flushed) before the next line is read; a blank line starts a new
    dialog.
    """
    params, names = ckpt.params, ckpt.emotions.names
    if window is None:
        window = params.config.window
    state = new_run_state(params, window)
    lineno = 0
    while True:
        raw = stdin.readline()
        if not raw:
            break
        lineno += 1
        try:
            text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        except UnicodeDecodeError:
            print(f"warning: line {lineno}: not valid UTF-8, skipped", file=err, flush=True)
            continue
        text = text.rstrip("\r\n")
        if not text.strip():
            state = new_run_state(params, window)
            continue
        ids = ckpt.vocab.encode(tokenize(text))
        if ids.size == 0:
            print(f"warning: line {lineno}: no tokens, skipped", file=err, flush=True)
            continue
        probs, weights, state = stream_step(params, state, ids)
        p = probs.data
        w = None if weights is None else weights.data
        out.write(format_stream_line(names[int(np.argmax(p))], p, w) + "\n")
        out.flush()
    return EXIT_OK


def cmd_infer_stream(args, out: TextIO) -> int:
    ckpt = _load_checkpoint(args)
    stdin = sys.stdin.buffer if hasattr(sys.stdin, "buffer") else sys.stdin
    return run_stream(ckpt, stdin, out, sys.stderr, args.window)


# -- attn-dump ---------------------------------------------------------------


def _truncate(text: str, width: int = DUMP_TEXT_WIDTH) -> str:
    return text if len(text) <= width else text[:width].rstrip() + " ..."


def attention_table(ckpt: Checkpoint, dialog: RawDialog, window: int | None = None) -> str:
    """Comma-separated weights table: one row per utterance, newest position last."""
    params = ckpt.params
    if params.config.architecture == "bilstm":
        raise CommandError("the bilstm architecture has no attention weights")
    enc = encode(dialog, ckpt.vocab, ckpt.emotions)
    if len(enc) == 0:
        raise CommandError(f"dialog {dialog.dialog_id} has no classifiable utterances")
    if window is None:
        window = params.config.window
    width = len(enc) if window is None else window
    pred = predict_dialog(params, enc, window)
    names = ckpt.emotions.names
    header = ["utterance"] + [f"t-{k}" if k else "t" for k in range(width - 1, -1, -1)] + ["predicted", "gold"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for s, row in enumerate(pred.trace.rows):
        cells = [""] * width
        for pos, w in zip(pred.trace.positions(s), row):
            cells[width - 1 - (s - pos)] = f"{w:.2f}"
        gold = names[enc.labels[s]] if enc.labels[s] >= 0 else ""
        writer.writerow([_truncate(enc.texts[s])] + cells + [names[pred.labels[s]], gold])
    return buf.getvalue()


def cmd_attn_dump(args, out: TextIO) -> int:
    ckpt = _load_checkpoint(args)
    dialogs = {d.dialog_id: d for d in load_dialogs(_corpus_path(args))}
    if args.dialog_id not in dialogs:
        raise CommandError(f"dialog {args.dialog_id!r} is not in the corpus")
    table = attention_table(ckpt, dialogs[args.dialog_id], args.window)
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(table)
    else:
        out.write(table)
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sern", description="Dialog emotion recognition with causal self-attention.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def corpus_flag(p):
        p.add_argument("--corpus", help=f"corpus file or raw directory (default $%s/{CORPUS_NAME})" % DATA_DIR_ENV)

    def checkpoint_flag(p):
        p.add_argument("--checkpoint", help=f"checkpoint path (default $%s/{CHECKPOINT_NAME})" % DATA_DIR_ENV)

    p = sub.add_parser("ingest", help="convert a transcript directory into a corpus file")
    p.add_argument("raw_dir", nargs="?", help="IEMOCAP release or generic dialog directory (default: bundled sample)")
    p.add_argument("-o", "--output", help="corpus file to write (default: --corpus)")
    corpus_flag(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model and save its best checkpoint")
    corpus_flag(p)
    checkpoint_flag(p)
    p.add_argument("--regime", type=int, choices=(4, 5, 6), default=6)
    p.add_argument("--architecture", choices=ARCHITECTURES, default="sern")
    p.add_argument("--score", choices=SCORE_KINDS, default="dot")
    p.add_argument("--window", type=_positive_int, default=None)
    p.add_argument("--classifier-input", choices=CLASSIFIER_INPUTS, default="context")
    p.add_argument("--d-emb", type=_positive_int, default=100)
    p.add_argument("--d-lstm", type=_positive_int, default=128)
    p.add_argument("--d-gru", type=_positive_int, default=128)
    p.add_argument("--d-attn", type=_positive_int, default=64)
    p.add_argument("--seed", type=_non_negative_int, default=0)
    p.add_argument("--lr", type=_positive_float, default=5e-3)
    p.add_argument("--eps", type=_positive_float, default=1e-8)
    p.add_argument("--epochs", type=_positive_int, default=50)
    p.add_argument("--patience", type=_non_negative_int, default=10, help="0 disables early stopping")
    p.add_argument("--min-frequency", type=_positive_int, default=5)
    p.add_argument("--holdout", help="session held out as test data (default: the last session)")
    p.add_argument("--validation-fraction", type=_fraction, default=0.07)
    p.add_argument("--pretrain-epochs", type=_non_negative_int, default=0, help="skip-gram epochs before training")
    p.add_argument("--log", help="training log path (default: checkpoint path + .log)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split of its corpus")
    checkpoint_flag(p)
    corpus_flag(p)
    p.add_argument("--split", choices=("train", "validation", "test", "all"), default="test")
    p.add_argument("--predictions", help="also write per-utterance predictions (tab separated)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer-stream", help="classify utterances read line by line from stdin")
    checkpoint_flag(p)
    p.add_argument("--window", type=_positive_int, default=None)
    p.set_defaults(func=cmd_infer_stream)

    p = sub.add_parser("attn-dump", help="write one dialog's attention weights as CSV")
    checkpoint_flag(p)
    corpus_flag(p)
    p.add_argument("--dialog-id", required=True)
    p.add_argument("--window", type=_positive_int, default=None)
    p.add_argument("-o", "--output", help="CSV file (default: stdout)")
    p.set_defaults(func=cmd_attn_dump)
    return parser


def main(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    out = out or sys.stdout
    try:
        return args.func(args, out)
    except TrainingDiverged as exc:
        print(f"sern: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except IngestError as exc:
        for problem in exc.problems:
            print(f"sern: {problem}", file=sys.stderr)
        return EXIT_ERROR
    except (CommandError, OSError) as exc:
        print(f"sern: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
