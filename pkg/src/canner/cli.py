"""Command-line interface: train, tag, eval, attn, gen, gradcheck.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure. Logs go to stderr; artifacts are written to files via a temp file
plus atomic rename. Config precedence: built-in defaults < --config file
< explicit command-line flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import corpus as corpus_mod
from .config import ARCHS, ConfigError, ModelConfig
from .corpus import DataFormatError, Sentence, gen_synthetic, parse_conll, score, write_conll
from .model import CheckpointError, Model, train
from .numerics import NumericsError, check_gradients

log = logging.getLogger("canner")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _apply_seg_mode(sentences, mode: str):
    if mode == "all-s":
        return [s.with_all_single_seg() for s in sentences]
    return [s if s.seg is not None else s.with_all_single_seg() for s in sentences]


_CONFIG_FLAGS = {
    "arch": str, "d_ch": int, "d_h": int, "k": int, "lr": float, "rho": float,
    "eps": float, "epochs": int, "batch_size": int, "seed": int,
    "mask_window_pads": bool, "constrained_decode": bool, "freeze_embeddings": bool,
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="JSON file with ModelConfig fields")
    p.add_argument("--arch", choices=ARCHS, default=None)
    p.add_argument("--d-ch", type=int, default=None, dest="d_ch")
    p.add_argument("--d-h", type=int, default=None, dest="d_h")
    p.add_argument("--window-size", type=int, default=None, dest="k")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mask-window-pads", action="store_const", const=True,
                   default=None, dest="mask_window_pads")
    p.add_argument("--constrained-decode", action="store_const", const=True,
                   default=None, dest="constrained_decode")
    p.add_argument("--freeze-embeddings", action="store_const", const=True,
                   default=None, dest="freeze_embeddings")


def _build_config(args) -> ModelConfig:
    fields = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            fields.update(json.load(f))
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            fields[name] = value
    return ModelConfig.from_dict(fields)


def _format_history(history) -> str:
    lines = []
    for row in history:
        parts = [f"epoch={row['epoch']}", f"loss={row['loss']:.10g}",
                 f"grad_norm={row['grad_norm']:.10g}"]
        if "train_f1" in row:
            parts.append(f"train_f1={row['train_f1']:.6g}")
        if "dev_f1" in row:
            parts.append(f"dev_f1={row['dev_f1']:.6g}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    config = _build_config(args)
    train_sents = _apply_seg_mode(parse_conll(args.train), args.seg_mode)
    dev_sents = None
    if args.dev:
        dev_sents = _apply_seg_mode(parse_conll(args.dev), args.seg_mode)
    result = train(
        train_sents, config, dev_sentences=dev_sents,
        embeddings_path=args.embeddings,
    )
    result.model.save(args.model_out, include_optimizer=args.save_optimizer)
    if args.metrics_out:
        _atomic_write_text(args.metrics_out, _format_history(result.history))
    if dev_sents:
        final = max(r["dev_f1"] for r in result.history)
        log.info("best dev F1: %.2f (epoch %s)", final, result.best_epoch)
        print(f"dev_f1={final:.2f}")
    return EXIT_OK


def cmd_tag(args) -> int:
    model = Model.load(args.model)
    sentences = _apply_seg_mode(parse_conll(args.input), args.seg_mode)
    tags = [model.predict(s) for s in sentences]
    lines = []
    for s, t in zip(sentences, tags):
        for ch, tag in zip(s.chars, t):
            lines.append(f"{ch}\t{tag}")
        lines.append("")
    _atomic_write_text(args.output, "\n".join(lines) + "\n" if lines else "")
    return EXIT_OK


def cmd_eval(args) -> int:
    gold = parse_conll(args.gold)
    pred = parse_conll(args.pred)
    if len(gold) != len(pred):
        raise DataFormatError(
            f"{len(gold)} gold sentences but {len(pred)} predicted sentences"
        )
    pred_tags = []
    for i, (g, p) in enumerate(zip(gold, pred)):
        if g.chars != p.chars:
            raise DataFormatError(f"sentence {i}: character mismatch between gold and pred")
        if p.gold is None:
            raise DataFormatError(f"sentence {i}: prediction file has no tag column")
        pred_tags.append(p.gold)
    grouping = None
    if args.groups:
        with open(args.groups, "r", encoding="utf-8") as f:
            grouping = json.load(f)
    report = score(gold, pred_tags, grouping=grouping)
    print(report.to_json() if args.json else report.to_text())
    return EXIT_OK


def cmd_attn(args) -> int:
    model = Model.load(args.model)
    sentences = _apply_seg_mode(parse_conll(args.input), args.seg_mode)
    records = []
    for i, s in enumerate(sentences):
        trace = model.attention_trace(s, sentence_id=i)
        k = model.config.k
        records.append(json.dumps({
            "id": i,
            "chars": list(s.chars),
            "window_offsets": list(range(-(k - 1) // 2, (k - 1) // 2 + 1)),
            "local": [[round(x, 12) for x in row] for row in trace.local.tolist()],
            "global": [[round(x, 12) for x in row] for row in trace.global_.tolist()],
        }, ensure_ascii=False, sort_keys=True))
    _atomic_write_text(args.output, "\n".join(records) + "\n" if records else "")
    return EXIT_OK


def cmd_gen(args) -> int:
    sentences = gen_synthetic(args.seed, args.n, entity_rate=args.entity_rate)
    lines = []
    for s in sentences:
        for j, ch in enumerate(s.chars):
            lines.append(f"{ch}\t{s.gold[j]}\t{s.seg[j]}")
        lines.append("")
    _atomic_write_text(args.output, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    corpus = gen_synthetic(args.seed, 2)
    config = ModelConfig(
        arch="can", d_ch=6, d_h=8, k=3, seed=args.seed,
        label_set=sorted({t for s in corpus for t in s.gold}),
    )
    model = Model(config, corpus_mod.build_vocab(corpus), config.label_set)
    # small random emissions-scale kick so transition gradients are nonzero
    for p in model.parameters():
        if p.name == "crf.trans":
            finite = np.isfinite(p.value)
            p.value[finite] += rng.uniform(-0.1, 0.1, size=int(finite.sum()))

    def loss_fn():
        total = model.loss_graph(corpus[0])
        for s in corpus[1:]:
            total = total + model.loss_graph(s)
        return total

    report = check_gradients(loss_fn, model.parameters(), tol=args.tol)
    print(report.summary())
    if not report.ok:
        log.error("gradient check failed for: %s", [e.name for e in report.failures])
        return EXIT_NUMERIC
    return EXIT_OK


def _build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="canner", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a CoNLL-style corpus")
    p.add_argument("--train", required=True, help="training file")
    p.add_argument("--dev", help="development file for model selection")
    p.add_argument("--model-out", required=True, dest="model_out")
    p.add_argument("--metrics-out", dest="metrics_out", help="per-epoch metrics log")
    p.add_argument("--embeddings", help="pretrained text embeddings ('count dim' header)")
    p.add_argument("--save-optimizer", action="store_true", dest="save_optimizer")
    p.add_argument("--seg-mode", choices=("auto", "all-s"), default="auto", dest="seg_mode")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tag", help="tag sentences with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seg-mode", choices=("auto", "all-s"), default="auto", dest="seg_mode")
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--groups", help="JSON map entity type -> rollup group")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attn", help="export attention traces as JSON lines")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seg-mode", choices=("auto", "all-s"), default="auto", dest="seg_mode")
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("gen", help="generate a synthetic labeled corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--entity-rate", type=float, default=0.35, dest="entity_rate")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, _UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, CheckpointError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
