"""Command-line entry points: train, eval, gradcheck, bench, ablation,
emit-masks, heatmap.

Exit codes: 0 success, 2 validation failure (bad configs or inputs),
1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import load_conllu, load_pairs
from .encoder import EncoderConfig
from .errors import MssanError, ValidationError
from .harness import (
    ablation_grid,
    bench,
    emit_heatmap,
    emit_masks,
    evaluate,
    gradcheck,
    thread_cap,
    train,
)
from .model import RunConfig, SentenceClassifier


def _load_examples(path: Path, task: str):
    if task == "pair":
        return load_pairs(path)
    return load_conllu(path)


def _load_data(data_path: str, task: str):
    """A .conllu file, or a directory with train.conllu and optional test.conllu."""
    p = Path(data_path)
    if p.is_dir():
        train_file = p / "train.conllu"
        if not train_file.exists():
            raise ValidationError(f"{p}: no train.conllu found")
        test_file = p / "test.conllu"
        test = _load_examples(test_file, task) if test_file.exists() else None
        return _load_examples(train_file, task), test
    if not p.exists():
        raise ValidationError(f"{p}: no such file")
    return _load_examples(p, task), None


def _sentence_at(path: str, index: int):
    sentences = load_conllu(path)
    if not 0 <= index < len(sentences):
        raise ValidationError(f"{path}: sentence index {index} out of range")
    return sentences[index]


def _cmd_train(args) -> int:
    config = RunConfig.from_json(args.config)
    corpus, test = _load_data(args.data, config.task)
    _, metrics = train(config, corpus, test_corpus=test, out_dir=args.out, log=print)
    final = metrics.final_test_accuracy
    print(f"final test accuracy: {final:.4f}" if final is not None else "no test split")
    print(f"checkpoint written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = SentenceClassifier.load(args.checkpoint)
    examples, _ = _load_data(args.data, model.config.task)
    print(f"accuracy: {evaluate(model, examples):.4f}")
    return 0


def _cmd_gradcheck(args) -> int:
    if args.config:
        config = RunConfig.from_json(args.config)
    else:
        config = RunConfig(
            encoder=EncoderConfig(d_e=8, n_heads=2, d_h=16, distance_cycle=("word",)),
            seed=args.seed,
        )
    report, passed = gradcheck(config, seed=args.seed)
    for name, err in report:
        print(f"{'PASS' if err < 1e-3 else 'FAIL'} {name}: {err:.3e}")
    print(f"gradcheck {'passed' if passed else 'FAILED'} over {len(report)} parameters")
    return 0 if passed else 1


def _cmd_bench(args) -> int:
    result = bench(
        args.variant,
        d_e=args.d_e,
        length=args.len,
        batch_size=args.batch,
        n_batches=args.batches,
    )
    print(json.dumps(result, indent=2))
    return 0


def _cmd_ablation(args) -> int:
    config = RunConfig.from_json(args.config)
    corpus, _ = _load_data(args.data, config.task)
    out_path = Path(args.out) if args.out else None
    if out_path is not None and out_path.is_dir():
        out_path = out_path / "ablation.csv"
    ablation_grid(config, corpus, out_path=out_path, log=print)
    if out_path is not None:
        print(f"table written to {out_path}")
    return 0


def _cmd_emit_masks(args) -> int:
    config = EncoderConfig.from_json(args.config)
    sent = _sentence_at(args.sentence_file, args.index)
    for path in emit_masks(config, sent, args.out):
        print(path)
    return 0


def _cmd_heatmap(args) -> int:
    model = SentenceClassifier.load(args.checkpoint)
    sent = _sentence_at(args.sentence_file, args.index)
    for path in emit_heatmap(model, sent, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mssan", description="structure-prior attention sentence encoder"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("gradcheck", help="compare analytic and numeric gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default="")
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("bench", help="time training steps for one variant")
    p.add_argument("--variant", choices=("mssan", "mssan_sep"), required=True)
    p.add_argument("--d_e", type=int, default=300)
    p.add_argument("--len", type=int, default=25)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--batches", type=int, default=50)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("ablation", help="run the prior on/off grid")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="")
    p.set_defaults(fn=_cmd_ablation)

    p = sub.add_parser("emit-masks", help="write per-head mask CSVs for a sentence")
    p.add_argument("--sentence-file", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="masks_out")
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(fn=_cmd_emit_masks)

    p = sub.add_parser("heatmap", help="write per-head attention weight files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sentence-file", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(fn=_cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        thread_cap()
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MssanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
