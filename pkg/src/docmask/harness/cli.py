"""Command-line entry point: ``docmask <command> [flags]``.

Any flag may also come from ``--config FILE`` (YAML or JSON, keys spelled
like the flags with dashes or underscores); flags on the command line win.
Exit codes: 0 success, 1 config error, 2 data error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .. import config as model_presets
from ..docmodel import GeneratorStyle, Vocabulary, encode_document, generate_corpus, read_corpus, write_corpus
from ..errors import ConfigError, DataError, NumericError
from ..heads import TASK_KINDS
from ..masking import MaskingConfig, build_plan
from ..metrics import evaluate_dumps, write_report
from ..objectives import ObjectiveSwitches
from .gradcheck import gradcheck
from .training import RunConfig, evaluate, finetune, pretrain

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--preset", default="desk", choices=sorted(model_presets.PRESETS))
    for flag, typ in (("--layers", int), ("--heads", int), ("--hidden", int), ("--ffn-inner", int),
                      ("--max-text-len", int), ("--image-size", int), ("--patch-size", int),
                      ("--channels", int), ("--text-vocab-size", int), ("--image-vocab-size", int),
                      ("--alpha", float)):
        g.add_argument(flag, type=typ)


def _masking_flags(p):
    g = p.add_argument_group("masking")
    g.add_argument("--text-ratio", type=float, default=0.30)
    g.add_argument("--image-ratio", type=float, default=0.40)
    g.add_argument("--span-lambda", type=float, default=3.0)
    g.add_argument("--span-max", type=int, default=10)
    g.add_argument("--min-block", type=int, default=4)
    g.add_argument("--all-mask", action="store_true", help="replace every masked token with [MASK]")


def _train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--seed", type=int)
    g.add_argument("--corpus")
    g.add_argument("--out-dir", default="runs/default")
    g.add_argument("--steps", type=int, default=500)
    g.add_argument("--batch-size", type=int, default=8)
    g.add_argument("--accum-steps", type=int, default=1)
    g.add_argument("--lr", type=float, default=1e-4)
    g.add_argument("--warmup-frac", type=float, default=0.048)
    g.add_argument("--decay", choices=("linear", "constant"), default="linear")
    g.add_argument("--weight-decay", type=float, default=1e-2)
    g.add_argument("--checkpoint-every", type=int, default=0)
    g.add_argument("--precision", choices=("float32", "float64"), default="float32")
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--init-checkpoint")


def build_parser() -> dict[str, argparse.ArgumentParser]:
    parser = _Parser(prog="docmask", description="Masked text-and-image document pre-training and fine-tuning.")
    parser.add_argument("--config", help="YAML/JSON file supplying flag values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen-corpus", help="write a synthetic corpus")
    gen.add_argument("--out", required=False)
    gen.add_argument("--n", type=int, default=32)
    gen.add_argument("--start-seed", type=int, default=0)
    gen.add_argument("--image-format", choices=("ppm", "lfimg"), default="ppm")
    gen.add_argument("--page-width", type=int, default=GeneratorStyle.page_width)
    gen.add_argument("--page-height", type=int, default=GeneratorStyle.page_height)
    gen.add_argument("--doc-classes", type=int, default=GeneratorStyle.num_doc_classes)

    pre = sub.add_parser("pretrain", help="pre-train with MLM/MIM/WPA")
    _model_flags(pre)
    _masking_flags(pre)
    _train_flags(pre)
    pre.add_argument("--objectives", default="mlm+mim+wpa", help="e.g. mlm, mlm+mim, mlm+mim+wpa")

    ft = sub.add_parser("finetune", help="train a task head")
    _model_flags(ft)
    _train_flags(ft)
    ft.add_argument("--task", choices=TASK_KINDS, default="token-label")
    ft.add_argument("--head-shape", choices=("linear", "mlp"), default="linear")
    ft.add_argument("--max-answer-len", type=int, default=30)
    ft.add_argument("--fresh-init", action="store_true")
    ft.add_argument("--eval-corpus")

    ev = sub.add_parser("evaluate", help="score a fine-tuned checkpoint or a prediction dump")
    ev.add_argument("--checkpoint")
    ev.add_argument("--corpus")
    ev.add_argument("--out-dir", default="runs/eval")
    ev.add_argument("--precision", choices=("float32", "float64"), default="float32")
    ev.add_argument("--predictions")
    ev.add_argument("--gold")
    ev.add_argument("--report")

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check on the tiny model")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--out")

    ip = sub.add_parser("inspect-plan", help="dump the masking plan for one document")
    _model_flags(ip)
    _masking_flags(ip)
    ip.add_argument("--corpus")
    ip.add_argument("--doc", type=int, default=0, help="record index in the corpus")
    ip.add_argument("--seed", type=int, default=0)

    return {"": parser, **sub.choices}


def _load_config_file(path: str) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse config file {path}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def parse_args(argv: list[str]) -> argparse.Namespace:
    parsers = build_parser()
    args = parsers[""].parse_args(argv)
    if args.config:
        values = _load_config_file(args.config)
        sub = parsers[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown keys in {args.config}: {sorted(unknown)}")
        sub.set_defaults(**values)
        args = parsers[""].parse_args(argv)
    return args


def model_config_from(args) -> model_presets.ModelConfig:
    cfg = model_presets.preset(args.preset)
    changes = {}
    for key in ("layers", "heads", "hidden", "ffn_inner", "max_text_len", "patch_size",
                "channels", "text_vocab_size", "image_vocab_size", "alpha"):
        v = getattr(args, key, None)
        if v is not None:
            changes[key] = v
    if getattr(args, "image_size", None) is not None:
        changes["image_height"] = changes["image_width"] = args.image_size
    return cfg.with_(**changes) if changes else cfg


def masking_config_from(args) -> MaskingConfig:
    kw = dict(text_ratio=args.text_ratio, image_ratio=args.image_ratio, span_lambda=args.span_lambda,
              span_max=args.span_max, min_block_patches=args.min_block)
    return MaskingConfig.all_mask(**kw) if args.all_mask else MaskingConfig(**kw)


def run_config_from(args, **extra) -> RunConfig:
    if args.seed is None:
        raise ConfigError("--seed is required for training commands")
    return RunConfig(
        seed=args.seed,
        corpus=args.corpus,
        out_dir=args.out_dir,
        model=model_config_from(args),
        batch_size=args.batch_size,
        accum_steps=args.accum_steps,
        total_steps=args.steps,
        peak_lr=args.lr,
        warmup_frac=args.warmup_frac,
        decay=args.decay,
        weight_decay=args.weight_decay,
        checkpoint_every=args.checkpoint_every,
        precision=args.precision,
        threads=args.threads,
        init_checkpoint=args.init_checkpoint,
        **extra,
    )


def cmd_gen_corpus(args) -> None:
    if not args.out:
        raise ConfigError("--out is required")
    style = GeneratorStyle(page_width=args.page_width, page_height=args.page_height,
                           num_doc_classes=args.doc_classes)
    docs = generate_corpus(args.n, style, start_seed=args.start_seed)
    write_corpus(docs, args.out, args.image_format)
    print(f"wrote {len(docs)} documents to {args.out}")


def cmd_pretrain(args) -> None:
    try:
        switches = ObjectiveSwitches.parse(args.objectives)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    run = run_config_from(args, masking=masking_config_from(args), objectives=switches)
    result = pretrain(run)
    last = result.log_lines[-1] if len(result.log_lines) > 1 else "(no steps)"
    print(f"checkpoint {result.checkpoint}")
    print(f"last log line: {last}")


def cmd_finetune(args) -> None:
    run = run_config_from(args, task=args.task, head_shape=args.head_shape,
                          max_answer_len=args.max_answer_len, fresh_init=args.fresh_init,
                          eval_corpus=args.eval_corpus)
    result = finetune(run)
    print(f"checkpoint {result.checkpoint}")
    print(result.report.line())


def cmd_evaluate(args) -> None:
    if args.predictions or args.gold:
        if not (args.predictions and args.gold):
            raise ConfigError("--predictions and --gold go together")
        reports = evaluate_dumps(args.predictions, args.gold)
        if args.report:
            write_report(reports, args.report)
    else:
        run = RunConfig(seed=0, corpus=args.corpus, out_dir=args.out_dir,
                        checkpoint=args.checkpoint, precision=args.precision)
        reports = [evaluate(run)]
    for r in reports:
        print(r.line())


def cmd_gradcheck(args) -> None:
    report = gradcheck(seed=args.seed)
    for line in report.lines():
        print(line)
    verdict = "PASS" if report.passed(args.tolerance) else "FAIL"
    print(f"gradcheck\t{verdict}\ttolerance={args.tolerance:g}")
    if args.out:
        Path(args.out).write_text(json.dumps({
            "max_rel_err": report.max_rel_err,
            "checked": report.checked,
            "dead_param_loss_diff": report.dead_param_loss_diff,
            "linearity_max_abs_diff": report.linearity_max_abs_diff,
            "worst": report.worst,
        }, indent=2))


def cmd_inspect_plan(args) -> None:
    if not args.corpus:
        raise ConfigError("--corpus is required")
    docs = list(read_corpus(args.corpus))
    if not 0 <= args.doc < len(docs):
        raise DataError(f"document index {args.doc} outside corpus of {len(docs)}")
    cfg = model_config_from(args)
    vocab = Vocabulary.build((w for d in docs for w in d.words), max_size=cfg.text_vocab_size)
    enc = encode_document(docs[args.doc], cfg, vocab)
    plan = build_plan(enc, masking_config_from(args), np.random.default_rng(args.seed),
                      len(vocab), cfg.image_vocab_size)
    print(plan.to_json())


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "inspect-plan": cmd_inspect_plan,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
