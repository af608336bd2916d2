"""Evaluation commands: eval-retrieval, eval-classify, eval-ctrlbench."""

from __future__ import annotations

import argparse
import logging

from abc_embed.commands import deps
from abc_embed.core.checkpoint import checkpoint_store
from abc_embed.evaluation.suite import (
    DEFAULT_TEMPLATE,
    build_classification_task,
    eval_classification,
    eval_ctrlbench,
    eval_retrieval,
)
from abc_embed.models.enums import CtrlBenchMode, Direction, Split

logger = logging.getLogger(__name__)


def _echo(args: argparse.Namespace, **extra) -> dict:
    return {"data": args.data, "model": args.model, "use_lora": not args.no_lora, **extra}


def retrieval(args: argparse.Namespace) -> None:
    """Image→text and text→image recall on one split."""
    params = checkpoint_store.load(args.model)
    corpus = deps.open_corpus(args.data)
    split = Split(args.split)
    for direction in Direction:
        result = eval_retrieval(params, corpus, direction, args.ks, split=split, use_lora=not args.no_lora)
        deps.write_eval(args.out, result, args.dump_ranks)
    deps.write_run_metadata(args.out, args.command, *args.started, seed=params.seed, config=_echo(args, split=split.value, ks=args.ks))


def classify(args: argparse.Namespace) -> None:
    """Template classification over one aspect's values."""
    params = checkpoint_store.load(args.model)
    corpus = deps.open_corpus(args.data)
    images = corpus.image_ids(Split(args.split))
    if args.max_images:
        images = images[: args.max_images]
    task = build_classification_task(corpus, args.aspect, images)
    result = eval_classification(params, corpus, task, args.template, use_lora=not args.no_lora)
    deps.write_eval(args.out, result, args.dump_ranks)
    deps.write_run_metadata(
        args.out,
        args.command,
        *args.started,
        seed=params.seed,
        config=_echo(args, aspect=args.aspect, template=args.template, split=args.split, n_labels=len(task.labels)),
    )


def ctrlbench(args: argparse.Namespace) -> None:
    """Instructed and blind runs, each against the global and the within-image pool."""
    params = checkpoint_store.load(args.model)
    corpus = deps.open_corpus(args.data)
    for mode in CtrlBenchMode:
        ks = args.ks if mode == CtrlBenchMode.GLOBAL else [1]
        for use_instructions in (True, False):
            result = eval_ctrlbench(
                params,
                corpus,
                use_instructions=use_instructions,
                mode=mode,
                ks=ks,
                use_lora=not args.no_lora,
            )
            deps.write_eval(args.out, result, args.dump_ranks)
    deps.write_run_metadata(args.out, args.command, *args.started, seed=params.seed, config=_echo(args, ks=args.ks))


def register(subparsers: argparse._SubParsersAction, common: argparse.ArgumentParser) -> None:
    evaluation = argparse.ArgumentParser(add_help=False)
    evaluation.add_argument("--model", required=True, help="checkpoint to evaluate")
    evaluation.add_argument("--out", required=True, help="report directory")
    evaluation.add_argument("--no-lora", action="store_true", help="disable the adapter")
    evaluation.add_argument("--dump-ranks", action="store_true", help="write ranks.jsonl")
    evaluation.add_argument("--ks", type=int, nargs="+", default=[1, 5, 10], help="recall cut-offs")

    parser = subparsers.add_parser("eval-retrieval", parents=[common, evaluation], help="R@K both directions")
    parser.add_argument("--split", choices=[s.value for s in (Split.TRAIN, Split.VAL, Split.BENCH)], default="bench")
    parser.set_defaults(handler=retrieval)

    parser = subparsers.add_parser("eval-classify", parents=[common, evaluation], help="template classification")
    parser.add_argument("--aspect", type=int, default=0)
    parser.add_argument("--template", default=DEFAULT_TEMPLATE)
    parser.add_argument("--split", choices=[s.value for s in (Split.TRAIN, Split.VAL, Split.BENCH)], default="bench")
    parser.add_argument("--max-images", type=int, help="classify only the first N images of the split")
    parser.set_defaults(handler=classify)

    parser = subparsers.add_parser("eval-ctrlbench", parents=[common, evaluation], help="instruction-controlled retrieval")
    parser.set_defaults(handler=ctrlbench)
