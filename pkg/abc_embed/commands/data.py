"""Corpus commands: gen-world, validate, mine."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from abc_embed.commands import deps
from abc_embed.core.checkpoint import checkpoint_store
from abc_embed.core.config import settings
from abc_embed.core.errors import CorpusError
from abc_embed.data.corpus import generate_ctrlbench, generate_world, save_corpus, validate_corpus
from abc_embed.data.mining import audit_mined, build_mined_dataset
from abc_embed.schemas.config import MiningConfig, WorldConfig

logger = logging.getLogger(__name__)

MINED_FILE = "mined.jsonl"
VALIDATE_DIR = "validate"


def gen_world(args: argparse.Namespace) -> None:
    """Generate the synthetic world and, when bench images exist, the benchmark.

    Args:
        args: Parsed flags (--config, --out, --seed)
    """
    config = deps.load_config(args.config, WorldConfig, seed=args.seed)
    corpus = generate_world(config)
    if config.n_bench_images:
        corpus.bench = generate_ctrlbench(corpus, config.n_bench_images, config.bench_pairs_per_image)
    written = save_corpus(corpus, args.out)
    logger.info("wrote %s", ", ".join(p.name for p in written))
    deps.write_run_metadata(args.out, args.command, *args.started, seed=config.seed, config=config)


def validate(args: argparse.Namespace) -> None:
    """Re-check a corpus directory (and optionally a mined file).

    Raises:
        CorpusError: At the first violation, naming file and line
    """
    data_dir = Path(args.data or settings.DATA_DIR)
    echo = {"data": str(data_dir), "mined": args.mined}
    report = validate_corpus(data_dir)
    if report.ok and args.mined:
        config = deps.load_config(args.config, MiningConfig)
        echo["epsilon"] = config.epsilon
        report = audit_mined(args.mined, config.epsilon)

    out = args.out or (data_dir if data_dir.is_dir() else Path(settings.RUNS_DIR)) / VALIDATE_DIR
    status = "ok" if report.ok else "failed"
    deps.write_run_metadata(out, args.command, *args.started, config=echo, status=status, outcome=report.model_dump())
    if not report.ok:
        raise CorpusError(report.violation or "invalid", file=report.file, line=report.line)
    logger.info("corpus OK: %s", data_dir)


def mine(args: argparse.Namespace) -> None:
    """Score the corpus with a bootstrap checkpoint and write mined.jsonl."""
    config = deps.load_config(args.config, MiningConfig, seed=args.seed)
    corpus = deps.open_corpus(args.data)
    params = checkpoint_store.load(args.model)
    dataset = build_mined_dataset(params, corpus, config, allow_fewer=args.allow_fewer)

    out = Path(args.out)
    target = out if out.suffix else out / MINED_FILE
    dataset.save(target)
    logger.info("mined %d records into %s", len(dataset), target)
    deps.write_run_metadata(args.out, args.command, *args.started, seed=config.seed, config=config)


def register(subparsers: argparse._SubParsersAction, common: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser("gen-world", parents=[common], help="generate the synthetic corpus")
    parser.add_argument("--out", default=settings.DATA_DIR, help="corpus directory")
    parser.set_defaults(handler=gen_world)

    parser = subparsers.add_parser("validate", parents=[common], help="check corpus invariants")
    parser.add_argument("--mined", help="also audit this mined.jsonl")
    parser.add_argument("--out", help="directory for run.json (default <data>/validate)")
    parser.set_defaults(handler=validate)

    parser = subparsers.add_parser("mine", parents=[common], help="mine hard negatives")
    parser.add_argument("--model", required=True, help="bootstrap checkpoint")
    parser.add_argument("--out", required=True, help="mined.jsonl path or directory")
    parser.add_argument("--allow-fewer", action="store_true", help="accept fewer than k negatives")
    parser.set_defaults(handler=mine)
