"""Experiment commands: exp-tau, exp-tau-init, exp-arch, exp-scaling."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from abc_embed.commands import deps
from abc_embed.core.checkpoint import checkpoint_store
from abc_embed.data.mining import MinedDataset
from abc_embed.schemas.config import ExperimentConfig
from abc_embed.schemas.reports import ExperimentReport
from abc_embed.training.experiments import (
    run_arch_ablation,
    run_scaling_experiment,
    run_tau_experiment,
    run_tau_init_experiment,
)

logger = logging.getLogger(__name__)


def _write_report(out: Path, report: ExperimentReport) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / deps.REPORT_FILE).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    for label, metrics in report.trajectories.items():
        deps.write_metrics(out / label, metrics)
    for row in report.rows:
        logger.info("%s", row)
    for note in report.notes:
        logger.info("note: %s", note)


def experiment(args: argparse.Namespace) -> None:
    """Run one experiment harness and write its report plus per-run metrics."""
    config = deps.load_config(args.config, ExperimentConfig, seeds=[args.seed] if args.seed is not None else None)
    corpus = deps.open_corpus(args.data)
    mined = MinedDataset.load(args.mined)
    init = checkpoint_store.load(args.init) if args.init else None

    if args.command == "exp-tau":
        report = run_tau_experiment(config, corpus, mined, init)
    elif args.command == "exp-tau-init":
        report = run_tau_init_experiment(config, corpus, mined, init)
    elif args.command == "exp-arch":
        report = run_arch_ablation(config, corpus, mined)
    else:
        report = run_scaling_experiment(config, corpus, mined, init)

    _write_report(Path(args.out), report)
    deps.write_run_metadata(args.out, args.command, *args.started, seed=config.seeds[0], config=config)


def register(subparsers: argparse._SubParsersAction, common: argparse.ArgumentParser) -> None:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--mined", required=True, help="mined.jsonl")
    shared.add_argument("--out", required=True, help="experiment directory")
    shared.add_argument("--init", help="bootstrap checkpoint to start stage-1 runs from")

    for name, help_text in (
        ("exp-tau", "mined vs random negatives: temperature dynamics"),
        ("exp-tau-init", "sweep of the initial temperature"),
        ("exp-arch", "attention mode x adapter rank ablation"),
        ("exp-scaling", "batch-size and step-count scaling"),
    ):
        parser = subparsers.add_parser(name, parents=[common, shared], help=help_text)
        parser.set_defaults(handler=experiment)
