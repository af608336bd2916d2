"""Training commands: bootstrap, pretrain, finetune."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Callable

from abc_embed.commands import deps
from abc_embed.core.checkpoint import checkpoint_store
from abc_embed.core.errors import DivergenceError
from abc_embed.data.mining import MinedDataset
from abc_embed.models.enums import Stage
from abc_embed.schemas.config import TrainConfig
from abc_embed.schemas.reports import RunMetrics
from abc_embed.training.trainer import TrainResult, run_bootstrap, run_stage1, run_stage2

logger = logging.getLogger(__name__)


def load_train_config(args: argparse.Namespace, stage: Stage, **overrides) -> TrainConfig:
    """Stage config from --config, the full-scale preset and flag overrides."""
    preset = deps.full_scale_preset(stage) if args.full_scale else {}
    if args.full_scale:
        logger.warning("full-scale preset loaded for stage %s; expect a long run", stage.value)
    data = {**preset, **deps.read_config_file(args.config), "stage": stage}
    data.update((k, v) for k, v in {"seed": args.seed, **overrides}.items() if v is not None)
    return deps.validate_config(TrainConfig, data)


def _outcome(metrics: RunMetrics) -> dict[str, bool]:
    return {"diverged": metrics.diverged, "tau_floor_hit": metrics.tau_floor_hit}


def _train(args: argparse.Namespace, config: TrainConfig, run: Callable[[], TrainResult]) -> None:
    """Run a stage and write its artifacts; a diverged run still leaves metrics and run.json."""
    out = Path(args.out)
    try:
        result = run()
    except DivergenceError as e:
        if e.metrics is not None:
            deps.write_metrics(out, e.metrics)
        outcome = _outcome(e.metrics) if e.metrics is not None else {"diverged": True}
        deps.write_run_metadata(
            out, args.command, *args.started, seed=config.seed, config=config, status="diverged", outcome=outcome
        )
        raise
    _save(args, config, result)


def _save(args: argparse.Namespace, config: TrainConfig, result: TrainResult) -> None:
    out = Path(args.out)
    digest = checkpoint_store.save(result.params, out / deps.CHECKPOINT_FILE)
    deps.write_metrics(out, result.metrics)
    final = result.metrics.final
    if final is not None:
        logger.info("final loss %.4f, tau %.4f, val_acc %s", final.loss, final.tau, result.metrics.final_val_acc)
    logger.info("checkpoint sha256 %s", digest)
    status = "diverged" if result.metrics.diverged else "ok"
    deps.write_run_metadata(
        out, args.command, *args.started, seed=config.seed, config=config, status=status, outcome=_outcome(result.metrics)
    )


def bootstrap(args: argparse.Namespace) -> None:
    """Train the in-batch-negative model used for mining."""
    config = load_train_config(args, Stage.BOOTSTRAP)
    corpus = deps.open_corpus(args.data)
    _train(args, config, lambda: run_bootstrap(config, corpus))


def pretrain(args: argparse.Namespace) -> None:
    """Stage 1: mined-negative contrastive pretraining."""
    config = load_train_config(args, Stage.STAGE1, init_checkpoint=args.init)
    corpus = deps.open_corpus(args.data)
    mined = MinedDataset.load(args.mined)
    _train(args, config, lambda: run_stage1(config, corpus, mined))


def finetune(args: argparse.Namespace) -> None:
    """Stage 2: instruction fine-tuning on the fused stage-1 model."""
    config = load_train_config(args, Stage.STAGE2, stage1_checkpoint=args.model)
    corpus = deps.open_corpus(args.data)
    _train(args, config, lambda: run_stage2(config, corpus))


def register(subparsers: argparse._SubParsersAction, common: argparse.ArgumentParser) -> None:
    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--out", required=True, help="run directory")
    train.add_argument(
        "--paper-scale", "--full-scale", dest="full_scale", action="store_true", help="load the full-scale preset"
    )

    parser = subparsers.add_parser("bootstrap", parents=[common, train], help="in-batch-negative bootstrap run")
    parser.set_defaults(handler=bootstrap)

    parser = subparsers.add_parser("pretrain", parents=[common, train], help="stage 1 with mined negatives")
    parser.add_argument("--mined", required=True, help="mined.jsonl")
    parser.add_argument("--init", help="bootstrap checkpoint to start from")
    parser.set_defaults(handler=pretrain)

    parser = subparsers.add_parser("finetune", parents=[common, train], help="stage 2 instruction fine-tune")
    parser.add_argument("--model", help="stage-1 checkpoint (overrides stage1_checkpoint)")
    parser.set_defaults(handler=finetune)
