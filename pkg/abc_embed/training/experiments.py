"""Experiment harnesses: temperature dynamics, architecture ablation, scaling.

Each harness runs isolated stage-1 trainings one after another and folds
their final metrics into an ``ExperimentReport``; full trajectories ride
along in ``report.trajectories`` keyed by run label.
"""

from __future__ import annotations

import logging
from typing import Any

from abc_embed.core.errors import ConfigError
from abc_embed.data.corpus import Corpus
from abc_embed.data.mining import MinedDataset
from abc_embed.models.encoder import EncoderParams
from abc_embed.models.enums import NegativeSource, Stage
from abc_embed.schemas.config import ExperimentConfig, TrainConfig
from abc_embed.schemas.reports import ExperimentReport, RunMetrics
from abc_embed.training.trainer import Stage1Trainer

logger = logging.getLogger(__name__)


def _stage1_config(config: ExperimentConfig, **update: Any) -> TrainConfig:
    merged = {**config.train.model_dump(), "stage": Stage.STAGE1, **update}
    return TrainConfig.model_validate(merged)


def _run(
    label: str,
    train: TrainConfig,
    corpus: Corpus,
    mined: MinedDataset,
    init: EncoderParams | None,
) -> RunMetrics:
    logger.info("experiment run %s", label)
    return Stage1Trainer(train, corpus, mined, init=init).run(raise_on_divergence=False).metrics


def _summary(metrics: RunMetrics) -> dict[str, Any]:
    final = metrics.final
    return {
        "steps_run": len(metrics.steps),
        "final_loss": final.loss if final else None,
        "final_tau": final.tau if final else None,
        "final_val_acc": metrics.final_val_acc,
        "diverged": metrics.diverged,
        "tau_floor_hit": metrics.tau_floor_hit,
    }


def run_tau_experiment(
    config: ExperimentConfig,
    corpus: Corpus,
    mined: MinedDataset,
    init: EncoderParams | None = None,
) -> ExperimentReport:
    """Paired runs per seed that differ only in where negatives come from.

    Returns:
        One row per (seed, negative source) plus the τ, loss and gradient-norm
        trajectories of every run
    """
    rows, trajectories = [], {}
    lower = 0
    for seed in config.seeds:
        finals = {}
        for source in (NegativeSource.MINED, NegativeSource.RANDOM):
            label = f"seed{seed}-{source.value}"
            metrics = _run(label, _stage1_config(config, seed=seed, negatives=source), corpus, mined, init)
            trajectories[label] = metrics
            finals[source] = metrics.final.tau if metrics.final else None
            rows.append({"seed": seed, "negatives": source.value, **_summary(metrics)})
        if None not in finals.values() and finals[NegativeSource.RANDOM] < finals[NegativeSource.MINED]:
            lower += 1
    notes = [f"final tau(random) < final tau(mined) in {lower} of {len(config.seeds)} seeds"]
    return ExperimentReport(name="tau", rows=rows, notes=notes, trajectories=trajectories)


def run_tau_init_experiment(
    config: ExperimentConfig,
    corpus: Corpus,
    mined: MinedDataset,
    init: EncoderParams | None = None,
) -> ExperimentReport:
    """Identical mined-negative runs differing only in the initial temperature."""
    seed = config.seeds[0]
    rows, trajectories = [], {}
    for tau_init in config.tau_inits:
        label = f"tau{tau_init:g}"
        metrics = _run(label, _stage1_config(config, seed=seed, tau_init=tau_init), corpus, mined, init)
        trajectories[label] = metrics
        norms = metrics.trajectory("grad_norm")
        rows.append(
            {
                "tau_init": tau_init,
                "seed": seed,
                "max_grad_norm": max(norms) if norms else None,
                "mean_grad_norm": sum(norms) / len(norms) if norms else None,
                **_summary(metrics),
            }
        )
    return ExperimentReport(name="tau-init", rows=rows, trajectories=trajectories)


def run_arch_ablation(
    config: ExperimentConfig,
    corpus: Corpus,
    mined: MinedDataset,
) -> ExperimentReport:
    """Attention mode × adapter rank grid at equal seed and step count.

    Every cell trains from scratch so that the attention mode takes effect
    from the first step.
    """
    seed = config.seeds[0]
    rows, trajectories = [], {}
    for mode in config.attn_modes:
        encoder = config.train.encoder.model_copy(update={"attn_mode": mode})
        for rank in config.lora_ranks:
            label = f"{mode.value}-r{rank}"
            train = _stage1_config(
                config,
                seed=seed,
                encoder=encoder.model_dump(),
                lora_rank=rank,
                lora_alpha=2.0 * rank,
                init_checkpoint=None,
            )
            metrics = _run(label, train, corpus, mined, None)
            trajectories[label] = metrics
            rows.append({"attn_mode": mode.value, "lora_rank": rank, **_summary(metrics)})
    return ExperimentReport(name="arch", rows=rows, trajectories=trajectories)


def run_scaling_experiment(
    config: ExperimentConfig,
    corpus: Corpus,
    mined: MinedDataset,
    init: EncoderParams | None = None,
) -> ExperimentReport:
    """Batch-size scaling at equal samples seen, plus a step-doubling series.

    The configured geometry is the large batch; the small one divides N and
    M by ``batch_scale`` and runs ``batch_scale`` times as many steps.

    Raises:
        ConfigError: If the two batch-scaling runs would see different sample counts
    """
    base = config.train
    scale = config.batch_scale
    seed = config.seeds[0]
    series: list[tuple[str, int, int, int]] = [
        ("batch", base.n_queries // scale, base.n_candidates // scale, base.steps * scale),
        ("batch", base.n_queries, base.n_candidates, base.steps),
    ]
    small, large = series
    if small[1] * small[3] != large[1] * large[3]:
        raise ConfigError("batch-scaling runs must see equal samples", field_path="batch_scale")
    series.extend(("steps", base.n_queries, base.n_candidates, base.steps * 2**i) for i in range(config.step_doublings + 1))

    rows, trajectories = [], {}
    for name, n, m, steps in series:
        label = f"{name}-N{n}-M{m}-S{steps}"
        train = _stage1_config(config, seed=seed, n_queries=n, n_candidates=m, steps=steps)
        metrics = _run(label, train, corpus, mined, init)
        trajectories[label] = metrics
        rows.append(
            {
                "series": name,
                "n_queries": n,
                "n_candidates": m,
                "steps": steps,
                "samples_seen": n * steps,
                **_summary(metrics),
            }
        )
    return ExperimentReport(name="scaling", rows=rows, trajectories=trajectories)
