"""Desk-scale runs on the shipped configs. Minutes each; run with ``pytest -m slow``."""
import math
from pathlib import Path

import numpy as np
import pytest

from abc_embed.commands.deps import load_config
from abc_embed.data.corpus import generate_ctrlbench, generate_world
from abc_embed.data.mining import build_mined_dataset
from abc_embed.evaluation.suite import eval_ctrlbench
from abc_embed.models.enums import CtrlBenchMode, Stage
from abc_embed.schemas.config import ExperimentConfig, MiningConfig, TrainConfig, WorldConfig
from abc_embed.training.experiments import run_tau_experiment
from abc_embed.training.trainer import run_bootstrap, run_stage1, run_stage2

pytestmark = pytest.mark.slow

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
SEEDS = [7, 8, 9]


@pytest.fixture(scope="module")
def desk():
    world = load_config(CONFIG_DIR / "world.json", WorldConfig)
    corpus = generate_world(world)
    corpus.bench = generate_ctrlbench(corpus, world.n_bench_images)

    bootstrap_config = load_config(CONFIG_DIR / "bootstrap.json", TrainConfig)
    bootstrap = run_bootstrap(bootstrap_config, corpus)
    mined = build_mined_dataset(bootstrap.params, corpus, load_config(CONFIG_DIR / "mine.json", MiningConfig))

    stage1_config = load_config(CONFIG_DIR / "pretrain.json", TrainConfig)
    stage1 = run_stage1(stage1_config, corpus, mined, init=bootstrap.params)

    stage2_config = load_config(CONFIG_DIR / "finetune.json", TrainConfig, stage1_checkpoint="stage1.abce")
    stage2 = run_stage2(stage2_config, corpus, stage1=stage1.params)
    return {
        "world": world,
        "corpus": corpus,
        "mined": mined,
        "bootstrap": bootstrap,
        "stage1": stage1,
        "stage1_config": stage1_config,
        "stage2": stage2,
        "stage2_config": stage2_config,
    }


def test_bootstrap_beats_uniform_loss(desk):
    steps = desk["bootstrap"].metrics.steps
    assert steps[-1].loss < math.log(32)


def test_stage1_validation_above_chance(desk):
    final = desk["stage1"].metrics.steps[-1]
    assert final.val_acc is not None
    assert final.val_acc > 1 / desk["stage1_config"].val_pool_size


def test_stage2_instructions_help_within_image(desk):
    params, corpus = desk["stage2"].params, desk["corpus"]
    assert params.stage == Stage.STAGE2
    instructed = eval_ctrlbench(params, corpus, mode=CtrlBenchMode.WITHIN_IMAGE, ks=(1,))
    blind = eval_ctrlbench(params, corpus, use_instructions=False, mode=CtrlBenchMode.WITHIN_IMAGE, ks=(1,))
    assert instructed.report.metrics["R@1"] > blind.report.metrics["R@1"]


def _within_image_r1(params, corpus, use_instructions):
    result = eval_ctrlbench(
        params, corpus, use_instructions=use_instructions, mode=CtrlBenchMode.WITHIN_IMAGE, ks=(1,)
    )
    return result.report.metrics["R@1"], result.report.n_queries


def test_stage2_within_image_across_seeds(desk):
    corpus, chance = desk["corpus"], 1 / desk["world"].n_aspects
    instructed, blind, n_queries = [], [], 0
    for seed in SEEDS:
        config = desk["stage2_config"].model_copy(update={"seed": seed})
        params = run_stage2(config, corpus, stage1=desk["stage1"].params).params
        r1, n_queries = _within_image_r1(params, corpus, use_instructions=True)
        instructed.append(r1)
        blind.append(_within_image_r1(params, corpus, use_instructions=False)[0])

    sigma = max(math.sqrt(chance * (1 - chance) / n_queries), float(np.std(instructed)))
    assert min(instructed) > chance + 3 * sigma
    for r1 in blind:
        assert abs(r1 - chance) <= 3 * sigma


def test_random_negatives_end_at_lower_temperature(desk):
    experiment = load_config(CONFIG_DIR / "experiment.json", ExperimentConfig)
    config = experiment.model_copy(update={"seeds": SEEDS})
    report = run_tau_experiment(config, desk["corpus"], desk["mined"], init=desk["bootstrap"].params)
    for seed in SEEDS:
        mined = report.trajectories[f"seed{seed}-mined"]
        random = report.trajectories[f"seed{seed}-random"]
        assert not mined.diverged
        assert all(math.isfinite(step.loss) for step in mined.steps)
        assert random.final.tau < mined.final.tau
