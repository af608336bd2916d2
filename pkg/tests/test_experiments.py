import pytest

from abc_embed.core.errors import ConfigError
from abc_embed.models.enums import AttnMode, Stage
from abc_embed.schemas.config import ExperimentConfig, TrainConfig
from abc_embed.training.experiments import (
    run_arch_ablation,
    run_scaling_experiment,
    run_tau_experiment,
    run_tau_init_experiment,
)


@pytest.fixture
def experiment_config(encoder_config):
    train = TrainConfig(
        stage=Stage.STAGE1,
        steps=2,
        n_queries=2,
        n_candidates=4,
        lora_rank=2,
        lora_alpha=4.0,
        encoder=encoder_config,
        eval_every=1,
        val_pool_size=4,
    )
    return ExperimentConfig(
        train=train,
        seeds=[1, 2],
        tau_inits=[0.05, 0.1],
        attn_modes=[AttnMode.BIDIRECTIONAL, AttnMode.CAUSAL],
        lora_ranks=[1, 2],
        batch_scale=2,
        step_doublings=1,
    )


def test_tau_experiment_pairs_sources(experiment_config, corpus, mined):
    report = run_tau_experiment(experiment_config, corpus, mined)
    assert [(r["seed"], r["negatives"]) for r in report.rows] == [(1, "mined"), (1, "random"), (2, "mined"), (2, "random")]
    assert set(report.trajectories) == {"seed1-mined", "seed1-random", "seed2-mined", "seed2-random"}
    assert report.notes[0].endswith("of 2 seeds")
    assert all(len(m.steps) == 2 for m in report.trajectories.values())


def test_tau_init_experiment(experiment_config, corpus, mined):
    report = run_tau_init_experiment(experiment_config, corpus, mined)
    assert [r["tau_init"] for r in report.rows] == [0.05, 0.1]
    assert report.trajectories["tau0.05"].steps[0].tau == pytest.approx(0.05)
    assert all(r["max_grad_norm"] >= r["mean_grad_norm"] for r in report.rows)


def test_arch_grid(experiment_config, corpus, mined):
    report = run_arch_ablation(experiment_config, corpus, mined)
    assert [(r["attn_mode"], r["lora_rank"]) for r in report.rows] == [
        ("bidirectional", 1),
        ("bidirectional", 2),
        ("causal", 1),
        ("causal", 2),
    ]
    assert all(r["final_val_acc"] is not None for r in report.rows)


def test_arch_grid_is_reproducible(experiment_config, corpus, mined):
    assert run_arch_ablation(experiment_config, corpus, mined).rows == run_arch_ablation(experiment_config, corpus, mined).rows


def test_scaling_series(experiment_config, corpus, mined):
    report = run_scaling_experiment(experiment_config, corpus, mined)
    assert len(report.rows) == 2 + 2
    small, large = report.rows[:2]
    assert (small["n_queries"], small["n_candidates"], small["steps"]) == (1, 2, 4)
    assert (large["n_queries"], large["n_candidates"], large["steps"]) == (2, 4, 2)
    assert small["samples_seen"] == large["samples_seen"]
    assert [r["steps"] for r in report.rows[2:]] == [2, 4]


def test_batch_scale_must_divide_geometry(experiment_config):
    with pytest.raises(ValueError):
        ExperimentConfig(train=experiment_config.train, batch_scale=3)


def test_scaling_rejects_unequal_sample_counts(experiment_config, corpus, mined):
    train = experiment_config.train.model_copy(update={"n_queries": 3, "n_candidates": 6})
    unchecked = ExperimentConfig.model_construct(train=train, seeds=[1], batch_scale=2, step_doublings=0)
    with pytest.raises(ConfigError) as exc:
        run_scaling_experiment(unchecked, corpus, mined)
    assert exc.value.field_path == "batch_scale"
