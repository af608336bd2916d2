"""End-to-end runs of the command line on a tiny world."""
import json

import pytest

from abc_embed.cli import build_parser, dispatch
from abc_embed.commands.data import VALIDATE_DIR
from abc_embed.commands.deps import CHECKPOINT_FILE, METRICS_FILE, REPORT_FILE, RUN_FILE
from abc_embed.commands.training import load_train_config
from abc_embed.data.corpus import CAPTIONS_FILE, load_corpus
from abc_embed.data.mining import MinedDataset
from abc_embed.models.enums import Split, Stage
from abc_embed.schemas.records import MinedRecord

ENCODER = {"vocab_size": 72, "d_model": 8, "n_layers": 1, "n_heads": 2, "max_seq": 16, "ffn_hidden": 16}
WORLD = {
    "n_images": 40,
    "n_val_images": 4,
    "n_bench_images": 8,
    "n_aspects": 4,
    "values_per_aspect": 8,
    "tokens_per_value": 2,
    "paraphrases_per_aspect": 3,
    "paraphrase_len": 2,
    "noise_tokens_per_image": 2,
    "noise_vocab": 4,
    "n_template_tokens": 4,
    "seed": 0,
}
TRAIN = {"steps": 2, "encoder": ENCODER, "eval_every": 1, "val_pool_size": 4, "lora_rank": 2, "lora_alpha": 4.0}


def _write(path, data):
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Corpus, bootstrap checkpoint and a hand-built mined file shared by the pipeline tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert dispatch(["gen-world", "--config", _write(root / "world.json", WORLD), "--out", str(data)]) == 0

    bootstrap = _write(root / "bootstrap.json", {**TRAIN, "lora_rank": 0, "n_queries": 4, "n_candidates": 4})
    assert dispatch(["bootstrap", "--config", bootstrap, "--data", str(data), "--out", str(root / "bootstrap")]) == 0

    corpus = load_corpus(data)
    images = corpus.image_ids(Split.TRAIN)
    records = [
        MinedRecord(
            image_id=img,
            pos=corpus.primary_caption(img).id,
            neg=[corpus.primary_caption(images[(i + j) % len(images)]).id for j in (1, 2, 3)],
            pos_score=0.5,
            neg_scores=[0.1, 0.1, 0.1],
        )
        for i, img in enumerate(images)
    ]
    MinedDataset(records=records).save(root / "hand_mined.jsonl")
    return root


def test_gen_world_writes_corpus(workspace):
    data = workspace / "data"
    for name in ("world.json", "images.jsonl", "captions.jsonl", "instructions.jsonl", "ctrlbench.jsonl", RUN_FILE):
        assert (data / name).is_file(), name
    run = json.loads((data / RUN_FILE).read_text())
    assert run["command"] == "gen-world"
    assert run["seed"] == 0


def test_bootstrap_writes_run_artifacts(workspace):
    run = workspace / "bootstrap"
    assert (run / CHECKPOINT_FILE).is_file()
    lines = (run / METRICS_FILE).read_text().splitlines()
    assert [json.loads(line)["step"] for line in lines] == [0, 1]
    assert json.loads((run / RUN_FILE).read_text())["config"]["stage"] == "bootstrap"


def test_validate_fresh_corpus(workspace):
    assert dispatch(["validate", "--data", str(workspace / "data")]) == 0
    run = json.loads((workspace / "data" / VALIDATE_DIR / RUN_FILE).read_text())
    assert run["command"] == "validate"
    assert run["status"] == "ok"


def test_validate_reports_tampered_corpus(tmp_path):
    data = tmp_path / "data"
    assert dispatch(["gen-world", "--config", _write(tmp_path / "world.json", WORLD), "--out", str(data)]) == 0
    path = data / CAPTIONS_FILE
    lines = path.read_text().splitlines()
    path.write_text("\n".join([*lines, lines[0]]) + "\n")
    assert dispatch(["validate", "--data", str(data)]) == 1
    run = json.loads((data / VALIDATE_DIR / RUN_FILE).read_text())
    assert run["status"] == "failed"
    assert run["outcome"]["file"] == CAPTIONS_FILE


def test_mine_then_audit(workspace):
    mined = workspace / "mined.jsonl"
    config = _write(workspace / "mine.json", {"epsilon": 1.0, "k": 3, "window": 10})
    args = ["--config", config, "--data", str(workspace / "data")]
    model = str(workspace / "bootstrap" / CHECKPOINT_FILE)
    assert dispatch(["mine", *args, "--model", model, "--out", str(mined), "--allow-fewer"]) == 0
    assert len(MinedDataset.load(mined)) == 28
    assert dispatch(["validate", *args, "--mined", str(mined)]) == 0


def test_pretrain_finetune_and_evaluate(workspace):
    data = ["--data", str(workspace / "data")]
    pretrain = _write(workspace / "pretrain.json", {**TRAIN, "n_queries": 2, "n_candidates": 4})
    stage1 = workspace / "stage1"
    assert dispatch([
        "pretrain", "--config", pretrain, *data,
        "--mined", str(workspace / "hand_mined.jsonl"),
        "--init", str(workspace / "bootstrap" / CHECKPOINT_FILE),
        "--out", str(stage1),
    ]) == 0

    finetune = _write(workspace / "finetune.json", {**TRAIN, "images_per_batch": 2, "group_size": 4})
    stage2 = workspace / "stage2"
    assert dispatch([
        "finetune", "--config", finetune, *data, "--model", str(stage1 / CHECKPOINT_FILE), "--out", str(stage2)
    ]) == 0

    model = ["--model", str(stage2 / CHECKPOINT_FILE)]
    evals = workspace / "eval"
    assert dispatch(["eval-ctrlbench", *data, *model, "--out", str(evals), "--dump-ranks"]) == 0
    for task in ("global-instructed", "global-blind", "within_image-instructed", "within_image-blind"):
        report = json.loads((evals / f"ctrlbench-{task}" / REPORT_FILE).read_text())
        assert report["n_queries"] == 32
    assert (evals / "ctrlbench-global-instructed" / "ranks.jsonl").is_file()

    assert dispatch(["eval-retrieval", *data, *model, "--out", str(evals), "--ks", "1", "5"]) == 0
    assert (evals / "retrieval-t2i" / REPORT_FILE).is_file()
    assert dispatch(["eval-classify", *data, *model, "--out", str(evals), "--aspect", "2"]) == 0
    assert json.loads((evals / "classify-a2" / REPORT_FILE).read_text())["n_queries"] == 8


def test_recall_cutoff_beyond_pool_is_a_config_error(workspace):
    model = str(workspace / "bootstrap" / CHECKPOINT_FILE)
    args = ["eval-retrieval", "--data", str(workspace / "data"), "--model", model, "--out", str(workspace / "bad")]
    assert dispatch([*args, "--ks", "10"]) == 3


def test_scaling_experiment(workspace):
    config = _write(
        workspace / "experiment.json",
        {"train": {**TRAIN, "stage": "1", "n_queries": 2, "n_candidates": 4}, "batch_scale": 2, "step_doublings": 0},
    )
    out = workspace / "scaling"
    assert dispatch([
        "exp-scaling", "--config", config, "--seed", "3", "--data", str(workspace / "data"),
        "--mined", str(workspace / "hand_mined.jsonl"), "--out", str(out),
    ]) == 0
    report = json.loads((out / REPORT_FILE).read_text())
    assert len(report["rows"]) == 3
    assert (out / "batch-N1-M2-S4" / METRICS_FILE).is_file()
    assert json.loads((out / RUN_FILE).read_text())["seed"] == 3


def test_invalid_config_exits_3(tmp_path):
    config = _write(tmp_path / "world.json", {**WORLD, "n_images": -1})
    assert dispatch(["gen-world", "--config", config, "--out", str(tmp_path / "data")]) == 3


def test_unknown_config_field_exits_3(tmp_path):
    config = _write(tmp_path / "world.json", {**WORLD, "colour": "red"})
    assert dispatch(["gen-world", "--config", config, "--out", str(tmp_path / "data")]) == 3


def test_missing_config_file_exits_3(tmp_path):
    assert dispatch(["gen-world", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 3


def test_unknown_command_exits_2():
    assert dispatch(["frobnicate"]) == 2


def test_no_command_exits_2():
    assert dispatch([]) == 2


def test_missing_required_flag_exits_2():
    assert dispatch(["mine", "--out", "x"]) == 2


def test_every_command_is_registered():
    parser = build_parser()
    (commands,) = [a for a in parser._actions if a.dest == "command"]
    assert set(commands.choices) == {
        "gen-world", "validate", "mine",
        "bootstrap", "pretrain", "finetune",
        "eval-retrieval", "eval-classify", "eval-ctrlbench",
        "exp-tau", "exp-tau-init", "exp-arch", "exp-scaling",
    }


@pytest.mark.parametrize("flag", ["--paper-scale", "--full-scale"])
def test_scale_flags_load_the_full_scale_preset(tmp_path, flag):
    args = build_parser().parse_args(["bootstrap", flag, "--out", str(tmp_path)])
    assert args.full_scale
    config = load_train_config(args, Stage.BOOTSTRAP)
    assert (config.n_queries, config.n_candidates, config.steps, config.lr) == (256, 256, 1000, 4e-5)


def test_diverged_run_keeps_metrics_and_run_metadata(workspace):
    config = _write(
        workspace / "diverge.json",
        {**TRAIN, "lora_rank": 0, "n_queries": 4, "n_candidates": 4, "tau_init": 1e-300},
    )
    out = workspace / "diverged"
    assert dispatch(["bootstrap", "--config", config, "--data", str(workspace / "data"), "--out", str(out)]) == 1
    assert (out / METRICS_FILE).is_file()
    assert not (out / CHECKPOINT_FILE).exists()
    run = json.loads((out / RUN_FILE).read_text())
    assert run["status"] == "diverged"
    assert run["outcome"]["diverged"] is True
