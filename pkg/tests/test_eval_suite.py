import pytest

from abc_embed.core.errors import ConfigError, CorpusError, TemplateError
from abc_embed.evaluation.suite import (
    _adapters,
    build_classification_task,
    eval_classification,
    eval_ctrlbench,
    eval_retrieval,
    label_name,
)
from abc_embed.models.encoder import init_params
from abc_embed.models.enums import CtrlBenchMode, Direction, Split, Stage
from abc_embed.models.lora import attach_lora


@pytest.fixture
def params(encoder_config):
    return init_params(encoder_config, seed=9)


@pytest.mark.parametrize("direction", list(Direction))
def test_retrieval_report(params, corpus, direction):
    result = eval_retrieval(params, corpus, direction, ks=(1, 5))
    report = result.report
    assert report.task == f"retrieval-{direction.value}"
    assert report.n_queries == 8
    assert report.metrics["R@1"] <= report.metrics["R@5"]
    assert report.corpus_hash == corpus.fingerprint()
    assert len(result.ranks) == 8
    assert all(0 <= r.rank < 8 for r in result.ranks)


def test_retrieval_on_empty_split(params, corpus):
    corpus.images = {k: v for k, v in corpus.images.items() if v.split != Split.VAL}
    with pytest.raises(CorpusError):
        eval_retrieval(params, corpus, split=Split.VAL, ks=(1,))


def test_retrieval_k_larger_than_pool(params, corpus):
    with pytest.raises(ConfigError):
        eval_retrieval(params, corpus, ks=(10,))


def test_classification_labels(corpus):
    images = corpus.image_ids(Split.BENCH)
    task = build_classification_task(corpus, 1, images)
    assert task.labels == sorted(task.labels)
    for img, gold in zip(images, task.gold):
        assert task.labels[gold] == label_name(corpus, 1, corpus.caption_for(img, 1).tokens[1:])
        assert task.label_tokens[gold] == corpus.caption_for(img, 1).tokens[1:]


def test_single_label_is_always_right(params, corpus):
    image = corpus.image_ids(Split.BENCH)[0]
    task = build_classification_task(corpus, 0, [image])
    result = eval_classification(params, corpus, task)
    assert result.report.metrics == {"accuracy": 1.0}
    assert result.report.task == "classify-a0"


def test_classification_template_needs_placeholder(params, corpus):
    task = build_classification_task(corpus, 0, corpus.image_ids(Split.BENCH))
    with pytest.raises(TemplateError):
        eval_classification(params, corpus, task, "A photo of a thing.")


def test_classification_bad_aspect(corpus):
    with pytest.raises(CorpusError):
        build_classification_task(corpus, 9, corpus.image_ids(Split.BENCH))


def test_blind_within_image_recall_is_one_over_group(params, corpus):
    result = eval_ctrlbench(params, corpus, use_instructions=False, mode=CtrlBenchMode.WITHIN_IMAGE, ks=(1,))
    assert result.report.metrics["R@1"] == 1 / corpus.config.n_aspects
    assert result.report.task == "ctrlbench-within_image-blind"


def test_instructed_within_image(params, corpus):
    result = eval_ctrlbench(params, corpus, mode=CtrlBenchMode.WITHIN_IMAGE, ks=(1, 4))
    assert result.report.metrics["R@4"] == 1.0
    assert result.report.n_queries == len(corpus.bench)
    assert {r.query_id for r in result.ranks} == {b.instruction_id for b in corpus.bench}


def test_global_ctrlbench(params, corpus):
    result = eval_ctrlbench(params, corpus, ks=(1, 5, 10))
    assert result.report.task == "ctrlbench-global-instructed"
    assert all(0 <= r.rank < 32 for r in result.ranks)


def test_adapter_routing_by_stage(params):
    adapted = attach_lora(params, rank=2, alpha=4.0, seed=0)
    adapted.stage = Stage.STAGE1
    assert _adapters(adapted, True) == (True, True)
    adapted.stage = Stage.STAGE2
    assert _adapters(adapted, True) == (True, False)
    assert _adapters(adapted, False) == (False, False)
    assert _adapters(params, True) == (False, False)


def test_disabling_the_adapter_matches_the_base_model(params, corpus, rng):
    adapted = attach_lora(params, rank=2, alpha=4.0, seed=0)
    for target in adapted.lora.targets:
        adapted.lora.up[target] = rng.normal(0.0, 0.1, size=adapted.lora.up[target].shape)
    off = eval_retrieval(adapted, corpus, ks=(1,), use_lora=False).ranks
    assert off == eval_retrieval(params, corpus, ks=(1,)).ranks


def test_empty_bench(params, corpus):
    with pytest.raises(CorpusError):
        eval_ctrlbench(params, corpus, bench=[])


def test_bench_touching_training_assets(params, corpus):
    bad = corpus.bench[0].model_copy(update={"image_id": corpus.image_ids(Split.TRAIN)[0]})
    with pytest.raises(CorpusError):
        eval_ctrlbench(params, corpus, bench=[bad])
