"""Evaluation protocols: plain retrieval, template classification, instruction-controlled retrieval.

Candidate captions are embedded without the adapter for stage-2 checkpoints,
since stage 2 trains its adapter on the query side only; other checkpoints
embed both sides the same way.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from abc_embed.core.checkpoint import checkpoint_store
from abc_embed.core.config import settings
from abc_embed.core.errors import CorpusError
from abc_embed.data.corpus import Corpus, check_bench_disjoint
from abc_embed.evaluation.metrics import DEFAULT_KS, gold_ranks, recall_at_k
from abc_embed.models.encoder import EncoderParams, assemble_query, embed_sequences
from abc_embed.models.enums import CtrlBenchMode, Direction, Split, Stage
from abc_embed.schemas.records import CtrlBenchRecord
from abc_embed.schemas.reports import EvalReport, RankRecord

logger = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "A photo of a {label}."


@dataclass
class EvalResult:
    report: EvalReport
    ranks: list[RankRecord] = field(default_factory=list)


@dataclass
class ClassificationTask:
    """Images to classify and the label vocabulary they are scored against."""

    aspect: int
    image_ids: list[str]
    labels: list[str]
    label_tokens: list[list[int]]
    gold: list[int]


def _adapters(params: EncoderParams, use_lora: bool) -> tuple[bool, bool]:
    """(query side, candidate side) adapter switches."""
    active = use_lora and params.lora is not None
    return active, active and params.stage != Stage.STAGE2


def _embed(params: EncoderParams, seqs: Sequence[Sequence[int]], use_lora: bool) -> np.ndarray:
    return embed_sequences(params, seqs, use_lora=use_lora, batch_size=settings.EMBED_BATCH_SIZE)


def _report(
    task: str,
    metrics: dict[str, float],
    params: EncoderParams,
    corpus: Corpus,
    n_queries: int,
) -> EvalReport:
    logger.info("%s: %s", task, ", ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    return EvalReport(
        task=task,
        metrics=metrics,
        ckpt_hash=checkpoint_store.fingerprint(params),
        corpus_hash=corpus.fingerprint(),
        n_queries=n_queries,
    )


def _rank_records(query_ids: list[str], gold_ids: list[str], ranks: np.ndarray) -> list[RankRecord]:
    return [RankRecord(query_id=q, gold_id=g, rank=int(r)) for q, g, r in zip(query_ids, gold_ids, ranks)]


def eval_retrieval(
    params: EncoderParams,
    corpus: Corpus,
    direction: Direction = Direction.IMAGE_TO_TEXT,
    ks: Sequence[int] = DEFAULT_KS,
    *,
    split: Split = Split.BENCH,
    use_lora: bool = True,
) -> EvalResult:
    """Image↔caption retrieval without instructions over one split.

    Each image is paired with its primary caption; queries and candidates
    are the images and captions of ``split``.

    Raises:
        CorpusError: If the split holds no images
    """
    images = corpus.image_ids(split)
    if not images:
        raise CorpusError(f"no {split.value} images to evaluate")
    captions = [corpus.primary_caption(img) for img in images]
    query_lora, candidate_lora = _adapters(params, use_lora)

    image_emb = _embed(params, [corpus.images[i].tokens for i in images], query_lora)
    caption_emb = _embed(params, [c.tokens for c in captions], candidate_lora)
    caption_ids = [c.id for c in captions]
    if direction == Direction.IMAGE_TO_TEXT:
        scores, query_ids, keys = image_emb @ caption_emb.T, images, caption_ids
    else:
        scores, query_ids, keys = caption_emb @ image_emb.T, caption_ids, images

    gold = list(range(len(images)))
    metrics = recall_at_k(scores, gold, ks, candidate_keys=keys)
    ranks = gold_ranks(scores, gold, keys)
    report = _report(f"retrieval-{direction.value}", metrics, params, corpus, len(images))
    return EvalResult(report=report, ranks=_rank_records(query_ids, keys, ranks))


def label_name(corpus: Corpus, aspect: int, value_tokens: Sequence[int]) -> str:
    base = corpus.vocab.value_token(aspect, 0)
    return f"a{aspect}_v" + "_".join(str(t - base) for t in value_tokens)


def build_classification_task(corpus: Corpus, aspect: int, image_ids: Sequence[str]) -> ClassificationTask:
    """Labels are the value tuples the given images carry for ``aspect``."""
    if not image_ids:
        raise CorpusError("classification needs at least one image")
    if not 0 <= aspect < corpus.config.n_aspects:
        raise CorpusError(f"aspect {aspect} outside 0..{corpus.config.n_aspects - 1}")
    per_image = {img: corpus.caption_for(img, aspect).tokens[1:] for img in image_ids}
    by_label = {label_name(corpus, aspect, tokens): tokens for tokens in per_image.values()}
    labels = sorted(by_label)
    return ClassificationTask(
        aspect=aspect,
        image_ids=list(image_ids),
        labels=labels,
        label_tokens=[by_label[name] for name in labels],
        gold=[labels.index(label_name(corpus, aspect, per_image[img])) for img in image_ids],
    )


def eval_classification(
    params: EncoderParams,
    corpus: Corpus,
    task: ClassificationTask,
    template: str = DEFAULT_TEMPLATE,
    *,
    use_lora: bool = True,
) -> EvalResult:
    """Zero-shot classification: predict the label whose rendered template is most similar.

    Raises:
        TemplateError: If the template lacks ``{label}``
    """
    prompts = [corpus.vocab.render_template(template, tokens) for tokens in task.label_tokens]
    query_lora, candidate_lora = _adapters(params, use_lora)
    image_emb = _embed(params, [corpus.images[i].tokens for i in task.image_ids], query_lora)
    label_emb = _embed(params, prompts, candidate_lora)
    scores = image_emb @ label_emb.T

    accuracy = recall_at_k(scores, task.gold, (1,), candidate_keys=task.labels)["R@1"]
    ranks = gold_ranks(scores, task.gold, task.labels)
    report = _report(f"classify-a{task.aspect}", {"accuracy": accuracy}, params, corpus, len(task.image_ids))
    gold_ids = [task.labels[g] for g in task.gold]
    return EvalResult(report=report, ranks=_rank_records(task.image_ids, gold_ids, ranks))


def eval_ctrlbench(
    params: EncoderParams,
    corpus: Corpus,
    bench: Sequence[CtrlBenchRecord] | None = None,
    *,
    use_instructions: bool = True,
    mode: CtrlBenchMode = CtrlBenchMode.GLOBAL,
    ks: Sequence[int] = DEFAULT_KS,
    use_lora: bool = True,
) -> EvalResult:
    """Instruction-controlled retrieval over held-out images and paraphrases.

    Args:
        params: Checkpoint under test
        corpus: Corpus holding the bench assets
        bench: Benchmark queries, defaults to ``corpus.bench``
        use_instructions: Append the instruction; ``False`` is the blind baseline
        mode: Rank against every bench caption or only the query image's captions
        ks: Recall cut-offs
        use_lora: Route queries through the adapter when present

    Returns:
        Report plus per-query gold ranks

    Raises:
        CorpusError: If the benchmark is empty or overlaps training assets
    """
    bench = list(corpus.bench if bench is None else bench)
    if not bench:
        raise CorpusError("benchmark is empty")
    check_bench_disjoint(corpus, bench)
    max_seq = params.config.max_seq
    query_lora, candidate_lora = _adapters(params, use_lora)

    queries = []
    for record in bench:
        image = corpus.images[record.image_id].tokens
        instruction = corpus.instructions[record.instruction_id].tokens if use_instructions else None
        queries.append(assemble_query(image, instruction, max_seq))
    query_emb = _embed(params, queries, query_lora)

    pool = sorted({cap.id for record in bench for cap in corpus.captions_of(record.image_id)})
    pool_emb = _embed(params, [corpus.captions[c].tokens for c in pool], candidate_lora)
    column = {cid: j for j, cid in enumerate(pool)}

    if mode == CtrlBenchMode.GLOBAL:
        scores = query_emb @ pool_emb.T
        gold = [column[r.positive_caption_id] for r in bench]
        keys: list[str] | None = pool
    else:
        groups = [[column[cap.id] for cap in corpus.captions_of(r.image_id)] for r in bench]
        scores = np.stack([pool_emb[g] @ q for g, q in zip(groups, query_emb)])
        gold = [corpus.captions[r.positive_caption_id].aspect for r in bench]
        keys = None

    metrics = recall_at_k(scores, gold, ks, candidate_keys=keys)
    ranks = gold_ranks(scores, gold, keys)
    flavour = "instructed" if use_instructions else "blind"
    report = _report(f"ctrlbench-{mode.value}-{flavour}", metrics, params, corpus, len(bench))
    query_ids = [r.instruction_id if use_instructions else r.image_id for r in bench]
    return EvalResult(report=report, ranks=_rank_records(query_ids, [r.positive_caption_id for r in bench], ranks))
