"""Batch streams for contrastive pretraining and instruction fine-tuning."""

from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from abc_embed.core.errors import GeometryError
from abc_embed.data.corpus import Corpus
from abc_embed.models.encoder import assemble_query
from abc_embed.models.enums import NegativeSource, Split
from abc_embed.schemas.records import MinedRecord
from abc_embed.utils.chunking import iter_chunks
from abc_embed.utils.seeding import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BatchLayout:
    """Where each query's positive sits and which query owns each candidate.

    ``owner`` has one entry per candidate; a positive is owned by its query.
    """

    n_queries: int
    n_candidates: int
    pos_index: np.ndarray
    owner: np.ndarray

    @property
    def negatives_per_query(self) -> int:
        return self.n_candidates // self.n_queries - 1

    def validate(self, *, pretraining: bool = False) -> None:
        """Raises GeometryError if the layout breaks the N/M contract."""
        n, m = self.n_queries, self.n_candidates
        if m < n:
            raise GeometryError(f"{m} candidates for {n} queries")
        if self.pos_index.shape != (n,) or self.owner.shape != (m,):
            raise GeometryError("pos_index / owner lengths do not match N / M")
        if np.any(self.pos_index < 0) or np.any(self.pos_index >= m):
            raise GeometryError("pos_index out of range")
        if len(set(self.pos_index.tolist())) != n:
            raise GeometryError("two queries share a positive")
        if not np.array_equal(self.owner[self.pos_index], np.arange(n)):
            raise GeometryError("a positive is not owned by its query")
        if pretraining:
            if m % n:
                raise GeometryError(f"M={m} is not a multiple of N={n}")
            counts = np.bincount(self.owner, minlength=n)
            if np.any(counts != m // n):
                raise GeometryError(f"each query must own exactly {m // n - 1} negatives")

    def onehot(self) -> np.ndarray:
        mask = np.zeros((self.n_queries, self.n_candidates), dtype=bool)
        mask[np.arange(self.n_queries), self.pos_index] = True
        return mask

    @classmethod
    def diagonal(cls, n: int) -> BatchLayout:
        """Every query's positive at its own index, no extra negatives."""
        index = np.arange(n)
        return cls(n_queries=n, n_candidates=n, pos_index=index, owner=index.copy())


@dataclass(frozen=True)
class PretrainBatch:
    query_ids: list[str]
    query_tokens: list[list[int]]
    candidate_ids: list[str]
    candidate_tokens: list[list[int]]
    layout: BatchLayout


@dataclass(frozen=True)
class FinetuneBatch:
    """Instruction queries grouped by image; candidates are the queries' positives."""

    image_ids: list[str]
    aspects: list[int]
    instruction_ids: list[str]
    query_tokens: list[list[int]]
    candidate_ids: list[str]
    layout: BatchLayout
    candidate_grads: bool = False


def bootstrap_records(corpus: Corpus) -> list[MinedRecord]:
    """Positive-only records for the in-batch-negative bootstrap run."""
    return [
        MinedRecord(image_id=img, pos=corpus.primary_caption(img).id, neg=[], pos_score=0.0, neg_scores=[])
        for img in corpus.image_ids(Split.TRAIN)
    ]


def _check_pretrain_geometry(records: Sequence[MinedRecord], n: int, m: int, negatives: NegativeSource) -> int:
    if m % n:
        raise GeometryError(f"M={m} is not a multiple of N={n}")
    per = m // n - 1
    if len(records) < n:
        raise GeometryError(f"{len(records)} records cannot fill a batch of {n} queries")
    if negatives == NegativeSource.MINED:
        fewest = min(len(r.neg) for r in records)
        if per > fewest:
            raise GeometryError(f"M/N - 1 = {per} exceeds the {fewest} mined negatives of some record")
    elif per > len(records) - 1:
        raise GeometryError(f"M/N - 1 = {per} exceeds the {len(records) - 1} other captions")
    return per


def _epoch_negatives(
    records: Sequence[MinedRecord],
    per: int,
    negatives: NegativeSource,
    rng: np.random.Generator,
) -> list[list[str]]:
    if per == 0:
        return [[] for _ in records]
    if negatives == NegativeSource.RANDOM:
        pool = [r.pos for r in records]
        picked = []
        for index, record in enumerate(records):
            others = rng.choice(len(pool) - 1, size=per, replace=False)
            # Skip over the record's own positive
            picked.append([pool[i + (i >= index)] for i in sorted(int(o) for o in others)])
        return picked
    return [
        [record.neg[int(i)] for i in sorted(rng.choice(len(record.neg), size=per, replace=False))]
        for record in records
    ]


def build_pretrain_batches(
    records: Sequence[MinedRecord],
    corpus: Corpus,
    n_queries: int,
    n_candidates: int,
    seed: int,
    *,
    negatives: NegativeSource = NegativeSource.MINED,
) -> Iterator[PretrainBatch]:
    """Endless epoch-shuffled stream of N-query / M-candidate batches.

    A query joins a batch only if its positive is not already a candidate and
    none of its sampled negatives is another query's positive; otherwise it
    waits for the next batch. Two queries may share a mined negative. The last
    partial batch of an epoch is dropped.

    Args:
        records: Mined records, or positive-only records when M == N
        corpus: Source of token sequences
        n_queries: N
        n_candidates: M
        seed: Shuffle and sampling seed
        negatives: Mined negatives or uniformly random captions

    Yields:
        Batches whose layout passes ``BatchLayout.validate(pretraining=True)``

    Raises:
        GeometryError: If the geometry cannot be met
    """
    per = _check_pretrain_geometry(records, n_queries, n_candidates, negatives)
    records = list(records)

    for epoch in itertools.count():
        rng = make_rng(seed, "pretrain", epoch)
        order = [int(i) for i in rng.permutation(len(records))]
        sampled = _epoch_negatives(records, per, negatives, rng)
        pending = deque(order)
        emitted = 0

        while True:
            chosen: list[int] = []
            positives: set[str] = set()
            negs: set[str] = set()
            deferred: list[int] = []
            while pending and len(chosen) < n_queries:
                index = pending.popleft()
                pos = records[index].pos
                if pos in negs or pos in positives or positives.intersection(sampled[index]):
                    deferred.append(index)
                    continue
                chosen.append(index)
                positives.add(pos)
                negs.update(sampled[index])
            pending.extendleft(reversed(deferred))
            if len(chosen) < n_queries:
                break

            candidate_ids = [records[i].pos for i in chosen]
            owner = list(range(n_queries))
            for q, index in enumerate(chosen):
                candidate_ids.extend(sampled[index])
                owner.extend([q] * per)
            layout = BatchLayout(
                n_queries=n_queries,
                n_candidates=n_candidates,
                pos_index=np.arange(n_queries),
                owner=np.asarray(owner),
            )
            emitted += 1
            yield PretrainBatch(
                query_ids=[records[i].image_id for i in chosen],
                query_tokens=[corpus.images[records[i].image_id].tokens for i in chosen],
                candidate_ids=candidate_ids,
                candidate_tokens=[corpus.captions[c].tokens for c in candidate_ids],
                layout=layout,
            )

        if emitted == 0:
            raise GeometryError(f"epoch {epoch} produced no conflict-free batch of {n_queries} queries")
        logger.debug("pretrain epoch %d: %d batches", epoch, emitted)


def build_finetune_batches(
    corpus: Corpus,
    images_per_batch: int,
    group_size: int,
    seed: int,
    max_seq: int,
) -> Iterator[FinetuneBatch]:
    """Endless stream of same-image query groups with in-batch negatives only.

    Each of ``images_per_batch`` training images contributes ``group_size``
    queries with pairwise distinct aspects, each phrased with a training
    paraphrase. Candidate j is the positive caption of query j, so every
    query sees its image's other selected captions as negatives.

    Raises:
        GeometryError: If group_size exceeds the aspect count or too few images exist
    """
    n_aspects = corpus.config.n_aspects
    if group_size > n_aspects:
        raise GeometryError(f"group_size {group_size} exceeds {n_aspects} aspects")
    if group_size == 1:
        logger.warning("group_size=1: batches carry no same-image negatives")
    images = corpus.image_ids(Split.TRAIN)
    if len(images) < images_per_batch:
        raise GeometryError(f"{len(images)} training images cannot fill {images_per_batch} per batch")
    n = images_per_batch * group_size
    layout = BatchLayout.diagonal(n)

    for epoch in itertools.count():
        rng = make_rng(seed, "finetune", epoch)
        order = [images[int(i)] for i in rng.permutation(len(images))]
        for group in iter_chunks(order, images_per_batch):
            if len(group) < images_per_batch:
                break
            image_ids, aspects, instruction_ids, queries, candidates = [], [], [], [], []
            for img in group:
                for aspect in sorted(int(a) for a in rng.choice(n_aspects, size=group_size, replace=False)):
                    options = corpus.instructions_for(img, aspect, Split.TRAIN)
                    instruction = options[int(rng.integers(len(options)))]
                    image_ids.append(img)
                    aspects.append(aspect)
                    instruction_ids.append(instruction.id)
                    queries.append(assemble_query(corpus.images[img].tokens, instruction.tokens, max_seq))
                    candidates.append(corpus.caption_for(img, aspect).id)
            yield FinetuneBatch(
                image_ids=image_ids,
                aspects=aspects,
                instruction_ids=instruction_ids,
                query_tokens=queries,
                candidate_ids=candidates,
                layout=layout,
            )
