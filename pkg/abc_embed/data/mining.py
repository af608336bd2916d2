"""Hard-negative mining with a bootstrap encoder.

The bootstrap checkpoint scores every training image against every candidate
caption; for each image the captions scoring at most ``epsilon`` times its
positive form the eligible set, the ``window`` most similar of those form the
pool, and ``k`` negatives are sampled from the pool.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from abc_embed.core.config import settings
from abc_embed.core.errors import CorpusError, InsufficientNegatives, StageError
from abc_embed.data.corpus import Corpus
from abc_embed.data.jsonl import read_jsonl, read_jsonl_numbered, write_jsonl
from abc_embed.models.encoder import EncoderParams, embed_sequences
from abc_embed.models.enums import Split, Stage
from abc_embed.schemas.config import MiningConfig
from abc_embed.schemas.records import MinedRecord
from abc_embed.schemas.reports import CorpusReport
from abc_embed.utils.chunking import chunk_bounds
from abc_embed.utils.seeding import make_rng

logger = logging.getLogger(__name__)


@dataclass
class MinedDataset:
    """Mined negatives, one record per training image."""

    records: list[MinedRecord]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def min_negatives(self) -> int:
        return min((len(r.neg) for r in self.records), default=0)

    def by_image(self) -> dict[str, MinedRecord]:
        return {r.image_id: r for r in self.records}

    def save(self, path: str | Path) -> Path:
        return write_jsonl(path, self.records)

    @classmethod
    def load(cls, path: str | Path) -> MinedDataset:
        return cls(records=read_jsonl(path, MinedRecord))


def threshold(positive_score: float, epsilon: float) -> float:
    return epsilon * positive_score


def candidate_caption_ids(corpus: Corpus) -> list[str]:
    """Mining candidates: the primary caption of every training image."""
    return [corpus.primary_caption(img).id for img in corpus.image_ids(Split.TRAIN)]


def score_corpus(
    params: EncoderParams,
    corpus: Corpus,
    image_ids: Sequence[str],
    caption_ids: Sequence[str],
    chunk_size: int = 64,
) -> np.ndarray:
    """Similarity of every image to every caption, filled in row chunks.

    Args:
        params: Bootstrap-stage encoder
        corpus: Corpus holding the ids
        image_ids: Row ids
        caption_ids: Column ids
        chunk_size: Rows computed per chunk

    Returns:
        Array of shape (len(image_ids), len(caption_ids))

    Raises:
        StageError: If ``params`` is not a bootstrap checkpoint
        CorpusError: If an id is not in the corpus
    """
    if params.stage != Stage.BOOTSTRAP:
        raise StageError(f"mining needs a bootstrap checkpoint, got stage {params.stage.value}", stage="mining")
    if chunk_size < 1:
        raise ValueError("chunk_size must be at least 1")
    for img in image_ids:
        if img not in corpus.images:
            raise CorpusError(f"unknown image id {img}")
    for cap in caption_ids:
        if cap not in corpus.captions:
            raise CorpusError(f"unknown caption id {cap}")

    batch = settings.EMBED_BATCH_SIZE
    images = embed_sequences(params, [corpus.images[i].tokens for i in image_ids], batch_size=batch)
    captions = embed_sequences(params, [corpus.captions[c].tokens for c in caption_ids], batch_size=batch)

    table = np.empty((len(image_ids), len(caption_ids)))
    for start, stop in chunk_bounds(len(image_ids), chunk_size):
        # Row-wise reductions keep each entry independent of the chunk size
        table[start:stop] = np.sum(images[start:stop, None, :] * captions[None, :, :], axis=-1)
    return table


def mine(
    sim_row: Mapping[str, float],
    positive_id: str,
    config: MiningConfig,
    *,
    allow_fewer: bool = False,
) -> list[str]:
    """Sample ``k`` hard negatives for one positive.

    Args:
        sim_row: Caption id to similarity with the query image
        positive_id: The image's positive caption
        config: Threshold, window, k and seed
        allow_fewer: Return every eligible caption instead of failing

    Returns:
        Distinct caption ids ordered by descending score (ties by id)

    Raises:
        InsufficientNegatives: If fewer than ``k`` captions are eligible
    """
    if positive_id not in sim_row:
        raise CorpusError(f"positive {positive_id} missing from similarity row")
    limit = threshold(sim_row[positive_id], config.epsilon)
    eligible = [cid for cid, score in sim_row.items() if cid != positive_id and score <= limit]
    if len(eligible) < config.k and not allow_fewer:
        raise InsufficientNegatives(len(eligible), k=config.k)

    eligible.sort(key=lambda cid: (-sim_row[cid], cid))
    pool = eligible[: config.window]
    take = min(config.k, len(pool))
    rng = make_rng(config.seed, "mine", positive_id)
    chosen = rng.choice(len(pool), size=take, replace=False) if take else np.array([], dtype=np.int64)
    return [pool[i] for i in sorted(int(c) for c in chosen)]


def build_mined_dataset(
    params: EncoderParams,
    corpus: Corpus,
    config: MiningConfig,
    *,
    allow_fewer: bool = False,
) -> MinedDataset:
    """Mine negatives for every training image.

    Args:
        params: Bootstrap-stage encoder
        corpus: Validated corpus
        config: Mining hyperparameters
        allow_fewer: Accept fewer than ``k`` negatives where the pool is short

    Returns:
        Dataset with one record per training image

    Raises:
        InsufficientNegatives: Naming the first image without enough negatives
    """
    image_ids = corpus.image_ids(Split.TRAIN)
    caption_ids = candidate_caption_ids(corpus)
    table = score_corpus(params, corpus, image_ids, caption_ids, config.chunk_size)
    logger.info("scored %d images against %d captions", len(image_ids), len(caption_ids))

    records: list[MinedRecord] = []
    short = 0
    for row, img in zip(table, image_ids):
        scores = {cid: float(s) for cid, s in zip(caption_ids, row)}
        positive = corpus.primary_caption(img).id
        try:
            negatives = mine(scores, positive, config, allow_fewer=allow_fewer)
        except InsufficientNegatives as e:
            raise InsufficientNegatives(e.eligible, image_id=img, k=config.k)
        if len(negatives) < config.k:
            short += 1
        records.append(
            MinedRecord(
                image_id=img,
                pos=positive,
                neg=negatives,
                pos_score=scores[positive],
                neg_scores=[scores[n] for n in negatives],
            )
        )
    if short:
        logger.warning("%d images kept fewer than %d negatives (--allow-fewer)", short, config.k)
    return MinedDataset(records=records)


def audit_mined(path: str | Path, epsilon: float) -> CorpusReport:
    """Check a mined.jsonl file on its own: threshold, no self or duplicate negatives."""
    path = Path(path)
    for line, record in read_jsonl_numbered(path, MinedRecord):
        limit = threshold(record.pos_score, epsilon)
        if record.pos in record.neg:
            problem = f"image {record.image_id} lists its positive as a negative"
        elif len(set(record.neg)) != len(record.neg):
            problem = f"image {record.image_id} has duplicate negatives"
        elif any(score > limit for score in record.neg_scores):
            problem = f"image {record.image_id} has a negative above {epsilon} x positive score"
        else:
            continue
        return CorpusReport(ok=False, violation=problem, file=path.name, line=line)
    return CorpusReport(ok=True)
