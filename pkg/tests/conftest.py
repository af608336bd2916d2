import numpy as np
import pytest

from abc_embed.data.corpus import Corpus, generate_ctrlbench, generate_world, save_corpus
from abc_embed.data.mining import MinedDataset
from abc_embed.models.enums import Split
from abc_embed.schemas.config import EncoderConfig, WorldConfig
from abc_embed.schemas.records import MinedRecord


@pytest.fixture
def world_config() -> WorldConfig:
    """Small world: 40 images (28 train / 4 val / 8 bench), 4 aspects, vocab 72."""
    return WorldConfig(
        n_images=40,
        n_val_images=4,
        n_bench_images=8,
        n_aspects=4,
        values_per_aspect=8,
        tokens_per_value=2,
        paraphrases_per_aspect=3,
        paraphrase_len=2,
        noise_tokens_per_image=2,
        noise_vocab=4,
        n_template_tokens=4,
        seed=0,
    )


@pytest.fixture
def encoder_config() -> EncoderConfig:
    return EncoderConfig(vocab_size=72, d_model=8, n_layers=1, n_heads=2, max_seq=16, ffn_hidden=16)


@pytest.fixture
def corpus(world_config) -> Corpus:
    world = generate_world(world_config)
    world.bench = generate_ctrlbench(world, world_config.n_bench_images)
    return world


@pytest.fixture
def corpus_dir(tmp_path, corpus):
    directory = tmp_path / "data"
    save_corpus(corpus, directory)
    return directory


@pytest.fixture
def mined(corpus) -> MinedDataset:
    """Hand-built mined set: negatives are the next three train images' primary captions."""
    images = corpus.image_ids(Split.TRAIN)
    records = []
    for i, img in enumerate(images):
        negatives = [corpus.primary_caption(images[(i + j) % len(images)]).id for j in (1, 2, 3)]
        records.append(
            MinedRecord(image_id=img, pos=corpus.primary_caption(img).id, neg=negatives, pos_score=0.5, neg_scores=[0.1, 0.1, 0.1])
        )
    return MinedDataset(records=records)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
