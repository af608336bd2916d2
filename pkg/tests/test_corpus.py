import pytest

from abc_embed.core.errors import CorpusError, TemplateError
from abc_embed.data.corpus import (
    CAPTIONS_FILE,
    CTRLBENCH_FILE,
    IMAGES_FILE,
    INSTRUCTIONS_FILE,
    check_bench_disjoint,
    generate_ctrlbench,
    generate_world,
    load_corpus,
    validate_corpus,
)
from abc_embed.models.enums import Split
from abc_embed.schemas.config import WorldConfig
from abc_embed.schemas.records import CtrlBenchRecord


def test_counts_follow_config():
    corpus = generate_world(WorldConfig(n_images=100, n_aspects=4, seed=1))
    assert len(corpus.images) == 100
    assert len(corpus.captions) == 400
    assert len(corpus.instructions) == 100 * 4 * 3


def test_splits(corpus):
    assert len(corpus.image_ids(Split.TRAIN)) == 28
    assert len(corpus.image_ids(Split.VAL)) == 4
    assert len(corpus.image_ids(Split.BENCH)) == 8


def test_same_seed_same_corpus(world_config):
    assert generate_world(world_config).fingerprint() == generate_world(world_config).fingerprint()


def test_seed_changes_corpus(world_config):
    other = world_config.model_copy(update={"seed": 1})
    assert generate_world(world_config).fingerprint() != generate_world(other).fingerprint()


def test_captions_are_unique(corpus):
    tokens = [tuple(c.tokens) for c in corpus.captions.values()]
    assert len(set(tokens)) == len(tokens)


def test_every_image_has_one_caption_per_aspect(corpus):
    for img in corpus.images:
        assert [c.aspect for c in corpus.captions_of(img)] == [0, 1, 2, 3]


def test_caption_values_appear_in_image(corpus):
    for caption in corpus.captions.values():
        image = corpus.images[caption.image_id].tokens
        values = caption.tokens[1:]
        assert any(image[i : i + len(values)] == values for i in range(len(image)))


def test_held_out_paraphrase(corpus):
    assert corpus.held_out_paraphrase == 2
    for instruction in corpus.instructions.values():
        expected = Split.HELD_OUT if instruction.paraphrase == 2 else Split.TRAIN
        assert instruction.split == expected


def test_all_tokens_inside_vocab(corpus):
    size = corpus.vocab.size
    assert size == 72
    for table in (corpus.images, corpus.captions, corpus.instructions):
        for record in table.values():
            assert all(0 < t < size for t in record.tokens)


def test_vocabulary_too_small():
    with pytest.raises(CorpusError):
        generate_world(WorldConfig(n_images=10, values_per_aspect=2, tokens_per_value=2))


def test_unknown_id(corpus):
    with pytest.raises(CorpusError):
        corpus.tokens_of("cap-99999-a0")


def test_ctrlbench_pairs(corpus):
    assert len(corpus.bench) == 8 * 4
    for record in corpus.bench:
        instruction = corpus.instructions[record.instruction_id]
        caption = corpus.captions[record.positive_caption_id]
        assert instruction.split == Split.HELD_OUT
        assert corpus.images[record.image_id].split == Split.BENCH
        assert instruction.aspect == caption.aspect
        assert caption.image_id == record.image_id


def test_ctrlbench_pairs_per_image(corpus):
    records = generate_ctrlbench(corpus, 5, pairs_per_image=2)
    assert len(records) == 10
    assert len({r.image_id for r in records}) == 5


def test_ctrlbench_needs_enough_images(corpus):
    with pytest.raises(CorpusError):
        generate_ctrlbench(corpus, 9)


def test_bench_rejects_training_caption(corpus):
    train_image = corpus.image_ids(Split.TRAIN)[0]
    record = corpus.bench[0]
    bad = CtrlBenchRecord(
        image_id=record.image_id,
        instruction_id=record.instruction_id,
        positive_caption_id=corpus.primary_caption(train_image).id,
    )
    with pytest.raises(CorpusError):
        check_bench_disjoint(corpus, [bad])


def test_save_and_load(corpus, corpus_dir):
    loaded = load_corpus(corpus_dir)
    assert loaded.fingerprint() == corpus.fingerprint()


def test_fresh_world_validates(corpus_dir):
    report = validate_corpus(corpus_dir)
    assert report.ok, report.violation


def test_duplicated_caption_line(corpus_dir):
    path = corpus_dir / CAPTIONS_FILE
    lines = path.read_text().splitlines()
    path.write_text("\n".join([*lines, lines[3]]) + "\n")
    report = validate_corpus(corpus_dir)
    assert not report.ok
    assert report.file == CAPTIONS_FILE
    assert report.line == len(lines) + 1
    assert "duplicate" in report.violation


def test_missing_caption_is_a_count_violation(corpus_dir):
    path = corpus_dir / CAPTIONS_FILE
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[1:]) + "\n")
    report = validate_corpus(corpus_dir)
    assert not report.ok
    assert report.violation.startswith("count")


def test_dropped_image_is_a_count_violation(corpus_dir):
    path = corpus_dir / IMAGES_FILE
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    report = validate_corpus(corpus_dir)
    assert not report.ok
    assert report.file == IMAGES_FILE


def test_instruction_with_wrong_split(corpus_dir):
    path = corpus_dir / INSTRUCTIONS_FILE
    lines = path.read_text().splitlines()
    lines[0] = lines[0].replace('"split":"train"', '"split":"held_out"')
    path.write_text("\n".join(lines) + "\n")
    report = validate_corpus(corpus_dir)
    assert not report.ok
    assert (report.file, report.line) == (INSTRUCTIONS_FILE, 1)


def test_bench_line_with_training_image(corpus, corpus_dir):
    path = corpus_dir / CTRLBENCH_FILE
    train_image = corpus.image_ids(Split.TRAIN)[0]
    lines = path.read_text().splitlines()
    lines[1] = lines[1].replace(corpus.bench[1].image_id, train_image)
    path.write_text("\n".join(lines) + "\n")
    report = validate_corpus(corpus_dir)
    assert not report.ok
    assert (report.file, report.line) == (CTRLBENCH_FILE, 2)


def test_malformed_line_names_the_line(corpus_dir):
    path = corpus_dir / CAPTIONS_FILE
    lines = path.read_text().splitlines()
    lines[4] = "{not json"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorpusError) as exc:
        validate_corpus(corpus_dir)
    assert exc.value.line == 5


def test_render_template(corpus):
    vocab = corpus.vocab
    tokens = vocab.render_template("A photo of a {label}.", [40, 41])
    assert tokens[-2:] == [40, 41]
    assert len(tokens) == 6
    assert all(vocab.template_start <= t < vocab.marker_start for t in tokens[:4])
    assert tokens[0] == tokens[3]


def test_template_without_placeholder(corpus):
    with pytest.raises(TemplateError):
        corpus.vocab.render_template("A photo.", [40])
