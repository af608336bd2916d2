"""Deterministic aspect-structured world and the instruction-controlled benchmark.

Every image carries one value per aspect, interleaved with noise tokens. Each
aspect yields one caption (aspect marker + value tokens), so every image has
``n_aspects`` equally valid captions; only an instruction (paraphrase prefix +
aspect marker) says which one is wanted. Paraphrase ``P-1`` of every aspect is
held out of training and reserved for the benchmark.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

from pydantic import BaseModel, ValidationError

from abc_embed.core.errors import CorpusError
from abc_embed.data.jsonl import read_jsonl, read_jsonl_numbered, write_jsonl
from abc_embed.data.vocab import Vocabulary
from abc_embed.models.enums import Split
from abc_embed.schemas.config import WorldConfig
from abc_embed.schemas.records import CaptionRecord, CtrlBenchRecord, ImageRecord, InstructionRecord
from abc_embed.schemas.reports import CorpusReport
from abc_embed.utils.hashing import sha256_bytes
from abc_embed.utils.seeding import make_rng

logger = logging.getLogger(__name__)

WORLD_FILE = "world.json"
IMAGES_FILE = "images.jsonl"
CAPTIONS_FILE = "captions.jsonl"
INSTRUCTIONS_FILE = "instructions.jsonl"
CTRLBENCH_FILE = "ctrlbench.jsonl"

# Aspect whose caption serves as an image's pretraining positive
PRIMARY_ASPECT = 0


class WorldFile(BaseModel):
    """world.json: generation config plus the derived vocabulary size."""

    config: WorldConfig
    vocab_size: int


def image_id(index: int) -> str:
    return f"img-{index:05d}"


def caption_id(index: int, aspect: int) -> str:
    return f"cap-{index:05d}-a{aspect}"


def instruction_id(index: int, aspect: int, paraphrase: int) -> str:
    return f"ins-{index:05d}-a{aspect}-p{paraphrase}"


@dataclass
class Corpus:
    """Images, captions, instructions and (optionally) benchmark queries."""

    config: WorldConfig
    images: dict[str, ImageRecord]
    captions: dict[str, CaptionRecord]
    instructions: dict[str, InstructionRecord]
    bench: list[CtrlBenchRecord] = field(default_factory=list)

    @cached_property
    def vocab(self) -> Vocabulary:
        return Vocabulary.from_world(self.config)

    @cached_property
    def _captions_by_image(self) -> dict[str, dict[int, CaptionRecord]]:
        index: dict[str, dict[int, CaptionRecord]] = {}
        for caption in self.captions.values():
            index.setdefault(caption.image_id, {})[caption.aspect] = caption
        return index

    @cached_property
    def _instructions_by_key(self) -> dict[tuple[str, int], list[InstructionRecord]]:
        index: dict[tuple[str, int], list[InstructionRecord]] = {}
        for instruction in sorted(self.instructions.values(), key=lambda r: r.id):
            index.setdefault((instruction.image_id, instruction.aspect), []).append(instruction)
        return index

    @property
    def held_out_paraphrase(self) -> int:
        return self.config.paraphrases_per_aspect - 1

    def image_ids(self, split: Split | None = None) -> list[str]:
        return sorted(i for i, rec in self.images.items() if split is None or rec.split == split)

    def captions_of(self, image: str) -> list[CaptionRecord]:
        by_aspect = self._captions_by_image.get(image, {})
        return [by_aspect[a] for a in sorted(by_aspect)]

    def caption_for(self, image: str, aspect: int) -> CaptionRecord:
        try:
            return self._captions_by_image[image][aspect]
        except KeyError:
            raise CorpusError(f"no caption for image {image} aspect {aspect}")

    def primary_caption(self, image: str) -> CaptionRecord:
        return self.caption_for(image, PRIMARY_ASPECT)

    def instructions_for(self, image: str, aspect: int, split: Split | None = None) -> list[InstructionRecord]:
        found = self._instructions_by_key.get((image, aspect), [])
        return [r for r in found if split is None or r.split == split]

    def tokens_of(self, record_id: str) -> list[int]:
        for table in (self.images, self.captions, self.instructions):
            if record_id in table:
                return table[record_id].tokens
        raise CorpusError(f"unknown id {record_id}")

    def fingerprint(self) -> str:
        """Content hash over every record in canonical order."""
        lines = [WorldFile(config=self.config, vocab_size=self.vocab.size).model_dump_json()]
        for table in (self.images, self.captions, self.instructions):
            lines.extend(table[k].model_dump_json() for k in sorted(table))
        lines.extend(r.model_dump_json() for r in self.bench)
        return sha256_bytes("\n".join(lines).encode("utf-8"))


def generate_world(config: WorldConfig) -> Corpus:
    """Build the synthetic world for ``config``.

    Args:
        config: World parameters

    Returns:
        Corpus with n_images images, n_aspects captions per image and
        n_aspects × paraphrases_per_aspect instructions per image

    Raises:
        CorpusError: If the value vocabulary cannot keep captions unique
    """
    vocab = Vocabulary.from_world(config)
    combos = config.values_per_aspect**config.tokens_per_value
    if combos < config.n_images:
        raise CorpusError(
            f"vocabulary too small to deduplicate captions: {combos} values per aspect "
            f"for {config.n_images} images"
        )

    rng = make_rng(config.seed, "world")
    used: list[set[tuple[int, ...]]] = [set() for _ in range(config.n_aspects)]
    images: dict[str, ImageRecord] = {}
    captions: dict[str, CaptionRecord] = {}
    instructions: dict[str, InstructionRecord] = {}
    n_train = config.n_train_images

    for index in range(config.n_images):
        if index < n_train:
            split = Split.TRAIN
        elif index < n_train + config.n_val_images:
            split = Split.VAL
        else:
            split = Split.BENCH

        # Value-collision rejection sampling keeps captions globally unique
        values: list[tuple[int, ...]] = []
        for aspect in range(config.n_aspects):
            while True:
                candidate = tuple(int(v) for v in rng.integers(0, config.values_per_aspect, size=config.tokens_per_value))
                if candidate not in used[aspect]:
                    used[aspect].add(candidate)
                    values.append(candidate)
                    break

        noise = rng.integers(0, config.noise_vocab, size=config.noise_tokens_per_image)
        tokens: list[int] = []
        for aspect in range(config.n_aspects):
            tokens.extend(vocab.value_tokens(aspect, values[aspect]))
            tokens.extend(vocab.noise_token(int(n)) for j, n in enumerate(noise) if j % config.n_aspects == aspect)

        img = image_id(index)
        images[img] = ImageRecord(id=img, tokens=tokens, split=split)
        for aspect in range(config.n_aspects):
            cap = caption_id(index, aspect)
            captions[cap] = CaptionRecord(
                id=cap,
                image_id=img,
                aspect=aspect,
                tokens=[vocab.marker(aspect), *vocab.value_tokens(aspect, values[aspect])],
            )
            for paraphrase in range(config.paraphrases_per_aspect):
                ins = instruction_id(index, aspect, paraphrase)
                held_out = paraphrase == config.paraphrases_per_aspect - 1
                instructions[ins] = InstructionRecord(
                    id=ins,
                    image_id=img,
                    aspect=aspect,
                    paraphrase=paraphrase,
                    tokens=[*vocab.paraphrase_tokens(aspect, paraphrase), vocab.marker(aspect)],
                    split=Split.HELD_OUT if held_out else Split.TRAIN,
                )

    corpus = Corpus(config=config, images=images, captions=captions, instructions=instructions)
    logger.info(
        "generated world: %d images, %d captions, %d instructions, vocab %d",
        len(images),
        len(captions),
        len(instructions),
        vocab.size,
    )
    return corpus


def check_bench_disjoint(corpus: Corpus, records: list[CtrlBenchRecord]) -> None:
    """Refuse benchmark records that touch training assets.

    Raises:
        CorpusError: If any image, instruction or caption could appear in training
    """
    for record in records:
        image = corpus.images.get(record.image_id)
        if image is None or image.split != Split.BENCH:
            raise CorpusError(f"bench query uses non-bench image {record.image_id}")
        instruction = corpus.instructions.get(record.instruction_id)
        if instruction is None or instruction.split != Split.HELD_OUT:
            raise CorpusError(f"bench query uses training instruction {record.instruction_id}")
        caption = corpus.captions.get(record.positive_caption_id)
        if caption is None or corpus.images[caption.image_id].split != Split.BENCH:
            raise CorpusError(f"bench query uses training caption {record.positive_caption_id}")


def generate_ctrlbench(
    corpus: Corpus,
    n_bench_images: int,
    pairs_per_image: int | None = None,
    seed: int | None = None,
) -> list[CtrlBenchRecord]:
    """Instruction-controlled retrieval queries over held-out images and paraphrases.

    Args:
        corpus: Generated world
        n_bench_images: Number of bench images to use
        pairs_per_image: (instruction, caption) pairs per image, at most n_aspects
        seed: Aspect-selection seed, defaults to the world seed

    Returns:
        One record per (image, selected aspect)

    Raises:
        CorpusError: If too few disjoint images exist or pairs exceed aspects
    """
    pairs = pairs_per_image or corpus.config.pairs_per_image
    if pairs > corpus.config.n_aspects:
        raise CorpusError(f"{pairs} pairs per image exceed {corpus.config.n_aspects} aspects")
    bench_images = corpus.image_ids(Split.BENCH)
    if len(bench_images) < n_bench_images:
        raise CorpusError(f"need {n_bench_images} bench images, corpus has {len(bench_images)}")

    seed = corpus.config.seed if seed is None else seed
    records: list[CtrlBenchRecord] = []
    for img in bench_images[:n_bench_images]:
        rng = make_rng(seed, "ctrlbench", img)
        aspects = sorted(int(a) for a in rng.choice(corpus.config.n_aspects, size=pairs, replace=False))
        for aspect in aspects:
            (instruction,) = corpus.instructions_for(img, aspect, Split.HELD_OUT)
            records.append(
                CtrlBenchRecord(
                    image_id=img,
                    instruction_id=instruction.id,
                    positive_caption_id=corpus.caption_for(img, aspect).id,
                )
            )
    check_bench_disjoint(corpus, records)
    return records


def save_corpus(corpus: Corpus, out_dir: str | Path) -> list[Path]:
    """Write world.json and the JSONL files; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = out / WORLD_FILE
    world.write_text(
        WorldFile(config=corpus.config, vocab_size=corpus.vocab.size).model_dump_json(indent=2) + "\n",
        encoding="utf-8",
    )
    written = [
        world,
        write_jsonl(out / IMAGES_FILE, (corpus.images[k] for k in sorted(corpus.images))),
        write_jsonl(out / CAPTIONS_FILE, (corpus.captions[k] for k in sorted(corpus.captions))),
        write_jsonl(out / INSTRUCTIONS_FILE, (corpus.instructions[k] for k in sorted(corpus.instructions))),
    ]
    if corpus.bench:
        written.append(write_jsonl(out / CTRLBENCH_FILE, corpus.bench))
    return written


def _read_world(data_dir: Path) -> WorldFile:
    path = data_dir / WORLD_FILE
    if not path.is_file():
        raise CorpusError("file not found", file=str(path))
    try:
        return WorldFile.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise CorpusError(f"malformed world file: {e}", file=WORLD_FILE)


def load_corpus(data_dir: str | Path) -> Corpus:
    """Load a corpus written by ``save_corpus``."""
    data_dir = Path(data_dir)
    world = _read_world(data_dir)
    bench_path = data_dir / CTRLBENCH_FILE
    return Corpus(
        config=world.config,
        images={r.id: r for r in read_jsonl(data_dir / IMAGES_FILE, ImageRecord)},
        captions={r.id: r for r in read_jsonl(data_dir / CAPTIONS_FILE, CaptionRecord)},
        instructions={r.id: r for r in read_jsonl(data_dir / INSTRUCTIONS_FILE, InstructionRecord)},
        bench=read_jsonl(bench_path, CtrlBenchRecord) if bench_path.is_file() else [],
    )


def _contains_run(haystack: list[int], needle: list[int]) -> bool:
    width = len(needle)
    return any(haystack[i : i + width] == needle for i in range(len(haystack) - width + 1))


def validate_corpus(data_dir: str | Path) -> CorpusReport:
    """Re-check every corpus invariant from the files alone.

    Args:
        data_dir: Directory written by ``save_corpus``

    Returns:
        OK, or the first violation with its file and line

    Raises:
        CorpusError: If a file is missing or a line does not parse
    """
    data_dir = Path(data_dir)
    world = _read_world(data_dir)
    config = world.config
    vocab = Vocabulary.from_world(config)
    if world.vocab_size != vocab.size:
        return CorpusReport(ok=False, violation=f"vocab size {world.vocab_size} != {vocab.size}", file=WORLD_FILE)

    images: dict[str, ImageRecord] = {}
    for line, image in read_jsonl_numbered(data_dir / IMAGES_FILE, ImageRecord):
        if image.id in images:
            return CorpusReport(ok=False, violation=f"duplicate image id {image.id}", file=IMAGES_FILE, line=line)
        images[image.id] = image
    if len(images) != config.n_images:
        return CorpusReport(
            ok=False, violation=f"count: {len(images)} images, expected {config.n_images}", file=IMAGES_FILE
        )

    seen_tokens: dict[tuple[int, ...], int] = {}
    per_image: dict[str, set[int]] = {}
    captions: dict[str, CaptionRecord] = {}
    for line, caption in read_jsonl_numbered(data_dir / CAPTIONS_FILE, CaptionRecord):
        key = tuple(caption.tokens)
        if key in seen_tokens:
            return CorpusReport(
                ok=False,
                violation=f"duplicate caption tokens (first seen on line {seen_tokens[key]})",
                file=CAPTIONS_FILE,
                line=line,
            )
        seen_tokens[key] = line
        if caption.image_id not in images:
            return CorpusReport(ok=False, violation=f"unknown image {caption.image_id}", file=CAPTIONS_FILE, line=line)
        per_image.setdefault(caption.image_id, set()).add(caption.aspect)
        captions[caption.id] = caption

    for img in sorted(images):
        aspects = per_image.get(img, set())
        if aspects != set(range(config.n_aspects)):
            return CorpusReport(
                ok=False,
                violation=f"count: image {img} has captions for aspects {sorted(aspects)}, expected {config.n_aspects}",
                file=CAPTIONS_FILE,
            )

    for line, caption in read_jsonl_numbered(data_dir / CAPTIONS_FILE, CaptionRecord):
        values = caption.tokens[1:]
        recoverable = (
            caption.tokens[0] == vocab.marker(caption.aspect)
            and all(vocab.aspect_of_value(t) == caption.aspect for t in values)
            and _contains_run(images[caption.image_id].tokens, values)
        )
        if not recoverable:
            return CorpusReport(
                ok=False,
                violation=f"caption {caption.id} is not recoverable from its image and aspect",
                file=CAPTIONS_FILE,
                line=line,
            )

    n_instructions = 0
    held_out = config.paraphrases_per_aspect - 1
    instructions: dict[str, InstructionRecord] = {}
    for line, instruction in read_jsonl_numbered(data_dir / INSTRUCTIONS_FILE, InstructionRecord):
        n_instructions += 1
        expected_split = Split.HELD_OUT if instruction.paraphrase == held_out else Split.TRAIN
        expected_tokens = [*vocab.paraphrase_tokens(instruction.aspect, instruction.paraphrase), vocab.marker(instruction.aspect)]
        if instruction.image_id not in images:
            problem = f"unknown image {instruction.image_id}"
        elif instruction.split != expected_split:
            problem = f"instruction {instruction.id} tagged {instruction.split.value}, expected {expected_split.value}"
        elif instruction.tokens != expected_tokens:
            problem = f"instruction {instruction.id} tokens do not match its aspect and paraphrase"
        else:
            instructions[instruction.id] = instruction
            continue
        return CorpusReport(ok=False, violation=problem, file=INSTRUCTIONS_FILE, line=line)

    expected = config.n_images * config.n_aspects * config.paraphrases_per_aspect
    if n_instructions != expected:
        return CorpusReport(
            ok=False, violation=f"count: {n_instructions} instructions, expected {expected}", file=INSTRUCTIONS_FILE
        )

    bench_path = data_dir / CTRLBENCH_FILE
    if bench_path.is_file():
        corpus = Corpus(config=config, images=images, captions=captions, instructions=instructions)
        for line, record in read_jsonl_numbered(bench_path, CtrlBenchRecord):
            try:
                check_bench_disjoint(corpus, [record])
            except CorpusError as e:
                return CorpusReport(ok=False, violation=e.detail, file=CTRLBENCH_FILE, line=line)
            instruction = instructions[record.instruction_id]
            caption = captions[record.positive_caption_id]
            if not (instruction.image_id == caption.image_id == record.image_id and instruction.aspect == caption.aspect):
                return CorpusReport(
                    ok=False,
                    violation="bench positive does not match its instruction's image and aspect",
                    file=CTRLBENCH_FILE,
                    line=line,
                )

    return CorpusReport(ok=True)
