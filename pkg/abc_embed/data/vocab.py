import hashlib
import re
from dataclasses import dataclass

from abc_embed.core.errors import TemplateError
from abc_embed.schemas.config import N_RESERVED_TOKENS, WorldConfig

LABEL_PLACEHOLDER = "{label}"
_WORD = re.compile(r"\w+")


@dataclass(frozen=True)
class Vocabulary:
    """Token id layout of a synthetic world.

    Order: reserved ids, template tokens, aspect markers, value tokens per
    aspect, paraphrase prefix tokens per (aspect, paraphrase), noise tokens.
    """

    n_template_tokens: int
    n_aspects: int
    values_per_aspect: int
    paraphrases_per_aspect: int
    paraphrase_len: int
    noise_vocab: int

    @classmethod
    def from_world(cls, config: WorldConfig) -> "Vocabulary":
        return cls(
            n_template_tokens=config.n_template_tokens,
            n_aspects=config.n_aspects,
            values_per_aspect=config.values_per_aspect,
            paraphrases_per_aspect=config.paraphrases_per_aspect,
            paraphrase_len=config.paraphrase_len,
            noise_vocab=config.noise_vocab,
        )

    @property
    def template_start(self) -> int:
        return N_RESERVED_TOKENS

    @property
    def marker_start(self) -> int:
        return self.template_start + self.n_template_tokens

    @property
    def value_start(self) -> int:
        return self.marker_start + self.n_aspects

    @property
    def paraphrase_start(self) -> int:
        return self.value_start + self.n_aspects * self.values_per_aspect

    @property
    def noise_start(self) -> int:
        return self.paraphrase_start + self.n_aspects * self.paraphrases_per_aspect * self.paraphrase_len

    @property
    def size(self) -> int:
        return self.noise_start + self.noise_vocab

    def marker(self, aspect: int) -> int:
        return self.marker_start + aspect

    def value_token(self, aspect: int, value: int) -> int:
        return self.value_start + aspect * self.values_per_aspect + value

    def value_tokens(self, aspect: int, values: tuple[int, ...]) -> list[int]:
        return [self.value_token(aspect, v) for v in values]

    def paraphrase_tokens(self, aspect: int, paraphrase: int) -> list[int]:
        base = self.paraphrase_start + (aspect * self.paraphrases_per_aspect + paraphrase) * self.paraphrase_len
        return list(range(base, base + self.paraphrase_len))

    def noise_token(self, index: int) -> int:
        return self.noise_start + index

    def aspect_of_value(self, token: int) -> int | None:
        if self.value_start <= token < self.paraphrase_start:
            return (token - self.value_start) // self.values_per_aspect
        return None

    def template_token(self, word: str) -> int:
        """Stable template id for a template word."""
        digest = hashlib.sha256(word.lower().encode("utf-8")).digest()
        return self.template_start + int.from_bytes(digest[:4], "little") % self.n_template_tokens

    def render_template(self, template: str, label_tokens: list[int]) -> list[int]:
        """Tokenize a classification template around label tokens.

        Args:
            template: Template text containing ``{label}``
            label_tokens: Tokens substituted for the placeholder

        Returns:
            Template-word tokens, label tokens, then any trailing template words

        Raises:
            TemplateError: If the placeholder is missing
        """
        if LABEL_PLACEHOLDER not in template:
            raise TemplateError(f"template {template!r} lacks the {LABEL_PLACEHOLDER} placeholder")
        before, after = template.split(LABEL_PLACEHOLDER, 1)
        return (
            [self.template_token(w) for w in _WORD.findall(before)]
            + list(label_tokens)
            + [self.template_token(w) for w in _WORD.findall(after)]
        )
