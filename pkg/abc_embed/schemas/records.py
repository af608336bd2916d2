from pydantic import BaseModel, ConfigDict, Field, model_validator

from abc_embed.models.enums import Split


class ImageRecord(BaseModel):
    """One line of images.jsonl."""

    model_config = ConfigDict(extra="forbid")

    id: str
    tokens: list[int] = Field(..., min_length=1)
    split: Split = Split.TRAIN


class CaptionRecord(BaseModel):
    """One line of captions.jsonl."""

    model_config = ConfigDict(extra="forbid")

    id: str
    image_id: str
    aspect: int = Field(..., ge=0)
    tokens: list[int] = Field(..., min_length=1)


class InstructionRecord(BaseModel):
    """One line of instructions.jsonl."""

    model_config = ConfigDict(extra="forbid")

    id: str
    image_id: str
    aspect: int = Field(..., ge=0)
    paraphrase: int = Field(..., ge=0)
    tokens: list[int] = Field(..., min_length=1)
    split: Split


class CtrlBenchRecord(BaseModel):
    """One instruction-controlled retrieval query."""

    model_config = ConfigDict(extra="forbid")

    image_id: str
    instruction_id: str
    positive_caption_id: str


class MinedRecord(BaseModel):
    """One line of mined.jsonl."""

    model_config = ConfigDict(extra="forbid")

    image_id: str
    pos: str
    neg: list[str]
    pos_score: float
    neg_scores: list[float]

    @model_validator(mode="after")
    def check_lengths(self) -> "MinedRecord":
        if len(self.neg) != len(self.neg_scores):
            raise ValueError("neg and neg_scores must have equal length")
        return self
