import math
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from abc_embed.models.enums import AttnMode, NegativeSource, Stage

# Reserved token ids shared by every vocabulary
PAD = 0
SEP_INSTR = 1
BOS = 2
EOS = 3
N_RESERVED_TOKENS = 4


class EncoderConfig(BaseModel):
    """Shape of the toy encoder."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    vocab_size: int = Field(192, ge=N_RESERVED_TOKENS)
    d_model: int = Field(64, ge=1)
    n_layers: int = Field(2, ge=0)
    n_heads: int = Field(2, ge=1)
    max_seq: int = Field(24, ge=1)
    attn_mode: AttnMode = AttnMode.BIDIRECTIONAL
    head_hidden: int | None = Field(None, ge=1)
    ffn_hidden: int = Field(128, ge=1)

    @model_validator(mode="after")
    def check_heads(self) -> "EncoderConfig":
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def head_width(self) -> int:
        return self.head_hidden or self.d_model


class WorldConfig(BaseModel):
    """Synthetic aspect-structured world."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_images: int = Field(100, ge=1)
    n_val_images: int = Field(0, ge=0)
    n_bench_images: int = Field(0, ge=0)
    n_aspects: int = Field(4, ge=2)
    values_per_aspect: int = Field(24, ge=1)
    tokens_per_value: int = Field(2, ge=1)
    paraphrases_per_aspect: int = Field(3, ge=2)
    paraphrase_len: int = Field(2, ge=1)
    noise_tokens_per_image: int = Field(4, ge=0)
    noise_vocab: int = Field(16, ge=1)
    n_template_tokens: int = Field(8, ge=1)
    bench_pairs_per_image: int | None = Field(None, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def check_splits(self) -> "WorldConfig":
        if self.n_val_images + self.n_bench_images >= self.n_images:
            raise ValueError("val and bench images must leave at least one training image")
        if self.bench_pairs_per_image is not None and self.bench_pairs_per_image > self.n_aspects:
            raise ValueError("bench_pairs_per_image cannot exceed n_aspects")
        return self

    @property
    def n_train_images(self) -> int:
        return self.n_images - self.n_val_images - self.n_bench_images

    @property
    def pairs_per_image(self) -> int:
        return self.bench_pairs_per_image or self.n_aspects


class MiningConfig(BaseModel):
    """Negative-mining hyperparameters."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    epsilon: float = Field(0.95, ge=0.0, le=1.0)
    k: int = Field(7, ge=1)
    window: int = Field(100, ge=1)
    chunk_size: int = Field(64, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def check_window(self) -> "MiningConfig":
        if self.window < self.k:
            raise ValueError("window must be at least k")
        return self


# Desk-scale defaults per stage, plus the full-scale reference settings
STAGE_DEFAULTS: dict[Stage, dict[str, Any]] = {
    Stage.BOOTSTRAP: {"steps": 300, "n_queries": 32, "n_candidates": 32, "lora_rank": 0, "lora_alpha": 0.0},
    Stage.STAGE1: {"steps": 500, "n_queries": 16, "n_candidates": 128, "lora_rank": 8, "lora_alpha": 16.0},
    Stage.STAGE2: {"steps": 100, "images_per_batch": 8, "group_size": 4, "lora_rank": 4, "lora_alpha": 8.0},
}

FULL_SCALE: dict[Stage, dict[str, Any]] = {
    Stage.BOOTSTRAP: {"steps": 1000, "lr": 4e-5, "n_queries": 256, "n_candidates": 256, "lora_rank": 0},
    Stage.STAGE1: {
        "steps": 4000,
        "lr": 4e-5,
        "n_queries": 512,
        "n_candidates": 4096,
        "lora_rank": 64,
        "lora_alpha": 128.0,
    },
    Stage.STAGE2: {
        "steps": 100,
        "lr": 4e-5,
        "images_per_batch": 128,
        "group_size": 4,
        "lora_rank": 16,
        "lora_alpha": 32.0,
    },
}


class TrainConfig(BaseModel):
    """One training run (bootstrap, stage 1 or stage 2)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    stage: Stage = Stage.STAGE1
    steps: int = Field(500, ge=0)
    lr: float = Field(1e-3, gt=0.0)
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = Field(1e-3, ge=0.0)
    warmup_frac: float = Field(0.03, ge=0.0, lt=1.0)

    # Batch geometry
    n_queries: int = Field(16, ge=1)
    n_candidates: int = Field(128, ge=1)
    images_per_batch: int = Field(8, ge=1)
    group_size: int = Field(4, ge=1)

    # Adapter
    lora_rank: int = Field(8, ge=0)
    lora_alpha: float = Field(16.0, ge=0.0)

    # Temperature
    tau_init: float = Field(0.07, gt=0.0)
    tau_floor: float = Field(1e-3, gt=0.0)

    negatives: NegativeSource = NegativeSource.MINED
    seed: int = 7
    eval_every: int = Field(50, ge=1)
    val_pool_size: int = Field(64, ge=2)

    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    init_checkpoint: str | None = None
    stage1_checkpoint: str | None = None

    @model_validator(mode="before")
    @classmethod
    def fill_stage_defaults(cls, data: Any) -> Any:
        """Missing fields take the desk default of the configured stage."""
        if isinstance(data, dict):
            stage = Stage(data.get("stage", Stage.STAGE1))
            return {**STAGE_DEFAULTS[stage], **data}
        return data

    @field_validator("betas")
    @classmethod
    def check_betas(cls, v: tuple[float, float]) -> tuple[float, float]:
        if not all(0.0 <= b < 1.0 for b in v):
            raise ValueError("betas must lie in [0, 1)")
        return v

    @model_validator(mode="after")
    def check_stage(self) -> "TrainConfig":
        if self.stage == Stage.STAGE2 and not self.stage1_checkpoint:
            raise ValueError("stage 2 requires stage1_checkpoint")
        if self.stage != Stage.BOOTSTRAP and self.lora_rank == 0:
            raise ValueError("stages 1 and 2 train a LoRA adapter; lora_rank must be >= 1")
        return self

    @property
    def warmup_steps(self) -> int:
        return math.ceil(round(self.warmup_frac * self.steps, 9))

    @classmethod
    def full_scale(cls, stage: Stage, **overrides: Any) -> "TrainConfig":
        """The full-scale settings (not run in CI)."""
        return cls.model_validate({"stage": stage, **FULL_SCALE[stage], **overrides})


class ExperimentConfig(BaseModel):
    """Grid of runs for the temperature, architecture and scaling experiments."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    train: TrainConfig = Field(default_factory=lambda: TrainConfig(stage=Stage.STAGE1, steps=200))
    seeds: list[int] = Field(default_factory=lambda: [7, 8, 9], min_length=1)
    tau_inits: list[float] = Field(default_factory=lambda: [0.01, 0.07, 0.3], min_length=1)
    attn_modes: list[AttnMode] = Field(default_factory=lambda: [AttnMode.BIDIRECTIONAL, AttnMode.CAUSAL])
    lora_ranks: list[int] = Field(default_factory=lambda: [2, 4, 8], min_length=1)
    batch_scale: int = Field(4, ge=2)
    step_doublings: int = Field(2, ge=0)

    @field_validator("tau_inits")
    @classmethod
    def check_tau_inits(cls, v: list[float]) -> list[float]:
        if any(t <= 0 for t in v):
            raise ValueError("temperatures must be positive")
        return v

    @model_validator(mode="after")
    def check_batch_scale(self) -> "ExperimentConfig":
        """The scaling experiment divides the train geometry by batch_scale."""
        if self.train.n_queries % self.batch_scale or self.train.n_candidates % self.batch_scale:
            raise ValueError("train.n_queries and train.n_candidates must be multiples of batch_scale")
        return self
