import re
from datetime import datetime
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator

_RECALL_KEY = re.compile(r"^R@(\d+)$")


class StepMetrics(BaseModel):
    """One line of metrics.jsonl."""

    step: int
    loss: float
    tau: float
    grad_norm: float
    val_acc: float | None = None


class RunMetrics(BaseModel):
    """Per-step trajectories of one training run."""

    stage: str
    config_hash: str
    seed: int
    steps: list[StepMetrics] = Field(default_factory=list)
    diverged: bool = False
    tau_floor_hit: bool = False

    @property
    def final(self) -> StepMetrics | None:
        return self.steps[-1] if self.steps else None

    @property
    def final_val_acc(self) -> float | None:
        for step in reversed(self.steps):
            if step.val_acc is not None:
                return step.val_acc
        return None

    def trajectory(self, key: str) -> list[float | None]:
        return [getattr(s, key) for s in self.steps]


class EvalReport(BaseModel):
    """Contents of report.json."""

    task: str
    metrics: dict[str, float]
    ckpt_hash: str
    corpus_hash: str
    n_queries: int

    @field_validator("metrics")
    @classmethod
    def check_metrics(cls, v: dict[str, float]) -> dict[str, float]:
        """Metrics are fractions; R@k never decreases with k."""
        for name, value in v.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"metric {name} = {value} outside [0, 1]")
        recalls = sorted((int(m.group(1)), v[key]) for key in v if (m := _RECALL_KEY.match(key)))
        for (_, lo), (_, hi) in zip(recalls, recalls[1:]):
            if hi < lo:
                raise ValueError("R@k must be non-decreasing in k")
        return v


class ExperimentReport(BaseModel):
    """Comparison table emitted by an experiment harness."""

    name: str
    rows: list[dict[str, Any]]
    notes: list[str] = Field(default_factory=list)
    trajectories: dict[str, RunMetrics] = Field(default_factory=dict)


class RankRecord(BaseModel):
    """One line of ranks.jsonl: where a query's gold candidate landed."""

    query_id: str
    gold_id: str
    rank: int


class CorpusReport(BaseModel):
    """Result of corpus validation: OK or the first violation."""

    ok: bool
    violation: str | None = None
    file: str | None = None
    line: int | None = None


class RunMetadata(BaseModel):
    """run.json written by every CLI command."""

    model_config = ConfigDict(use_enum_values=True)

    command: str
    version: str
    seed: int | None
    config: dict[str, Any]
    started_at: datetime
    wall_time_s: float
    status: str = "ok"
    outcome: dict[str, Any] = Field(default_factory=dict)
