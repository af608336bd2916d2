"""Shared helpers for command handlers: config loading, artifact paths, run metadata."""

from __future__ import annotations

import json
import logging
import subprocess
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, TypeVar

from pydantic import BaseModel, ValidationError

from abc_embed import __version__
from abc_embed.core.config import settings
from abc_embed.core.errors import ConfigError
from abc_embed.data.corpus import Corpus, load_corpus
from abc_embed.data.jsonl import write_jsonl
from abc_embed.evaluation.suite import EvalResult
from abc_embed.models.enums import Stage
from abc_embed.schemas.config import FULL_SCALE
from abc_embed.schemas.reports import RunMetadata, RunMetrics

logger = logging.getLogger(__name__)

C = TypeVar("C", bound=BaseModel)

RUN_FILE = "run.json"
CHECKPOINT_FILE = "model.abce"
METRICS_FILE = "metrics.jsonl"
REPORT_FILE = "report.json"
RANKS_FILE = "ranks.jsonl"


def _field_path(error: ValidationError) -> str:
    first = error.errors()[0]
    return ".".join(str(part) for part in first["loc"]) or "<root>"


def read_config_file(path: str | Path | None) -> dict[str, Any]:
    """Raw JSON object of a config file (empty when no path is given).

    Raises:
        ConfigError: If the file is missing or not a JSON object
    """
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def load_config(path: str | Path | None, model: type[C], **overrides: Any) -> C:
    """Validate a JSON config file, with command-line overrides applied on top.

    Args:
        path: Config file, or None for defaults only
        model: Pydantic config model
        **overrides: Field values that win over the file; None values are skipped

    Returns:
        Validated config

    Raises:
        ConfigError: Carrying the dotted path of the first invalid field
    """
    data = {**read_config_file(path), **{k: v for k, v in overrides.items() if v is not None}}
    return validate_config(model, data)


def validate_config(model: type[C], data: dict[str, Any]) -> C:
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(e.errors()[0]["msg"], field_path=_field_path(e))


def full_scale_preset(stage: Stage) -> dict[str, Any]:
    """Full-scale training settings, from ABC_FULL_SCALE_CONFIG or the built-in table."""
    if settings.FULL_SCALE_CONFIG:
        presets = read_config_file(settings.FULL_SCALE_CONFIG)
        if stage.value not in presets:
            raise ConfigError(f"no stage {stage.value} entry", field_path=stage.value)
        return dict(presets[stage.value])
    return dict(FULL_SCALE[stage])


def version_string() -> str:
    """``git describe`` of the working tree, or the package version outside a checkout."""
    try:
        described = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
    except (OSError, subprocess.SubprocessError):
        described = None
    if described is not None and described.returncode == 0 and described.stdout.strip():
        return described.stdout.strip()
    return f"v{__version__}"


def run_dir(out: str | Path) -> Path:
    """Directory that receives run.json: ``out`` itself, or its parent for file targets."""
    out = Path(out)
    directory = out.parent if out.suffix else out
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def write_run_metadata(
    out: str | Path,
    command: str,
    started_at: datetime,
    started: float,
    *,
    seed: int | None = None,
    config: BaseModel | dict[str, Any] | None = None,
    status: str = "ok",
    outcome: dict[str, Any] | None = None,
) -> Path:
    """Write run.json next to a command's outputs.

    Args:
        out: Output directory (or output file)
        command: Command name
        started_at: Wall-clock start
        started: ``time.perf_counter()`` at start
        seed: Effective seed
        config: Effective config, echoed verbatim
        status: "ok", "diverged" or "failed"
        outcome: Command-specific result flags (validation report, divergence)

    Returns:
        Path of run.json
    """
    if isinstance(config, BaseModel):
        config = config.model_dump(mode="json")
    metadata = RunMetadata(
        command=command,
        version=version_string(),
        seed=seed,
        config=config or {},
        started_at=started_at,
        wall_time_s=round(time.perf_counter() - started, 3),
        status=status,
        outcome=outcome or {},
    )
    path = run_dir(out) / RUN_FILE
    path.write_text(metadata.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def now() -> tuple[datetime, float]:
    return datetime.now(timezone.utc), time.perf_counter()


def open_corpus(data_dir: str | Path | None) -> Corpus:
    return load_corpus(data_dir or settings.DATA_DIR)


def write_metrics(out_dir: str | Path, metrics: RunMetrics) -> Path:
    return write_jsonl(Path(out_dir) / METRICS_FILE, metrics.steps)


def write_eval(out_dir: str | Path, result: EvalResult, dump_ranks: bool) -> Path:
    """Write ``<out>/<task>/report.json`` and optionally ranks.jsonl."""
    directory = Path(out_dir) / result.report.task
    directory.mkdir(parents=True, exist_ok=True)
    (directory / REPORT_FILE).write_text(result.report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    if dump_ranks:
        write_jsonl(directory / RANKS_FILE, result.ranks)
    return directory
