import json
from pathlib import Path
from typing import Iterable, TypeVar

from pydantic import BaseModel, ValidationError

from abc_embed.core.errors import CorpusError

M = TypeVar("M", bound=BaseModel)


def read_jsonl_numbered(path: str | Path, model: type[M]) -> list[tuple[int, M]]:
    """Parse one pydantic record per line, keeping 1-based line numbers.

    Raises:
        CorpusError: Naming the file and line of the first malformed line
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError("file not found", file=str(path))
    records: list[tuple[int, M]] = []
    with path.open("r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append((number, model.model_validate(json.loads(line))))
            except (json.JSONDecodeError, ValidationError) as e:
                raise CorpusError(f"malformed record: {e}", file=path.name, line=number)
    return records


def read_jsonl(path: str | Path, model: type[M]) -> list[M]:
    return [record for _, record in read_jsonl_numbered(path, model)]


def write_jsonl(path: str | Path, records: Iterable[BaseModel]) -> Path:
    """Write records one JSON object per line, byte-stable across runs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(record.model_dump_json(exclude_none=True))
            handle.write("\n")
    return path
