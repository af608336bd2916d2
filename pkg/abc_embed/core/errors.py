"""Structured errors shared by every pipeline stage.

Each error carries a human readable ``detail``, the ``stage`` that raised it
and the process ``exit_code`` the CLI returns for it.
"""


class AbcError(Exception):
    """Base error for the embedding pipeline."""

    exit_code: int = 1
    stage: str = "pipeline"

    def __init__(self, detail: str, *, stage: str | None = None, exit_code: int | None = None):
        super().__init__(detail)
        self.detail = detail
        if stage is not None:
            self.stage = stage
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> str:
        return f"{self.stage}: {self.detail}"


class ShapeError(AbcError):
    """Operand shapes are incompatible for a primitive."""

    stage = "tensor-core"

    def __init__(self, op: str, left: tuple[int, ...], right: tuple[int, ...]):
        super().__init__(f"{op}: incompatible shapes {left} and {right}")
        self.op = op
        self.shapes = (left, right)


class DomainError(AbcError):
    """Input lies outside the mathematical domain of an operation."""

    stage = "tensor-core"


class GraphError(AbcError):
    """Misuse of the differentiation graph (non-scalar loss, unbound leaf)."""

    stage = "tensor-core"


class SequenceError(AbcError):
    """Token sequence is empty, too long, or holds unknown ids."""

    stage = "encoder"

    def __init__(self, detail: str, *, required_length: int | None = None):
        super().__init__(detail)
        self.required_length = required_length


class ConfigError(AbcError):
    """Configuration failed validation."""

    stage = "config"
    exit_code = 3

    def __init__(self, detail: str, *, field_path: str | None = None):
        super().__init__(f"{field_path}: {detail}" if field_path else detail)
        self.field_path = field_path


class TemplateError(ConfigError):
    """Classification template is missing its placeholder."""

    stage = "evalsuite"


class CorpusError(AbcError):
    """Corpus generation or validation failure."""

    stage = "corpus"

    def __init__(self, detail: str, *, file: str | None = None, line: int | None = None):
        where = f"{file}:{line}: " if file and line else (f"{file}: " if file else "")
        super().__init__(f"{where}{detail}")
        self.file = file
        self.line = line


class InsufficientNegatives(AbcError):
    """Fewer eligible captions than requested negatives."""

    stage = "mining"

    def __init__(self, eligible: int, *, image_id: str | None = None, k: int | None = None):
        who = f" for image {image_id}" if image_id else ""
        need = f" (need {k})" if k is not None else ""
        super().__init__(f"only {eligible} eligible negatives{who}{need}")
        self.eligible = eligible
        self.image_id = image_id
        self.k = k


class GeometryError(AbcError):
    """Batch geometry violates the N/M contract."""

    stage = "batching"


class CheckpointError(AbcError):
    """Checkpoint container is malformed or unreadable."""

    stage = "checkpoint"


class StageError(AbcError):
    """Operation applied to parameters of the wrong training stage."""

    stage = "trainer"


class DivergenceError(AbcError):
    """Training produced non-finite values."""

    stage = "trainer"

    def __init__(self, detail: str, *, metrics=None):
        super().__init__(detail)
        self.metrics = metrics
