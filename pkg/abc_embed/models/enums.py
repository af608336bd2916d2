import enum


class AttnMode(str, enum.Enum):
    """Attention mask used by every encoder block."""

    CAUSAL = "causal"
    BIDIRECTIONAL = "bidirectional"


class Stage(str, enum.Enum):
    """Training stage recorded in checkpoints."""

    BOOTSTRAP = "bootstrap"
    STAGE1 = "1"
    STAGE2 = "2"


class NegativeSource(str, enum.Enum):
    """Where pretraining negatives come from."""

    MINED = "mined"
    RANDOM = "random"


class Direction(str, enum.Enum):
    """Retrieval direction."""

    IMAGE_TO_TEXT = "i2t"
    TEXT_TO_IMAGE = "t2i"


class CtrlBenchMode(str, enum.Enum):
    """Candidate pool of a benchmark query: every bench caption, or its own image's captions."""

    GLOBAL = "global"
    WITHIN_IMAGE = "within_image"


class Split(str, enum.Enum):
    """Corpus split tags."""

    TRAIN = "train"
    VAL = "val"
    BENCH = "bench"
    HELD_OUT = "held_out"
