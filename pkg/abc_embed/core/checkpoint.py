"""The "ABCE" checkpoint container.

Layout (little-endian):
    magic b"ABCE" | version u32 | meta length u32 | meta JSON (UTF-8)
    | tensor count u32 | per tensor: name length u32, name, rank u32,
    dims u64[rank], float32 data
"""

import logging
import struct
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ValidationError

from abc_embed.core.errors import CheckpointError
from abc_embed.models.encoder import TAU_NAME, EncoderParams
from abc_embed.models.enums import Stage
from abc_embed.models.lora import LoraAdapter
from abc_embed.schemas.config import EncoderConfig
from abc_embed.utils.hashing import sha256_bytes

logger = logging.getLogger(__name__)

MAGIC = b"ABCE"
FORMAT_VERSION = 1


class LoraMeta(BaseModel):
    rank: int
    alpha: float
    targets: list[str]


class CheckpointMeta(BaseModel):
    """Metadata block of a checkpoint."""

    config: EncoderConfig
    stage: Stage
    step: int
    tau: float
    seed: int
    lora: LoraMeta | None = None
    frozen: list[str] = []


class CheckpointStore:
    """Serialize encoder parameters to and from the ABCE container."""

    def to_bytes(self, params: EncoderParams) -> bytes:
        """Encode parameters at 32-bit storage precision.

        Args:
            params: Parameters to serialize

        Returns:
            Container bytes
        """
        named = params.named_tensors()
        stored_log_tau = np.float64(np.float32(named[TAU_NAME]))
        meta = CheckpointMeta(
            config=params.config,
            stage=params.stage,
            step=params.step,
            tau=float(np.exp(stored_log_tau)),
            seed=params.seed,
            lora=(
                LoraMeta(rank=params.lora.rank, alpha=params.lora.alpha, targets=list(params.lora.targets))
                if params.lora is not None
                else None
            ),
            frozen=sorted(params.frozen),
        )
        meta_bytes = meta.model_dump_json().encode("utf-8")

        parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(meta_bytes)), meta_bytes]
        parts.append(struct.pack("<I", len(named)))
        for name in sorted(named):
            value = np.asarray(named[name], dtype="<f4")
            encoded = name.encode("utf-8")
            parts.append(struct.pack("<I", len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack("<I", value.ndim))
            parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
            parts.append(value.tobytes(order="C"))
        return b"".join(parts)

    def from_bytes(self, blob: bytes) -> EncoderParams:
        """Decode a container; tensors come back as float64.

        Raises:
            CheckpointError: If the container is malformed
        """
        try:
            return self._decode(blob)
        except (struct.error, UnicodeDecodeError, ValidationError, ValueError, KeyError) as e:
            raise CheckpointError(f"malformed checkpoint: {e}")

    def _decode(self, blob: bytes) -> EncoderParams:
        if blob[:4] != MAGIC:
            raise CheckpointError("bad magic bytes")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack_from("<I", blob, 8)
        offset = 12
        meta = CheckpointMeta.model_validate_json(blob[offset : offset + meta_len].decode("utf-8"))
        offset += meta_len

        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        named: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, offset)
            offset += 8 * rank
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            data = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            named[name] = data.astype(np.float64).reshape(dims)
        if offset != len(blob):
            raise CheckpointError(f"{len(blob) - offset} trailing bytes")

        lora = None
        if meta.lora is not None:
            lora = LoraAdapter(rank=meta.lora.rank, alpha=meta.lora.alpha, targets=tuple(meta.lora.targets))
        tensors = {}
        for name, value in named.items():
            if name.startswith("lora."):
                if lora is None:
                    raise CheckpointError(f"adapter tensor {name} without adapter metadata")
                lora.assign(name, value)
            else:
                tensors[name] = value
        return EncoderParams(
            config=meta.config,
            tensors=tensors,
            lora=lora,
            frozen=frozenset(meta.frozen),
            stage=meta.stage,
            step=meta.step,
            seed=meta.seed,
        )

    def save(self, params: EncoderParams, path: str | Path) -> str:
        """Write a checkpoint file.

        Args:
            params: Parameters to store
            path: Destination file

        Returns:
            SHA-256 of the written bytes
        """
        blob = self.to_bytes(params)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(blob)
        logger.info("saved %s checkpoint (step %d) to %s", params.stage.value, params.step, path)
        return sha256_bytes(blob)

    def load(self, path: str | Path) -> EncoderParams:
        """Read a checkpoint file.

        Raises:
            CheckpointError: If the file is missing or malformed
        """
        path = Path(path)
        if not path.is_file():
            raise CheckpointError(f"checkpoint not found: {path}")
        return self.from_bytes(path.read_bytes())

    def fingerprint(self, params: EncoderParams) -> str:
        return sha256_bytes(self.to_bytes(params))


# Global checkpoint store instance
checkpoint_store = CheckpointStore()
