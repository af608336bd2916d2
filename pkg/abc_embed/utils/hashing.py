import hashlib

from pydantic import BaseModel


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def config_hash(config: BaseModel) -> str:
    """Short provenance hash of a pydantic config."""
    return sha256_bytes(config.model_dump_json().encode("utf-8"))[:16]
