"""Instruction-controlled contrastive embeddings at desk scale."""

__version__ = "1.0.0"
