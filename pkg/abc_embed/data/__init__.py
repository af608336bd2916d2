"""Synthetic corpus, negative mining and batch construction."""
