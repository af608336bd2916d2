"""Encoder parameters and adapters."""
