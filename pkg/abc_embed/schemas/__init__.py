"""Pydantic models for configs, JSONL records and reports."""
