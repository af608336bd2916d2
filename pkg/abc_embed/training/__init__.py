"""Contrastive objective, optimizer, trainers and experiment harnesses."""
