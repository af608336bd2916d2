"""Minimal reverse-mode differentiation over numpy arrays."""

from abc_embed.autodiff.gradcheck import GradcheckReport, gradcheck
from abc_embed.autodiff.tensor import Graph, Tensor, backward, forward, no_grad

__all__ = ["Graph", "GradcheckReport", "Tensor", "backward", "forward", "gradcheck", "no_grad"]
