"""Temperature-scaled contrastive loss over a shared candidate set.

For query i with positive candidate p(i):

    loss = (1/N) Σᵢ [ log Σⱼ exp(S[i,j]/τ) − S[i,p(i)]/τ ]

Every candidate in the batch sits in every query's denominator, so other
queries' positives and other queries' mined negatives act as in-batch
negatives. The log-sum-exp subtracts each row's maximum as a constant.
"""

from __future__ import annotations

import numpy as np

from abc_embed.autodiff import ops
from abc_embed.autodiff.tensor import Tensor, as_tensor
from abc_embed.core.errors import DomainError, ShapeError
from abc_embed.data.batching import BatchLayout

UNIT_TOL = 1e-6


def _check_unit(name: str, x: Tensor) -> None:
    norms = np.linalg.norm(x.data, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise DomainError(f"{name} rows must be unit-normalized (max deviation {np.max(np.abs(norms - 1.0)):.3g})")


def similarity_matrix(queries, candidates) -> Tensor:
    """N×M cosine similarities of unit query and candidate rows.

    Raises:
        DomainError: If any row is not unit-norm within 1e-6
    """
    q, c = as_tensor(queries), as_tensor(candidates)
    if q.data.ndim != 2 or c.data.ndim != 2 or q.shape[1] != c.shape[1]:
        raise ShapeError("similarity_matrix", q.shape, c.shape)
    _check_unit("query", q)
    _check_unit("candidate", c)
    return ops.matmul(q, c, transpose_b=True)


def contrastive_loss(similarities, layout: BatchLayout, tau: float | Tensor) -> Tensor:
    """Mean over queries of the softmax cross-entropy of each positive.

    Args:
        similarities: N×M similarity matrix
        layout: Positive index per query
        tau: Temperature, a float or a scalar tensor (e.g. exp(log_tau))

    Returns:
        Scalar loss tensor

    Raises:
        DomainError: If tau is not positive
    """
    s = as_tensor(similarities)
    tau = as_tensor(tau)
    if tau.shape != ():
        raise ShapeError("contrastive_loss", s.shape, tau.shape)
    if not tau.data > 0:
        raise DomainError(f"temperature must be positive, got {float(tau.data)}")
    n, m = layout.n_queries, layout.n_candidates
    if s.shape != (n, m):
        raise ShapeError("contrastive_loss", s.shape, (n, m))

    logits = ops.scalar_mul(s, ops.inverse(tau))
    peak = np.max(logits.data, axis=1)
    shifted = ops.sub(logits, Tensor(np.repeat(peak[:, None], m, axis=1)))
    log_sum = ops.add(ops.log(ops.scalar_mul(ops.mean(ops.exp(shifted), axis=1), float(m))), Tensor(peak))
    positive = ops.mean(logits, axis=1, mask=layout.onehot())
    return ops.mean(ops.sub(log_sum, positive), axis=0)


def loss_with_stop_gradient(
    queries,
    candidates,
    layout: BatchLayout,
    tau: float | Tensor,
    *,
    candidate_grads: bool,
) -> Tensor:
    """Contrastive loss from embeddings, optionally cutting the candidate side.

    With ``candidate_grads=False`` the candidate embeddings enter as constants:
    gradient reaches the query encoder (and a trainable τ) only.
    """
    c = as_tensor(candidates)
    if not candidate_grads:
        c = c.detach()
    return contrastive_loss(similarity_matrix(queries, c), layout, tau)
