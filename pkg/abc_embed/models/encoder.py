"""The toy embedding backbone.

Token and position embeddings feed ``n_layers`` attention blocks (per-head
projections summed back into the residual stream, then a SELU feed-forward),
the last hidden layer is mean pooled over non-PAD positions, passed through
the residual head x + A·SELU(B·x) and L2-normalized.

Linear weights are stored (d_in × d_out) and applied to row vectors. The head
keeps its column-vector orientation: head.B is (head_hidden × d_model) and
head.A is (d_model × head_hidden).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from abc_embed.autodiff import ops
from abc_embed.autodiff.tensor import Graph, Tensor, no_grad
from abc_embed.core.errors import SequenceError
from abc_embed.models.enums import AttnMode, Stage
from abc_embed.models.lora import LoraAdapter
from abc_embed.schemas.config import PAD, SEP_INSTR, EncoderConfig
from abc_embed.utils.chunking import iter_chunks

TokenSeq = Sequence[int]

INIT_STD = 0.02
HEAD_NAMES = ("head.A", "head.B")
TAU_NAME = "log_tau"


@dataclass
class EncoderParams:
    """All trainable state of one encoder."""

    config: EncoderConfig
    tensors: dict[str, np.ndarray]
    lora: LoraAdapter | None = None
    frozen: frozenset[str] = field(default_factory=frozenset)
    stage: Stage = Stage.BOOTSTRAP
    step: int = 0
    seed: int = 0

    @property
    def tau(self) -> float:
        return float(np.exp(self.tensors[TAU_NAME]))

    def linear_names(self) -> list[str]:
        """Weights an adapter may target: every attention and feed-forward matrix."""
        return sorted(n for n in self.tensors if n.startswith("layers."))

    def base_names(self) -> list[str]:
        return sorted(self.tensors)

    def named_tensors(self) -> dict[str, np.ndarray]:
        named = dict(self.tensors)
        if self.lora is not None:
            named.update(self.lora.named_tensors())
        return named

    def assign(self, name: str, value: np.ndarray) -> None:
        if name.startswith("lora."):
            self.lora.assign(name, value)
        else:
            self.tensors[name] = value

    def copy(self) -> EncoderParams:
        return dataclasses.replace(
            self,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            lora=self.lora.copy() if self.lora is not None else None,
        )

    def round_to_storage(self) -> EncoderParams:
        """Copy with every tensor rounded through 32-bit storage precision."""
        rounded = self.copy()
        for name, value in rounded.named_tensors().items():
            rounded.assign(name, value.astype(np.float32).astype(np.float64))
        return rounded


def init_params(config: EncoderConfig, seed: int, tau_init: float = 0.07) -> EncoderParams:
    """Deterministic fresh parameters; the head starts as the identity.

    Args:
        config: Encoder shape
        seed: RNG seed
        tau_init: Initial temperature

    Returns:
        Parameters with Gaussian weights, zero head.B and log_tau = ln(tau_init)
    """
    rng = np.random.default_rng(seed)
    d, dh = config.d_model, config.head_dim

    def gauss(*shape: int) -> np.ndarray:
        return rng.normal(0.0, INIT_STD, size=shape)

    tensors: dict[str, np.ndarray] = {
        "tok_emb": gauss(config.vocab_size, d),
        "pos_emb": gauss(config.max_seq, d),
    }
    for layer in range(config.n_layers):
        for head in range(config.n_heads):
            prefix = f"layers.{layer}.attn.{head}"
            tensors[f"{prefix}.wq"] = gauss(d, dh)
            tensors[f"{prefix}.wk"] = gauss(d, dh)
            tensors[f"{prefix}.wv"] = gauss(d, dh)
            tensors[f"{prefix}.wo"] = gauss(dh, d)
        tensors[f"layers.{layer}.ffn.w1"] = gauss(d, config.ffn_hidden)
        tensors[f"layers.{layer}.ffn.w2"] = gauss(config.ffn_hidden, d)
    tensors["head.A"] = gauss(d, config.head_width)
    tensors["head.B"] = np.zeros((config.head_width, d))
    tensors[TAU_NAME] = np.array(math.log(tau_init))
    return EncoderParams(config=config, tensors=tensors, seed=seed)


def constant_view(params: EncoderParams) -> dict[str, Tensor]:
    return {name: Tensor(value) for name, value in params.named_tensors().items()}


def graph_view(graph: Graph, params: EncoderParams, trainable: set[str] | frozenset[str]) -> dict[str, Tensor]:
    """Bind every tensor of ``params`` as a graph leaf."""
    return {
        name: graph.leaf(name, value, trainable=name in trainable)
        for name, value in params.named_tensors().items()
    }


def assemble_query(image_tokens: TokenSeq, instruction_tokens: TokenSeq | None, max_seq: int) -> list[int]:
    """Lay out ``<image> SEP_INSTR <instruction>``.

    Raises:
        SequenceError: If the assembled query would exceed ``max_seq``
    """
    if instruction_tokens is None:
        tokens = list(image_tokens)
    else:
        tokens = [*image_tokens, SEP_INSTR, *instruction_tokens]
    if len(tokens) > max_seq:
        raise SequenceError(
            f"query needs {len(tokens)} positions but max_seq is {max_seq}",
            required_length=len(tokens),
        )
    return tokens


def _pad(config: EncoderConfig, seqs: Sequence[TokenSeq]) -> np.ndarray:
    if not seqs:
        raise SequenceError("no sequences to encode")
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), max(width, 1)), PAD, dtype=np.int64)
    for row, seq in enumerate(seqs):
        if len(seq) == 0:
            raise SequenceError("empty token sequence")
        if len(seq) > config.max_seq:
            raise SequenceError(
                f"sequence of length {len(seq)} exceeds max_seq {config.max_seq}",
                required_length=len(seq),
            )
        arr = np.asarray(seq, dtype=np.int64)
        if arr.min() < 0 or arr.max() >= config.vocab_size:
            raise SequenceError(f"unknown token id in {list(seq)} (vocab_size {config.vocab_size})")
        if not np.any(arr != PAD):
            raise SequenceError("sequence holds only PAD tokens")
        ids[row, : len(seq)] = arr
    return ids


def _linear(x: Tensor, name: str, view: dict[str, Tensor], lora: LoraAdapter | None) -> Tensor:
    out = ops.matmul(x, view[name])
    if lora is not None and name in lora.targets:
        low = ops.matmul(ops.matmul(x, view[f"lora.{name}.down"]), view[f"lora.{name}.up"])
        out = ops.add(out, ops.scalar_mul(low, lora.scale))
    return out


def _head(pooled: Tensor, view: dict[str, Tensor]) -> Tensor:
    inner = ops.selu(ops.matmul(pooled, view["head.B"], transpose_b=True))
    return ops.add(pooled, ops.matmul(inner, view["head.A"], transpose_b=True))


def encode_batch(
    params: EncoderParams,
    view: dict[str, Tensor],
    seqs: Sequence[TokenSeq],
    *,
    use_lora: bool,
) -> Tensor:
    """Unit embeddings (len(seqs) × d_model) built from ``view``'s tensors."""
    config = params.config
    ids = _pad(config, seqs)
    keep = ids != PAD
    length = ids.shape[1]
    lora = params.lora if use_lora else None

    x = ops.add(ops.embedding(view["tok_emb"], ids), ops.embedding(view["pos_emb"], np.arange(length)))

    allowed = np.broadcast_to(keep[:, None, :], (len(seqs), length, length))
    if config.attn_mode == AttnMode.CAUSAL:
        allowed = allowed & np.tril(np.ones((length, length), dtype=bool))[None]
    allowed = np.ascontiguousarray(allowed)
    inv_sqrt = 1.0 / math.sqrt(config.head_dim)

    for layer in range(config.n_layers):
        attn = None
        for head in range(config.n_heads):
            prefix = f"layers.{layer}.attn.{head}"
            q = _linear(x, f"{prefix}.wq", view, lora)
            k = _linear(x, f"{prefix}.wk", view, lora)
            v = _linear(x, f"{prefix}.wv", view, lora)
            scores = ops.scalar_mul(ops.matmul(q, k, transpose_b=True), inv_sqrt)
            context = ops.matmul(ops.masked_softmax(scores, allowed), v)
            out = _linear(context, f"{prefix}.wo", view, lora)
            attn = out if attn is None else ops.add(attn, out)
        x = ops.add(x, attn)
        hidden = ops.selu(_linear(x, f"layers.{layer}.ffn.w1", view, lora))
        x = ops.add(x, _linear(hidden, f"layers.{layer}.ffn.w2", view, lora))

    pooled = ops.mean(x, axis=1, mask=keep)
    return ops.l2_normalize(_head(pooled, view))


def encode(params: EncoderParams, tokens: TokenSeq, use_lora: bool = False) -> np.ndarray:
    """Unit embedding of one token sequence."""
    with no_grad():
        return encode_batch(params, constant_view(params), [tokens], use_lora=use_lora).data[0]


def embed_sequences(
    params: EncoderParams,
    seqs: Sequence[TokenSeq],
    *,
    use_lora: bool = False,
    batch_size: int = 64,
) -> np.ndarray:
    """Embed many sequences without recording gradients.

    Args:
        params: Encoder parameters
        seqs: Token sequences
        use_lora: Route through the adapter when present
        batch_size: Sequences encoded per forward pass

    Returns:
        Array of shape (len(seqs), d_model)
    """
    view = constant_view(params)
    with no_grad():
        rows = [encode_batch(params, view, chunk, use_lora=use_lora).data for chunk in iter_chunks(seqs, batch_size)]
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, params.config.d_model))


def mlp_head(x: np.ndarray, params: EncoderParams) -> np.ndarray:
    """x + head.A · SELU(head.B · x) for a vector or a stack of row vectors."""
    view = constant_view(params)
    with no_grad():
        return _head(Tensor(x), view).data
