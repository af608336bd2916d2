from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from abc_embed.core.errors import StageError

if TYPE_CHECKING:
    from abc_embed.models.encoder import EncoderParams


@dataclass
class LoraAdapter:
    """Low-rank additive update W + (alpha / rank) · down · up per target weight."""

    rank: int
    alpha: float
    targets: tuple[str, ...]
    down: dict[str, np.ndarray] = field(default_factory=dict)
    up: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def delta(self, target: str) -> np.ndarray:
        return self.scale * (self.down[target] @ self.up[target])

    def tensor_names(self) -> list[str]:
        return [f"lora.{t}.{part}" for t in self.targets for part in ("down", "up")]

    def named_tensors(self) -> dict[str, np.ndarray]:
        named: dict[str, np.ndarray] = {}
        for t in self.targets:
            named[f"lora.{t}.down"] = self.down[t]
            named[f"lora.{t}.up"] = self.up[t]
        return named

    def assign(self, name: str, value: np.ndarray) -> None:
        _, target_and_part = name.split(".", 1)
        target, part = target_and_part.rsplit(".", 1)
        getattr(self, part)[target] = value

    def copy(self) -> LoraAdapter:
        return LoraAdapter(
            rank=self.rank,
            alpha=self.alpha,
            targets=self.targets,
            down={k: v.copy() for k, v in self.down.items()},
            up={k: v.copy() for k, v in self.up.items()},
        )

    @classmethod
    def init(
        cls,
        shapes: dict[str, tuple[int, int]],
        rank: int,
        alpha: float,
        seed: int,
    ) -> LoraAdapter:
        """New adapter with Gaussian ``down`` and zero ``up``.

        Args:
            shapes: (d_in, d_out) per target weight
            rank: Adapter rank r
            alpha: Scale numerator
            seed: RNG seed

        Returns:
            Adapter whose delta is exactly zero
        """
        rng = np.random.default_rng(seed)
        targets = tuple(sorted(shapes))
        down, up = {}, {}
        for t in targets:
            d_in, d_out = shapes[t]
            down[t] = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, rank))
            up[t] = np.zeros((rank, d_out))
        return cls(rank=rank, alpha=float(alpha), targets=targets, down=down, up=up)


def attach_lora(params: EncoderParams, rank: int, alpha: float, seed: int) -> EncoderParams:
    """Copy of ``params`` carrying a fresh adapter on every linear weight."""
    shapes = {name: params.tensors[name].shape for name in params.linear_names()}
    return dataclasses.replace(params.copy(), lora=LoraAdapter.init(shapes, rank, alpha, seed))


def lora_fuse(params: EncoderParams) -> EncoderParams:
    """Fold the adapter into the base weights and drop it.

    Raises:
        StageError: If ``params`` has no adapter
    """
    if params.lora is None:
        raise StageError("lora_fuse requires an active adapter")
    fused = {name: value.copy() for name, value in params.tensors.items()}
    for target in params.lora.targets:
        fused[target] = fused[target] + params.lora.delta(target)
    frozen = frozenset(n for n in params.frozen if not n.startswith("lora."))
    return dataclasses.replace(params, tensors=fused, lora=None, frozen=frozen)
