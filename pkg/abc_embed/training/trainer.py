"""Bootstrap, stage-1 and stage-2 training runs.

All three share one loop (``Trainer.run``): draw a batch, build the loss
graph, back-propagate, take an AdamW step on the trainable leaves, guard the
temperature and record metrics. Subclasses decide the starting parameters,
which leaves train, how batches are drawn and how the loss is assembled.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Any, Iterator

import numpy as np

from abc_embed.autodiff import ops
from abc_embed.autodiff.tensor import Graph, Tensor
from abc_embed.core.checkpoint import checkpoint_store
from abc_embed.core.config import settings
from abc_embed.core.errors import DivergenceError, GeometryError, StageError
from abc_embed.data.batching import (
    FinetuneBatch,
    PretrainBatch,
    bootstrap_records,
    build_finetune_batches,
    build_pretrain_batches,
)
from abc_embed.data.corpus import Corpus
from abc_embed.data.mining import MinedDataset
from abc_embed.evaluation.metrics import recall_at_k
from abc_embed.models.encoder import (
    HEAD_NAMES,
    TAU_NAME,
    EncoderParams,
    assemble_query,
    embed_sequences,
    encode_batch,
    graph_view,
    init_params,
)
from abc_embed.models.enums import Split, Stage
from abc_embed.models.lora import attach_lora, lora_fuse
from abc_embed.schemas.config import TrainConfig
from abc_embed.schemas.reports import RunMetrics, StepMetrics
from abc_embed.training.objective import loss_with_stop_gradient
from abc_embed.training.optim import AdamState, adamw_step, lr_schedule
from abc_embed.utils.hashing import config_hash
from abc_embed.utils.seeding import derive_seed

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    params: EncoderParams
    metrics: RunMetrics


class Trainer:
    """Shared optimisation loop; see the stage subclasses."""

    stage: Stage

    def __init__(self, config: TrainConfig, corpus: Corpus):
        if config.stage != self.stage:
            raise StageError(f"{type(self).__name__} cannot run a stage {config.stage.value} config")
        self.config = config
        self.corpus = corpus

    def initial_params(self) -> EncoderParams:
        raise NotImplementedError

    def trainable_names(self, params: EncoderParams) -> set[str]:
        raise NotImplementedError

    def batches(self, params: EncoderParams) -> Iterator[Any]:
        raise NotImplementedError

    def build_loss(self, params: EncoderParams, batch: Any) -> tuple[Graph, Tensor]:
        raise NotImplementedError

    def validation_accuracy(self, params: EncoderParams) -> float:
        raise NotImplementedError

    def validation_images(self) -> list[str]:
        """Held-out validation images, or the first training images if there are none."""
        pool = self.corpus.image_ids(Split.VAL) or self.corpus.image_ids(Split.TRAIN)
        return pool[: self.config.val_pool_size]

    def run(self, *, raise_on_divergence: bool = True) -> TrainResult:
        """Train for ``config.steps`` steps.

        Args:
            raise_on_divergence: Raise on a non-finite loss or gradient
                instead of stopping early with ``diverged`` set

        Returns:
            Final parameters and per-step metrics

        Raises:
            DivergenceError: On non-finite values, with the metrics so far
        """
        config = self.config
        params = self.initial_params()
        trainable = self.trainable_names(params)
        metrics = RunMetrics(stage=self.stage.value, config_hash=config_hash(config), seed=config.seed)
        logger.info(
            "stage %s: %d steps, %d trainable tensors, seed %d",
            self.stage.value,
            config.steps,
            len(trainable),
            config.seed,
        )

        state = AdamState()
        floor = math.log(config.tau_floor)
        stream = self.batches(params) if config.steps else iter(())
        for step in range(config.steps):
            batch = next(stream)
            graph, loss = self.build_loss(params, batch)
            tau = params.tau
            loss_value = loss.item()
            grads = graph.backward(loss)
            grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))

            current = {name: value for name, value in params.named_tensors().items() if name in grads}
            finite = math.isfinite(loss_value) and math.isfinite(grad_norm)
            if not finite or not adamw_step(
                current,
                grads,
                state,
                step + 1,
                lr_schedule(step, config.steps, config.lr, config.warmup_frac),
                config.betas,
                config.weight_decay,
                no_decay={TAU_NAME},
            ):
                metrics.diverged = True
                logger.error("stage %s diverged at step %d (loss %s)", self.stage.value, step, loss_value)
                if raise_on_divergence:
                    raise DivergenceError(f"non-finite loss or gradient at step {step}", metrics=metrics)
                break
            for name, value in current.items():
                params.assign(name, value)

            if TAU_NAME in grads and params.tensors[TAU_NAME] < floor:
                params.tensors[TAU_NAME] = np.array(floor)
                if not metrics.tau_floor_hit:
                    logger.warning("temperature reached the %.0e floor at step %d", config.tau_floor, step)
                metrics.tau_floor_hit = True
                metrics.diverged = True

            val_acc = None
            if (step + 1) % config.eval_every == 0 or step + 1 == config.steps:
                val_acc = self.validation_accuracy(params)
                logger.info(
                    "step %d: loss %.4f tau %.4f grad_norm %.3g val_acc %.3f",
                    step,
                    loss_value,
                    tau,
                    grad_norm,
                    val_acc,
                )
            else:
                logger.debug("step %d: loss %.4f tau %.4f grad_norm %.3g", step, loss_value, tau, grad_norm)
            metrics.steps.append(
                StepMetrics(step=step, loss=loss_value, tau=tau, grad_norm=grad_norm, val_acc=val_acc)
            )
            params.step = step + 1

        params.stage = self.stage
        return TrainResult(params=params, metrics=metrics)


class _PretrainTrainer(Trainer):
    """Query/candidate contrastive training where both sides receive gradients."""

    def build_loss(self, params: EncoderParams, batch: PretrainBatch) -> tuple[Graph, Tensor]:
        graph = Graph()
        view = graph_view(graph, params, self.trainable_names(params))
        use_lora = params.lora is not None
        queries = encode_batch(params, view, batch.query_tokens, use_lora=use_lora)
        candidates = encode_batch(params, view, batch.candidate_tokens, use_lora=use_lora)
        tau = ops.exp(view[TAU_NAME])
        return graph, loss_with_stop_gradient(queries, candidates, batch.layout, tau, candidate_grads=True)

    def validation_accuracy(self, params: EncoderParams) -> float:
        """R@1 of validation images against their primary captions."""
        images = self.validation_images()
        captions = [self.corpus.primary_caption(img) for img in images]
        use_lora = params.lora is not None
        batch = settings.EMBED_BATCH_SIZE
        q = embed_sequences(params, [self.corpus.images[i].tokens for i in images], use_lora=use_lora, batch_size=batch)
        c = embed_sequences(params, [cap.tokens for cap in captions], use_lora=use_lora, batch_size=batch)
        return recall_at_k(q @ c.T, list(range(len(images))), ks=(1,), candidate_keys=[cap.id for cap in captions])["R@1"]


class BootstrapTrainer(_PretrainTrainer):
    """Small in-batch-negative run whose checkpoint scores the corpus for mining."""

    stage = Stage.BOOTSTRAP

    def __init__(self, config: TrainConfig, corpus: Corpus):
        super().__init__(config, corpus)
        if config.n_candidates != config.n_queries:
            raise GeometryError(f"bootstrap uses positives only: M={config.n_candidates} must equal N={config.n_queries}")

    def initial_params(self) -> EncoderParams:
        return init_params(self.config.encoder, seed=self.config.seed, tau_init=self.config.tau_init)

    def trainable_names(self, params: EncoderParams) -> set[str]:
        return set(params.base_names())

    def batches(self, params: EncoderParams) -> Iterator[PretrainBatch]:
        c = self.config
        return build_pretrain_batches(bootstrap_records(self.corpus), self.corpus, c.n_queries, c.n_candidates, c.seed)


class Stage1Trainer(_PretrainTrainer):
    """Mined-negative pretraining of a LoRA adapter, the head and τ."""

    stage = Stage.STAGE1

    def __init__(
        self,
        config: TrainConfig,
        corpus: Corpus,
        mined: MinedDataset,
        init: EncoderParams | None = None,
    ):
        super().__init__(config, corpus)
        self.mined = mined
        self.init = init

    def initial_params(self) -> EncoderParams:
        config = self.config
        base = self.init
        if base is None and config.init_checkpoint:
            base = checkpoint_store.load(config.init_checkpoint)
        if base is None:
            base = init_params(config.encoder, seed=config.seed, tau_init=config.tau_init)
        else:
            if base.stage != Stage.BOOTSTRAP:
                raise StageError(f"stage 1 starts from a bootstrap checkpoint, got stage {base.stage.value}")
            base = base.copy()
            base.tensors[TAU_NAME] = np.array(math.log(config.tau_init))
        params = attach_lora(base, config.lora_rank, config.lora_alpha, seed=derive_seed(config.seed, "lora", "1"))
        params.stage = Stage.STAGE1
        params.step = 0
        return params

    def trainable_names(self, params: EncoderParams) -> set[str]:
        return {*params.lora.tensor_names(), *HEAD_NAMES, TAU_NAME}

    def batches(self, params: EncoderParams) -> Iterator[PretrainBatch]:
        c = self.config
        return build_pretrain_batches(
            self.mined.records,
            self.corpus,
            c.n_queries,
            c.n_candidates,
            c.seed,
            negatives=c.negatives,
        )


class Stage2Trainer(Trainer):
    """Instruction fine-tuning of a fresh adapter on a fused, frozen stage-1 model."""

    stage = Stage.STAGE2

    def __init__(self, config: TrainConfig, corpus: Corpus, stage1: EncoderParams | None = None):
        super().__init__(config, corpus)
        self.stage1 = stage1
        self._candidates: dict[str, np.ndarray] | None = None

    def initial_params(self) -> EncoderParams:
        config = self.config
        stage1 = self.stage1 if self.stage1 is not None else checkpoint_store.load(config.stage1_checkpoint)
        if stage1.stage != Stage.STAGE1 or stage1.lora is None:
            raise StageError(f"stage 2 needs a stage-1 checkpoint with an adapter, got stage {stage1.stage.value}")
        fused = lora_fuse(stage1).round_to_storage()
        fused = dataclasses.replace(fused, frozen=frozenset(fused.base_names()))
        params = attach_lora(fused, config.lora_rank, config.lora_alpha, seed=derive_seed(config.seed, "lora", "2"))
        params.stage = Stage.STAGE2
        params.step = 0
        return params

    def trainable_names(self, params: EncoderParams) -> set[str]:
        return set(params.lora.tensor_names())

    def batches(self, params: EncoderParams) -> Iterator[FinetuneBatch]:
        c = self.config
        return build_finetune_batches(self.corpus, c.images_per_batch, c.group_size, c.seed, params.config.max_seq)

    def candidate_embeddings(self, params: EncoderParams) -> dict[str, np.ndarray]:
        """Adapter-free embeddings of every training caption, computed once."""
        if self._candidates is None:
            ids = [cap.id for img in self.corpus.image_ids(Split.TRAIN) for cap in self.corpus.captions_of(img)]
            rows = embed_sequences(
                params,
                [self.corpus.captions[i].tokens for i in ids],
                use_lora=False,
                batch_size=settings.EMBED_BATCH_SIZE,
            )
            self._candidates = dict(zip(ids, rows))
            logger.info("precomputed %d frozen candidate embeddings", len(ids))
        return self._candidates

    def build_loss(self, params: EncoderParams, batch: FinetuneBatch) -> tuple[Graph, Tensor]:
        table = self.candidate_embeddings(params)
        graph = Graph()
        view = graph_view(graph, params, self.trainable_names(params))
        queries = encode_batch(params, view, batch.query_tokens, use_lora=True)
        candidates = Tensor(np.stack([table[cid] for cid in batch.candidate_ids]))
        tau = ops.exp(view[TAU_NAME])
        return graph, loss_with_stop_gradient(
            queries, candidates, batch.layout, tau, candidate_grads=batch.candidate_grads
        )

    def validation_accuracy(self, params: EncoderParams) -> float:
        """R@1 of instruction queries against every caption of the validation images."""
        images = self.validation_images()
        n_aspects = self.corpus.config.n_aspects
        captions = [cap for img in images for cap in self.corpus.captions_of(img)]
        queries = []
        for img in images:
            for aspect in range(n_aspects):
                instruction = self.corpus.instructions_for(img, aspect, Split.TRAIN)[0]
                queries.append(assemble_query(self.corpus.images[img].tokens, instruction.tokens, params.config.max_seq))
        batch = settings.EMBED_BATCH_SIZE
        q = embed_sequences(params, queries, use_lora=True, batch_size=batch)
        c = embed_sequences(params, [cap.tokens for cap in captions], use_lora=False, batch_size=batch)
        return recall_at_k(q @ c.T, list(range(len(captions))), ks=(1,), candidate_keys=[cap.id for cap in captions])["R@1"]


def run_bootstrap(config: TrainConfig, corpus: Corpus, **kwargs: Any) -> TrainResult:
    return BootstrapTrainer(config, corpus).run(**kwargs)


def run_stage1(
    config: TrainConfig,
    corpus: Corpus,
    mined: MinedDataset,
    init: EncoderParams | None = None,
    **kwargs: Any,
) -> TrainResult:
    return Stage1Trainer(config, corpus, mined, init=init).run(**kwargs)


def run_stage2(config: TrainConfig, corpus: Corpus, stage1: EncoderParams | None = None, **kwargs: Any) -> TrainResult:
    return Stage2Trainer(config, corpus, stage1=stage1).run(**kwargs)
