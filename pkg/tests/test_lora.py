import numpy as np
import pytest

from abc_embed.core.errors import StageError
from abc_embed.models.encoder import embed_sequences, init_params
from abc_embed.models.lora import LoraAdapter, attach_lora, lora_fuse
from abc_embed.schemas.config import EncoderConfig


def test_fresh_adapter_has_zero_delta(encoder_config):
    params = attach_lora(init_params(encoder_config, seed=0), rank=2, alpha=4.0, seed=1)
    assert set(params.lora.targets) == set(params.linear_names())
    for target in params.lora.targets:
        assert not params.lora.delta(target).any()


def test_zero_up_fuses_to_base_bitwise(encoder_config):
    base = init_params(encoder_config, seed=0)
    fused = lora_fuse(attach_lora(base, rank=2, alpha=4.0, seed=1))
    assert fused.lora is None
    for name, value in base.tensors.items():
        np.testing.assert_array_equal(fused.tensors[name], value)


def test_fuse_hand_example():
    config = EncoderConfig(vocab_size=8, d_model=2, n_layers=1, n_heads=1, max_seq=4, ffn_hidden=2)
    params = init_params(config, seed=0)
    target = "layers.0.ffn.w1"
    weight = params.tensors[target].copy()
    params.lora = LoraAdapter(
        rank=1,
        alpha=2.0,
        targets=(target,),
        down={target: np.array([[1.0], [0.0]])},
        up={target: np.array([[3.0, 0.0]])},
    )
    fused = lora_fuse(params)
    np.testing.assert_allclose(fused.tensors[target], weight + 2.0 * np.array([[3.0, 0.0], [0.0, 0.0]]))


def test_fused_model_matches_adapter_forward(encoder_config, rng):
    params = attach_lora(init_params(encoder_config, seed=0), rank=2, alpha=4.0, seed=1)
    for target in params.lora.targets:
        params.lora.up[target] = rng.normal(0.0, 0.05, size=params.lora.up[target].shape)
    lengths = rng.integers(1, encoder_config.max_seq + 1, size=100)
    seqs = [rng.integers(4, encoder_config.vocab_size, size=n).tolist() for n in lengths]
    with_adapter = embed_sequences(params, seqs, use_lora=True)
    fused = embed_sequences(lora_fuse(params), seqs)
    assert fused.shape == (100, encoder_config.d_model)
    np.testing.assert_allclose(with_adapter, fused, atol=1e-9)


def test_adapter_is_ignored_without_use_lora(encoder_config, rng):
    base = init_params(encoder_config, seed=0)
    params = attach_lora(base, rank=2, alpha=4.0, seed=1)
    for target in params.lora.targets:
        params.lora.up[target] = rng.normal(0.0, 0.05, size=params.lora.up[target].shape)
    seqs = [[10, 11, 12]]
    np.testing.assert_array_equal(embed_sequences(params, seqs), embed_sequences(base, seqs))


def test_fuse_without_adapter(encoder_config):
    with pytest.raises(StageError):
        lora_fuse(init_params(encoder_config, seed=0))


def test_attach_does_not_touch_source(encoder_config):
    base = init_params(encoder_config, seed=0)
    attach_lora(base, rank=2, alpha=4.0, seed=1)
    assert base.lora is None
