import numpy as np
import pytest

from abc_embed.training.optim import AdamState, adamw_step, lr_schedule

BETAS = (0.9, 0.999)


def _step(w, g, lr=0.1, wd=0.0, t=1, **kwargs):
    params = {"w": np.array(w)}
    ok = adamw_step(params, {"w": np.array(g)}, AdamState(), t, lr, BETAS, wd, **kwargs)
    return ok, params["w"]


def test_first_step_moves_by_lr():
    ok, w = _step(1.0, 1.0)
    assert ok
    assert float(w) == pytest.approx(0.9, abs=1e-8)


def test_zero_gradient_leaves_weight():
    _, w = _step(1.0, 0.0)
    assert float(w) == 1.0


def test_decay_only_step():
    _, w = _step(2.0, 0.0, wd=0.1)
    assert float(w) == pytest.approx(2.0 * (1 - 0.01))


def test_no_decay_names_skip_decay():
    _, w = _step(2.0, 0.0, wd=0.1, no_decay={"w"})
    assert float(w) == 2.0


def test_parameters_without_gradient_are_untouched():
    params = {"w": np.array([1.0]), "frozen": np.array([5.0])}
    adamw_step(params, {"w": np.array([1.0])}, AdamState(), 1, 0.1, BETAS, 0.1)
    assert params["frozen"][0] == 5.0


def test_non_finite_gradient_aborts():
    params = {"a": np.array([1.0]), "b": np.array([1.0])}
    ok = adamw_step(params, {"a": np.array([1.0]), "b": np.array([np.nan])}, AdamState(), 1, 0.1, BETAS, 0.0)
    assert not ok
    assert params["a"][0] == 1.0


def test_moments_accumulate():
    state = AdamState()
    params = {"w": np.array([0.0])}
    for t in (1, 2):
        adamw_step(params, {"w": np.array([1.0])}, state, t, 0.1, BETAS, 0.0)
    assert state.m["w"][0] == pytest.approx(0.19)
    assert state.v["w"][0] == pytest.approx(0.001999)
    assert params["w"][0] == pytest.approx(-0.2, abs=1e-7)


def test_step_count_starts_at_one():
    with pytest.raises(ValueError):
        _step(1.0, 1.0, t=0)


def test_warmup_boundaries():
    assert lr_schedule(0, 100, 1.0, 0.1) == pytest.approx(0.1)
    assert lr_schedule(9, 100, 1.0, 0.1) == 1.0
    assert lr_schedule(10, 100, 1.0, 0.1) == 1.0
    assert lr_schedule(99, 100, 1.0, 0.1) == 1.0


def test_warmup_hand_example():
    # 3% of 4000 steps is 120 warmup steps
    assert lr_schedule(59, 4000, 4e-5, 0.03) == pytest.approx(2e-5)
    assert lr_schedule(120, 4000, 4e-5, 0.03) == 4e-5


def test_no_warmup():
    assert lr_schedule(0, 100, 0.5, 0.0) == 0.5


def test_warmup_rounds_up():
    # 3% of 10 steps rounds up to one warmup step
    assert lr_schedule(0, 10, 1.0, 0.03) == 1.0
