"""Log-odds reward and the image coalition game."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from patchgame.coalition import Coalition
from patchgame.games import multi_order_exact, pairwise_interaction_exact
from patchgame.imaging import ImageTensor, MaskBaseline, PatchGrid
from patchgame.models import ConstantModel, builtin_linear_model, softmax
from patchgame.oracle import (
    ClassifierOracle,
    OracleEvaluationError,
    make_set_function,
    reward_log_odds,
)


def toy_setup(model=None, h=8, w=8, patch=4, label=0, **kwargs):
    grid = PatchGrid.for_image(h, w, patch)
    if model is None:
        model = builtin_linear_model(2, (h, w, 1), seed=3)
    oracle = ClassifierOracle(model, label, MaskBaseline.zero(), grid, **kwargs)
    rng = np.random.default_rng(21)
    image = ImageTensor(rng.uniform(size=(1, h, w))).quantized()
    return oracle, image


# ------------------------------------------------------------------ reward


def test_reward_hand_values():
    assert reward_log_odds(0.5) == 0.0
    assert reward_log_odds(0.9) == pytest.approx(math.log(9.0), abs=1e-12)
    assert reward_log_odds(0.9) == pytest.approx(2.197224577, abs=1e-9)
    clamped = reward_log_odds(1.0, clamp=1e-6)
    assert clamped == pytest.approx(math.log(1 - 1e-6) - math.log(1e-6), abs=0)
    assert clamped == pytest.approx(13.8155, abs=1e-4)
    # the saturated endpoints negate bitwise by construction
    assert reward_log_odds(0.0) == -clamped


def test_reward_validation():
    with pytest.raises(ValueError):
        reward_log_odds(1.2)
    with pytest.raises(ValueError):
        reward_log_odds(-0.1)
    with pytest.raises(ValueError):
        reward_log_odds(0.5, clamp=0.7)


@given(st.floats(min_value=1e-3, max_value=1.0 - 1e-3, allow_nan=False))
def test_reward_antisymmetric(p):
    # away from the endpoints, where 1 - p loses no more than ~1e-13 of p
    assert reward_log_odds(p) == pytest.approx(-reward_log_odds(1.0 - p), abs=1e-12)


@given(
    st.floats(min_value=1e-6, max_value=1.0 - 1e-6),
    st.floats(min_value=1e-6, max_value=1.0 - 1e-6),
)
@settings(max_examples=50)
def test_reward_strictly_increasing(a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    assert reward_log_odds(lo) < reward_log_odds(hi)


# ------------------------------------------------------------ oracle game


def test_constant_classifier_zero_everywhere():
    model = ConstantModel((0.5, 0.5), (8, 8, 1))
    oracle, image = toy_setup(model=model)
    game = make_set_function(oracle, image)
    assert game(Coalition.empty(4)) == 0.0
    assert game(Coalition.full(4)) == 0.0
    assert pairwise_interaction_exact(game, 0, 3) == 0.0
    for s in range(3):
        assert multi_order_exact(game, 0, 1, s).value == 0.0


def test_linear_model_against_closed_form():
    oracle, image = toy_setup()
    game = make_set_function(oracle, image)
    model = oracle.model
    # closed form recomputed here from raw weights, flattened channel-major
    logits_full = model.weight @ image.data.ravel() + model.bias
    logits_empty = model.bias.copy()
    p_full = float(softmax(logits_full[None])[0, 0])
    p_empty = float(softmax(logits_empty[None])[0, 0])
    f_full = game(Coalition.full(4))
    f_empty = game(Coalition.empty(4))
    assert f_full == pytest.approx(math.log(p_full / (1 - p_full)), abs=1e-12)
    assert f_empty == pytest.approx(math.log(p_empty / (1 - p_empty)), abs=1e-12)
    assert f_full != f_empty


def test_reward_sign_tracks_confidence():
    oracle, image = toy_setup()
    probs = oracle.probabilities(image.data[None])[0]
    game = make_set_function(oracle, image)
    f_full = game(Coalition.full(4))
    assert (f_full > 0) == (probs[0] > 0.5)


def test_grid_image_mismatch():
    oracle, _ = toy_setup()
    tall = ImageTensor(np.zeros((1, 16, 8)))
    with pytest.raises(ValueError):
        make_set_function(oracle, tall)


def test_label_out_of_range():
    grid = PatchGrid.for_image(8, 8, 4)
    model = builtin_linear_model(2, (8, 8, 1), seed=0)
    with pytest.raises(ValueError):
        ClassifierOracle(model, 5, MaskBaseline.zero(), grid)


def test_predict():
    model = ConstantModel((0.2, 0.8), (8, 8, 1))
    oracle, image = toy_setup(model=model)
    assert oracle.predict(image) == 1


# ------------------------------------------------- failure and batch paths


class FlakyModel:
    """Raises on any batch whose first coalition masks everything."""

    num_classes = 2
    input_shape = (8, 8, 1)

    def __init__(self):
        self.calls = []

    def predict_proba(self, batch):
        self.calls.append(batch.shape[0])
        if np.all(batch[0] == 0.0):
            raise RuntimeError("backend exploded")
        return np.full((batch.shape[0], 2), 0.5)


def test_classifier_failure_carries_coalitions():
    model = FlakyModel()
    oracle, image = toy_setup(model=model)
    game = make_set_function(oracle, image)
    with pytest.raises(OracleEvaluationError) as info:
        game(Coalition.empty(4))
    assert info.value.coalitions == (Coalition.empty(4),)


def test_batching_respects_batch_size():
    model = FlakyModel()
    oracle, image = toy_setup(model=model, batch_size=3)
    game = make_set_function(oracle, image)
    coalitions = [Coalition(b, 4) for b in range(1, 9)]  # 8 distinct, no empty
    game.evaluate_many(coalitions)
    assert model.calls == [3, 3, 2]


class BadSumModel:
    num_classes = 2
    input_shape = (8, 8, 1)

    def predict_proba(self, batch):
        return np.full((batch.shape[0], 2), 0.6)


class NegativeModel:
    num_classes = 2
    input_shape = (8, 8, 1)

    def predict_proba(self, batch):
        return np.tile([1.2, -0.2], (batch.shape[0], 1))


def test_probability_contract_enforced():
    for model, fragment in ((BadSumModel(), "sum"), (NegativeModel(), "negative")):
        oracle, image = toy_setup(model=model)
        game = make_set_function(oracle, image)
        with pytest.raises(OracleEvaluationError, match=fragment):
            game(Coalition.full(4))


def test_oracle_validation():
    grid = PatchGrid.for_image(8, 8, 4)
    model = ConstantModel((0.5, 0.5), (8, 8, 1))
    with pytest.raises(ValueError):
        ClassifierOracle(model, 0, MaskBaseline.zero(), grid, batch_size=0)
    with pytest.raises(ValueError):
        ClassifierOracle(model, 0, MaskBaseline.zero(), grid, clamp=0.0)
