"""The image-classification coalition game.

A coalition keeps its member patches and masks the rest; the reward is the
log-odds the classifier assigns the true label on that masked image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coalition import Coalition
from .games import SetFunction
from .imaging import ImageTensor, MaskBaseline, PatchGrid, apply_mask_batch
from .models import ProbabilityModel

DEFAULT_CLAMP = 1e-6
DEFAULT_BATCH_SIZE = 64

PROB_SUM_TOLERANCE = 1e-6


class OracleEvaluationError(RuntimeError):
    """Classifier failure during coalition evaluation.

    Carries the coalitions being evaluated so long runs can log and skip.
    """

    def __init__(self, message: str, coalitions: Sequence[Coalition] = ()) -> None:
        super().__init__(message)
        self.coalitions = tuple(coalitions)


def reward_log_odds(p: float, clamp: float = DEFAULT_CLAMP) -> float:
    """log(p / (1 - p)) with p clamped into [clamp, 1 - clamp].

    Clamping keeps the reward finite at the endpoints; the clamp value is
    part of the measurement configuration, not a hidden constant.  Computed
    as log(p) - log(1-p) with the clamped pair chosen branch-symmetrically,
    so the two saturated endpoints negate each other bitwise.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    if not 0.0 < clamp < 0.5:
        raise ValueError(f"clamp must be in (0, 0.5), got {clamp}")
    upper = 1.0 - clamp
    if p <= clamp:
        p, q = clamp, upper
    elif p >= upper:
        p, q = upper, clamp
    else:
        q = 1.0 - p
    return math.log(p) - math.log(q)


@dataclass(frozen=True)
class ClassifierOracle:
    """Everything needed to turn one labeled image into a coalition game."""

    model: ProbabilityModel
    label: int
    baseline: MaskBaseline
    grid: PatchGrid
    clamp: float = DEFAULT_CLAMP
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self) -> None:
        if not 0 <= self.label < self.model.num_classes:
            raise ValueError(
                f"label {self.label} out of range for a "
                f"{self.model.num_classes}-class model"
            )
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.clamp < 0.5:
            raise ValueError(f"clamp must be in (0, 0.5), got {self.clamp}")

    def probabilities(self, batch: np.ndarray) -> np.ndarray:
        """Model probabilities with the contract checks applied."""
        probs = np.asarray(self.model.predict_proba(batch), dtype=np.float64)
        if probs.ndim != 2 or probs.shape != (batch.shape[0], self.model.num_classes):
            raise OracleEvaluationError(
                f"model returned shape {probs.shape}, expected "
                f"({batch.shape[0]}, {self.model.num_classes})"
            )
        if probs.min() < 0.0:
            raise OracleEvaluationError(
                f"model returned a negative probability ({probs.min()})"
            )
        sums = probs.sum(axis=1)
        worst = float(np.abs(sums - 1.0).max())
        if worst > PROB_SUM_TOLERANCE:
            raise OracleEvaluationError(
                f"probability vectors sum to 1 +/- {worst}, tolerance "
                f"{PROB_SUM_TOLERANCE}"
            )
        return probs

    def predict(self, image: ImageTensor) -> int:
        return int(np.argmax(self.probabilities(image.data[None])[0]))


def make_set_function(oracle: ClassifierOracle, x: ImageTensor) -> SetFunction:
    """Coalition game for one image: mask, classify, score the true label."""
    if (oracle.grid.height, oracle.grid.width) != (x.height, x.width):
        raise ValueError(
            f"oracle grid tiles {oracle.grid.height}x{oracle.grid.width}, "
            f"image is {x.height}x{x.width}"
        )

    def batch_evaluate(coalitions: Sequence[Coalition]) -> list[float]:
        rewards: list[float] = []
        for start in range(0, len(coalitions), oracle.batch_size):
            chunk = coalitions[start : start + oracle.batch_size]
            masked = apply_mask_batch(x, chunk, oracle.grid, oracle.baseline)
            try:
                probs = oracle.probabilities(masked)
            except OracleEvaluationError as err:
                raise OracleEvaluationError(str(err), chunk) from err
            except Exception as err:
                raise OracleEvaluationError(
                    f"classifier failed on a batch of {len(chunk)} coalitions: {err}",
                    chunk,
                ) from err
            rewards += [
                reward_log_odds(float(p), oracle.clamp)
                for p in probs[:, oracle.label]
            ]
        return rewards

    return SetFunction(
        lambda c: batch_evaluate([c])[0],
        oracle.grid.n,
        batch_evaluate=batch_evaluate,
    )
