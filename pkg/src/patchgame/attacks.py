"""Misclassification regimes: iterative sign-gradient attacks and noise.

The attack walks ``steps`` gradient-sign steps inside the intersection of
the L-infinity ball around the clean image and the unit pixel box.  The
box bounds are float32-representable and tightened so the measured
deviation never exceeds the budget, in float64, even after the result is
persisted as a float32 tensor file and read back.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .games import as_seed_sequence
from .imaging import ImageTensor, LabeledImage
from .models import GradientModel, ProbabilityModel, predict_labels
from .pipeline import _write_csv

DEFAULT_EPSILON = 16.0 / 255.0
DEFAULT_STEPS = 10


class GradientUnavailableError(TypeError):
    """The model cannot answer gradient queries, so it cannot be attacked."""


@dataclass(frozen=True)
class AttackConfig:
    """Budget and schedule for the iterative sign-gradient attack.

    ``step_size`` defaults to ``epsilon / steps``, the usual convention.
    """

    epsilon: float = DEFAULT_EPSILON
    steps: int = DEFAULT_STEPS
    step_size: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.step_size is None:
            object.__setattr__(self, "step_size", self.epsilon / self.steps)
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")

    def scaled_to(self, epsilon: float) -> "AttackConfig":
        """Same schedule at a different budget; step size rescales."""
        return AttackConfig(epsilon=epsilon, steps=self.steps)


@dataclass(frozen=True)
class CorruptionConfig:
    sigma: float = 0.1
    seed: int = 0

    kind = "gaussian"

    def __post_init__(self) -> None:
        if not (np.isfinite(self.sigma) and self.sigma >= 0.0):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")


@dataclass
class AttackOutcome:
    """One attacked image plus everything later stages pin onto it."""

    image_id: str
    clean_path: str
    label: int
    pred_clean: int
    pred_adv: int
    adversarial: ImageTensor
    order_averages: dict[float, float] = field(default_factory=dict)
    transfer_success: dict[str, bool] = field(default_factory=dict)

    @property
    def source_success(self) -> bool:
        return self.pred_adv != self.label


def linf_box(x: np.ndarray, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel bounds [max(x-eps, 0), min(x+eps, 1)], held exactly.

    ``x`` must be float32-representable (image ingestion guarantees it).
    Bounds are computed in float32 and nudged inward until the float64
    gap to ``x`` is at most ``epsilon``, so clipping into the box keeps
    the budget exact through a float32 file round trip.
    """
    x32 = x.astype(np.float32)
    if not np.array_equal(x32.astype(np.float64), x):
        raise ValueError("clean image is not float32-representable")
    eps32 = np.float32(epsilon)
    lo = np.maximum(x32 - eps32, np.float32(0.0))
    hi = np.minimum(x32 + eps32, np.float32(1.0))
    while True:
        wide = (hi.astype(np.float64) - x) > epsilon
        if not wide.any():
            break
        hi[wide] = np.nextafter(hi[wide], np.float32(-np.inf))
    while True:
        wide = (x - lo.astype(np.float64)) > epsilon
        if not wide.any():
            break
        lo[wide] = np.nextafter(lo[wide], np.float32(np.inf))
    return lo.astype(np.float64), hi.astype(np.float64)


def ifgsm(
    model: GradientModel,
    image: ImageTensor,
    label: int,
    cfg: AttackConfig,
    *,
    x_init: ImageTensor | None = None,
) -> ImageTensor:
    """Untargeted iterative sign-gradient attack under an exact L-inf budget.

    Each step ascends the loss: x <- clip(x + step_size * sign(grad)),
    where clip is the joint [0,1]-and-ball projection.  ``x_init`` warm
    starts the iteration (it is clipped into the ball of ``image`` first).
    """
    if not hasattr(model, "loss_gradient"):
        raise GradientUnavailableError(
            f"{type(model).__name__} has no loss_gradient; cannot attack"
        )
    x0 = image.quantized().data
    lo, hi = linf_box(x0, cfg.epsilon)
    adv = x0 if x_init is None else np.clip(x_init.quantized().data, lo, hi)
    for _ in range(cfg.steps):
        grad = model.loss_gradient(adv, label)
        adv = np.clip(adv + cfg.step_size * np.sign(grad), lo, hi)
    # quantize, then re-clip: the bounds are float32 values, so the final
    # tensor is both float32-exact and exactly inside the ball
    adv = np.clip(adv.astype(np.float32).astype(np.float64), lo, hi)
    return ImageTensor(adv)


def run_attack(
    model: GradientModel,
    labeled: LabeledImage,
    cfg: AttackConfig,
    *,
    x_init: ImageTensor | None = None,
) -> AttackOutcome:
    clean = labeled.image.quantized()
    pred_clean = int(predict_labels(model, clean.data[None])[0])
    adversarial = ifgsm(model, clean, labeled.label, cfg, x_init=x_init)
    pred_adv = int(predict_labels(model, adversarial.data[None])[0])
    return AttackOutcome(
        image_id=labeled.image_id,
        clean_path=str(labeled.path),
        label=labeled.label,
        pred_clean=pred_clean,
        pred_adv=pred_adv,
        adversarial=adversarial,
    )


# -------------------------------------------------------------- corruption


def gaussian_noise_field(
    shape: tuple[int, ...], seed: int | np.random.SeedSequence
) -> np.ndarray:
    return np.random.default_rng(as_seed_sequence(seed)).standard_normal(shape)


def corrupt_with_noise(
    image: ImageTensor, sigma: float, noise: np.ndarray
) -> ImageTensor:
    """clip(x + sigma * noise, 0, 1), quantized like any ingested image.

    Exposed separately from the seeded entry point because the noise
    field is input-independent: corrupting a flipped image with the
    flipped field equals flipping the corrupted image, bitwise.
    """
    if noise.shape != image.data.shape:
        raise ValueError(f"noise shape {noise.shape} != image {image.data.shape}")
    out = np.clip(image.quantized().data + sigma * noise, 0.0, 1.0)
    return ImageTensor(out).quantized()


def gaussian_corrupt(image: ImageTensor, cfg: CorruptionConfig) -> ImageTensor:
    noise = gaussian_noise_field(image.data.shape, cfg.seed)
    return corrupt_with_noise(image, cfg.sigma, noise)


# ------------------------------------------------------------------- sweep


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    success_rate: float
    num_success: int
    num_eligible: int


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    num_excluded: int  # images the model already misclassifies


def success_rate_sweep(
    model: GradientModel,
    dataset: Sequence[LabeledImage],
    epsilons: Sequence[float],
    template: AttackConfig = AttackConfig(),
    *,
    warm_start: bool = True,
) -> SweepResult:
    """Attack success rate per budget, over the correctly classified images.

    Misclassified images are excluded (and counted), mirroring the usual
    evaluation setup.  With ``warm_start`` each budget resumes from the
    previous budget's adversarial image and already-fooled images are
    kept frozen, which makes the rate non-decreasing in epsilon by
    construction.
    """
    if not epsilons:
        raise ValueError("no epsilons to sweep")
    if any(e <= 0 for e in epsilons):
        raise ValueError(f"epsilons must be positive: {list(epsilons)}")
    eligible = []
    for labeled in dataset:
        clean = labeled.image.quantized()
        pred = int(predict_labels(model, clean.data[None])[0])
        if pred == labeled.label:
            eligible.append(labeled)
    if not eligible:
        raise ValueError(
            f"all {len(dataset)} images are misclassified; nothing to attack"
        )
    state: list[tuple[ImageTensor | None, bool]] = [(None, False)] * len(eligible)
    rows = []
    for epsilon in sorted(epsilons):
        cfg = template.scaled_to(epsilon)
        hits = 0
        for k, labeled in enumerate(eligible):
            previous, fooled = state[k]
            if warm_start and fooled:
                hits += 1
                continue
            adv = ifgsm(
                model,
                labeled.image,
                labeled.label,
                cfg,
                x_init=previous if warm_start else None,
            )
            pred = int(predict_labels(model, adv.data[None])[0])
            success = pred != labeled.label
            state[k] = (adv, success)
            hits += success
        rows.append(SweepRow(epsilon, hits / len(eligible), hits, len(eligible)))
    return SweepResult(tuple(rows), len(dataset) - len(eligible))


# ---------------------------------------------------------------- manifest


@dataclass(frozen=True)
class AttackRecord:
    """One manifest row tying an adversarial file to its clean source."""

    clean_path: str
    adv_path: str
    label: int
    pred_clean: int
    pred_adv: int

    @property
    def success(self) -> bool:
        return self.pred_adv != self.label


def write_attack_manifest(
    records: Iterable[AttackRecord], path: str | Path
) -> None:
    _write_csv(
        path,
        ["clean_path", "adv_path", "label", "pred_clean", "pred_adv", "success"],
        (
            (r.clean_path, r.adv_path, r.label, r.pred_clean, r.pred_adv, int(r.success))
            for r in records
        ),
    )


def read_attack_manifest(path: str | Path) -> list[AttackRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            record = AttackRecord(
                row["clean_path"],
                row["adv_path"],
                int(row["label"]),
                int(row["pred_clean"]),
                int(row["pred_adv"]),
            )
            if int(row["success"]) != int(record.success):
                raise ValueError(
                    f"manifest row for {record.adv_path}: success flag "
                    f"contradicts the predictions"
                )
            records.append(record)
    return records


def write_sweep_csv(result: SweepResult, path: str | Path) -> None:
    _write_csv(
        path,
        ["epsilon", "success_rate"],
        ((r.epsilon, r.success_rate) for r in result.rows),
    )
