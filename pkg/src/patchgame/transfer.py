"""Median-split transferability analysis of attacked images.

For each order ratio the attacked images are split by the median of
their per-order average interaction; the report compares the transfer
success rate of the above-median set against the rest, per target model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .attacks import AttackOutcome
from .models import ProbabilityModel, predict_labels
from .pipeline import DISTRIBUTION_RATIOS, _check_ratios, _write_csv, quartiles

UNDEFINED_RATE = float("nan")  # empty split half: rate carries no information


@dataclass(frozen=True)
class TransferPlan:
    source: str
    targets: tuple[str, ...]
    order_ratios: tuple[float, ...] = DISTRIBUTION_RATIOS
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.targets:
            raise ValueError("need at least one target model")
        _check_ratios(self.order_ratios)


@dataclass(frozen=True)
class TransferRow:
    order_ratio: float
    target: str
    a1: float
    a2: float
    diff: float
    n1: int
    n2: int


@dataclass(frozen=True)
class TransferReport:
    rows: tuple[TransferRow, ...]


def _average_at(outcome: AttackOutcome, order_ratio: float) -> float:
    try:
        return outcome.order_averages[order_ratio]
    except KeyError:
        raise ValueError(
            f"outcome {outcome.image_id} has no average interaction at "
            f"order ratio {order_ratio}"
        ) from None


def split_by_median(
    outcomes: Sequence[AttackOutcome], order_ratio: float
) -> tuple[list[AttackOutcome], list[AttackOutcome]]:
    """Partition into (strictly above median, rest) at one order ratio.

    Ties sit in the second half; an all-tied input therefore yields an
    empty first half, which downstream reporting marks as undefined
    rather than treating as signal.
    """
    if len(outcomes) < 2:
        raise ValueError(f"cannot split {len(outcomes)} outcome(s)")
    values = [_average_at(o, order_ratio) for o in outcomes]
    median = quartiles(values)[1]
    above = [o for o, v in zip(outcomes, values) if v > median]
    rest = [o for o, v in zip(outcomes, values) if not v > median]
    return above, rest


def annotate_transfer(
    outcomes: Iterable[AttackOutcome],
    target_id: str,
    model: ProbabilityModel,
) -> None:
    """Query ``model`` on each adversarial image; record hit/miss flags."""
    for outcome in outcomes:
        pred = int(predict_labels(model, outcome.adversarial.data[None])[0])
        outcome.transfer_success[target_id] = pred != outcome.label


def transfer_rates(
    outcomes: Sequence[AttackOutcome], target_id: str
) -> float:
    """Fraction of the set whose attack carries over to the target.

    An empty set has no rate; the undefined marker (NaN) is returned so
    reports can keep the row without inventing a number.
    """
    if not outcomes:
        return UNDEFINED_RATE
    hits = 0
    for outcome in outcomes:
        try:
            hits += outcome.transfer_success[target_id]
        except KeyError:
            raise ValueError(
                f"outcome {outcome.image_id} is not annotated for "
                f"target {target_id!r}"
            ) from None
    return hits / len(outcomes)


def transfer_curve(
    outcomes: Sequence[AttackOutcome],
    plan: TransferPlan,
    models: Mapping[str, ProbabilityModel] | None = None,
) -> TransferReport:
    """The full (order ratio, target) grid of split success-rate gaps.

    The split is recomputed at every order ratio.  With ``models`` given,
    missing transfer flags are filled by querying the targets first;
    otherwise the outcomes must already be annotated.
    """
    if models is not None:
        for target_id in plan.targets:
            if target_id not in models:
                raise ValueError(f"no model supplied for target {target_id!r}")
            annotate_transfer(outcomes, target_id, models[target_id])
    rows = []
    for order_ratio in plan.order_ratios:
        above, rest = split_by_median(outcomes, order_ratio)
        assert len(above) + len(rest) == len(outcomes)
        for target_id in plan.targets:
            a1 = transfer_rates(above, target_id)
            a2 = transfer_rates(rest, target_id)
            rows.append(
                TransferRow(
                    order_ratio, target_id, a1, a2, a1 - a2, len(above), len(rest)
                )
            )
    return TransferReport(tuple(rows))


def write_transfer_csv(report: TransferReport, path) -> None:
    _write_csv(
        path,
        ["order_ratio", "target", "a1", "a2", "diff", "n1", "n2"],
        (
            (r.order_ratio, r.target, r.a1, r.a2, r.diff, r.n1, r.n2)
            for r in report.rows
        ),
    )


def read_transfer_csv(path) -> TransferReport:
    with open(path, newline="", encoding="utf-8") as handle:
        rows = [
            TransferRow(
                float(row["order_ratio"]),
                row["target"],
                float(row["a1"]),
                float(row["a2"]),
                float(row["diff"]),
                int(row["n1"]),
                int(row["n2"]),
            )
            for row in csv.DictReader(handle)
        ]
    return TransferReport(tuple(rows))
