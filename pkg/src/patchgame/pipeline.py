"""The measurement protocol: sampled pair interactions across context orders.

One run walks a labeled image set; per image it samples nearby patch
pairs, and per pair draws contexts at every grid order ratio, recording
the pair's cooperative contribution for each context.  Downstream
reductions turn the sample stream into per-order distributions, per-image
averages, strength curves, and histograms, all emitted as CSV.

Determinism contract: every random choice is keyed by (seed, image index,
pair index, ratio index), so reruns and any worker count produce the same
sample stream byte for byte.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .coalition import Coalition
from .games import (
    MODE_EXHAUSTIVE,
    SetFunction,
    as_seed_sequence,
    child_seed,
    delta_f_batch,
    sample_contexts,
)
from .imaging import LabeledImage, PatchGrid
from .oracle import OracleEvaluationError

logger = logging.getLogger("patchgame")

# distribution grid: dense ends, 0.1 steps in the interior
DISTRIBUTION_RATIOS: tuple[float, ...] = (
    0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0,
)
# coarser grid used for per-image average interactions
AVERAGING_RATIOS: tuple[float, ...] = (
    0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0,
)


class StrengthUndefinedError(ValueError):
    """Every per-order interaction magnitude is zero; J has no scale."""


def realize_order(ratio: float, n: int) -> int:
    """Context size for a grid ratio: clamp(round(ratio * n), 0, n - 2).

    Rounding is half-up so the mapping is monotone in the ratio; the top
    clamp reflects that contexts exclude both pair members.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"order ratio {ratio} outside [0, 1]")
    if n < 2:
        raise ValueError(f"need at least 2 players, got {n}")
    return min(max(int(math.floor(ratio * n + 0.5)), 0), n - 2)


@dataclass(frozen=True)
class OrderGrid:
    """Ratio grid plus its realization to integer context sizes."""

    ratios: tuple[float, ...] = DISTRIBUTION_RATIOS

    def __post_init__(self) -> None:
        _check_ratios(self.ratios)

    def realize(self, n: int) -> list[tuple[float, int]]:
        return [(r, realize_order(r, n)) for r in self.ratios]

    def distinct_orders(self, n: int) -> list[int]:
        """Realized context sizes, deduplicated (small n folds ratios together)."""
        return sorted({realize_order(r, n) for r in self.ratios})


def _check_ratios(ratios: Sequence[float]) -> None:
    if not ratios:
        raise ValueError("order_ratios must not be empty")
    if list(ratios) != sorted(set(ratios)):
        raise ValueError(f"order_ratios must be sorted and unique: {ratios}")
    if ratios[0] < 0.0 or ratios[-1] > 1.0:
        raise ValueError(f"order_ratios must lie in [0, 1]: {ratios}")


@dataclass(frozen=True)
class SamplingPlan:
    """Protocol budget: how many images, pairs, contexts, and which orders."""

    num_images: int = 50
    pairs_per_image: int = 200
    contexts_per_pair: int = 100
    pair_radius: float = 2.0
    order_ratios: tuple[float, ...] = DISTRIBUTION_RATIOS
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.num_images, self.pairs_per_image, self.contexts_per_pair) < 1:
            raise ValueError("plan counts must all be >= 1")
        if self.pair_radius < 1:
            raise ValueError(f"pair_radius must be >= 1, got {self.pair_radius}")
        _check_ratios(self.order_ratios)


@dataclass(frozen=True)
class InteractionSample:
    """One observed cooperative contribution, with full provenance."""

    image_id: str
    i: int
    j: int
    order_ratio: float
    order: int
    context_id: int
    value: float


@dataclass(frozen=True)
class ProtocolFailure:
    image_id: str
    i: int
    j: int
    order_ratio: float
    order: int
    context_id: int
    message: str


def eligible_pairs(grid: PatchGrid, radius: float) -> list[tuple[int, int]]:
    """Unordered patch pairs within Euclidean grid distance ``radius``."""
    pairs = [
        (i, j)
        for i, j in combinations(range(grid.n), 2)
        if grid.patch_distance(i, j) <= radius
    ]
    return pairs


def sample_pairs(
    grid: PatchGrid,
    count: int,
    radius: float,
    seed: int | np.random.SeedSequence,
) -> list[tuple[int, int]]:
    """Draw patch pairs uniformly among those within ``radius``.

    Without replacement until the eligible set is exhausted, then with
    replacement (logged); deterministic by seed.
    """
    if count < 1:
        raise ValueError("pair count must be >= 1")
    pool = eligible_pairs(grid, radius)
    if not pool:
        raise ValueError(
            f"no eligible pairs: {grid.n} patches within radius {radius}"
        )
    rng = np.random.default_rng(as_seed_sequence(seed))
    order = rng.permutation(len(pool))
    picked = [pool[k] for k in order[:count]]
    if count > len(pool):
        logger.warning(
            "pair budget %d exceeds the %d eligible pairs; drawing the "
            "remainder with replacement",
            count,
            len(pool),
        )
        extra = rng.integers(0, len(pool), size=count - len(pool))
        picked += [pool[int(k)] for k in extra]
    return picked


def run_protocol(
    dataset: Sequence[LabeledImage],
    grid: PatchGrid,
    oracle_factory: Callable[[LabeledImage], SetFunction],
    plan: SamplingPlan,
    *,
    workers: int = 1,
    exhaustive_contexts: bool = False,
    failures: list[ProtocolFailure] | None = None,
) -> Iterator[InteractionSample]:
    """Yield the full sample stream for ``plan`` over ``dataset``.

    Images are independent work units; with ``workers`` > 1 they are
    evaluated concurrently but always emitted in dataset order, so the
    stream is identical for any worker count.  Oracle failures are recorded
    (``failures``) and skipped, never fatal.  ``exhaustive_contexts``
    replaces the per-cell context budget with full enumeration; useful only
    for small grids.
    """
    if plan.num_images > len(dataset):
        raise ValueError(
            f"plan wants {plan.num_images} images, dataset has {len(dataset)}"
        )
    if workers < 1:
        raise ValueError("workers must be >= 1")
    selected = list(dataset[: plan.num_images])
    root = as_seed_sequence(plan.seed)

    def process(index_and_image: tuple[int, LabeledImage]):
        index, labeled = index_and_image
        game = oracle_factory(labeled)
        if game.n != grid.n:
            raise ValueError(
                f"oracle for {labeled.image_id} plays {game.n} players, "
                f"grid has {grid.n}"
            )
        pairs = sample_pairs(
            grid, plan.pairs_per_image, plan.pair_radius, child_seed(root, 0, index)
        )
        samples: list[InteractionSample] = []
        failed: list[ProtocolFailure] = []
        for pair_index, (i, j) in enumerate(pairs):
            for ratio_index, ratio in enumerate(plan.order_ratios):
                s = realize_order(ratio, grid.n)
                if exhaustive_contexts:
                    others = [p for p in range(grid.n) if p not in (i, j)]
                    contexts = [
                        Coalition.of(c, grid.n) for c in combinations(others, s)
                    ]
                else:
                    contexts, _ = sample_contexts(
                        grid.n,
                        (i, j),
                        s,
                        plan.contexts_per_pair,
                        child_seed(root, 1, index, pair_index, ratio_index),
                        allow_repeats=True,
                    )
                values = _deltas_with_fallback(
                    game, i, j, contexts, labeled.image_id, ratio, s, failed
                )
                for context_id, value in values:
                    samples.append(
                        InteractionSample(
                            labeled.image_id, i, j, ratio, s, context_id, value
                        )
                    )
        return samples, failed

    if workers == 1:
        results = map(process, enumerate(selected))
    else:
        executor = ThreadPoolExecutor(max_workers=workers)
        results = executor.map(process, enumerate(selected))
    try:
        for samples, failed in results:
            if failures is not None:
                failures.extend(failed)
            yield from samples
    finally:
        if workers > 1:
            executor.shutdown(wait=False)


def _deltas_with_fallback(
    game: SetFunction,
    i: int,
    j: int,
    contexts: Sequence[Coalition],
    image_id: str,
    ratio: float,
    s: int,
    failed: list[ProtocolFailure],
) -> list[tuple[int, float]]:
    """Batch first; on oracle failure retry one by one, recording losses."""
    try:
        return list(enumerate(delta_f_batch(game, i, j, contexts)))
    except OracleEvaluationError:
        pass
    out: list[tuple[int, float]] = []
    for context_id, context in enumerate(contexts):
        try:
            out.append((context_id, delta_f_batch(game, i, j, [context])[0]))
        except OracleEvaluationError as err:
            failed.append(
                ProtocolFailure(image_id, i, j, ratio, s, context_id, str(err))
            )
    return out


# -------------------------------------------------------------- reductions


@dataclass(frozen=True)
class DistributionRow:
    order_ratio: float
    q1: float
    median: float
    q3: float
    count: int


@dataclass(frozen=True)
class OrderDistribution:
    rows: tuple[DistributionRow, ...]
    missing_ratios: tuple[float, ...] = ()


def _rank_interpolate(sorted_values: Sequence[float], p: float) -> float:
    pos = p * (len(sorted_values) - 1)
    lo = int(math.floor(pos))
    frac = pos - lo
    if frac == 0.0:
        return sorted_values[lo]
    if frac == 0.5:
        # midpoint form negates bitwise when every sample flips sign
        return 0.5 * (sorted_values[lo] + sorted_values[lo + 1])
    return sorted_values[lo] + frac * (sorted_values[lo + 1] - sorted_values[lo])


def quartiles(values: Sequence[float]) -> tuple[float, float, float]:
    """(Q1, median, Q3) with linear interpolation between closest ranks.

    Q3 is computed as the mirrored Q1 of the negated sample, which makes
    negating every value swap Q1 and Q3 with an exact sign flip.
    """
    if not values:
        raise ValueError("quartiles of an empty sample")
    ascending = sorted(values)
    descending_negated = [-v for v in reversed(ascending)]
    q1 = _rank_interpolate(ascending, 0.25)
    q3 = -_rank_interpolate(descending_negated, 0.25)
    median = _rank_interpolate(ascending, 0.5)
    # adding 0.0 only normalizes -0.0, so CSVs never show a signed zero
    return q1 + 0.0, median + 0.0, q3 + 0.0


def order_distribution(
    samples: Iterable[InteractionSample],
    ratios: Sequence[float] = DISTRIBUTION_RATIOS,
) -> OrderDistribution:
    """Signed per-ratio quartiles of the pooled sample values."""
    buckets: dict[float, list[float]] = {r: [] for r in ratios}
    for sample in samples:
        if sample.order_ratio in buckets:
            buckets[sample.order_ratio].append(sample.value)
    rows = []
    missing = []
    for ratio in ratios:
        values = buckets[ratio]
        if not values:
            missing.append(ratio)
            continue
        q1, median, q3 = quartiles(values)
        if not q1 <= median <= q3:
            raise AssertionError(f"quartiles out of order at ratio {ratio}")
        rows.append(DistributionRow(ratio, q1, median, q3, len(values)))
    return OrderDistribution(tuple(rows), tuple(missing))


def _group_context_means(
    samples: Iterable[InteractionSample],
) -> dict[tuple[str, int, int], dict[int, list[float]]]:
    """(image, i, j) -> order -> observed values."""
    grouped: dict[tuple[str, int, int], dict[int, list[float]]] = {}
    for sample in samples:
        by_order = grouped.setdefault((sample.image_id, sample.i, sample.j), {})
        by_order.setdefault(sample.order, []).append(sample.value)
    return grouped


def average_interaction(
    samples: Iterable[InteractionSample],
    n: int,
    ratios: Sequence[float] = AVERAGING_RATIOS,
) -> float:
    """Per-image average interaction over the averaging grid.

    Mean over pairs of the mean over realized grid orders (deduplicated:
    small player counts fold several ratios onto one order) of the
    per-order context-mean.  All samples must belong to one image.
    """
    orders = sorted({realize_order(r, n) for r in ratios})
    grouped = _group_context_means(samples)
    if not grouped:
        raise ValueError("no samples given")
    images = {image_id for image_id, _, _ in grouped}
    if len(images) > 1:
        raise ValueError(f"samples span several images: {sorted(images)}")
    per_pair: list[float] = []
    for key, by_order in sorted(grouped.items()):
        missing = [s for s in orders if s not in by_order]
        if missing:
            raise ValueError(
                f"pair ({key[1]}, {key[2]}) lacks samples at orders {missing}"
            )
        order_means = [
            math.fsum(by_order[s]) / len(by_order[s]) for s in orders
        ]
        per_pair.append(math.fsum(order_means) / len(orders))
    return math.fsum(per_pair) / len(per_pair)


def per_order_averages(
    samples: Iterable[InteractionSample],
    ratios: Sequence[float] = DISTRIBUTION_RATIOS,
) -> dict[str, dict[float, float]]:
    """Per image and grid ratio: mean over pairs of the context-mean.

    This is the per-order quantity the transfer split keys on; unlike
    :func:`average_interaction` nothing is folded across orders.
    """
    nested: dict[str, dict[float, dict[tuple[int, int], list[float]]]] = {}
    for sample in samples:
        by_ratio = nested.setdefault(sample.image_id, {})
        by_pair = by_ratio.setdefault(sample.order_ratio, {})
        by_pair.setdefault((sample.i, sample.j), []).append(sample.value)
    out: dict[str, dict[float, float]] = {}
    for image_id, by_ratio in nested.items():
        missing = [r for r in ratios if r not in by_ratio]
        if missing:
            raise ValueError(
                f"image {image_id} has no samples at order ratios {missing}"
            )
        averages = {}
        for ratio in ratios:
            pair_means = [
                math.fsum(values) / len(values)
                for _, values in sorted(by_ratio[ratio].items())
            ]
            averages[ratio] = math.fsum(pair_means) / len(pair_means)
        out[image_id] = averages
    return out


@dataclass(frozen=True)
class StrengthRow:
    order_ratio: float
    strength: float


def interaction_strength_curve(
    samples: Iterable[InteractionSample],
    ratios: Sequence[float] = DISTRIBUTION_RATIOS,
) -> list[StrengthRow]:
    """Normalized interaction strength per grid ratio.

    Per ratio: the mean over (image, pair) cells of |context-mean value|,
    divided by the all-ratio mean of the same quantity so the curve
    averages to 1.
    """
    cells: dict[float, dict[tuple[str, int, int], list[float]]] = {
        r: {} for r in ratios
    }
    for sample in samples:
        if sample.order_ratio in cells:
            cells[sample.order_ratio].setdefault(
                (sample.image_id, sample.i, sample.j), []
            ).append(sample.value)
    magnitudes: dict[float, float] = {}
    for ratio in ratios:
        groups = cells[ratio]
        if not groups:
            raise ValueError(f"no samples at order ratio {ratio}")
        means = [
            abs(math.fsum(values) / len(values))
            for _, values in sorted(groups.items())
        ]
        magnitudes[ratio] = math.fsum(means) / len(means)
    scale = math.fsum(magnitudes.values()) / len(ratios)
    if scale == 0.0:
        raise StrengthUndefinedError(
            "interaction magnitude is zero at every order; strength undefined"
        )
    return [StrengthRow(r, magnitudes[r] / scale) for r in ratios]


def interaction_strength(
    samples: Iterable[InteractionSample],
    ratio: float,
    ratios: Sequence[float] = DISTRIBUTION_RATIOS,
) -> float:
    """Strength at one grid ratio (see :func:`interaction_strength_curve`)."""
    for row in interaction_strength_curve(samples, ratios):
        if row.order_ratio == ratio:
            return row.strength
    raise ValueError(f"ratio {ratio} is not on the grid {ratios}")


@dataclass(frozen=True)
class HistogramBin:
    lo: float
    hi: float
    count: int


def average_interaction_histogram(
    values: Sequence[float], lo: float, hi: float, bins: int
) -> list[HistogramBin]:
    """Fixed-width bins over [lo, hi]; half-open except the last bin.

    Values outside the range are not counted.
    """
    if bins < 1:
        raise ValueError("need at least one bin")
    if not hi > lo:
        raise ValueError(f"empty bin range [{lo}, {hi}]")
    counts, edges = np.histogram(np.asarray(values, np.float64), bins, (lo, hi))
    return [
        HistogramBin(float(edges[k]), float(edges[k + 1]), int(counts[k]))
        for k in range(bins)
    ]


# ------------------------------------------------------------- CSV output


def _format(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(v) for v in row])


def write_samples_csv(
    samples: Iterable[InteractionSample], path: str | Path
) -> None:
    _write_csv(
        path,
        ["image_id", "i", "j", "order_ratio", "s", "context_id", "delta_f"],
        (
            (s.image_id, s.i, s.j, s.order_ratio, s.order, s.context_id, s.value)
            for s in samples
        ),
    )


def read_samples_csv(path: str | Path) -> list[InteractionSample]:
    with open(path, newline="", encoding="utf-8") as handle:
        return [
            InteractionSample(
                row["image_id"],
                int(row["i"]),
                int(row["j"]),
                float(row["order_ratio"]),
                int(row["s"]),
                int(row["context_id"]),
                float(row["delta_f"]),
            )
            for row in csv.DictReader(handle)
        ]


def write_order_dist_csv(dist: OrderDistribution, path: str | Path) -> None:
    _write_csv(
        path,
        ["order_ratio", "q1", "median", "q3", "count"],
        ((r.order_ratio, r.q1, r.median, r.q3, r.count) for r in dist.rows),
    )


def write_averages_csv(
    rows: Iterable[tuple[str, float, int, int]], path: str | Path
) -> None:
    """Rows are (image_id, average, label, predicted)."""
    _write_csv(
        path,
        ["image_id", "avg_interaction", "label", "predicted", "correct"],
        (
            (image_id, avg, label, predicted, int(label == predicted))
            for image_id, avg, label, predicted in rows
        ),
    )


def write_strength_csv(rows: Iterable[StrengthRow], path: str | Path) -> None:
    _write_csv(
        path, ["order_ratio", "J"], ((r.order_ratio, r.strength) for r in rows)
    )


def write_histogram_csv(bins: Iterable[HistogramBin], path: str | Path) -> None:
    _write_csv(
        path, ["bin_lo", "bin_hi", "count"], ((b.lo, b.hi, b.count) for b in bins)
    )


def write_failures_csv(
    failures: Iterable[ProtocolFailure], path: str | Path
) -> None:
    _write_csv(
        path,
        ["image_id", "i", "j", "order_ratio", "s", "context_id", "message"],
        (
            (f.image_id, f.i, f.j, f.order_ratio, f.order, f.context_id, f.message)
            for f in failures
        ),
    )
