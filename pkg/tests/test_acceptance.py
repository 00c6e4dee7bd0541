"""Release gate: every headline guarantee, one printed verdict line each.

Run with ``pytest -s tests/test_acceptance.py`` to see the PASS/FAIL lines
as they happen.  Each test checks exactly one guarantee at its stated
tolerance; nothing here is redundant with the unit suites, which probe the
same machinery much more finely.
"""

import math
import time
from contextlib import contextmanager
from itertools import combinations

import numpy as np

from patchgame.attacks import (
    AttackConfig,
    AttackOutcome,
    ifgsm,
    linf_box,
    success_rate_sweep,
    write_sweep_csv,
)
from patchgame.cli import main
from patchgame.coalition import Coalition
from patchgame.games import (
    additive_game,
    cardinality_squared_game,
    delta_f,
    majority_game,
    multi_order_exact,
    multi_order_sampled,
    pairwise_interaction_exact,
    random_table_game,
    shapley_exact,
)
from patchgame.imaging import ImageTensor, load_dataset, make_synthetic_dataset
from patchgame.models import builtin_linear_model, builtin_mlp_model
from patchgame.pipeline import (
    DISTRIBUTION_RATIOS,
    InteractionSample,
    OrderGrid,
    interaction_strength_curve,
    realize_order,
)
from patchgame.transfer import split_by_median, transfer_rates

OUTPUT_FILES = (
    "samples.csv",
    "order_dist.csv",
    "averages.csv",
    "strength.csv",
    "histogram.csv",
    "failures.csv",
    "effective_config.json",
)


@contextmanager
def verdict(name):
    try:
        yield
    except BaseException:
        print(f"FAIL {name}")
        raise
    print(f"PASS {name}")


def sample_rows(game, image_id="img", ratios=DISTRIBUTION_RATIOS):
    """Exhaustive interaction samples for every pair of a small game."""
    rows = []
    for i, j in combinations(range(game.n), 2):
        others = [p for p in range(game.n) if p not in (i, j)]
        for ratio in ratios:
            s = realize_order(ratio, game.n)
            for k, members in enumerate(combinations(others, s)):
                context = Coalition.of(members, game.n)
                rows.append(
                    InteractionSample(
                        image_id, i, j, ratio, s, k, delta_f(game, i, j, context)
                    )
                )
    return rows


# 1 ------------------------------------------------------------- efficiency


def test_attribution_sums_to_total_payoff():
    with verdict("shapley-efficiency"):
        started = time.perf_counter()
        for trial in range(50):
            n = 3 + trial % 10
            game = random_table_game(n, seed=trial)
            total = math.fsum(shapley_exact(game, i) for i in range(n))
            expected = game(Coalition.full(n)) - game(Coalition.empty(n))
            scale = max(abs(expected), 1.0)
            assert abs(total - expected) <= 1e-9 * scale, (trial, total, expected)
        assert time.perf_counter() - started < 60.0


# 2 ---------------------------------------------------------- decomposition


def test_pair_interaction_is_mean_of_order_interactions():
    with verdict("order-decomposition"):
        for trial in range(20):
            n = 3 + trial % 8
            game = random_table_game(n, seed=1000 + trial)
            for i, j in combinations(range(n), 2):
                whole = pairwise_interaction_exact(game, i, j)
                per_order = [
                    multi_order_exact(game, i, j, s).value for s in range(n - 1)
                ]
                mean = math.fsum(per_order) / (n - 1)
                assert abs(whole - mean) <= 1e-9, (trial, i, j, whole, mean)


# 3 -------------------------------------------------------- exact vs sampled


def test_sampled_estimator_agrees_with_exact():
    with verdict("sampled-consistency"):
        # a budget covering every context must reproduce the exact mean
        for trial in range(20):
            n = 6 + trial % 5
            game = random_table_game(n, seed=2000 + trial)
            s = (n - 2) // 2
            budget = math.comb(n - 2, s)
            exact = multi_order_exact(game, 0, 1, s).value
            sampled = multi_order_sampled(game, 0, 1, s, budget, seed=trial).value
            assert abs(sampled - exact) <= 1e-12, (trial, sampled, exact)
        # partial budgets: the four-stderr band almost always brackets exact
        hits = 0
        for trial in range(1000):
            game = random_table_game(10, seed=3000 + trial)
            exact = multi_order_exact(game, 0, 1, 4).value
            est = multi_order_sampled(game, 0, 1, 4, 25, seed=trial)
            if abs(est.value - exact) <= 4.0 * est.stderr:
                hits += 1
        assert hits >= 990, hits


# 4 ------------------------------------------------------- analytic fixtures


def test_analytic_games_give_textbook_values():
    with verdict("analytic-fixtures"):
        majority = majority_game(3)
        assert multi_order_exact(majority, 0, 1, 0).value == 1.0
        assert multi_order_exact(majority, 0, 1, 1).value == -1.0
        assert abs(pairwise_interaction_exact(majority, 0, 1)) <= 1e-12

        quadratic = cardinality_squared_game(6)
        for i, j in combinations(range(6), 2):
            others = [p for p in range(6) if p not in (i, j)]
            for size in range(5):
                for members in combinations(others, size):
                    context = Coalition.of(members, 6)
                    assert delta_f(quadratic, i, j, context) == 2.0
        for row in interaction_strength_curve(sample_rows(quadratic)):
            assert abs(row.strength - 1.0) <= 1e-12

        additive = additive_game([0.3, -1.2, 2.5, 0.0, 7.25])
        for i, j in combinations(range(5), 2):
            assert abs(pairwise_interaction_exact(additive, i, j)) <= 1e-12
            for s in range(4):
                assert abs(multi_order_exact(additive, i, j, s).value) <= 1e-12


# 5 --------------------------------------------------- pipeline determinism


def test_reference_pipeline_is_byte_deterministic(tmp_path):
    with verdict("pipeline-determinism"):
        manifest = make_synthetic_dataset(
            tmp_path / "data", 16, 64, 64, channels=1, num_classes=2, seed=11
        )
        outs = [tmp_path / name for name in ("run1", "run2", "run4")]
        for out, workers in zip(outs, ("1", "1", "4")):
            started = time.perf_counter()
            code = main(
                [
                    "interactions",
                    "--manifest",
                    str(manifest),
                    "--patch-size",
                    "16",
                    "--pairs-per-image",
                    "50",
                    "--contexts-per-pair",
                    "20",
                    "--workers",
                    workers,
                    "--out",
                    str(out),
                ]
            )
            assert code == 0
            assert time.perf_counter() - started < 300.0
        for name in OUTPUT_FILES:
            reference = (outs[0] / name).read_bytes()
            assert (outs[1] / name).read_bytes() == reference, name
            assert (outs[2] / name).read_bytes() == reference, name


# 6 ----------------------------------------------------- order-grid fidelity


def test_grid_realizes_documented_context_sizes():
    with verdict("order-grid-fidelity"):
        grid = OrderGrid()
        expected = [0, 10, 20, 39, 59, 78, 98, 118, 137, 157, 176, 186, 194]
        assert grid.distinct_orders(196) == expected
        realized = [s for _, s in grid.realize(196)]
        assert sorted(realized) == realized  # ratio ordering survives
        # small boards fold several ratios onto one size; the fold is
        # collapsed for averaging yet every requested ratio stays reported
        assert len(grid.realize(16)) == len(DISTRIBUTION_RATIOS)
        assert grid.distinct_orders(16) == [0, 1, 2, 3, 5, 6, 8, 10, 11, 13, 14]


# 7 ---------------------------------------------------------- attack budget


def test_attack_respects_budget_box_and_linear_optimum():
    with verdict("attack-contract"):
        rng = np.random.default_rng(np.random.SeedSequence(7))

        # exact budget and pixel box on a smooth model, several budgets
        model = builtin_mlp_model(3, (6, 6, 1), hidden_width=8, seed=1)
        for epsilon in (16.0 / 255.0, 0.05, 0.4):
            cfg = AttackConfig(epsilon=epsilon, steps=7)
            for _ in range(5):
                clean = ImageTensor(
                    rng.uniform(size=(1, 6, 6)).astype(np.float32).astype(np.float64)
                )
                label = int(rng.integers(3))
                adv = ifgsm(model, clean, label, cfg)
                gap = np.abs(adv.data - clean.quantized().data).max()
                assert gap <= epsilon
                assert adv.data.min() >= 0.0 and adv.data.max() <= 1.0

        # one signed step on a linear model lands on the best box corner
        linear = builtin_linear_model(2, (2, 2, 1), seed=3)
        clean = ImageTensor(
            rng.uniform(0.3, 0.7, size=(1, 2, 2))
            .astype(np.float32)
            .astype(np.float64)
        )
        cfg = AttackConfig(epsilon=0.1, steps=1, step_size=0.1)
        adv = ifgsm(linear, clean, 0, cfg)

        def loss(x):
            probs = linear.predict_proba(x[None])[0]
            return -math.log(probs[0])

        lo, hi = linf_box(clean.quantized().data, 0.1)
        corners, best = [lo.copy() for _ in range(16)], None
        for idx in range(16):
            for bit in range(4):
                if idx >> bit & 1:
                    corners[idx].flat[bit] = hi.flat[bit]
            if best is None or loss(corners[idx]) > loss(best):
                best = corners[idx]
        assert np.array_equal(adv.data, best)

        # analytic gradients match central differences
        for m in (linear, builtin_mlp_model(2, (2, 2, 1), hidden_width=5, seed=4)):
            x = rng.uniform(0.2, 0.8, size=(1, 2, 2))
            grad = m.loss_gradient(x, 1)
            h = 1e-6
            for flat in range(4):
                bump = np.zeros_like(x)
                bump.flat[flat] = h

                def at(point):
                    return -math.log(m.predict_proba(point[None])[0][1])

                numeric = (at(x + bump) - at(x - bump)) / (2.0 * h)
                assert abs(grad.flat[flat] - numeric) <= 1e-5


# 8 ------------------------------------------------------- sweep monotonicity


def test_warm_sweep_is_monotone_and_schema_stable(tmp_path):
    with verdict("sweep-monotonicity"):
        manifest = make_synthetic_dataset(
            tmp_path / "data", 12, 8, 8, channels=1, num_classes=2, seed=5
        )
        dataset = load_dataset(manifest)
        model = builtin_mlp_model(2, (8, 8, 1), hidden_width=16, seed=0)
        result = success_rate_sweep(
            model, dataset, (0.01, 0.03, 0.06, 0.12, 0.25, 0.5)
        )
        rates = [row.success_rate for row in result.rows]
        assert all(a <= b for a, b in zip(rates, rates[1:])), rates
        assert result.rows[0].num_eligible + result.num_excluded == 12

        out = tmp_path / "sweep.csv"
        write_sweep_csv(result, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "epsilon,success_rate"
        assert len(lines) == 7


# 9 ------------------------------------------------------------ median split


def test_median_split_properties_and_hand_fixture():
    with verdict("transfer-split"):
        rng = np.random.default_rng(np.random.SeedSequence(9))
        pixel = ImageTensor(np.full((1, 1, 1), 0.5))

        def outcome(k, value, fooled):
            out = AttackOutcome(
                image_id=f"img{k}",
                clean_path=f"img{k}.raw",
                label=0,
                pred_clean=0,
                pred_adv=1,
                adversarial=pixel,
            )
            out.order_averages[0.5] = value
            out.transfer_success["target"] = fooled
            return out

        for _ in range(50):
            count = int(rng.integers(2, 12))
            values = rng.normal(size=count) * float(rng.integers(1, 4))
            group = [outcome(k, v, bool(v > 0)) for k, v in enumerate(values)]
            above, rest = split_by_median(group, 0.5)
            assert len(above) + len(rest) == count
            assert {o.image_id for o in above}.isdisjoint(
                o.image_id for o in rest
            )
            median = float(np.median(values))
            assert all(o.order_averages[0.5] > median for o in above)
            assert all(o.order_averages[0.5] <= median for o in rest)

        # six hand records: median 2, ties stay low, flag = value positive
        values = [0.0, 2.0, 2.0, 2.0, 3.0, 4.0]
        group = [outcome(k, v, v > 0) for k, v in enumerate(values)]
        above, rest = split_by_median(group, 0.5)
        assert (len(above), len(rest)) == (2, 4)
        a1 = transfer_rates(above, "target")
        a2 = transfer_rates(rest, "target")
        assert a1 == 1.0
        assert a2 == 0.75
        assert a1 - a2 == 0.25


# 10 --------------------------------------------------- strength normalization


def test_strength_curve_averages_to_one():
    with verdict("strength-normalization"):
        rng = np.random.default_rng(np.random.SeedSequence(12))
        for _ in range(20):
            rows = [
                InteractionSample(
                    f"img{img}", 0, p + 1, ratio, 0, k, float(rng.normal())
                )
                for img in range(3)
                for p in range(4)
                for ratio in DISTRIBUTION_RATIOS
                for k in range(3)
            ]
            curve = interaction_strength_curve(rows)
            mean = math.fsum(row.strength for row in curve) / len(curve)
            assert abs(mean - 1.0) <= 1e-9
