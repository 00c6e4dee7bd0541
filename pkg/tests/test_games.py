"""Game-theory ops against independent brute-force oracles.

The oracles below work on frozensets and share no code with the package;
agreement between the two routes is the point of the tests.
"""

import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from patchgame.coalition import Coalition
from patchgame.games import (
    BudgetExceededError,
    MODE_EXACT,
    MODE_EXHAUSTIVE,
    MODE_REPLACEMENT,
    MODE_SHUFFLED,
    SetFunction,
    additive_game,
    cardinality_squared_game,
    decompose_check,
    delta_f,
    delta_f_batch,
    majority_game,
    merged_pair_game,
    multi_order_exact,
    multi_order_sampled,
    pairwise_interaction_exact,
    random_table_game,
    sample_contexts,
    shapley_exact,
    shapley_sampled,
    subgame_without,
)

# ---------------------------------------------------------------- oracles


def naive_shapley(fn, n, i):
    """Direct sum over all subsets of N without i, on frozensets."""
    others = [p for p in range(n) if p != i]
    total = 0.0
    for size in range(n):
        weight = (
            math.factorial(size) * math.factorial(n - size - 1) / math.factorial(n)
        )
        for combo in combinations(others, size):
            s = frozenset(combo)
            total += weight * (fn(s | {i}) - fn(s))
    return total


def naive_delta(fn, i, j, context):
    s = frozenset(context)
    return fn(s | {i, j}) - fn(s | {i}) - fn(s | {j}) + fn(s)


def naive_multi_order(fn, n, i, j, order):
    others = [p for p in range(n) if p not in (i, j)]
    values = [naive_delta(fn, i, j, c) for c in combinations(others, order)]
    return sum(values) / len(values)


def naive_pairwise(fn, n, i, j):
    """Merged-pair Shapley minus the two drop-partner Shapleys, built from
    scratch on frozensets."""
    rest = [p for p in range(n) if p not in (i, j)]

    def merged(s):
        real = {rest[k] for k in s if k < n - 2}
        if n - 2 in s:
            real |= {i, j}
        return fn(frozenset(real))

    def drop(partner, member):
        kept = [p for p in range(n) if p != partner]

        def g(s):
            return fn(frozenset(kept[k] for k in s))

        return naive_shapley(g, n - 1, kept.index(member))

    return naive_shapley(merged, n - 1, n - 2) - drop(j, i) - drop(i, j)


def table_fn(n, seed):
    """Random game as a plain dict over frozensets, mirrored as SetFunction."""
    rng = np.random.default_rng(seed)
    players = list(range(n))
    table = {}
    for size in range(n + 1):
        for combo in combinations(players, size):
            table[frozenset(combo)] = float(rng.standard_normal())
    fn = lambda s: table[s]
    game = SetFunction(lambda c: table[frozenset(c.members())], n)
    return fn, game


# ----------------------------------------------------- hand-built fixtures


def test_majority_game_hand_values():
    game = majority_game(3)
    empty = Coalition.empty(3)
    assert delta_f(game, 0, 1, empty) == 1.0
    assert delta_f(game, 0, 1, Coalition.of([2], 3)) == -1.0
    assert multi_order_exact(game, 0, 1, 0).value == 1.0
    assert multi_order_exact(game, 0, 1, 1).value == -1.0
    assert abs(pairwise_interaction_exact(game, 0, 1)) < 1e-12
    for i in range(3):
        assert shapley_exact(game, i) == pytest.approx(1 / 3, abs=1e-12)


def test_cardinality_squared_constant_interaction():
    game = cardinality_squared_game(5)
    for s in range(4):
        est = multi_order_exact(game, 1, 3, s)
        assert est.value == pytest.approx(2.0, abs=1e-12)
    assert pairwise_interaction_exact(game, 1, 3) == pytest.approx(2.0, abs=1e-12)
    assert shapley_exact(cardinality_squared_game(3), 0) == pytest.approx(3.0)


def test_additive_game_has_no_interaction():
    game = additive_game([0.3, -1.2, 2.5, 0.7])
    for i, j in combinations(range(4), 2):
        assert abs(pairwise_interaction_exact(game, i, j)) <= 1e-12
        for s in range(3):
            assert abs(multi_order_exact(game, i, j, s).value) <= 1e-12
    for i, w in enumerate([0.3, -1.2, 2.5, 0.7]):
        assert shapley_exact(game, i) == pytest.approx(w, abs=1e-12)


# -------------------------------------------------- agreement with oracles


@pytest.mark.parametrize("n,seed", [(2, 0), (3, 1), (4, 2), (5, 3), (6, 4)])
def test_shapley_matches_naive(n, seed):
    fn, game = table_fn(n, seed)
    for i in range(n):
        assert shapley_exact(game, i) == pytest.approx(
            naive_shapley(fn, n, i), abs=1e-12
        )


@pytest.mark.parametrize("n,seed", [(3, 10), (4, 11), (5, 12), (6, 13)])
def test_multi_order_matches_naive(n, seed):
    fn, game = table_fn(n, seed)
    for s in range(n - 1):
        got = multi_order_exact(game, 0, 1, s).value
        assert got == pytest.approx(naive_multi_order(fn, n, 0, 1, s), abs=1e-12)


@pytest.mark.parametrize("n,seed", [(3, 20), (4, 21), (5, 22)])
def test_pairwise_matches_naive(n, seed):
    fn, game = table_fn(n, seed)
    for i, j in combinations(range(n), 2):
        got = pairwise_interaction_exact(game, i, j)
        assert got == pytest.approx(naive_pairwise(fn, n, i, j), abs=1e-12)


@given(st.integers(min_value=3, max_value=8), st.integers(min_value=0, max_value=999))
@settings(max_examples=20, deadline=None)
def test_efficiency(n, seed):
    game = random_table_game(n, seed)
    total = math.fsum(shapley_exact(game, i) for i in range(n))
    expected = game(Coalition.full(n)) - game(Coalition.empty(n))
    assert total == pytest.approx(expected, rel=1e-9, abs=1e-9)


@given(st.integers(min_value=3, max_value=8), st.integers(min_value=0, max_value=999))
@settings(max_examples=20, deadline=None)
def test_decomposition_identity(n, seed):
    game = random_table_game(n, seed)
    direct = pairwise_interaction_exact(game, 0, n - 1)
    averaged = decompose_check(game, 0, n - 1)
    assert averaged == pytest.approx(direct, rel=1e-9, abs=1e-9)


# ------------------------------------------------------- exact symmetries


@given(st.integers(min_value=0, max_value=999))
@settings(max_examples=25, deadline=None)
def test_delta_negates_exactly_with_the_game(seed):
    # bitwise, not approximate: the association order is pinned for this
    n = 6
    game = random_table_game(n, seed)
    negated = SetFunction(lambda c: -game(c), n)
    others = [p for p in range(n) if p not in (2, 4)]
    for size in range(n - 1):
        for combo in combinations(others, size):
            context = Coalition.of(combo, n)
            assert delta_f(negated, 2, 4, context) == -delta_f(game, 2, 4, context)


def test_delta_symmetric_in_pair_order():
    game = random_table_game(5, 7)
    context = Coalition.of([0], 5)
    assert delta_f(game, 1, 3, context) == delta_f(game, 3, 1, context)


def test_sampled_exhaustive_equals_exact_bitwise():
    game = random_table_game(8, 99)
    for s in range(7):
        exact = multi_order_exact(game, 0, 1, s)
        sampled = multi_order_sampled(game, 0, 1, s, 10_000, seed=5)
        assert sampled.mode == MODE_EXHAUSTIVE
        assert sampled.value == exact.value  # fsum over a permutation of terms
        assert sampled.num_contexts == exact.num_contexts


# ------------------------------------------------------------- sampling


def test_sample_contexts_without_replacement():
    # C(8, 3) = 56 distinct contexts; 30 <= budget*2 triggers the shuffle path
    contexts, mode = sample_contexts(10, (0, 1), 3, 30, seed=3)
    assert mode == MODE_SHUFFLED
    assert len(contexts) == 30
    seen = {c.bits for c in contexts}
    assert len(seen) == 30
    for c in contexts:
        assert c.cardinality() == 3
        assert not c.contains(0) and not c.contains(1)


def test_sample_contexts_caps_at_space_size():
    # C(4, 2) = 6 distinct contexts; asking for more returns each once
    contexts, mode = sample_contexts(6, (0, 1), 2, 50, seed=3)
    assert mode == MODE_EXHAUSTIVE
    assert len(contexts) == 6
    assert len({c.bits for c in contexts}) == 6


def test_sample_contexts_cycles_when_repeats_allowed():
    contexts, mode = sample_contexts(6, (0, 1), 2, 15, seed=3, allow_repeats=True)
    assert mode == MODE_REPLACEMENT
    assert len(contexts) == 15
    counts = {}
    for c in contexts:
        counts[c.bits] = counts.get(c.bits, 0) + 1
    # cycled shuffle: every context appears floor or ceil of 15/6 times
    assert set(counts.values()) <= {2, 3}


def test_sample_contexts_large_space_replacement():
    contexts, mode = sample_contexts(40, (0, 1), 19, 32, seed=11)
    assert mode == MODE_REPLACEMENT
    assert len(contexts) == 32
    for c in contexts:
        assert c.cardinality() == 19
        assert not c.contains(0) and not c.contains(1)


def test_sample_contexts_deterministic():
    a, _ = sample_contexts(12, (3, 7), 4, 25, seed=42)
    b, _ = sample_contexts(12, (3, 7), 4, 25, seed=42)
    c, _ = sample_contexts(12, (3, 7), 4, 25, seed=43)
    assert [x.bits for x in a] == [x.bits for x in b]
    assert [x.bits for x in a] != [x.bits for x in c]


def test_multi_order_sampled_unbiased_convergence():
    game = random_table_game(12, 17)
    exact = multi_order_exact(game, 2, 9, 5).value
    est = multi_order_sampled(game, 2, 9, 5, 120, seed=1)
    assert est.stderr > 0.0
    assert abs(est.value - exact) <= 6 * est.stderr


def test_shapley_sampled_matches_exact_within_error():
    game = random_table_game(10, 23)
    exact = shapley_exact(game, 4)
    est = shapley_sampled(game, 4, 400, seed=9)
    assert est.num_permutations == 400
    assert abs(est.value - exact) <= 6 * est.stderr
    again = shapley_sampled(game, 4, 400, seed=9)
    assert again.value == est.value


# ---------------------------------------------------------- bookkeeping


def test_cache_deduplicates_evaluations():
    calls = []

    def reward(c):
        calls.append(c.bits)
        return float(c.cardinality())

    game = SetFunction(reward, 4)
    context = Coalition.empty(4)
    delta_f(game, 0, 1, context)
    delta_f(game, 0, 1, context)
    assert len(calls) == 4  # second call fully cached


def test_evaluate_many_deduplicates_within_batch():
    calls = []

    def batch(cs):
        calls.extend(c.bits for c in cs)
        return [float(c.cardinality()) for c in cs]

    game = SetFunction(lambda c: 0.0, 3, batch_evaluate=batch)
    c = Coalition.of([1], 3)
    values = game.evaluate_many([c, c, c])
    assert values == [1.0, 1.0, 1.0]
    assert len(calls) == 1


def test_cache_disabled_calls_through():
    calls = []

    def reward(c):
        calls.append(c.bits)
        return 1.0

    game = SetFunction(reward, 3, cache_size=0)
    c = Coalition.empty(3)
    game(c)
    game(c)
    assert len(calls) == 2


def test_budget_errors():
    game = additive_game([1.0] * 25)
    with pytest.raises(BudgetExceededError):
        shapley_exact(game, 0)
    big = additive_game([1.0] * 12)
    with pytest.raises(BudgetExceededError):
        multi_order_exact(big, 0, 1, 5, max_contexts=10)
    small = additive_game([1.0] * 4)
    with pytest.raises(BudgetExceededError):
        shapley_exact(small, 0, player_limit=3)
    assert shapley_exact(small, 0, player_limit=4) == pytest.approx(1.0)


def test_argument_validation():
    game = majority_game(4)
    with pytest.raises(ValueError):
        delta_f(game, 1, 1, Coalition.empty(4))
    with pytest.raises(ValueError):
        delta_f(game, 0, 1, Coalition.of([1], 4))
    with pytest.raises(ValueError):
        multi_order_exact(game, 0, 1, 3)
    with pytest.raises(ValueError):
        shapley_exact(game, 4)
    with pytest.raises(ValueError):
        game(Coalition.empty(3))


def test_mapped_games_translate_members():
    fn, game = table_fn(5, 31)
    sub, kept = subgame_without(game, 2)
    assert kept == [0, 1, 3, 4]
    assert sub(Coalition.of([0, 2], 4)) == fn(frozenset({0, 3}))
    merged, idx = merged_pair_game(game, 1, 3)
    assert idx == 3
    assert merged(Coalition.of([3], 4)) == fn(frozenset({1, 3}))
    assert merged(Coalition.of([0, 1], 4)) == fn(frozenset({0, 2}))


def test_delta_f_batch_matches_loop():
    game = random_table_game(7, 3)
    others = [p for p in range(7) if p not in (1, 5)]
    contexts = [Coalition.of(c, 7) for c in combinations(others, 2)]
    batched = delta_f_batch(game, 1, 5, contexts)
    assert batched == [delta_f(game, 1, 5, c) for c in contexts]
