"""Shapley values and multi-order interactions of arbitrary set functions.

Players are indexed 0..n-1 and a game is any deterministic map from
coalitions to a real reward.  Everything here is model-agnostic: the image
pipeline plugs in by wrapping a classifier as a :class:`SetFunction`.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Iterable, Sequence

import numpy as np

from .coalition import Coalition

DEFAULT_CACHE_SIZE = 1 << 22
DEFAULT_EXHAUSTIVE_PLAYERS = 20
DEFAULT_MAX_CONTEXTS = 10**6

_EVAL_CHUNK = 4096

MODE_EXACT = "exact"
MODE_EXHAUSTIVE = "exhaustive"
MODE_SHUFFLED = "shuffled"
MODE_REPLACEMENT = "replacement"


class BudgetExceededError(ValueError):
    """Exhaustive computation would exceed the configured evaluation budget."""


class SetFunction:
    """Deterministic coalition -> reward map with a bounded LRU value cache.

    ``evaluate`` is called for single coalitions; ``batch_evaluate``, when
    given, is preferred for groups of coalitions (image oracles use it to
    batch classifier calls).  Identical coalitions must yield identical
    values; the cache relies on it.
    """

    def __init__(
        self,
        evaluate: Callable[[Coalition], float],
        n: int,
        *,
        batch_evaluate: Callable[[Sequence[Coalition]], Sequence[float]] | None = None,
        cache_size: int = DEFAULT_CACHE_SIZE,
    ) -> None:
        if n <= 0:
            raise ValueError(f"player count must be positive, got {n}")
        self.n = n
        self._evaluate = evaluate
        self._batch_evaluate = batch_evaluate
        self._cache: OrderedDict[int, float] = OrderedDict()
        self._cache_size = cache_size

    def __call__(self, coalition: Coalition) -> float:
        return self.evaluate_many([coalition])[0]

    def evaluate_many(self, coalitions: Sequence[Coalition]) -> list[float]:
        """Evaluate a batch of coalitions, deduplicating against the cache."""
        values: list[float | None] = [None] * len(coalitions)
        pending: dict[int, list[int]] = {}
        for idx, coalition in enumerate(coalitions):
            if coalition.n != self.n:
                raise ValueError(
                    f"coalition over {coalition.n} players given to a "
                    f"{self.n}-player game"
                )
            cached = self._cache_get(coalition.bits)
            if cached is not None:
                values[idx] = cached
            else:
                pending.setdefault(coalition.bits, []).append(idx)
        if pending:
            unique = [coalitions[slots[0]] for slots in pending.values()]
            if self._batch_evaluate is not None:
                fresh = [float(v) for v in self._batch_evaluate(unique)]
                if len(fresh) != len(unique):
                    raise ValueError(
                        f"batch evaluator returned {len(fresh)} values for "
                        f"{len(unique)} coalitions"
                    )
            else:
                fresh = [float(self._evaluate(c)) for c in unique]
            for coalition, value in zip(unique, fresh):
                self._cache_put(coalition.bits, value)
                for idx in pending[coalition.bits]:
                    values[idx] = value
        return values  # type: ignore[return-value]

    def _cache_get(self, bits: int) -> float | None:
        if self._cache_size <= 0:
            return None
        value = self._cache.get(bits)
        if value is not None:
            self._cache.move_to_end(bits)
        return value

    def _cache_put(self, bits: int, value: float) -> None:
        if self._cache_size <= 0:
            return
        self._cache[bits] = value
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)


@dataclass(frozen=True)
class MultiOrderEstimate:
    """Interaction of one player pair at a single context order."""

    i: int
    j: int
    order: int
    value: float
    num_contexts: int
    stderr: float
    mode: str = MODE_EXACT


@dataclass(frozen=True)
class ShapleyEstimate:
    value: float
    stderr: float
    num_permutations: int


def _check_pair(n: int, i: int, j: int) -> None:
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"players ({i}, {j}) out of range [0, {n})")
    if i == j:
        raise ValueError(f"pair members must differ, got i == j == {i}")


def delta_f(f: SetFunction, i: int, j: int, context: Coalition) -> float:
    """Cooperative contribution of the pair (i, j) under a fixed context.

    Computes f(S+ij) - f(S+j) - f(S+i) + f(S) with four oracle evaluations
    (fewer when cached).  Positive values mean the pair raises the reward
    jointly beyond its members' individual effects; negative values mean
    the cooperation hurts.  The arithmetic is ordered so that swapping i
    and j, or negating the game, changes the result bitwise-exactly.
    """
    return delta_f_batch(f, i, j, [context])[0]


def delta_f_batch(
    f: SetFunction, i: int, j: int, contexts: Sequence[Coalition]
) -> list[float]:
    """``delta_f`` over many contexts with one batched oracle pass."""
    _check_pair(f.n, i, j)
    lo, hi = min(i, j), max(i, j)  # canonical order: result symmetric in (i, j)
    coalitions: list[Coalition] = []
    for context in contexts:
        if context.contains(i) or context.contains(j):
            raise ValueError(
                f"context {context!r} must exclude both pair members ({i}, {j})"
            )
        with_lo = context.with_player(lo)
        coalitions += [
            with_lo.with_player(hi),
            with_lo,
            context.with_player(hi),
            context,
        ]
    values = f.evaluate_many(coalitions)
    out = []
    for k in range(len(contexts)):
        f_both, f_lo, f_hi, f_base = values[4 * k : 4 * k + 4]
        # fixed association: exact sign flip when the reward is negated
        out.append((f_both - f_lo) - (f_hi - f_base))
    return out


def _subsets_of(players: Sequence[int], size: int, n: int) -> Iterable[Coalition]:
    for combo in combinations(players, size):
        yield Coalition.of(combo, n)


def shapley_exact(
    f: SetFunction, i: int, *, player_limit: int = DEFAULT_EXHAUSTIVE_PLAYERS
) -> float:
    """Exact Shapley value of player i: the factorially weighted average of
    marginal contributions f(S+i) - f(S) over all contexts S avoiding i.

    Needs 2^n oracle evaluations, so games above ``player_limit`` players
    are rejected; use :func:`shapley_sampled` for those.
    """
    n = f.n
    if not 0 <= i < n:
        raise ValueError(f"player {i} out of range [0, {n})")
    if n > player_limit:
        raise BudgetExceededError(
            f"exhaustive-budget exceeded: 2^{n} evaluations needed but the "
            f"player limit is {player_limit}; use shapley_sampled instead"
        )
    others = [p for p in range(n) if p != i]
    fact = [math.factorial(k) for k in range(n + 1)]
    terms: list[float] = []
    for size in range(n):
        weight = fact[size] * fact[n - size - 1] / fact[n]
        block = list(_subsets_of(others, size, n))
        for start in range(0, len(block), _EVAL_CHUNK):
            chunk = block[start : start + _EVAL_CHUNK]
            flat: list[Coalition] = []
            for context in chunk:
                flat += [context.with_player(i), context]
            values = f.evaluate_many(flat)
            for k in range(len(chunk)):
                terms.append(weight * (values[2 * k] - values[2 * k + 1]))
    return math.fsum(terms)


def shapley_sampled(
    f: SetFunction,
    i: int,
    num_permutations: int,
    seed: int | np.random.SeedSequence,
) -> ShapleyEstimate:
    """Permutation-sampling estimate of the Shapley value of player i.

    Each sampled permutation contributes the marginal f(S+i) - f(S) for the
    set S of players preceding i.  Unbiased for :func:`shapley_exact`;
    bitwise reproducible for a fixed seed.
    """
    n = f.n
    if not 0 <= i < n:
        raise ValueError(f"player {i} out of range [0, {n})")
    if num_permutations < 1:
        raise ValueError("num_permutations must be >= 1")
    root = as_seed_sequence(seed)
    marginals: list[float] = []
    for start in range(0, num_permutations, _EVAL_CHUNK):
        count = min(_EVAL_CHUNK, num_permutations - start)
        flat: list[Coalition] = []
        for k in range(count):
            rng = np.random.default_rng(child_seed(root, start + k))
            order = rng.permutation(n)
            position = int(np.nonzero(order == i)[0][0])
            context = Coalition.of((int(p) for p in order[:position]), n)
            flat += [context.with_player(i), context]
        values = f.evaluate_many(flat)
        for k in range(count):
            marginals.append(values[2 * k] - values[2 * k + 1])
    return ShapleyEstimate(
        value=math.fsum(marginals) / num_permutations,
        stderr=_standard_error(marginals),
        num_permutations=num_permutations,
    )


def _standard_error(values: Sequence[float]) -> float:
    k = len(values)
    if k < 2:
        return 0.0
    mean = math.fsum(values) / k
    var = math.fsum((v - mean) ** 2 for v in values) / (k - 1)
    return math.sqrt(var / k)


def _mapped_game(f: SetFunction, n: int, expand: Callable[[Coalition], Coalition]) -> SetFunction:
    # derived games skip their own cache; the base game's cache deduplicates
    return SetFunction(
        lambda c: f(expand(c)),
        n,
        batch_evaluate=lambda cs: f.evaluate_many([expand(c) for c in cs]),
        cache_size=0,
    )


def subgame_without(f: SetFunction, excluded: int) -> tuple[SetFunction, list[int]]:
    """Restriction of the game to the n-1 players other than ``excluded``.

    Returns the restricted game and the list mapping new player indices to
    original ids.
    """
    if not 0 <= excluded < f.n:
        raise ValueError(f"player {excluded} out of range [0, {f.n})")
    kept = [p for p in range(f.n) if p != excluded]

    def expand(c: Coalition) -> Coalition:
        return Coalition.of((kept[k] for k in c.members()), f.n)

    return _mapped_game(f, f.n - 1, expand), kept


def merged_pair_game(f: SetFunction, i: int, j: int) -> tuple[SetFunction, int]:
    """Game in which players i and j act as one compound player.

    The compound player is the last index of the returned (n-1)-player game;
    whenever it joins a coalition both i and j are inserted into the
    underlying game.
    """
    _check_pair(f.n, i, j)
    rest = [p for p in range(f.n) if p not in (i, j)]
    merged_index = f.n - 2

    def expand(c: Coalition) -> Coalition:
        bits = 0
        for k in c.members():
            if k == merged_index:
                bits |= (1 << i) | (1 << j)
            else:
                bits |= 1 << rest[k]
        return Coalition(bits, f.n)

    return _mapped_game(f, f.n - 1, expand), merged_index


def pairwise_interaction_exact(
    f: SetFunction,
    i: int,
    j: int,
    *,
    player_limit: int = DEFAULT_EXHAUSTIVE_PLAYERS,
) -> float:
    """Exact interaction of a player pair.

    The pair's Shapley value in the game where i and j act as one player,
    minus the individual Shapley values each computed in the subgame that
    drops the partner.  Equals the average over orders of the multi-order
    interaction (see :func:`decompose_check`).
    """
    _check_pair(f.n, i, j)
    merged, merged_index = merged_pair_game(f, i, j)
    sub_i, kept_i = subgame_without(f, j)
    sub_j, kept_j = subgame_without(f, i)
    phi_pair = shapley_exact(merged, merged_index, player_limit=player_limit)
    phi_i = shapley_exact(sub_i, kept_i.index(i), player_limit=player_limit)
    phi_j = shapley_exact(sub_j, kept_j.index(j), player_limit=player_limit)
    return phi_pair - (phi_i + phi_j)


def _check_order(n: int, s: int) -> None:
    if not 0 <= s <= n - 2:
        raise ValueError(f"order {s} out of range [0, {n - 2}]")


def multi_order_exact(
    f: SetFunction,
    i: int,
    j: int,
    s: int,
    *,
    max_contexts: int = DEFAULT_MAX_CONTEXTS,
) -> MultiOrderEstimate:
    """Interaction of (i, j) at order s: the exact mean of delta_f over all
    contexts of size s drawn from the other n-2 players."""
    _check_pair(f.n, i, j)
    _check_order(f.n, s)
    others = [p for p in range(f.n) if p not in (i, j)]
    total = math.comb(len(others), s)
    if total > max_contexts:
        raise BudgetExceededError(
            f"exhaustive-budget exceeded: order {s} has {total} contexts, "
            f"limit is {max_contexts}; use multi_order_sampled instead"
        )
    values: list[float] = []
    block = list(_subsets_of(others, s, f.n))
    for start in range(0, len(block), _EVAL_CHUNK):
        values += delta_f_batch(f, i, j, block[start : start + _EVAL_CHUNK])
    return MultiOrderEstimate(
        i=i,
        j=j,
        order=s,
        value=math.fsum(values) / total,
        num_contexts=total,
        stderr=0.0,
        mode=MODE_EXACT,
    )


def sample_contexts(
    n: int,
    exclude: tuple[int, int],
    s: int,
    count: int,
    seed: int | np.random.SeedSequence,
    *,
    allow_repeats: bool = False,
) -> tuple[list[Coalition], str]:
    """Draw ``count`` size-s contexts from the players outside ``exclude``.

    When the context space is small enough to enumerate (at most twice the
    budget) contexts are drawn without replacement from a seeded shuffle;
    otherwise each draw is an independent seeded sample.  With
    ``allow_repeats`` the shuffle is cycled so exactly ``count`` contexts
    come back even past exhaustion (never otherwise).
    """
    i, j = exclude
    _check_pair(n, i, j)
    _check_order(n, s)
    if count < 1:
        raise ValueError("context count must be >= 1")
    others = [p for p in range(n) if p not in (i, j)]
    total = math.comb(len(others), s)
    root = as_seed_sequence(seed)
    if total <= 2 * count:
        block = list(_subsets_of(others, s, n))
        rng = np.random.default_rng(child_seed(root, 0))
        order = rng.permutation(total)
        if count >= total:
            if not allow_repeats or count == total:
                return [block[k] for k in order], MODE_EXHAUSTIVE
            picked = [block[order[k % total]] for k in range(count)]
            return picked, MODE_REPLACEMENT
        return [block[k] for k in order[:count]], MODE_SHUFFLED
    contexts = []
    for k in range(count):
        rng = np.random.default_rng(child_seed(root, 1, k))
        chosen = rng.choice(len(others), size=s, replace=False)
        contexts.append(Coalition.of((others[int(c)] for c in chosen), n))
    return contexts, MODE_REPLACEMENT


def multi_order_sampled(
    f: SetFunction,
    i: int,
    j: int,
    s: int,
    num_contexts: int,
    seed: int | np.random.SeedSequence,
) -> MultiOrderEstimate:
    """Monte-Carlo estimate of the order-s interaction of (i, j).

    Contexts are sampled per :func:`sample_contexts` (the effective count is
    capped at the number of distinct contexts).  Deterministic for a fixed
    seed; ``stderr`` is the sample standard error of the context mean.
    """
    _check_pair(f.n, i, j)
    _check_order(f.n, s)
    if num_contexts < 1:
        raise ValueError("num_contexts must be >= 1")
    contexts, mode = sample_contexts(f.n, (i, j), s, num_contexts, seed)
    values: list[float] = []
    for start in range(0, len(contexts), _EVAL_CHUNK):
        values += delta_f_batch(f, i, j, contexts[start : start + _EVAL_CHUNK])
    stderr = 0.0 if mode == MODE_EXHAUSTIVE else _standard_error(values)
    return MultiOrderEstimate(
        i=i,
        j=j,
        order=s,
        value=math.fsum(values) / len(values),
        num_contexts=len(values),
        stderr=stderr,
        mode=mode,
    )


def decompose_check(
    f: SetFunction,
    i: int,
    j: int,
    *,
    player_limit: int = DEFAULT_EXHAUSTIVE_PLAYERS,
    max_contexts: int = DEFAULT_MAX_CONTEXTS,
) -> float:
    """Average of the exact multi-order interactions over every order.

    Contractually equals :func:`pairwise_interaction_exact` (within 1e-9
    relative); the two sides take entirely different evaluation routes, so
    comparing them is a strong self-test of both.
    """
    _check_pair(f.n, i, j)
    if f.n > player_limit:
        raise BudgetExceededError(
            f"exhaustive-budget exceeded: {f.n} players over limit {player_limit}"
        )
    per_order = [
        multi_order_exact(f, i, j, s, max_contexts=max_contexts).value
        for s in range(f.n - 1)
    ]
    return math.fsum(per_order) / (f.n - 1)


def as_seed_sequence(seed: int | np.random.SeedSequence) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def child_seed(root: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    """Stateless child derivation: same (root, key) -> same stream, in any
    call order and under any parallel schedule."""
    spawn_key = tuple(root.spawn_key) + tuple(key)
    return np.random.SeedSequence(entropy=root.entropy, spawn_key=spawn_key)


# Small reference games used by tests, demos, and the CLI selfcheck.

def additive_game(weights: Sequence[float]) -> SetFunction:
    """Game whose reward is the sum of member weights; all interactions vanish."""
    w = [float(x) for x in weights]
    return SetFunction(lambda c: math.fsum(w[p] for p in c.members()), len(w))


def majority_game(n: int, quota: int | None = None) -> SetFunction:
    """Reward 1 when at least ``quota`` players join (default: strict majority)."""
    q = (n // 2 + 1) if quota is None else quota
    return SetFunction(lambda c: 1.0 if c.cardinality() >= q else 0.0, n)


def cardinality_squared_game(n: int) -> SetFunction:
    """Reward |S|^2; every pair has the constant interaction 2 at all orders."""
    return SetFunction(lambda c: float(c.cardinality() ** 2), n)


def random_table_game(n: int, seed: int | np.random.SeedSequence) -> SetFunction:
    """Seeded game with independent standard-normal rewards per coalition."""
    rng = np.random.default_rng(as_seed_sequence(seed))
    table = rng.standard_normal(1 << n)
    return SetFunction(lambda c: float(table[c.bits]), n)
