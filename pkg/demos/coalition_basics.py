"""Coalition games in a nutshell: attribution, interaction, order profiles.

Run:  python3 demos/coalition_basics.py
"""

import math

from patchgame import (
    Coalition,
    additive_game,
    majority_game,
    multi_order_exact,
    pairwise_interaction_exact,
    random_table_game,
    shapley_exact,
)


def main() -> None:
    n = 5
    game = random_table_game(n, seed=4)

    print("== seeded 5-player game ==")
    values = [shapley_exact(game, i) for i in range(n)]
    for i, phi in enumerate(values):
        print(f"  player {i}: attribution {phi:+.4f}")
    total = game(Coalition.full(n)) - game(Coalition.empty(n))
    print(f"  sum {math.fsum(values):+.4f} vs payoff span {total:+.4f}")

    print("\n== pair (0, 1), order by order ==")
    whole = pairwise_interaction_exact(game, 0, 1)
    per_order = [multi_order_exact(game, 0, 1, s).value for s in range(n - 1)]
    for s, value in enumerate(per_order):
        print(f"  {s} bystanders: {value:+.4f}")
    print(f"  mean {math.fsum(per_order) / (n - 1):+.4f} == whole {whole:+.4f}")

    print("\n== 3-player majority vote ==")
    majority = majority_game(3)
    solo = multi_order_exact(majority, 0, 1, 0).value
    crowd = multi_order_exact(majority, 0, 1, 1).value
    print(f"  alone, two voters swing the vote together: {solo:+.0f}")
    print(f"  with the third voter present, they are redundant: {crowd:+.0f}")
    print(f"  averaged out: {pairwise_interaction_exact(majority, 0, 1):+.0f}")

    print("\n== additive payoffs never interact ==")
    flat = additive_game([0.5, -1.0, 2.0, 0.25])
    worst = max(
        abs(pairwise_interaction_exact(flat, i, j))
        for i in range(4)
        for j in range(i + 1, 4)
    )
    print(f"  largest |interaction| across all pairs: {worst:.2e}")


if __name__ == "__main__":
    main()
