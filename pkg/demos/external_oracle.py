"""Measure interactions through an out-of-process classifier.

Run:  python3 demos/external_oracle.py

Needs the companion bridge installed (pip install -e bridge/).  The same
wire protocol serves real checkpoints: write a module exposing a factory
that returns your wrapped model, then point the bridge at it with
``modelbridge --adapter yourmodule:factory``.
"""

import tempfile
from pathlib import Path

import numpy as np

from patchgame import (
    ClassifierOracle,
    ImageTensor,
    MaskBaseline,
    PatchGrid,
    external_oracle_client,
    make_set_function,
    pairwise_interaction_exact,
)
from patchgame.models import builtin_mlp_model, export_weights


def main() -> None:
    fixture = Path(tempfile.mkdtemp()) / "weights"
    model = builtin_mlp_model(2, (12, 12, 1), hidden_width=16, seed=2)
    export_weights(model, fixture)
    print(f"toy checkpoint exported to {fixture}")

    rng = np.random.default_rng(6)
    image = ImageTensor(rng.uniform(size=(1, 12, 12))).quantized()
    grid = PatchGrid.for_image(12, 12, 4)  # 9 patches

    endpoint = f"cmd=python3 -m modelbridge --weights {fixture}"
    with external_oracle_client(endpoint) as bridge:
        print(f"bridge serves {bridge.num_classes} classes at {bridge.input_shape}")
        oracle = ClassifierOracle(
            bridge, label=1, baseline=MaskBaseline.zero(), grid=grid
        )
        game = make_set_function(oracle, image)
        native = make_set_function(
            ClassifierOracle(model, label=1, baseline=MaskBaseline.zero(), grid=grid),
            image,
        )
        print("\npatch pair      remote      in-process")
        for i, j in ((0, 1), (0, 4), (4, 8)):
            remote = pairwise_interaction_exact(game, i, j)
            local = pairwise_interaction_exact(native, i, j)
            print(f"  ({i}, {j})      {remote:+.6f}   {local:+.6f}")


if __name__ == "__main__":
    try:
        main()
    except Exception as err:  # most likely: bridge not installed
        raise SystemExit(f"demo needs the bridge package: {err}")
