"""Attack a toy classifier, then ask whether interaction structure predicts
which adversarial images fool a different model.

Run:  python3 demos/attack_transfer.py

Chains three subcommands: attack -> interactions (on the adversarial
images) -> transfer.  Output lands under demos/out/transfer/.
"""

import csv
from pathlib import Path

from patchgame.cli import main as patchgame_main
from patchgame.imaging import make_synthetic_dataset

OUT = Path(__file__).parent / "out" / "transfer"


def run(*argv: str) -> None:
    code = patchgame_main(list(argv))
    assert code == 0, f"{argv[0]} exited {code}"


def main() -> None:
    manifest = make_synthetic_dataset(
        OUT / "data", num_images=10, height=16, width=16, num_classes=2, seed=8
    )

    run(
        "attack",
        "--manifest", str(manifest),
        "--model", "builtin:mlp",
        "--epsilon", "0.12",
        "--sweep", "0.03,0.06,0.12,0.25",
        "--out", str(OUT / "attacked"),
    )
    print("-- attack success by budget --")
    for row in csv.DictReader(open(OUT / "attacked" / "sweep.csv")):
        print(f"  budget {row['epsilon']}: {float(row['success_rate']):.0%}")

    run(
        "interactions",
        "--manifest", str(OUT / "attacked" / "manifest.csv"),
        "--model", "builtin:mlp",
        "--patch-size", "4",
        "--pairs-per-image", "10",
        "--contexts-per-pair", "8",
        "--out", str(OUT / "measured"),
    )

    run(
        "transfer",
        "--attack-manifest", str(OUT / "attacked" / "attack_manifest.csv"),
        "--samples", str(OUT / "measured" / "samples.csv"),
        "--targets", "wide=builtin:mlp;linear=builtin:linear",
        "--hidden-width", "48",
        "--out", str(OUT / "report"),
    )
    print("\n-- transfer rate gap (high-interaction minus low) --")
    with open(OUT / "report" / "transfer_report.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    for target in ("wide", "linear"):
        picked = [r for r in rows if r["target"] == target and r["diff"] != "nan"]
        mid = picked[len(picked) // 2]
        print(
            f"  {target}: diff {float(mid['diff']):+.3f} at ratio "
            f"{mid['order_ratio']} (split {mid['n1']}/{mid['n2']})"
        )
    print(f"\nper-ratio report: {OUT / 'report' / 'transfer_report.csv'}")


if __name__ == "__main__":
    main()
