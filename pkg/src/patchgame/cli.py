"""Command-line front end: reproducible runs from a config file plus flags.

Every subcommand is a pure function of (config, seed, input files); the
merged effective config is written next to the outputs so any published
CSV can be traced back to the exact knobs that produced it.  Flags
override config-file values, which override the built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .attacks import (
    AttackConfig,
    AttackOutcome,
    AttackRecord,
    corrupt_with_noise,
    gaussian_noise_field,
    read_attack_manifest,
    run_attack,
    success_rate_sweep,
    write_attack_manifest,
    write_sweep_csv,
)
from .bridge_client import BridgeError, external_oracle_client
from .coalition import Coalition
from .games import (
    SetFunction,
    additive_game,
    cardinality_squared_game,
    child_seed,
    delta_f,
    majority_game,
    multi_order_exact,
    pairwise_interaction_exact,
    random_table_game,
    shapley_exact,
)
from .imaging import (
    LabeledImage,
    MaskBaseline,
    PatchGrid,
    load_dataset,
    load_image,
    write_manifest,
    write_raw,
)
from .models import (
    ConstantModel,
    builtin_linear_model,
    builtin_mlp_model,
    export_weights,
    load_weights,
)
from .oracle import ClassifierOracle, make_set_function, reward_log_odds
from .pipeline import (
    AVERAGING_RATIOS,
    DISTRIBUTION_RATIOS,
    SamplingPlan,
    StrengthUndefinedError,
    average_interaction,
    average_interaction_histogram,
    interaction_strength_curve,
    order_distribution,
    per_order_averages,
    read_samples_csv,
    run_protocol,
    write_averages_csv,
    write_failures_csv,
    write_histogram_csv,
    write_order_dist_csv,
    write_samples_csv,
    write_strength_csv,
)
from .transfer import TransferPlan, transfer_curve, write_transfer_csv

logger = logging.getLogger("patchgame")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

# execution-only knobs: they must not influence any output byte, so they
# are kept out of the effective config written next to the results
VOLATILE_KEYS = ("workers", "out")

DEFAULTS: dict = {
    "manifest": None,
    "model": "builtin:mlp",
    "num_classes": None,  # default: max dataset label + 1
    "hidden_width": 32,
    "patch_size": 16,
    "baseline": "zero",
    "clamp": 1e-6,
    "batch_size": 64,
    "num_images": None,  # default: the whole dataset
    "pairs_per_image": 200,
    "contexts_per_pair": 100,
    "pair_radius": 2.0,
    "order_ratios": list(DISTRIBUTION_RATIOS),
    "histogram_bins": 10,
    "epsilon": 16.0 / 255.0,
    "steps": 10,
    "step_size": None,
    "sweep": None,
    "sigma": 0.1,
    "attack_manifest": None,
    "samples": None,
    "targets": None,
    "weights": None,
    "timeout": 60.0,
    "seed": 0,
    "workers": 1,
    "out": "out",
}


class ConfigError(Exception):
    """Carries every violation found, so users fix them in one pass."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


# ----------------------------------------------------------- config merging


def _parse_float_list(value) -> list[float]:
    if isinstance(value, str):
        return [float(part) for part in value.split(",") if part.strip()]
    return [float(v) for v in value]


def _parse_targets(value) -> dict[str, str]:
    if isinstance(value, Mapping):
        return {str(k): str(v) for k, v in value.items()}
    targets = {}
    for entry in str(value).split(";"):
        entry = entry.strip()
        if not entry:
            continue
        name, sep, spec = entry.partition("=")
        if not sep or not name.strip() or not spec.strip():
            raise ValueError(f"target entry {entry!r} is not name=spec")
        targets[name.strip()] = spec.strip()
    return targets


def load_config_file(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            loaded = json.load(handle)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as err:
        raise ConfigError([f"config file {path} is not valid JSON: {err}"]) from None
    if not isinstance(loaded, dict):
        raise ConfigError([f"config file {path} must hold a JSON object"])
    return loaded


def merge_config(file_values: Mapping, flag_values: Mapping) -> dict:
    violations = [
        f"unknown config key: {key!r}" for key in file_values if key not in DEFAULTS
    ]
    if violations:
        raise ConfigError(violations)
    merged = dict(DEFAULTS)
    merged.update(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    for key in ("order_ratios", "sweep"):
        if merged[key] is not None:
            try:
                merged[key] = _parse_float_list(merged[key])
            except (TypeError, ValueError):
                raise ConfigError([f"{key} is not a list of numbers: {merged[key]!r}"])
    if merged["targets"] is not None:
        try:
            merged["targets"] = _parse_targets(merged["targets"])
        except ValueError as err:
            raise ConfigError([str(err)])
    return merged


# --------------------------------------------------------------- validation


def parse_model_spec(spec: str) -> tuple[str, str]:
    kind, sep, rest = str(spec).partition(":")
    if kind == "builtin" and rest in ("linear", "mlp"):
        return kind, rest
    if kind == "constant" and rest:
        probs = _parse_float_list(rest)
        if len(probs) < 2 or any(p < 0 for p in probs):
            raise ValueError(f"constant model needs >= 2 nonnegative probs: {spec!r}")
        if abs(math.fsum(probs) - 1.0) > 1e-9:
            raise ValueError(f"constant model probs must sum to 1: {spec!r}")
        return kind, rest
    if kind == "external" and rest:
        if not (rest.startswith("cmd=") or rest.startswith("tcp=")):
            raise ValueError(
                f"external endpoint must be cmd=... or tcp=host:port: {spec!r}"
            )
        return kind, rest
    raise ValueError(
        f"model spec {spec!r} is not builtin:linear | builtin:mlp | "
        f"constant:p1,p2,... | external:endpoint"
    )


def _check_model_spec(spec, role: str, problems: list[str]) -> None:
    try:
        parse_model_spec(spec)
    except ValueError as err:
        problems.append(f"{role}: {err}")


def _check_path(value, key: str, problems: list[str]) -> None:
    if not value:
        problems.append(f"{key} is required for this subcommand")
    elif not Path(value).is_file():
        problems.append(f"{key}: no such file: {value}")


def _check_ratio_list(ratios, problems: list[str]) -> None:
    if not ratios:
        problems.append("order_ratios must not be empty")
        return
    if list(ratios) != sorted(set(ratios)):
        problems.append(f"order_ratios must be sorted and unique: {ratios}")
    if min(ratios) < 0.0 or max(ratios) > 1.0:
        problems.append(f"order_ratios must lie in [0, 1]: {ratios}")


def validate_config(cfg: Mapping, subcommand: str) -> None:
    problems: list[str] = []
    if cfg["workers"] < 1:
        problems.append(f"workers must be >= 1, got {cfg['workers']}")
    if not cfg["out"]:
        problems.append("out directory must be non-empty")

    if subcommand == "interactions":
        _check_path(cfg["manifest"], "manifest", problems)
        _check_model_spec(cfg["model"], "model", problems)
        if cfg["patch_size"] < 1:
            problems.append(f"patch_size must be >= 1, got {cfg['patch_size']}")
        if not 0.0 < cfg["clamp"] < 0.5:
            problems.append(f"clamp must be in (0, 0.5), got {cfg['clamp']}")
        if cfg["batch_size"] < 1:
            problems.append(f"batch_size must be >= 1, got {cfg['batch_size']}")
        for key in ("pairs_per_image", "contexts_per_pair"):
            if cfg[key] < 1:
                problems.append(f"{key} must be >= 1, got {cfg[key]}")
        if cfg["num_images"] is not None and cfg["num_images"] < 1:
            problems.append(f"num_images must be >= 1, got {cfg['num_images']}")
        if cfg["pair_radius"] < 1:
            problems.append(f"pair_radius must be >= 1, got {cfg['pair_radius']}")
        if cfg["histogram_bins"] < 1:
            problems.append(f"histogram_bins must be >= 1, got {cfg['histogram_bins']}")
        _check_ratio_list(cfg["order_ratios"], problems)
        missing = sorted(set(AVERAGING_RATIOS) - set(cfg["order_ratios"]))
        if missing:
            problems.append(
                f"order_ratios must cover the averaging grid; missing {missing}"
            )
        try:
            _build_baseline_spec(cfg["baseline"])
        except ValueError as err:
            problems.append(str(err))
    elif subcommand == "attack":
        _check_path(cfg["manifest"], "manifest", problems)
        _check_model_spec(cfg["model"], "model", problems)
        if not 0.0 < cfg["epsilon"] <= 1.0:
            problems.append(f"epsilon must be in (0, 1], got {cfg['epsilon']}")
        if cfg["steps"] < 1:
            problems.append(f"steps must be >= 1, got {cfg['steps']}")
        if cfg["step_size"] is not None and cfg["step_size"] <= 0:
            problems.append(f"step_size must be > 0, got {cfg['step_size']}")
        if cfg["sweep"] is not None and any(e <= 0 for e in cfg["sweep"]):
            problems.append(f"sweep epsilons must be positive: {cfg['sweep']}")
    elif subcommand == "corrupt":
        _check_path(cfg["manifest"], "manifest", problems)
        if cfg["sigma"] < 0:
            problems.append(f"sigma must be >= 0, got {cfg['sigma']}")
    elif subcommand == "transfer":
        _check_path(cfg["attack_manifest"], "attack_manifest", problems)
        _check_path(cfg["samples"], "samples", problems)
        if not cfg["targets"]:
            problems.append("targets is required: name=spec[;name=spec...]")
        else:
            for name, spec in cfg["targets"].items():
                _check_model_spec(spec, f"target {name!r}", problems)
        _check_ratio_list(cfg["order_ratios"], problems)
    elif subcommand == "selfcheck":
        if cfg["weights"] is not None and not Path(cfg["weights"]).is_dir():
            problems.append(f"weights: no such directory: {cfg['weights']}")

    if problems:
        raise ConfigError(problems)


def write_effective_config(cfg: Mapping, out_dir: Path) -> None:
    audited = {k: v for k, v in cfg.items() if k not in VOLATILE_KEYS}
    path = out_dir / "effective_config.json"
    path.write_text(json.dumps(audited, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------- models


def build_model(
    cfg: Mapping,
    spec: str,
    num_classes: int,
    input_shape: tuple[int, int, int],
):
    kind, rest = parse_model_spec(spec)
    if kind == "builtin" and rest == "linear":
        return builtin_linear_model(num_classes, input_shape, seed=cfg["seed"])
    if kind == "builtin" and rest == "mlp":
        return builtin_mlp_model(
            num_classes, input_shape, cfg["hidden_width"], seed=cfg["seed"]
        )
    if kind == "constant":
        return ConstantModel(tuple(_parse_float_list(rest)), input_shape)
    client = external_oracle_client(rest, timeout=cfg["timeout"])
    if client.num_classes != num_classes or tuple(client.input_shape) != input_shape:
        client.close()
        raise ConfigError(
            [
                f"external model advertises {client.num_classes} classes and "
                f"shape {client.input_shape}; dataset implies {num_classes} "
                f"classes and shape {input_shape}"
            ]
        )
    return client


def _build_baseline_spec(spec: str):
    """Returns a builder taking the dataset images (mean needs them)."""
    if spec == "zero":
        return lambda images: MaskBaseline.zero()
    if spec == "mean":
        return lambda images: MaskBaseline.from_images(images)
    kind, sep, rest = str(spec).partition(":")
    if kind == "color" and sep:
        values = _parse_float_list(rest)
        if not values or any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError(f"baseline color values must lie in [0, 1]: {spec!r}")
        return lambda images: MaskBaseline.color(values)
    raise ValueError(f"baseline {spec!r} is not zero | mean | color:v1,v2,...")


def _infer_num_classes(cfg: Mapping, labels: Iterable[int]) -> int:
    if cfg["num_classes"] is not None:
        return int(cfg["num_classes"])
    return max(2, max(labels) + 1)


# -------------------------------------------------------------- subcommands


def cmd_interactions(cfg: Mapping) -> int:
    dataset = load_dataset(cfg["manifest"])
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, out_dir)

    first = dataset[0].image
    grid = PatchGrid.for_image(first.height, first.width, cfg["patch_size"])
    num_classes = _infer_num_classes(cfg, (item.label for item in dataset))
    model = build_model(cfg, cfg["model"], num_classes, first.shape_hwc)
    baseline = _build_baseline_spec(cfg["baseline"])(
        [item.image for item in dataset]
    )
    plan = SamplingPlan(
        num_images=cfg["num_images"] or len(dataset),
        pairs_per_image=cfg["pairs_per_image"],
        contexts_per_pair=cfg["contexts_per_pair"],
        pair_radius=cfg["pair_radius"],
        order_ratios=tuple(cfg["order_ratios"]),
        seed=cfg["seed"],
    )

    oracles: dict[str, ClassifierOracle] = {}

    def factory(labeled: LabeledImage) -> SetFunction:
        oracle = ClassifierOracle(
            model, labeled.label, baseline, grid, cfg["clamp"], cfg["batch_size"]
        )
        oracles[labeled.image_id] = oracle
        return make_set_function(oracle, labeled.image)

    failures = []
    samples = list(
        run_protocol(
            dataset, grid, factory, plan, workers=cfg["workers"], failures=failures
        )
    )
    write_samples_csv(samples, out_dir / "samples.csv")
    write_failures_csv(failures, out_dir / "failures.csv")

    dist = order_distribution(samples, plan.order_ratios)
    if dist.missing_ratios:
        logger.warning("no surviving samples at ratios %s", dist.missing_ratios)
    write_order_dist_csv(dist, out_dir / "order_dist.csv")

    by_image: dict[str, list] = {}
    for sample in samples:
        by_image.setdefault(sample.image_id, []).append(sample)
    average_rows = []
    for labeled in dataset[: plan.num_images]:
        predicted = oracles[labeled.image_id].predict(labeled.image)
        try:
            avg = average_interaction(by_image.get(labeled.image_id, []), grid.n)
        except ValueError as err:
            logger.warning("average undefined for %s: %s", labeled.image_id, err)
            avg = float("nan")
        average_rows.append((labeled.image_id, avg, labeled.label, predicted))
    write_averages_csv(average_rows, out_dir / "averages.csv")

    try:
        curve = interaction_strength_curve(samples, plan.order_ratios)
    except StrengthUndefinedError as err:
        logger.warning("strength curve skipped: %s", err)
        curve = []
    write_strength_csv(curve, out_dir / "strength.csv")

    finite = [avg for _, avg, _, _ in average_rows if not math.isnan(avg)]
    if finite:
        lo, hi = min(finite), max(finite)
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        bins = average_interaction_histogram(finite, lo, hi, cfg["histogram_bins"])
    else:
        bins = []
    write_histogram_csv(bins, out_dir / "histogram.csv")
    return EXIT_OK


def cmd_attack(cfg: Mapping) -> int:
    dataset = load_dataset(cfg["manifest"])
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, out_dir)

    first = dataset[0].image
    num_classes = _infer_num_classes(cfg, (item.label for item in dataset))
    model = build_model(cfg, cfg["model"], num_classes, first.shape_hwc)
    if not hasattr(model, "loss_gradient"):
        raise ConfigError(
            [f"model {cfg['model']!r} cannot answer gradient queries"]
        )
    attack_cfg = AttackConfig(
        epsilon=cfg["epsilon"], steps=cfg["steps"], step_size=cfg["step_size"]
    )

    adv_dir = out_dir / "adv"
    adv_dir.mkdir(exist_ok=True)

    def attack_one(labeled: LabeledImage):
        return run_attack(model, labeled, attack_cfg)

    if cfg["workers"] == 1:
        outcomes = [attack_one(labeled) for labeled in dataset]
    else:
        with ThreadPoolExecutor(max_workers=cfg["workers"]) as pool:
            outcomes = list(pool.map(attack_one, dataset))

    records = []
    for labeled, outcome in zip(dataset, outcomes):
        adv_rel = f"adv/{labeled.image_id}.raw"
        write_raw(outcome.adversarial, out_dir / adv_rel)
        records.append(
            AttackRecord(
                str(labeled.path),
                adv_rel,
                labeled.label,
                outcome.pred_clean,
                outcome.pred_adv,
            )
        )
    write_attack_manifest(records, out_dir / "attack_manifest.csv")
    # plain dataset manifest of the adversarial images, so they can feed
    # a follow-up interactions run (whose samples.csv the transfer step reads)
    write_manifest(
        ((r.adv_path, r.label) for r in records), out_dir / "manifest.csv"
    )

    if cfg["sweep"]:
        result = success_rate_sweep(model, dataset, cfg["sweep"], attack_cfg)
        if result.num_excluded:
            logger.info(
                "sweep excluded %d misclassified image(s)", result.num_excluded
            )
        write_sweep_csv(result, out_dir / "sweep.csv")
    return EXIT_OK


def cmd_corrupt(cfg: Mapping) -> int:
    dataset = load_dataset(cfg["manifest"])
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, out_dir)

    corrupted_dir = out_dir / "corrupted"
    corrupted_dir.mkdir(exist_ok=True)
    root = np.random.SeedSequence(cfg["seed"])
    rows = []
    for index, labeled in enumerate(dataset):
        noise = gaussian_noise_field(
            labeled.image.data.shape, child_seed(root, index)
        )
        corrupted = corrupt_with_noise(labeled.image, cfg["sigma"], noise)
        rel = f"corrupted/{labeled.image_id}.raw"
        write_raw(corrupted, out_dir / rel)
        rows.append((rel, labeled.label))
    # same manifest schema as the input, so the output is itself a dataset
    write_manifest(rows, out_dir / "manifest.csv")
    return EXIT_OK


def cmd_transfer(cfg: Mapping) -> int:
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, out_dir)

    records = read_attack_manifest(cfg["attack_manifest"])
    if not records:
        raise ConfigError([f"attack manifest {cfg['attack_manifest']} is empty"])
    samples = read_samples_csv(cfg["samples"])
    ratios = list(cfg["order_ratios"])
    try:
        averages = per_order_averages(samples, ratios)
    except ValueError as err:
        raise ConfigError([f"samples file {cfg['samples']}: {err}"]) from None

    manifest_dir = Path(cfg["attack_manifest"]).parent
    outcomes = []
    problems = []
    for record in records:
        adv_path = Path(record.adv_path)
        if not adv_path.is_absolute():
            adv_path = manifest_dir / adv_path
        image_id = adv_path.stem
        if image_id not in averages:
            problems.append(
                f"no interaction samples for attacked image {image_id!r}"
            )
            continue
        outcome = AttackOutcome(
            image_id=image_id,
            clean_path=record.clean_path,
            label=record.label,
            pred_clean=record.pred_clean,
            pred_adv=record.pred_adv,
            adversarial=load_image(adv_path),
        )
        outcome.order_averages.update(averages[image_id])
        outcomes.append(outcome)
    if problems:
        raise ConfigError(problems)

    labels = [r.label for r in records] + [r.pred_clean for r in records]
    num_classes = _infer_num_classes(cfg, labels)
    input_shape = outcomes[0].adversarial.shape_hwc
    models = {
        name: build_model(cfg, spec, num_classes, input_shape)
        for name, spec in cfg["targets"].items()
    }
    plan = TransferPlan(
        source=cfg["model"],
        targets=tuple(cfg["targets"]),
        order_ratios=tuple(ratios),
        seed=cfg["seed"],
    )
    report = transfer_curve(outcomes, plan, models=models)
    write_transfer_csv(report, out_dir / "transfer_report.csv")
    return EXIT_OK


# -------------------------------------------------------------- selfcheck


def _check_efficiency() -> None:
    for seed in range(5):
        game = random_table_game(6, seed=seed)
        total = math.fsum(shapley_exact(game, i) for i in range(6))
        expected = game(Coalition.full(6)) - game(Coalition.empty(6))
        if abs(total - expected) > 1e-9 * max(1.0, abs(expected)):
            raise AssertionError(f"sum of values {total} != {expected}")


def _check_decomposition() -> None:
    game = random_table_game(6, seed=11)
    for i, j in ((0, 1), (2, 5)):
        pairwise = pairwise_interaction_exact(game, i, j)
        mean = math.fsum(
            multi_order_exact(game, i, j, s).value for s in range(5)
        ) / 5.0
        if abs(pairwise - mean) > 1e-9:
            raise AssertionError(f"pair ({i},{j}): {pairwise} != mean {mean}")


def _check_constant_game() -> None:
    game = SetFunction(lambda c: 3.25, 6)
    for s in range(5):
        value = multi_order_exact(game, 0, 1, s).value
        if value != 0.0:
            raise AssertionError(f"constant game interaction {value} at size {s}")


def _check_majority_game() -> None:
    game = majority_game(3)
    checks = [
        (multi_order_exact(game, 0, 1, 0).value, 1.0),
        (multi_order_exact(game, 0, 1, 1).value, -1.0),
        (pairwise_interaction_exact(game, 0, 1), 0.0),
        (shapley_exact(game, 0), 1.0 / 3.0),
    ]
    for got, expected in checks:
        if abs(got - expected) > 1e-12:
            raise AssertionError(f"majority game: {got} != {expected}")


def _check_additive_game() -> None:
    game = additive_game([0.5, -1.25, 2.0, 0.125])
    for i in range(4):
        for j in range(i + 1, 4):
            value = pairwise_interaction_exact(game, i, j)
            if abs(value) > 1e-12:
                raise AssertionError(f"additive interaction ({i},{j}) = {value}")


def _check_quadratic_game() -> None:
    game = cardinality_squared_game(5)
    for context in (Coalition.empty(5), Coalition.of([2], 5), Coalition.of([2, 3, 4], 5)):
        context = context.without_player(0).without_player(1)
        value = delta_f(game, 0, 1, context)
        if value != 2.0:
            raise AssertionError(f"quadratic game delta {value}")


def _check_reward() -> None:
    if abs(reward_log_odds(0.9) - math.log(9.0)) > 1e-12:
        raise AssertionError("reward at p=0.9 is not log 9")
    if abs(reward_log_odds(0.3) + reward_log_odds(0.7)) > 1e-12:
        raise AssertionError("reward is not antisymmetric around 0.5")


def _check_weights(weights_dir: str | None) -> None:
    if weights_dir is not None:
        load_weights(weights_dir)
        return
    with tempfile.TemporaryDirectory() as tmp:
        model = builtin_mlp_model(3, (4, 4, 1), hidden_width=6, seed=0)
        export_weights(model, tmp)
        back = load_weights(tmp)
        for name, tensor in model.tensors().items():
            if not np.array_equal(back.tensors()[name], tensor):
                raise AssertionError(f"tensor {name} changed in the round trip")


def cmd_selfcheck(cfg: Mapping) -> int:
    checks = [
        ("shapley-efficiency", _check_efficiency),
        ("decomposition-identity", _check_decomposition),
        ("constant-game-zero", _check_constant_game),
        ("majority-game-values", _check_majority_game),
        ("additive-game-zero", _check_additive_game),
        ("quadratic-game-delta", _check_quadratic_game),
        ("reward-log-odds", _check_reward),
        ("weights-round-trip", lambda: _check_weights(cfg["weights"])),
    ]
    failed = 0
    for name, check in checks:
        try:
            check()
        except Exception as err:
            failed += 1
            print(f"FAIL {name}: {err}")
        else:
            print(f"PASS {name}")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


# -------------------------------------------------------------------- main


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--seed", type=int, help="global random seed (default 0)")
    parser.add_argument(
        "--workers", type=int, help="parallel workers; never changes outputs"
    )
    parser.add_argument("--out", help="output directory (default ./out)")


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--model",
        help="builtin:linear | builtin:mlp | constant:p1,p2,... | "
        "external:cmd=... | external:tcp=host:port",
    )
    parser.add_argument("--num-classes", type=int, help="override inferred class count")
    parser.add_argument("--hidden-width", type=int, help="builtin MLP width")
    parser.add_argument("--timeout", type=float, help="external model timeout (s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchgame",
        description="Patch-coalition interaction analysis of image classifiers.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser(
        "interactions", help="sample pair interactions and write the CSV suite"
    )
    _add_common(p)
    _add_model_args(p)
    p.add_argument("--manifest", help="dataset manifest CSV (path,label)")
    p.add_argument("--patch-size", type=int, help="square patch edge (default 16)")
    p.add_argument("--baseline", help="zero | mean | color:v1,v2,...")
    p.add_argument("--clamp", type=float, help="probability clamp (default 1e-6)")
    p.add_argument("--batch-size", type=int, help="oracle batch size (default 64)")
    p.add_argument("--num-images", type=int, help="images to analyze (default all)")
    p.add_argument("--pairs-per-image", type=int, help="pairs per image (default 200)")
    p.add_argument(
        "--contexts-per-pair", type=int, help="contexts per order (default 100)"
    )
    p.add_argument("--pair-radius", type=float, help="pair distance cap (default 2)")
    p.add_argument("--order-ratios", help="comma list of order ratios")
    p.add_argument("--histogram-bins", type=int, help="average histogram bins")

    p = sub.add_parser("attack", help="craft adversarial images and a manifest")
    _add_common(p)
    _add_model_args(p)
    p.add_argument("--manifest", help="dataset manifest CSV (path,label)")
    p.add_argument("--epsilon", type=float, help="L-inf budget (default 16/255)")
    p.add_argument("--steps", type=int, help="attack steps (default 10)")
    p.add_argument("--step-size", type=float, help="step size (default epsilon/steps)")
    p.add_argument("--sweep", help="comma list of budgets for a success-rate sweep")

    p = sub.add_parser("corrupt", help="emit a Gaussian-noise corrupted dataset")
    _add_common(p)
    p.add_argument("--manifest", help="dataset manifest CSV (path,label)")
    p.add_argument("--sigma", type=float, help="noise std in pixel units")

    p = sub.add_parser("transfer", help="median-split transferability report")
    _add_common(p)
    _add_model_args(p)
    p.add_argument("--attack-manifest", help="manifest written by the attack run")
    p.add_argument("--samples", help="samples.csv from an interactions run")
    p.add_argument("--targets", help="target models: name=spec[;name=spec...]")
    p.add_argument("--order-ratios", help="comma list of order ratios")

    p = sub.add_parser("selfcheck", help="run the built-in invariant suite")
    _add_common(p)
    p.add_argument("--weights", help="verify an exported weights directory loads")

    return parser


COMMANDS = {
    "interactions": cmd_interactions,
    "attack": cmd_attack,
    "corrupt": cmd_corrupt,
    "transfer": cmd_transfer,
    "selfcheck": cmd_selfcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING)
    args = build_parser().parse_args(argv)
    flag_values = {
        key: value
        for key, value in vars(args).items()
        if key not in ("subcommand", "config")
    }
    try:
        file_values = load_config_file(args.config) if args.config else {}
        cfg = merge_config(file_values, flag_values)
        validate_config(cfg, args.subcommand)
        return COMMANDS[args.subcommand](cfg)
    except ConfigError as err:
        for violation in err.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return EXIT_CONFIG
    except BridgeError as err:
        print(f"bridge failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as err:  # runtime failure, not a usage problem
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
