"""Cooperative-game analysis of image classifiers at patch granularity.

The package measures how pairs of image patches cooperate toward a
classifier's decision: exact and sampled Shapley values, pairwise and
multi-order interactions, a sampling pipeline over image sets, sign
-gradient attacks, and a transferability report, all deterministic
under a single seed.
"""

from .coalition import Coalition
from .games import (
    BudgetExceededError,
    MultiOrderEstimate,
    SetFunction,
    ShapleyEstimate,
    additive_game,
    cardinality_squared_game,
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
from .imaging import (
    ImageTensor,
    LabeledImage,
    MaskBaseline,
    PatchGrid,
    apply_mask,
    apply_mask_batch,
    load_dataset,
    load_image,
    make_synthetic_dataset,
    read_manifest,
    read_raw,
    write_manifest,
    write_raw,
)
from .models import (
    ConstantModel,
    LinearSoftmaxModel,
    TanhMlpModel,
    builtin_linear_model,
    builtin_mlp_model,
    export_weights,
    load_weights,
    predict_labels,
)
from .oracle import (
    ClassifierOracle,
    OracleEvaluationError,
    make_set_function,
    reward_log_odds,
)
from .bridge_client import (
    BridgeClient,
    BridgeEndpoint,
    BridgeError,
    external_oracle_client,
)
from .pipeline import (
    AVERAGING_RATIOS,
    DISTRIBUTION_RATIOS,
    InteractionSample,
    OrderGrid,
    SamplingPlan,
    StrengthUndefinedError,
    average_interaction,
    average_interaction_histogram,
    interaction_strength,
    interaction_strength_curve,
    order_distribution,
    per_order_averages,
    quartiles,
    realize_order,
    run_protocol,
    sample_pairs,
)
from .attacks import (
    AttackConfig,
    AttackOutcome,
    AttackRecord,
    CorruptionConfig,
    GradientUnavailableError,
    gaussian_corrupt,
    ifgsm,
    run_attack,
    success_rate_sweep,
)
from .transfer import (
    TransferPlan,
    TransferReport,
    split_by_median,
    transfer_curve,
    transfer_rates,
)

__version__ = "0.1.0"
