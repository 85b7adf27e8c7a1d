"""Rule-gated stochastic choice for binary lottery menus.

A library for the conditional-on-activity random rule model: a small library
of deterministic, dominance-disciplined decision rules mixed by a softmax
gate on menu features. Provides exact lottery primitives, the twelve-rule
library, gate training by MSE, identification rank diagnostics, a
constructive two-step estimator with bootstrap inference and an
overidentification test, the model-quality diagnostics battery, and a
cross-validation / transfer evaluation harness.
"""

from .data import Dataset, load_canonical, load_choices13k, load_cpc18, load_csv, write_canonical
from .diagnostics import (
    AblationReport,
    BenchmarkScores,
    ConcentrationReport,
    CrossfitReport,
    StaticsReport,
    ablation_report,
    comparative_statics,
    completeness,
    concentration,
    crossfit_topk,
    restrictiveness,
)
from .evaluation import (
    Metrics,
    ModelArrays,
    PortabilityReport,
    RunRecord,
    SplitPlan,
    learning_curve,
    metrics,
    portability,
    run_cv,
)
from .features import (
    GATE_FEATURE_NAMES,
    MenuCovariates,
    decile_bins,
    feature_matrix,
    gate_features,
    menu_covariates,
    raw_encoding,
    rescale_factor,
)
from .gate import (
    GateParams,
    Prediction,
    TrainConfig,
    gate_weights,
    gradient_check,
    mse_loss,
    predict,
    responsibilities,
    train_gate,
)
from .identification import (
    CellAssignment,
    IdentReport,
    build_cells,
    cell_rank,
    effective_dimension,
    ident_report,
    jacobian_local_rank,
    log_odds_map,
    restriction_matrix,
    restriction_row,
)
from .lotteries import (
    Dominance,
    Lottery,
    Menu,
    canonicalize,
    contrast,
    degenerate,
    fsd_compare,
    modal_payoff,
    product_state_space,
    weighted_median,
)
from .rules import (
    ATTENTION_RULES,
    N_RULES,
    RULE_FAMILIES,
    RULES,
    RuleId,
    RuleMatrix,
    RuleOutcome,
    build_rule_matrix,
    evaluate_rule,
    placebo_permute,
)
from .synthetic import (
    SyntheticConfig,
    SyntheticData,
    generate_synthetic,
    random_gate_params,
    random_lottery,
)
from .two_step import (
    BootstrapConfig,
    CellWeights,
    SecondStage,
    TwoStepFit,
    cell_weights,
    conditional_responsibilities,
    j_test,
    second_stage,
    two_step_fit,
)

__version__ = "0.1.0"
