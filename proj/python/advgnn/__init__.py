"""Adversarial attacks on ReLU networks with a learned GNN update rule."""

from ._core import (  # noqa: F401
    AttackOutcome,
    AttackProperty,
    ConfigError,
    DualState,
    Error,
    FormatError,
    GnnParams,
    Network,
    NumericError,
    PerturbationBall,
    ShapeError,
    SoundnessError,
    advgnn_attack,
    best_bounds,
    binary_search_epsilon,
    cw_attack,
    fgsm_step,
    generate_dataset,
    ibp,
    load_property,
    mi_fgsm_plus,
    pgd_attack,
    run_bench,
    supergradient_ascent,
    train_gnn,
    wk_bounds,
)

__version__ = "0.1.0"
