"""Structured pruning of dense/conv networks by greedy subset selection
with least-squares reweighting of the next layer's weights."""

from .budget import (
    AccuracyCurve,
    BudgetPlan,
    InfeasibleError,
    accuracy_curves,
    monotonize,
    select_budgets,
    threshold_budgets,
)
from .greedy import SelectionTrace, greedy, sample_size, stochastic_greedy
from .network import (
    LayerSpec,
    NetworkModel,
    count_flops,
    count_params,
    evaluate_accuracy,
    forward,
    forward_capture,
    model_from_bundle,
)
from .objective import (
    IncrementalState,
    SelectionProblem,
    eval_from_scratch,
    extract_reweighted_weights,
    init_state,
)
from .pipeline import (
    PrunePlan,
    PruneResult,
    apply_pruning,
    final_output_error,
    layer_problem,
    prune_layer_in_change,
    prune_sequential,
    run_plan,
    select_random,
    select_weight_norm,
)

__version__ = "0.1.0"

__all__ = [
    "AccuracyCurve",
    "BudgetPlan",
    "IncrementalState",
    "InfeasibleError",
    "LayerSpec",
    "NetworkModel",
    "PrunePlan",
    "PruneResult",
    "SelectionProblem",
    "SelectionTrace",
    "accuracy_curves",
    "apply_pruning",
    "count_flops",
    "count_params",
    "eval_from_scratch",
    "evaluate_accuracy",
    "extract_reweighted_weights",
    "final_output_error",
    "forward",
    "forward_capture",
    "greedy",
    "init_state",
    "layer_problem",
    "model_from_bundle",
    "monotonize",
    "prune_layer_in_change",
    "prune_sequential",
    "run_plan",
    "sample_size",
    "select_budgets",
    "select_random",
    "select_weight_norm",
    "stochastic_greedy",
    "threshold_budgets",
]
