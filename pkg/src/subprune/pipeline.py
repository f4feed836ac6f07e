"""Multi-layer pruning orchestration and baseline selectors.

Three selection variants drive the subset machinery across a network:

  * ``layer``: every prunable layer pruned independently against the
    unpruned model's activations.
  * ``seq``:   layers pruned input-to-output; each layer selects among
    its *updated* activations (reflecting all earlier pruning) and
    approximates those same updated activations.
  * ``asym``:  sequential as well, but each layer approximates the
    *original* activations, which stops errors from compounding.

Two baselines share the apply/reweight path: ``weightnorm`` keeps units
with the largest outgoing-weight l1 norms, ``random`` keeps a uniform
subset.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .greedy import SelectionTrace, greedy, stochastic_greedy
from .linalg import DEFAULT_TOL, frob_norm_sq
from .network import (
    ActivationCapture,
    LayerSpec,
    NetworkModel,
    _next_weighted,
    count_flops,
    count_params,
    forward,
    forward_capture,
)
from .objective import SelectionProblem, eval_from_scratch, extract_reweighted_weights
from .rng import Rng

VARIANTS = ("layer", "seq", "asym", "weightnorm", "random")


@dataclass
class PrunePlan:
    budgets: dict[str, int]  # groups to KEEP per prunable layer
    variant: str = "layer"
    seed: int = 0
    epsilon: float | None = None  # enables stochastic greedy when set
    tol: float = DEFAULT_TOL
    reweight: bool = True

    def validate(self, model: NetworkModel) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for layer in model.prunable_layers():
            if layer.name not in self.budgets:
                raise ValueError(f"no budget for prunable layer {layer.name!r}")
            k = self.budgets[layer.name]
            if not 1 <= k <= layer.out_units():
                raise ValueError(
                    f"layer {layer.name!r}: budget {k} outside [1, {layer.out_units()}]"
                )


@dataclass
class LayerOutcome:
    layer: str
    budget: int
    kept: list[int]
    objective_value: float
    baseline: float

    @property
    def residual_error(self) -> float:
        return self.baseline - self.objective_value


@dataclass
class PruneResult:
    model: NetworkModel
    layers: dict[str, LayerOutcome] = field(default_factory=dict)
    params_before: int = 0
    params_after: int = 0
    flops_before: int = 0
    flops_after: int = 0
    output_error: float = 0.0
    wall_time_ms: float = 0.0


def successor_weight_matrix(succ: LayerSpec) -> np.ndarray:
    if succ.kind == "dense":
        return succ.weight
    out_c = succ.weight.shape[0]
    return succ.weight.reshape(out_c, -1).T


def layer_problem(
    model: NetworkModel,
    name: str,
    basis: np.ndarray,
    group_size: int,
    *,
    target: np.ndarray | None = None,
    mode: str = "symmetric",
    tol: float = DEFAULT_TOL,
) -> SelectionProblem:
    """Selection problem for one prunable layer from its capture matrix."""
    idx = model.layer_index(name)
    layer = model.layers[idx]
    succ = _next_weighted(model, idx)
    if succ is None:
        raise ValueError(f"layer {name!r} has no successor to reweight")
    weights = successor_weight_matrix(succ)
    n_units = layer.out_units()
    d = basis.shape[1]
    if d != n_units * group_size or weights.shape[0] != d:
        raise ValueError(
            f"layer {name!r}: capture has {d} columns, expected "
            f"{n_units} units x group size {group_size} = successor rows "
            f"{weights.shape[0]}"
        )
    groups = [list(range(u * group_size, (u + 1) * group_size)) for u in range(n_units)]
    return SelectionProblem(
        basis, basis if target is None else target, weights, groups, mode, tol
    )


def apply_pruning(
    model: NetworkModel, name: str, kept, w_new: np.ndarray | None
) -> NetworkModel:
    """Masked model with the successor's weights replaced by ``w_new``.

    ``w_new`` is the reweighted matrix over capture columns; rows outside
    the kept groups' columns must be zero.  Passing ``w_new=None`` leaves
    the successor untouched (mask-only pruning).
    """
    out = model.clone()
    idx = out.layer_index(name)
    layer = out.layers[idx]
    mask = np.zeros(layer.out_units(), dtype=bool)
    mask[list(kept)] = True
    layer.kept_mask = mask
    if w_new is None:
        return out
    succ = _next_weighted(out, idx)
    expected = successor_weight_matrix(succ).shape
    if w_new.shape != expected:
        raise ValueError(
            f"layer {name!r}: replacement weights {w_new.shape}, expected {expected}"
        )
    group_size = w_new.shape[0] // layer.out_units()
    col_keep = np.zeros(w_new.shape[0], dtype=bool)
    for u in kept:
        col_keep[u * group_size:(u + 1) * group_size] = True
    if np.any(w_new[~col_keep, :] != 0.0):
        raise ValueError(f"layer {name!r}: replacement weights leak outside kept units")
    if succ.kind == "dense":
        succ.weight = w_new.copy()
    else:
        out_c, in_c, k_h, k_w = succ.weight.shape
        succ.weight = w_new.T.reshape(out_c, in_c, k_h, k_w).copy()
    return out


def final_output_error(model_a: NetworkModel, model_b: NetworkModel, inputs) -> float:
    return frob_norm_sq(forward(model_a, inputs) - forward(model_b, inputs))


def select_weight_norm(model: NetworkModel, name: str, k: int) -> list[int]:
    """Keep the k units with the largest outgoing-weight l1 norms."""
    idx = model.layer_index(name)
    layer = model.layers[idx]
    succ = _next_weighted(model, idx)
    if succ is None:
        raise ValueError(f"layer {name!r} has no successor weights")
    w = successor_weight_matrix(succ)
    n_units = layer.out_units()
    group = w.shape[0] // n_units
    norms = np.abs(w).reshape(n_units, group * w.shape[1]).sum(axis=1)
    order = sorted(range(n_units), key=lambda u: (-norms[u], u))
    return sorted(order[:k])


def select_random(n_units: int, k: int, seed: int) -> list[int]:
    return Rng(seed).sample_without_replacement(n_units, k)


def _select_trace(problem, k, epsilon, seed) -> SelectionTrace:
    if epsilon is None:
        return greedy(problem, k)
    return stochastic_greedy(problem, k, epsilon, seed)


def _prune_one_layer(model, name, problem, k, plan) -> tuple[NetworkModel, LayerOutcome]:
    """Select, reweight, and mask one layer; full budget is a no-op mask."""
    if k == problem.n_groups:
        value, _ = eval_from_scratch(problem, list(range(k)))
        out = apply_pruning(model, name, list(range(k)), None)
        baseline = frob_norm_sq(problem.target @ problem.weights)
        return out, LayerOutcome(name, k, list(range(k)), value, baseline)
    trace = _select_trace(problem, k, plan.epsilon, plan.seed)
    kept = trace.order
    value, _ = eval_from_scratch(problem, kept)
    w_new = extract_reweighted_weights(problem, kept) if plan.reweight else None
    out = apply_pruning(model, name, kept, w_new)
    return out, LayerOutcome(name, k, sorted(kept), value, trace.baseline)


def _prune_one_layer_fixed(model, name, problem, kept, plan) -> tuple[NetworkModel, LayerOutcome]:
    """Reweight and mask one layer for an externally chosen kept set."""
    value, _ = eval_from_scratch(problem, kept)
    baseline = frob_norm_sq(problem.target @ problem.weights)
    if len(kept) == problem.n_groups:
        out = apply_pruning(model, name, kept, None)
    else:
        w_new = extract_reweighted_weights(problem, kept) if plan.reweight else None
        out = apply_pruning(model, name, kept, w_new)
    return out, LayerOutcome(name, len(kept), sorted(kept), value, baseline)


def prune_layer_in_change(
    model: NetworkModel, captures: ActivationCapture, plan: PrunePlan
) -> PruneResult:
    """Prune every layer independently against the unpruned activations."""
    plan.validate(model)
    result = PruneResult(model=model.clone())
    work = model
    for layer in model.prunable_layers():
        if layer.name not in captures:
            raise ValueError(f"no capture for prunable layer {layer.name!r}")
        problem = layer_problem(
            model, layer.name, captures[layer.name],
            captures.group_sizes[layer.name], tol=plan.tol,
        )
        work, outcome = _prune_one_layer(work, layer.name, problem, plan.budgets[layer.name], plan)
        result.layers[layer.name] = outcome
    result.model = work
    return result


def prune_sequential(model: NetworkModel, inputs, plan: PrunePlan) -> PruneResult:
    """Prune layers input-to-output, recomputing activations as masks land.

    ``seq`` approximates the updated activations, ``asym`` the original
    ones (selection still runs over the updated activations).
    """
    plan.validate(model)
    if plan.variant not in ("seq", "asym"):
        raise ValueError(f"sequential pruning got variant {plan.variant!r}")
    result = PruneResult(model=model.clone())
    originals = None
    if plan.variant == "asym":
        _, originals = forward_capture(model, inputs)
    work = model
    for layer in model.prunable_layers():
        _, caps = forward_capture(work, inputs)
        basis = caps[layer.name]
        target = originals[layer.name] if plan.variant == "asym" else None
        problem = layer_problem(
            work, layer.name, basis, caps.group_sizes[layer.name],
            target=target, mode="asymmetric" if plan.variant == "asym" else "symmetric",
            tol=plan.tol,
        )
        work, outcome = _prune_one_layer(work, layer.name, problem, plan.budgets[layer.name], plan)
        result.layers[layer.name] = outcome
    result.model = work
    return result


def prune_baseline(
    model: NetworkModel, captures: ActivationCapture, plan: PrunePlan
) -> PruneResult:
    """weightnorm / random unit selection with the shared reweighting."""
    plan.validate(model)
    result = PruneResult(model=model.clone())
    work = model
    for i, layer in enumerate(model.prunable_layers()):
        k = plan.budgets[layer.name]
        if plan.variant == "weightnorm":
            kept = select_weight_norm(model, layer.name, k)
        elif plan.variant == "random":
            kept = select_random(layer.out_units(), k, plan.seed * 7919 + i)
        else:
            raise ValueError(f"baseline pruning got variant {plan.variant!r}")
        problem = layer_problem(
            model, layer.name, captures[layer.name],
            captures.group_sizes[layer.name], tol=plan.tol,
        )
        work, outcome = _prune_one_layer_fixed(work, layer.name, problem, kept, plan)
        result.layers[layer.name] = outcome
    result.model = work
    return result


def run_plan(
    model: NetworkModel,
    inputs,
    plan: PrunePlan,
    captures: ActivationCapture | None = None,
) -> PruneResult:
    """Dispatch a plan to its variant and fill in the global metrics."""
    start = time.perf_counter()
    if captures is None:
        _, captures = forward_capture(model, inputs)
    if plan.variant == "layer":
        result = prune_layer_in_change(model, captures, plan)
    elif plan.variant in ("seq", "asym"):
        result = prune_sequential(model, inputs, plan)
    else:
        result = prune_baseline(model, captures, plan)
    result.params_before = count_params(model)
    result.params_after = count_params(result.model)
    if model.input_shape:
        result.flops_before = count_flops(model)
        result.flops_after = count_flops(result.model)
    result.output_error = final_output_error(model, result.model, inputs)
    result.wall_time_ms = (time.perf_counter() - start) * 1e3
    return result
