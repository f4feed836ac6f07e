"""Per-layer budget selection under a global compression target.

The driver strategy measures, for each prunable layer, the verification
accuracy after pruning that layer alone to every budget on a fraction
grid (one selection ranking per layer answers every budget).  The
curves, made monotone by a running maximum, feed a binary search for the
smallest accuracy drop ``tau`` whose per-layer budgets satisfy the
compression constraint.  A threshold alternative instead reads, per
layer, the smallest budget whose relative input-change error falls below
a given epsilon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .greedy import greedy, stochastic_greedy
from .network import ActivationCapture, NetworkModel, count_params, evaluate_accuracy
from .pipeline import PrunePlan, _prune_one_layer_fixed, layer_problem

COARSE_GRID = tuple(round(0.05 * i, 3) for i in range(1, 21))
FINE_GRID = (0.01, 0.05, 0.075) + tuple(round(0.05 * i, 3) for i in range(2, 21))

SELECTORS = ("inchange", "weightnorm", "random")


class InfeasibleError(Exception):
    """Raised when no plan can reach the requested compression."""

    def __init__(self, message: str, smallest_size: int):
        super().__init__(message)
        self.smallest_size = smallest_size


@dataclass
class AccuracyCurve:
    layer: str
    grid: list[float]
    budgets: list[int]
    raw: list[float]
    monotone: list[float] = field(default_factory=list)
    p_orig: float = 0.0


@dataclass
class BudgetPlan:
    budgets: dict[str, int]
    tau: float = 0.0
    compression: float = 1.0
    achieved_size: int = 0
    target_size: float = 0.0
    epsilon: float | None = None


def fraction_to_budget(alpha: float, n_units: int) -> int:
    return min(n_units, max(1, int(math.floor(alpha * n_units + 0.5))))


def selection_orders(
    model: NetworkModel,
    captures: ActivationCapture,
    selector: str = "inchange",
    *,
    seed: int = 0,
    epsilon: float | None = None,
    tol: float | None = None,
) -> dict[str, list[int]]:
    """Full per-layer unit ranking: prefixes answer every budget."""
    if selector not in SELECTORS:
        raise ValueError(f"unknown selector {selector!r}")
    orders: dict[str, list[int]] = {}
    for layer in model.prunable_layers():
        n = layer.out_units()
        if selector == "weightnorm":
            orders[layer.name] = _weight_norm_ranking(model, layer.name)
        elif selector == "random":
            orders[layer.name] = _random_ranking(n, seed * 7919 + len(orders))
        else:
            kwargs = {} if tol is None else {"tol": tol}
            problem = layer_problem(
                model, layer.name, captures[layer.name],
                captures.group_sizes[layer.name], **kwargs,
            )
            trace = (
                greedy(problem, n)
                if epsilon is None
                else stochastic_greedy(problem, n, epsilon, seed)
            )
            order = list(trace.order)
            order += [g for g in range(n) if g not in order]  # dead units last
            orders[layer.name] = order
    return orders


def _weight_norm_ranking(model: NetworkModel, name: str) -> list[int]:
    from .pipeline import successor_weight_matrix, _next_weighted

    idx = model.layer_index(name)
    layer = model.layers[idx]
    w = successor_weight_matrix(_next_weighted(model, idx))
    n = layer.out_units()
    norms = np.abs(w).reshape(n, -1).sum(axis=1)
    return sorted(range(n), key=lambda u: (-norms[u], u))


def _random_ranking(n: int, seed: int) -> list[int]:
    from .rng import Rng

    rng = Rng(seed)
    order = list(range(n))
    for i in range(n - 1):
        j = i + rng.below(n - i)
        order[i], order[j] = order[j], order[i]
    return order


def _pruned_for_budget(model, captures, name, kept, tol=None):
    kwargs = {} if tol is None else {"tol": tol}
    problem = layer_problem(
        model, name, captures[name], captures.group_sizes[name], **kwargs
    )
    plan = PrunePlan(budgets={name: len(kept)})
    pruned, outcome = _prune_one_layer_fixed(model, name, problem, kept, plan)
    return pruned, outcome


def accuracy_curves(
    model: NetworkModel,
    captures: ActivationCapture,
    verif_inputs,
    verif_labels,
    grid=COARSE_GRID,
    orders: dict[str, list[int]] | None = None,
    *,
    tol: float | None = None,
) -> list[AccuracyCurve]:
    """One accuracy-vs-kept-fraction curve per prunable layer.

    Each grid point prunes only that layer (others intact) to the budget
    ``fraction_to_budget(alpha, n)`` using a prefix of the layer's
    ranking, then scores top-1 accuracy on the verification split.
    """
    if not len(grid):
        raise ValueError("empty fraction grid")
    if orders is None:
        orders = selection_orders(model, captures, "inchange", tol=tol)
    p_orig = evaluate_accuracy(model, verif_inputs, verif_labels)
    curves = []
    for layer in model.prunable_layers():
        n = layer.out_units()
        budgets, raw = [], []
        for alpha in grid:
            k = fraction_to_budget(alpha, n)
            budgets.append(k)
            if k == n:
                raw.append(p_orig)
                continue
            kept = sorted(orders[layer.name][:k])
            pruned, _ = _pruned_for_budget(model, captures, layer.name, kept, tol)
            raw.append(evaluate_accuracy(pruned, verif_inputs, verif_labels))
        curve = AccuracyCurve(layer.name, list(grid), budgets, raw, p_orig=p_orig)
        curves.append(monotonize(curve))
    return curves


def monotonize(curve: AccuracyCurve) -> AccuracyCurve:
    """Running maximum from the smallest fraction upward."""
    if not curve.grid:
        raise ValueError("empty curve")
    source = curve.monotone if curve.monotone else curve.raw
    return replace(curve, monotone=list(np.maximum.accumulate(source)))


def pruned_size(model: NetworkModel, budgets: dict[str, int]) -> int:
    """Parameter count once each layer keeps its budgeted unit count."""
    work = model.clone()
    for name, k in budgets.items():
        layer = work.layers[work.layer_index(name)]
        mask = np.zeros(layer.out_units(), dtype=bool)
        mask[:k] = True
        layer.kept_mask = mask
    return count_params(work)


def _budgets_for_tau(
    curves: list[AccuracyCurve], tau: float
) -> tuple[dict[str, int], dict[str, float]]:
    budgets, accs = {}, {}
    for curve in curves:
        floor = curve.p_orig - tau
        for k, acc in zip(curve.budgets, curve.monotone):
            if acc >= floor - 1e-12:
                budgets[curve.layer] = k
                accs[curve.layer] = acc
                break
        else:
            budgets[curve.layer] = curve.budgets[-1]
            accs[curve.layer] = curve.monotone[-1]
    return budgets, accs


def select_budgets(
    curves: list[AccuracyCurve], model: NetworkModel, compression: float
) -> BudgetPlan:
    """Binary search for the minimal accuracy drop meeting the target.

    For a drop ``tau``, every layer takes the smallest grid budget whose
    monotone accuracy stays within ``tau`` of the unpruned accuracy; the
    plan is feasible when the resulting parameter count fits the
    compression target.
    """
    if compression < 1.0:
        raise ValueError(f"compression ratio must be >= 1, got {compression}")
    if not curves:
        raise ValueError("no curves given")
    p_orig = curves[0].p_orig
    c_orig = count_params(model)
    target = c_orig / compression
    if compression == 1.0:
        # no compression requested: keep everything
        budgets = {c.layer: c.budgets[-1] for c in curves}
        return BudgetPlan(
            budgets=budgets, tau=0.0, compression=1.0,
            achieved_size=pruned_size(model, budgets), target_size=target,
        )

    def size_at(tau: float) -> tuple[int, dict[str, int], dict[str, float]]:
        budgets, accs = _budgets_for_tau(curves, tau)
        return pruned_size(model, budgets), budgets, accs

    worst_size, _, _ = size_at(p_orig)
    if worst_size > target:
        raise InfeasibleError(
            f"compression {compression} unreachable: smallest plan has "
            f"{worst_size} params, target {target:.1f}",
            smallest_size=worst_size,
        )
    lo, hi = 0.0, p_orig
    if size_at(lo)[0] <= target:
        hi = lo
    while hi - lo > 1e-6:
        mid = 0.5 * (lo + hi)
        if size_at(mid)[0] <= target:
            hi = mid
        else:
            lo = mid
    size, budgets, accs = size_at(hi)
    achieved = max(0.0, max(c.p_orig - accs[c.layer] for c in curves))
    return BudgetPlan(
        budgets=budgets,
        tau=achieved,
        compression=compression,
        achieved_size=size,
        target_size=target,
    )


def threshold_budgets(
    model: NetworkModel,
    captures: ActivationCapture,
    epsilon: float,
    *,
    tol: float | None = None,
) -> BudgetPlan:
    """Smallest per-layer budget whose relative input-change error is
    within epsilon, read off one greedy trace per layer."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    budgets = {}
    for layer in model.prunable_layers():
        n = layer.out_units()
        kwargs = {} if tol is None else {"tol": tol}
        problem = layer_problem(
            model, layer.name, captures[layer.name],
            captures.group_sizes[layer.name], **kwargs,
        )
        trace = greedy(problem, n)
        budgets[layer.name] = n
        for t in range(len(trace)):
            rel = _relative_error(trace.baseline, trace.values[t])
            if rel <= epsilon:
                budgets[layer.name] = t + 1
                break
    plan = BudgetPlan(budgets=budgets, epsilon=epsilon)
    plan.achieved_size = pruned_size(model, budgets)
    return plan


def _relative_error(baseline: float, value: float) -> float:
    if baseline <= 0.0:
        return 0.0
    return (baseline - value) / baseline


def equal_fraction_budgets(
    model: NetworkModel, compression: float, grid=FINE_GRID
) -> BudgetPlan:
    """Largest common kept-fraction meeting the compression target."""
    if compression < 1.0:
        raise ValueError(f"compression ratio must be >= 1, got {compression}")
    target = count_params(model) / compression
    best = None
    for alpha in sorted(grid):
        budgets = {
            l.name: fraction_to_budget(alpha, l.out_units())
            for l in model.prunable_layers()
        }
        size = pruned_size(model, budgets)
        if size <= target:
            best = BudgetPlan(
                budgets=budgets, compression=compression,
                achieved_size=size, target_size=target,
            )
    if best is None:
        smallest = pruned_size(
            model,
            {l.name: 1 for l in model.prunable_layers()},
        )
        raise InfeasibleError(
            f"equal-fraction plan cannot reach compression {compression}",
            smallest_size=smallest,
        )
    return best
