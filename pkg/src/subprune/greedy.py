"""Greedy and stochastic-greedy drivers over a selection problem.

A single run at budget k yields a full trace (pick order, per-step gains,
prefix objective values), so every smaller budget k' <= k is answered by
a prefix of the same trace.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .objective import IncrementalState, SelectionProblem, init_state
from .rng import Rng


@dataclass
class SelectionTrace:
    order: list[int] = field(default_factory=list)
    gains: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    baseline: float = 0.0
    stopped_early: bool = False

    def prefix(self, k: int) -> list[int]:
        return self.order[: min(k, len(self.order))]

    def __len__(self) -> int:
        return len(self.order)


def _check_budget(problem: SelectionProblem, k: int) -> None:
    if not 1 <= k <= problem.n_groups:
        raise ValueError(f"budget {k} outside [1, {problem.n_groups}]")


def _run(state: IncrementalState, k: int, pick_pool) -> SelectionTrace:
    trace = SelectionTrace(baseline=state.baseline)
    for _ in range(k):
        candidates = pick_pool(state)
        if not candidates:
            trace.stopped_early = True
            break
        gains = np.maximum(state.gains(candidates), 0.0)
        if np.all(gains <= 0.0):
            trace.stopped_early = True
            break
        best_pos = int(np.argmax(gains))
        state.apply(candidates[best_pos])
        trace.order.append(candidates[best_pos])
        trace.gains.append(float(gains[best_pos]))
        trace.values.append(state.value)
    return trace


def greedy(problem: SelectionProblem, k: int, *, lazy_unsafe: bool = False) -> SelectionTrace:
    """Exact argmax greedy; ties go to the lowest group index.

    ``lazy_unsafe=True`` switches to priority-queue re-evaluation, which
    skips recomputing gains whose stale value already tops the queue.
    That shortcut is only sound for truly submodular objectives, so it
    exists for benchmarking and is excluded from correctness guarantees.
    """
    _check_budget(problem, k)
    if lazy_unsafe:
        return _run_lazy(init_state(problem), k)
    return _run(init_state(problem), k, lambda s: s.open_groups())


def _run_lazy(state: IncrementalState, k: int) -> SelectionTrace:
    trace = SelectionTrace(baseline=state.baseline)
    candidates = state.open_groups()
    gains = np.maximum(state.gains(candidates), 0.0)
    heap = [(-float(g), idx, 0) for idx, g in zip(candidates, gains)]
    heapq.heapify(heap)
    while len(trace.order) < k and heap:
        neg_gain, idx, stamp = heapq.heappop(heap)
        if stamp < len(trace.order):
            fresh = max(state.marginal_gain(idx), 0.0)
            heapq.heappush(heap, (-fresh, idx, len(trace.order)))
            continue
        if -neg_gain <= 0.0:
            trace.stopped_early = True
            break
        state.apply(idx)
        trace.order.append(idx)
        trace.gains.append(-neg_gain)
        trace.values.append(state.value)
    if len(trace.order) < k and not heap:
        trace.stopped_early = True
    return trace


def sample_size(n_groups: int, k: int, epsilon: float) -> int:
    """Per-step sample count ceil((n/k) * ln(1/eps)), at least 1."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    if not 1 <= k <= n_groups:
        raise ValueError(f"budget {k} outside [1, {n_groups}]")
    return max(1, math.ceil(n_groups / k * math.log(1.0 / epsilon)))


def stochastic_greedy(
    problem: SelectionProblem, k: int, epsilon: float, seed: int
) -> SelectionTrace:
    """Greedy over a fresh random candidate sample each step.

    Samples ``sample_size(n, k, epsilon)`` distinct remaining groups per
    step (capped at the remaining count); deterministic for a fixed seed.
    """
    _check_budget(problem, k)
    s = sample_size(problem.n_groups, k, epsilon)
    rng = Rng(seed)

    def pool(state: IncrementalState) -> list[int]:
        remaining = state.open_groups()
        if s >= len(remaining):
            return remaining
        picks = rng.sample_without_replacement(len(remaining), s)
        return [remaining[i] for i in picks]

    return _run(init_state(problem), k, pool)
