"""Reweighted input-change objective over column subsets.

A layer's pruning instance is a least-squares subset-selection problem:
keep a set ``S`` of ground-set groups (neurons or channel blocks) and
replace the next layer's weights so that the next layer's input changes
as little as possible.  The objective maximized is

    F(S) = ||target @ W||_F^2  -  min_{supp(X) in M(S)} ||target @ W - basis @ X @ W||_F^2

which is normalized (F(empty) = 0), non-decreasing, and admits cheap
incremental marginal gains: adding a group only requires projecting the
maintained residual columns onto the orthonormalized residual block of
that group.

Symmetric mode sets ``target = basis`` (prune against the layer's own
activations); asymmetric mode keeps the original activations as the
target while selecting among updated ones, which curbs error
accumulation when layers are pruned in sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import frob_norm_sq, orthonormalize_with_tol, DEFAULT_TOL

# Squared-norm factor below which a candidate's residual counts as zero.
# Keeps linear dependence from dividing by ~0 in the gain formulas.
DEGENERATE_FACTOR = 1e-10

# Test hook: the CLI's verify --mutate flag flips this to -1.0 so the
# verification suites can prove they catch a broken gain computation.
GAIN_SIGN = 1.0

# Residuals are rebuilt from scratch after this many selections to bound
# drift of the repeated rank-one updates.
REFRESH_INTERVAL = 64


@dataclass
class SelectionProblem:
    """One layer's subset-selection instance.

    basis:   columns the selection chooses among (updated activations in
             asymmetric mode).
    target:  columns whose weighted span is approximated; same array as
             ``basis`` in symmetric mode, the original activations in
             asymmetric mode.
    weights: next-layer weight matrix, rows aligned with basis columns.
    groups:  partition of column indices into ground-set elements;
             singletons for neurons, blocks for channels.
    """

    basis: np.ndarray
    target: np.ndarray
    weights: np.ndarray
    groups: list[list[int]]
    mode: str = "symmetric"
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.mode not in ("symmetric", "asymmetric"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.basis.shape != self.target.shape:
            raise ValueError(
                f"basis {self.basis.shape} and target {self.target.shape} must match"
            )
        if self.weights.shape[0] != self.basis.shape[1]:
            raise ValueError(
                f"weights rows {self.weights.shape[0]} != basis cols {self.basis.shape[1]}"
            )
        d = self.basis.shape[1]
        flat = sorted(i for g in self.groups for i in g)
        if flat != list(range(d)):
            raise ValueError("groups must partition the basis columns")

    @classmethod
    def singletons(cls, basis, weights, *, target=None, mode="symmetric", tol=DEFAULT_TOL):
        basis = np.asarray(basis, dtype=np.float64)
        groups = [[j] for j in range(basis.shape[1])]
        return cls(basis, basis if target is None else target, weights, groups, mode, tol)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def columns_of(self, selected) -> list[int]:
        """Expand group ids to the sorted list of their columns, M(S)."""
        return sorted(i for g in selected for i in self.groups[g])


class IncrementalState:
    """Evolving least-squares state of one greedy run.

    Maintains, for the current selected set S: the residuals
    ``R_S(basis_j)`` of unselected basis columns, the regression
    coefficients ``x^S`` of basis columns (unselected) and target columns
    (all of them in asymmetric mode), the objective value, and the
    baseline ``||target @ W||_F^2``.
    """

    def __init__(self, problem: SelectionProblem):
        self.problem = problem
        d = problem.basis.shape[1]
        self.selected: list[int] = []
        self._group_open = np.ones(problem.n_groups, dtype=bool)
        self._col_open = np.ones(d, dtype=bool)
        self.residual = problem.basis.copy()
        self._basis_norms_sq = np.sum(problem.basis * problem.basis, axis=0)
        self.x_basis = np.zeros((d, d))
        if problem.mode == "asymmetric":
            self.x_target = np.zeros((d, d))
        else:
            self.x_target = self.x_basis
        self.value = 0.0
        self.baseline = frob_norm_sq(problem.target @ problem.weights)
        self._steps_since_refresh = 0

    # -- queries ---------------------------------------------------------

    def is_selected(self, g: int) -> bool:
        return not self._group_open[g]

    def open_groups(self) -> list[int]:
        return [g for g in range(self.problem.n_groups) if self._group_open[g]]

    def selected_columns(self) -> list[int]:
        return self.problem.columns_of(self.selected)

    def target_projections(self) -> np.ndarray:
        """proj_S(target_j) for every target column j."""
        return self.problem.basis @ self.x_target

    def marginal_gain(self, g: int) -> float:
        """F(S + g) - F(S) for an unselected group g."""
        if not self._group_open[g]:
            raise ValueError(f"group {g} is already selected")
        cols = self.problem.groups[g]
        if len(cols) == 1:
            return self.gains([g])[0]
        return self._block_gain(cols)[0]

    def gains(self, candidates=None) -> np.ndarray:
        """Marginal gains of unselected candidate groups, in one pass.

        Singleton groups are evaluated with the closed-form residual
        formula, vectorized over candidates; multi-column groups go
        through per-block orthonormalization.
        """
        p = self.problem
        if candidates is None:
            candidates = self.open_groups()
        out = np.zeros(len(candidates))
        single = [(pos, g) for pos, g in enumerate(candidates) if len(p.groups[g]) == 1]
        multi = [(pos, g) for pos, g in enumerate(candidates) if len(p.groups[g]) > 1]

        if single:
            cols = np.array([p.groups[g][0] for _, g in single])
            r = self.residual[:, cols]
            rn2 = np.sum(r * r, axis=0)
            v = p.target.T @ r
            if p.mode == "symmetric":
                v[~self._col_open, :] = 0.0
            z = p.weights.T @ v
            num = np.sum(z * z, axis=0)
            live = rn2 > DEGENERATE_FACTOR * self._basis_norms_sq[cols]
            vals = np.zeros(len(single))
            vals[live] = num[live] / rn2[live] * GAIN_SIGN
            for (pos, _g), val in zip(single, vals):
                out[pos] = val
        for pos, g in multi:
            out[pos] = self._block_gain(p.groups[g])[0]
        return out

    def _block_gain(self, cols):
        """Gain of a column block plus its orthonormalized residual."""
        p = self.problem
        block = self.residual[:, cols]
        if np.sum(block * block) <= DEGENERATE_FACTOR * np.sum(self._basis_norms_sq[cols]):
            return 0.0, None, None, []
        q, c, kept = orthonormalize_with_tol(block, p.tol)
        if q.shape[1] == 0:
            return 0.0, None, None, []
        m = q.T @ p.target
        if p.mode == "symmetric":
            m = m.copy()
            m[:, ~self._col_open] = 0.0
        gain = frob_norm_sq(m @ p.weights) * GAIN_SIGN
        return gain, q, c, kept

    # -- updates ---------------------------------------------------------

    def apply(self, g: int) -> None:
        """Select group g, updating residuals, coefficients, and value."""
        if not self._group_open[g]:
            raise ValueError(f"group {g} is already selected")
        p = self.problem
        cols = p.groups[g]
        gain, q, c, kept_local = self._block_gain(cols)
        if not np.isfinite(gain):
            raise ValueError(f"non-finite gain for group {g}")

        self._group_open[g] = False
        self.selected.append(g)
        self._col_open[cols] = False
        self.value += gain

        if q is not None:
            kept_cols = [cols[i] for i in kept_local]
            e_kept = np.zeros((p.basis.shape[1], len(kept_cols)))
            e_kept[kept_cols, range(len(kept_cols))] = 1.0
            shift = e_kept - self.x_basis[:, kept_cols]

            open_cols = np.flatnonzero(self._col_open)
            dropped = [i for i in cols if i not in kept_cols]
            upd = np.concatenate([open_cols, dropped]).astype(int) if dropped else open_cols
            t = q.T @ self.residual[:, upd]
            gamma = np.linalg.solve(c, t)
            if p.mode == "symmetric":
                self.x_basis[:, upd] += shift @ gamma
            else:
                basis_upd = np.asarray(open_cols, dtype=int)
                tb = q.T @ self.residual[:, basis_upd]
                self.x_basis[:, basis_upd] += shift @ np.linalg.solve(c, tb)
                # target coefficients track every column, from the raw target
                tt = q.T @ p.target
                self.x_target += shift @ np.linalg.solve(c, tt)
            self.residual[:, upd] -= q @ t
            if p.mode == "symmetric":
                for i in kept_cols:
                    self.x_basis[:, i] = 0.0
                    self.x_basis[i, i] = 1.0
        self.residual[:, cols] = 0.0

        self._steps_since_refresh += 1
        if self._steps_since_refresh >= REFRESH_INTERVAL:
            self._refresh()

    def _refresh(self) -> None:
        """Recompute residuals and coefficients from the selected set."""
        p = self.problem
        self._steps_since_refresh = 0
        sel_cols = self.selected_columns()
        open_cols = np.flatnonzero(self._col_open)
        q, c, kept_local = orthonormalize_with_tol(p.basis[:, sel_cols], p.tol)
        kept_global = [sel_cols[i] for i in kept_local]
        self.residual[:, open_cols] = p.basis[:, open_cols]
        self.x_basis[:, open_cols] = 0.0
        if q.shape[1] == 0:
            return
        t = q.T @ p.basis[:, open_cols]
        gamma = np.linalg.solve(c, t)
        self.x_basis[np.ix_(kept_global, open_cols)] = gamma
        self.residual[:, open_cols] -= q @ t
        if p.mode == "asymmetric":
            self.x_target[:, :] = 0.0
            self.x_target[kept_global, :] = np.linalg.solve(c, q.T @ p.target)


def init_state(problem: SelectionProblem) -> IncrementalState:
    return IncrementalState(problem)


def marginal_gain(state: IncrementalState, g: int) -> float:
    return state.marginal_gain(g)


def apply_selection(state: IncrementalState, g: int) -> IncrementalState:
    state.apply(g)
    return state


def eval_from_scratch(problem: SelectionProblem, selected) -> tuple[float, np.ndarray]:
    """Objective value and coefficient table for a fixed selected set.

    Solves the least-squares problems directly from an orthonormal basis
    of the selected columns, independently of any incremental state.
    Returns ``(value, X)`` with ``X[:, j] = x^S(target_j)``.
    """
    p = problem
    d = p.basis.shape[1]
    baseline = frob_norm_sq(p.target @ p.weights)
    cols = p.columns_of(selected)
    x = np.zeros((d, d))
    if cols:
        q, c, kept_local = orthonormalize_with_tol(p.basis[:, cols], p.tol)
        if q.shape[1] > 0:
            kept_global = [cols[i] for i in kept_local]
            x[kept_global, :] = np.linalg.solve(c, q.T @ p.target)
    resid = p.target @ p.weights - p.basis @ (x @ p.weights)
    return baseline - frob_norm_sq(resid), x


def extract_reweighted_weights(source, selected=None) -> np.ndarray:
    """Optimal replacement weights W~ = X @ W for the selected set.

    ``source`` is either an IncrementalState or a SelectionProblem (the
    latter requires ``selected``).  Rows outside the selected columns are
    exactly zero.
    """
    if isinstance(source, IncrementalState):
        problem = source.problem
        x = source.x_target
        cols = source.selected_columns()
    else:
        problem = source
        if selected is None:
            raise ValueError("selected set required when passing a problem")
        _, x = eval_from_scratch(problem, selected)
        cols = problem.columns_of(selected)
    w_new = x @ problem.weights
    keep = np.zeros(problem.basis.shape[1], dtype=bool)
    keep[cols] = True
    w_new[~keep, :] = 0.0
    return w_new
