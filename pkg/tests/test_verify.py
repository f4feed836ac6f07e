import itertools
import math

import numpy as np
import pytest

from subprune.greedy import greedy
from subprune.objective import SelectionProblem, eval_from_scratch, extract_reweighted_weights
from subprune.verify import (
    brute_force_opt,
    check_definition_on_sampled_pairs,
    check_greedy_guarantee,
    check_layer_error_bound,
    exact_submodularity_ratio,
    orthogonality_check,
    rank_diagnostic,
)


def running_example():
    a = np.array([[1.0, 1.0], [0.0, 1.0]])
    return SelectionProblem.singletons(a, np.array([[1.0], [1.0]]))


def random_problem(rng, n=20, d=8, n_out=3, mode="symmetric"):
    basis = rng.standard_normal((n, d))
    target = basis if mode == "symmetric" else basis + 0.1 * rng.standard_normal((n, d))
    return SelectionProblem.singletons(basis, rng.standard_normal((d, n_out)),
                                       target=target, mode=mode)


def lstsq_f(problem, subset):
    cols = sorted(problem.columns_of(subset))
    tw = problem.target @ problem.weights
    baseline = float(np.sum(tw * tw))
    if not cols:
        return 0.0
    coef, *_ = np.linalg.lstsq(problem.basis[:, cols], tw, rcond=None)
    resid = tw - problem.basis[:, cols] @ coef
    return baseline - float(np.sum(resid * resid))


class TestBruteForce:
    def test_running_example(self):
        value, subset = brute_force_opt(running_example(), 1)
        assert subset == (1,)
        assert value == pytest.approx(4.5, abs=1e-12)

    def test_full_budget_full_rank(self):
        rng = np.random.default_rng(0)
        p = random_problem(rng, d=5)
        value, subset = brute_force_opt(p, 5)
        tw = p.target @ p.weights
        assert subset == (0, 1, 2, 3, 4)
        assert value == pytest.approx(float(np.sum(tw * tw)), rel=1e-10)

    def test_greedy_never_beats_opt(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            p = random_problem(rng, d=7)
            k = int(rng.integers(1, 5))
            opt, _ = brute_force_opt(p, k)
            trace = greedy(p, k)
            assert trace.values[-1] <= opt + 1e-8 * trace.baseline

    def test_size_cap(self):
        rng = np.random.default_rng(2)
        basis = rng.standard_normal((4, 64))
        p = SelectionProblem.singletons(basis, rng.standard_normal((64, 1)))
        with pytest.raises(ValueError, match="too large"):
            brute_force_opt(p, 20)


class TestExactSubmodularityRatio:
    def test_orthogonal_basis_is_modular(self):
        p = SelectionProblem.singletons(np.eye(6), np.eye(6))
        rep = exact_submodularity_ratio(p, {0, 1, 2}, 3)
        assert rep.gamma_exact == pytest.approx(1.0, abs=1e-9)
        assert rep.pairs_evaluated > 0

    def test_duplicated_columns_enumerated(self):
        v = np.array([[1.0], [2.0]])
        p = SelectionProblem.singletons(np.hstack([v, v]), np.ones((2, 1)))
        rep = exact_submodularity_ratio(p, {0}, 2)
        # the duplicate's conditional gain is zero, so those pairs skip
        # and the surviving ratios are exactly modular
        assert rep.pairs_skipped > 0
        assert rep.gamma_exact == pytest.approx(1.0, abs=1e-9)

    def test_complementary_pair_gives_small_gamma(self):
        a = np.array([[1.0, 1.0], [0.1, -0.1]])
        p = SelectionProblem.singletons(a, np.array([[1.0], [-1.0]]))
        rep = exact_submodularity_ratio(p, set(), 2)
        assert rep.gamma_exact < 0.05
        assert rep.witness_s == (0, 1)

    def test_running_example_matches_independent_enumeration(self):
        p = running_example()
        rep = exact_submodularity_ratio(p, {1}, 2)
        best = math.inf
        baseline = 5.0
        for l_set in [(), (1,)]:
            rest = [g for g in (0, 1) if g not in l_set]
            for size in (1, 2):
                for s_set in itertools.combinations(rest, size):
                    den = lstsq_f(p, l_set + s_set) - lstsq_f(p, l_set)
                    if den <= 1e-12 * baseline:
                        continue
                    num = sum(lstsq_f(p, l_set + (i,)) - lstsq_f(p, l_set) for i in s_set)
                    best = min(best, num / den)
        assert rep.gamma_exact == pytest.approx(best, rel=1e-9)

    def test_gamma_never_exceeds_one_plus_eps(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            p = random_problem(rng, d=6)
            trace = greedy(p, 3)
            rep = exact_submodularity_ratio(p, set(trace.order), 3)
            assert rep.gamma_exact <= 1.0 + 1e-12

    def test_size_caps_enforced(self):
        rng = np.random.default_rng(4)
        p = random_problem(rng, d=15)
        with pytest.raises(ValueError, match="too large"):
            exact_submodularity_ratio(p, {0}, 2)
        p2 = random_problem(rng, d=12)
        with pytest.raises(ValueError, match="too large"):
            exact_submodularity_ratio(p2, set(range(11)), 2)

    def test_all_pairs_skipped_degenerate(self):
        basis = np.zeros((3, 2))
        p = SelectionProblem.singletons(basis, np.ones((2, 1)))
        rep = exact_submodularity_ratio(p, set(), 2)
        assert rep.degenerate
        assert rep.gamma_exact == 1.0


class TestGreedyGuarantee:
    def test_random_instances_no_violation(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            p = random_problem(rng, n=int(rng.integers(10, 24)), d=8,
                               n_out=int(rng.integers(1, 5)))
            k = int(rng.integers(1, 5))
            res = check_greedy_guarantee(p, k)
            assert res.passed, res.details

    def test_orthogonal_reduces_to_classic_bound(self):
        p = SelectionProblem.singletons(np.eye(5), np.eye(5))
        res = check_greedy_guarantee(p, 2)
        assert res.passed
        assert res.details["gamma"] == pytest.approx(1.0, abs=1e-9)
        assert res.details["bound"] == pytest.approx((1 - 1 / math.e) * res.details["optimum"], rel=1e-9)

    def test_full_budget_achieves_opt(self):
        rng = np.random.default_rng(6)
        p = random_problem(rng, d=6)
        res = check_greedy_guarantee(p, 6)
        assert res.passed
        assert res.details["achieved"] == pytest.approx(res.details["optimum"], rel=1e-9)


class TestLayerErrorBound:
    def test_full_rank_full_budget_left_zero(self):
        rng = np.random.default_rng(7)
        p = random_problem(rng, d=6)
        res = check_layer_error_bound(p, 6)
        assert res.passed
        assert res.details["left"] == pytest.approx(0.0, abs=1e-9)

    def test_random_tiny_instances(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            mode = str(rng.choice(["symmetric", "asymmetric"]))
            p = random_problem(rng, n=int(rng.integers(12, 30)), d=7, mode=mode)
            k = int(rng.integers(1, 8))
            res = check_layer_error_bound(p, k)
            assert res.passed, res.details

    def test_orthogonal_closed_form(self):
        d = 6
        p = SelectionProblem.singletons(np.eye(d), np.eye(d))
        for k in range(1, d):
            res = check_layer_error_bound(p, k)
            assert res.passed
            assert res.details["left"] == pytest.approx(d * (1 - k / d), rel=1e-9)
            assert res.details["right"] == pytest.approx(d * math.exp(-k / d), rel=1e-9)
            assert res.details["left"] < res.details["right"]

    def test_sampled_definition_pairs(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            p = random_problem(rng, d=8)
            trace = greedy(p, 3)
            # ratio for the layer bound quantifies over |S| up to the
            # ground-set size, so sampled pairs may use any size
            gamma = exact_submodularity_ratio(p, set(trace.order), 8).gamma_exact
            res = check_definition_on_sampled_pairs(p, set(trace.order), gamma, 8, seed=7)
            assert res.passed, res.details

    def test_sampled_pairs_catch_overstated_gamma(self):
        rng = np.random.default_rng(19)
        found = False
        for _ in range(20):
            p = random_problem(rng, d=8)
            trace = greedy(p, 3)
            exact = exact_submodularity_ratio(p, set(trace.order), 8).gamma_exact
            res = check_definition_on_sampled_pairs(
                p, set(trace.order), exact * 4.0 + 0.5, 8, seed=3, n_pairs=256
            )
            if not res.passed:
                found = True
                break
        assert found


class TestOrthogonalityCheck:
    def test_empty_selection(self):
        p = running_example()
        assert orthogonality_check(p, [], np.zeros((2, 1))) == 0.0

    def test_running_example(self):
        p = running_example()
        w_new = extract_reweighted_weights(p, [1])
        assert orthogonality_check(p, [1], w_new) <= 1e-12

    def test_random_instances(self):
        rng = np.random.default_rng(10)
        for mode in ("symmetric", "asymmetric"):
            for _ in range(10):
                p = random_problem(rng, mode=mode)
                k = int(rng.integers(1, 6))
                sel = [int(g) for g in rng.permutation(p.n_groups)[:k]]
                w_new = extract_reweighted_weights(p, sel)
                assert orthogonality_check(p, sel, w_new) <= 1e-6


class TestRankDiagnostic:
    def test_full_column_rank(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((12, 6))
        assert rank_diagnostic(a, 1) == 1.0

    def test_rank4_of_6_neurons(self):
        rng = np.random.default_rng(12)
        a = rng.standard_normal((10, 4)) @ rng.standard_normal((4, 6))
        assert rank_diagnostic(a, 1) == pytest.approx(1 / 3)

    def test_grouped_formula(self):
        rng = np.random.default_rng(13)
        # 4 channels x group 4 = 16 columns of rank 9: k_max = floor(9/8) = 1
        a = rng.standard_normal((20, 9)) @ rng.standard_normal((9, 16))
        assert rank_diagnostic(a, 4) == pytest.approx(1 / 4)

    def test_random_construction_matches_formula(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            r = int(rng.integers(2, 8))
            units = int(rng.integers(4, 9))
            g = int(rng.integers(1, 3))
            cols = units * g
            r = min(r, cols - 1)
            a = rng.standard_normal((30, r)) @ rng.standard_normal((r, cols))
            expect = min(r // (2 * g), units) / units
            assert rank_diagnostic(a, g) == pytest.approx(expect)
