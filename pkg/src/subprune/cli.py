"""Command-line front end.

Verbs: synth | prune | budget | verify | rankdiag | report.
Exit codes: 0 ok, 1 usage error, 2 infeasible compression,
3 verification failure.  SUBPRUNE_THREADS caps the worker count for the
prune run matrix (default 1, which is also the deterministic test
setting).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import budget as budget_mod
from . import objective, report, verify
from .budget import (
    InfeasibleError,
    accuracy_curves,
    equal_fraction_budgets,
    select_budgets,
    selection_orders,
    threshold_budgets,
)
from .bundle import load_bundle, save_bundle
from .greedy import greedy, stochastic_greedy
from .network import (
    ActivationCapture,
    capture_group_sizes,
    count_flops,
    count_params,
    evaluate_accuracy,
    forward_capture,
    model_from_bundle,
)
from .objective import SelectionProblem, eval_from_scratch, extract_reweighted_weights
from .pipeline import PrunePlan, layer_problem, run_plan
from .rng import Rng
from .synth import DEFAULT_ARCH, DEFAULT_SAMPLES, model_to_bundle, synth_bundle
from .verify import rank_diagnostic

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_VERIFY_FAILED = 3

BUDGET_MODES = ("accuracy", "threshold", "equal-fraction")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class LoadedBundle:
    model: object
    captures: ActivationCapture
    inputs: np.ndarray
    labels: np.ndarray
    verification: np.ndarray

    @property
    def prune_rows(self) -> np.ndarray:
        return np.setdiff1d(np.arange(len(self.inputs)), self.verification)


def load_bundle_for_run(path) -> LoadedBundle:
    manifest, tensors = load_bundle(path)
    model = model_from_bundle(manifest, tensors)
    inputs = tensors[manifest.data["inputs"]].to_f64()
    labels = tensors[manifest.data["labels"]].to_array().astype(np.int64)
    verif_ref = manifest.data.get("verification_indices")
    verification = (
        tensors[verif_ref].to_array().astype(np.int64)
        if verif_ref
        else np.zeros(0, dtype=np.int64)
    )
    prune_rows = np.setdiff1d(np.arange(len(inputs)), verification)
    stored = {
        desc.name: tensors[desc.capture].to_f64()
        for desc in manifest.model
        if desc.capture
    }
    if stored and set(stored) == {l.name for l in model.prunable_layers()}:
        captures = ActivationCapture(stored, capture_group_sizes(model))
    else:
        _, captures = forward_capture(model, inputs[prune_rows])
    return LoadedBundle(model, captures, inputs, labels, verification)


def _split_floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok]
    except ValueError as exc:
        raise UsageError(f"bad number list {text!r}") from exc


def _split_ints(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError as exc:
        raise UsageError(f"bad integer list {text!r}") from exc


def _selector_for(variant: str) -> str:
    return {"weightnorm": "weightnorm", "random": "random"}.get(variant, "inchange")


def _order_errors(model, captures, orders, tol):
    """Per-layer relative input-change error after each ranking prefix."""
    errors = {}
    for layer in model.prunable_layers():
        name = layer.name
        kwargs = {} if tol is None else {"tol": tol}
        problem = layer_problem(
            model, name, captures[name], captures.group_sizes[name], **kwargs
        )
        baseline = float(np.sum((problem.target @ problem.weights) ** 2))
        rel = []
        for k in range(1, layer.out_units() + 1):
            value, _ = eval_from_scratch(problem, sorted(orders[name][:k]))
            rel.append(0.0 if baseline <= 0 else (baseline - value) / baseline)
        errors[name] = rel
    return errors


def threshold_for_compression(model, captures, compression, orders, tol=None):
    """Smallest threshold whose per-layer budgets meet the compression."""
    target = count_params(model) / compression
    errors = _order_errors(model, captures, orders, tol)

    def budgets_at(eps: float) -> dict[str, int]:
        budgets = {}
        for name, rel in errors.items():
            budgets[name] = len(rel)
            for k, r in enumerate(rel, start=1):
                if r <= eps:
                    budgets[name] = k
                    break
        return budgets

    candidates = sorted({r for rel in errors.values() for r in rel} | {0.0, 1.0})
    feasible = [
        eps for eps in candidates
        if budget_mod.pruned_size(model, budgets_at(eps)) <= target
    ]
    if not feasible:
        smallest = budget_mod.pruned_size(model, budgets_at(max(candidates)))
        raise InfeasibleError(
            f"threshold mode cannot reach compression {compression}", smallest
        )
    eps = min(feasible)
    plan = budget_mod.BudgetPlan(
        budgets=budgets_at(eps), epsilon=eps, compression=compression,
        achieved_size=budget_mod.pruned_size(model, budgets_at(eps)),
        target_size=target,
    )
    return plan


def compute_budgets(loaded, variant, compression, mode, seed, tol=None):
    model = loaded.model
    selector = _selector_for(variant)
    if mode == "equal-fraction":
        return equal_fraction_budgets(model, compression)
    orders = selection_orders(
        model, loaded.captures, selector, seed=seed, tol=tol
    )
    if mode == "threshold":
        return threshold_for_compression(model, loaded.captures, compression, orders, tol)
    verif = loaded.verification
    if len(verif) == 0:
        raise UsageError("accuracy budget mode needs a verification split")
    curves = accuracy_curves(
        model, loaded.captures, loaded.inputs[verif], loaded.labels[verif],
        orders=orders, tol=tol,
    )
    return select_budgets(curves, model, compression)


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    try:
        manifest, tensors = synth_bundle(
            args.arch, args.samples, args.seed, args.verify_samples
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    save_bundle(manifest, tensors, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _run_one(loaded, variant, compression, seed, args):
    start = time.perf_counter()
    plan_budgets = compute_budgets(
        loaded, variant, compression, args.budget_mode, seed, args.tol
    )
    kwargs = {} if args.tol is None else {"tol": args.tol}
    plan = PrunePlan(
        budgets=plan_budgets.budgets, variant=variant, seed=seed,
        epsilon=args.stochastic_epsilon, reweight=not args.no_reweight, **kwargs,
    )
    result = run_plan(
        loaded.model, loaded.inputs[loaded.prune_rows], plan, loaded.captures
    )
    verif = loaded.verification
    acc = evaluate_accuracy(result.model, loaded.inputs[verif], loaded.labels[verif])
    flops_before = result.flops_before or 1
    row = {
        "variant": variant,
        "c": compression,
        "seed": seed,
        "acc1": round(acc, 6),
        "params": result.params_after,
        "flops": result.flops_after,
        "speedup": round(flops_before / max(result.flops_after, 1), 4),
        "out_err": f"{result.output_error:.6e}",
        "time_ms": round((time.perf_counter() - start) * 1e3, 2),
    }
    return row, result


def cmd_prune(args) -> int:
    loaded = load_bundle_for_run(args.bundle)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    variants = args.variant.split(",")
    for v in variants:
        if v not in ("layer", "seq", "asym", "weightnorm", "random"):
            raise UsageError(f"unknown variant {v!r}")
    compressions = _split_floats(args.compression)
    if any(c < 1.0 for c in compressions):
        raise UsageError("compression ratios must be >= 1")
    seeds = _split_ints(args.seed)
    if not seeds:
        raise UsageError("need at least one seed")

    jobs = [(v, c, s) for v in variants for c in compressions for s in seeds]
    threads = int(os.environ.get("SUBPRUNE_THREADS", "1"))
    rows = []
    results = {}

    def run(job):
        v, c, s = job
        return job, _run_one(loaded, v, c, s, args)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for job, (row, result) in pool.map(run, jobs):
                rows.append(row)
                results[job] = result
    else:
        for job in jobs:
            _, (row, result) = run(job)
            rows.append(row)
            results[job] = result

    report.write_results_csv(rows, out_dir / "results.csv")
    report.write_plot_data(rows, out_dir / "plotdata.csv")
    config_echo = {
        "bundle": str(args.bundle), "variant": args.variant,
        "compression": args.compression, "seed": args.seed,
        "budget_mode": args.budget_mode, "stochastic_epsilon": args.stochastic_epsilon,
        "tol": args.tol, "no_reweight": args.no_reweight,
    }
    with open(out_dir / "results.json", "w") as fh:
        json.dump({"config": config_echo, "rows": sorted(
            rows, key=lambda r: (r["variant"], float(r["c"]), int(r["seed"]))
        )}, fh, indent=1)
    for (v, c, s), result in sorted(results.items()):
        manifest, tensors = model_to_bundle(
            result.model, loaded.inputs, loaded.labels, loaded.verification,
            shrink=True,
        )
        save_bundle(manifest, tensors, out_dir / f"pruned-{v}-c{c:g}-s{s}.zip")
    print(f"wrote {out_dir / 'results.csv'}")
    return EXIT_OK


def cmd_budget(args) -> int:
    loaded = load_bundle_for_run(args.bundle)
    plan = compute_budgets(
        loaded, args.variant, args.compression, args.budget_mode, args.seed, args.tol
    )
    payload = {
        "budgets": plan.budgets,
        "tau": plan.tau,
        "epsilon": plan.epsilon,
        "compression": plan.compression,
        "achieved_size": plan.achieved_size,
        "target_size": plan.target_size,
    }
    text = json.dumps(payload, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.mutate == "gain-sign":
        objective.GAIN_SIGN = -1.0
    try:
        report_obj = run_verification_suite(
            instances=args.instances, seed=args.seed
        )
    finally:
        objective.GAIN_SIGN = 1.0
    text = json.dumps(report_obj, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    failed = report_obj["summary"]["failed"]
    print(f"verification: {report_obj['summary']['passed']} passed, {failed} failed")
    if args.verbose or failed:
        print(text)
    return EXIT_OK if failed == 0 else EXIT_VERIFY_FAILED


def cmd_rankdiag(args) -> int:
    loaded = load_bundle_for_run(args.bundle)
    rows = []
    for layer in loaded.model.prunable_layers():
        cap = loaded.captures[layer.name]
        g = loaded.captures.group_sizes[layer.name]
        from .linalg import numerical_rank

        rank = numerical_rank(cap).numerical_rank
        frac = rank_diagnostic(cap, g)
        rows.append({
            "layer": layer.name, "units": layer.out_units(), "group_size": g,
            "capture_columns": cap.shape[1], "rank": rank,
            "max_keep_fraction": round(frac, 4),
        })
    header = f"{'layer':<12}{'units':>7}{'group':>7}{'cols':>7}{'rank':>7}{'k/n bound':>11}"
    print(header)
    for r in rows:
        print(f"{r['layer']:<12}{r['units']:>7}{r['group_size']:>7}"
              f"{r['capture_columns']:>7}{r['rank']:>7}{r['max_keep_fraction']:>11}")
    if args.out:
        import csv as _csv

        with open(args.out, "w", newline="") as fh:
            writer = _csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return EXIT_OK


def cmd_report(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.results:
        rows = report.read_results_csv(Path(args.results) / "results.csv")
        report.write_plot_data(rows, out_dir / "plotdata.csv")
        written = report.render_figures(rows, out_dir)
        for path in written:
            print(f"wrote {path}")
        print(f"wrote {out_dir / 'plotdata.csv'}")
        return EXIT_OK
    if args.bundle:
        loaded = load_bundle_for_run(args.bundle)
        summary = report.bundle_report(
            loaded.model, loaded.inputs, loaded.labels, loaded.verification, out_dir
        )
        print(json.dumps(summary, indent=1))
        return EXIT_OK
    raise UsageError("report needs --results or --bundle")


# ------------------------------------------------------- verification suite


def _random_tiny_problem(rng: np.random.Generator, group_size=1, mode="symmetric"):
    n_groups = int(rng.integers(4, 9))
    d = n_groups * group_size
    n = int(rng.integers(d + 4, 2 * d + 12))
    n_out = int(rng.integers(1, 5))
    basis = rng.standard_normal((n, d))
    target = basis if mode == "symmetric" else basis + 0.1 * rng.standard_normal((n, d))
    groups = [list(range(g * group_size, (g + 1) * group_size)) for g in range(n_groups)]
    return SelectionProblem(basis, target, rng.standard_normal((d, n_out)), groups, mode)


def run_verification_suite(instances: int = 50, seed: int = 0) -> dict:
    """Theorem checks on random enumerable instances; all must pass."""
    rng = np.random.default_rng(seed)
    checks = []

    def record(name, instance, passed, margin, details=None):
        checks.append({
            "name": name, "instance": instance, "passed": bool(passed),
            "margin": float(margin), "details": details or {},
        })

    for i in range(instances):
        mode = "asymmetric" if i % 3 == 2 else "symmetric"
        problem = _random_tiny_problem(rng, mode=mode)
        k = int(rng.integers(1, min(5, problem.n_groups + 1)))

        res = verify.check_greedy_guarantee(problem, k)
        record("greedy_guarantee", i, res.passed, res.margin, {"gamma": res.details["gamma"]})

        res = verify.check_layer_error_bound(problem, k)
        record("layer_error_bound", i, res.passed, res.margin, {"mode": mode})

        # large-S definition pairs for the layer bound's ratio (budget = n)
        trace = greedy(problem, k)
        n_groups = problem.n_groups
        s_cap = n_groups if n_groups <= 10 else min(n_groups, 6)
        gamma = verify.exact_submodularity_ratio(problem, set(trace.order), s_cap)
        res = verify.check_definition_on_sampled_pairs(
            problem, set(trace.order), gamma.gamma_exact, n_groups, seed=seed + i
        )
        record("definition_sampled_pairs", i, res.passed, res.margin)

        w_new = extract_reweighted_weights(problem, trace.order)
        viol = verify.orthogonality_check(problem, trace.order, w_new)
        record("orthogonality", i, viol <= 1e-6, 1e-6 - viol)

    # group/neuron equivalence on channel-style instances
    for i in range(max(10, instances // 5)):
        gsize = int(rng.integers(2, 5))
        problem = _random_tiny_problem(rng, group_size=gsize)
        singles = SelectionProblem.singletons(
            problem.basis, problem.weights, target=problem.target, mode=problem.mode
        )
        k = int(rng.integers(1, problem.n_groups + 1))
        sel = [int(g) for g in rng.permutation(problem.n_groups)[:k]]
        g_val, _ = eval_from_scratch(problem, sel)
        f_val, _ = eval_from_scratch(singles, problem.columns_of(sel))
        baseline = float(np.sum((problem.target @ problem.weights) ** 2))
        diff = abs(g_val - f_val)
        record("group_equivalence", i, diff <= 1e-10 * max(baseline, 1.0), diff)

    # incremental agreement along full greedy runs
    for i in range(max(10, instances // 5)):
        mode = "asymmetric" if i % 2 else "symmetric"
        problem = _random_tiny_problem(rng, mode=mode)
        trace = greedy(problem, problem.n_groups)
        worst = 0.0
        for t in range(len(trace)):
            scratch, _ = eval_from_scratch(problem, trace.order[: t + 1])
            worst = max(worst, abs(trace.values[t] - scratch))
        record("incremental_consistency", i, worst <= 1e-8 * max(trace.baseline, 1.0), worst)

    # stochastic-greedy degeneracy and reproducibility
    problem = _random_tiny_problem(rng)
    full = stochastic_greedy(problem, 3, 1e-9, seed=1)
    plain = greedy(problem, 3)
    record("stochastic_full_sample", 0, full.order == plain.order, 0.0)
    t1 = stochastic_greedy(problem, 3, 0.5, seed=11)
    t2 = stochastic_greedy(problem, 3, 0.5, seed=11)
    record("stochastic_reproducible", 0, t1.order == t2.order, 0.0)

    # rank diagnostic on constructed matrices
    rank_rng = np.random.default_rng(seed + 999)
    a_full = rank_rng.standard_normal((12, 6))
    record("rank_diag_full", 0, rank_diagnostic(a_full, 1) == 1.0, 0.0)
    a_deficient = rank_rng.standard_normal((10, 4)) @ rank_rng.standard_normal((4, 6))
    record(
        "rank_diag_deficient", 0,
        abs(rank_diagnostic(a_deficient, 1) - 1 / 3) < 1e-12, 0.0,
    )

    failed = sum(1 for c in checks if not c["passed"])
    return {
        "config": {"instances": instances, "seed": seed},
        "summary": {"total": len(checks), "passed": len(checks) - failed, "failed": failed},
        "checks": checks,
    }


# -------------------------------------------------------------------- main


def build_parser() -> _Parser:
    parser = _Parser(prog="subprune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic teacher bundle")
    p.add_argument("--arch", default=DEFAULT_ARCH)
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--verify-samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prune", help="prune a bundle over a run matrix")
    p.add_argument("--bundle", required=True)
    p.add_argument("--variant", default="asym")
    p.add_argument("--compression", default="4")
    p.add_argument("--seed", default="0")
    p.add_argument("--budget-mode", default="accuracy", choices=BUDGET_MODES)
    p.add_argument("--stochastic-epsilon", type=float, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--no-reweight", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("budget", help="compute per-layer budgets only")
    p.add_argument("--bundle", required=True)
    p.add_argument("--variant", default="asym")
    p.add_argument("--compression", type=float, required=True)
    p.add_argument("--budget-mode", default="accuracy", choices=BUDGET_MODES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("verify", help="run the theorem verification suites")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--mutate", choices=["gain-sign"], default=None,
                   help="self-test hook: inject a fault that must be caught")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("rankdiag", help="activation-rank pruning diagnostics")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rankdiag)

    p = sub.add_parser("report", help="figures and tables from run results")
    p.add_argument("--results", default=None, help="directory with results.csv")
    p.add_argument("--bundle", default=None, help="evaluate one bundle instead")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as exc:
        print(f"infeasible: {exc} (smallest achievable size {exc.smallest_size})",
              file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
