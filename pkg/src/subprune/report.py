"""Tabular and graphical reports for pruning runs.

The prune command writes machine-readable CSV/JSON; this module turns
those into summary tables and matplotlib figures (accuracy and output
error against compression), and produces evaluation reports for a
single bundle.  matplotlib is imported lazily so the math paths never
depend on it.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

RESULT_COLUMNS = [
    "variant", "c", "seed", "acc1", "params", "flops", "speedup", "out_err", "time_ms",
]


def write_results_csv(rows: list[dict], path) -> None:
    rows = sorted(rows, key=lambda r: (r["variant"], float(r["c"]), int(r["seed"])))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in RESULT_COLUMNS})


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


def aggregate(rows: list[dict]) -> list[dict]:
    """Per (variant, c): mean/std of accuracy and output error."""
    groups = defaultdict(list)
    for row in rows:
        groups[(row["variant"], float(row["c"]))].append(row)
    out = []
    for (variant, c), members in sorted(groups.items()):
        accs = np.array([float(m["acc1"]) for m in members])
        errs = np.array([float(m["out_err"]) for m in members])
        out.append({
            "variant": variant,
            "c": c,
            "mean_acc1": float(accs.mean()),
            "std_acc1": float(accs.std()),
            "mean_out_err": float(errs.mean()),
            "n_seeds": len(members),
        })
    return out


def write_plot_data(rows: list[dict], path) -> None:
    agg = aggregate(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["variant", "c", "mean_acc1", "std_acc1", "mean_out_err", "n_seeds"],
        )
        writer.writeheader()
        for row in agg:
            writer.writerow(row)


def render_figures(rows: list[dict], out_dir) -> list[str]:
    """Accuracy and output-error curves against compression, as PNGs."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    agg = aggregate(rows)
    by_variant = defaultdict(list)
    for row in agg:
        by_variant[row["variant"]].append(row)
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for variant, pts in sorted(by_variant.items()):
        pts = sorted(pts, key=lambda r: r["c"])
        cs = [p["c"] for p in pts]
        ax.errorbar(cs, [p["mean_acc1"] for p in pts],
                    yerr=[p["std_acc1"] for p in pts], marker="o", label=variant)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("compression ratio")
    ax.set_ylabel("top-1 accuracy")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    acc_path = out_dir / "accuracy_vs_compression.png"
    fig.savefig(acc_path, dpi=120)
    plt.close(fig)
    written.append(str(acc_path))

    fig, ax = plt.subplots(figsize=(6, 4))
    for variant, pts in sorted(by_variant.items()):
        pts = sorted(pts, key=lambda r: r["c"])
        ax.plot([p["c"] for p in pts], [p["mean_out_err"] for p in pts],
                marker="s", label=variant)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("compression ratio")
    ax.set_ylabel("final output error")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    err_path = out_dir / "output_error_vs_compression.png"
    fig.savefig(err_path, dpi=120)
    plt.close(fig)
    written.append(str(err_path))
    return written


def bundle_report(model, inputs, labels, verification, out_dir) -> dict:
    """Evaluation report for one bundle: accuracy, sizes, logits table."""
    from .network import count_flops, count_params, evaluate_accuracy, forward

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    verif = np.asarray(verification, dtype=int)
    prune_rows = np.setdiff1d(np.arange(len(inputs)), verif)
    logits = forward(model, inputs)
    np.savetxt(out_dir / "logits.csv", logits, delimiter=",")
    summary = {
        "params": count_params(model),
        "flops": count_flops(model) if model.input_shape else None,
        "accuracy_all": evaluate_accuracy(model, inputs, labels),
        "accuracy_verification": (
            evaluate_accuracy(model, inputs[verif], labels[verif]) if len(verif) else None
        ),
        "accuracy_pruning_batch": (
            evaluate_accuracy(model, inputs[prune_rows], labels[prune_rows])
            if len(prune_rows) else None
        ),
        "layers": [
            {
                "name": layer.name,
                "kind": layer.kind,
                "units": int(layer.mask().sum()) if layer.kind != "maxpool2x2" else None,
                "prunable": layer.prunable,
            }
            for layer in model.layers
        ],
    }
    with open(out_dir / "bundle_report.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    return summary
