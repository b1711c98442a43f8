"""Ablation reports and loss-curve plots.

Published reference rows are kept alongside local results and always
rendered under a separate, labeled heading; they are not reproduced here.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from cogpsg.model import VARIANT_LABELS, Variant
from cogpsg.training import AblationReport

# (accuracy %, F1) published for the 817-subject cohort under 10-fold CV
REFERENCE_TABLE = {
    Variant.VANILLA_RAW: (64.04, 0.71),
    Variant.VANILLA_FEAT: (71.10, 0.78),
    Variant.VANILLA_MIXED: (76.16, 0.84),
    Variant.LSTM_MIXED: (73.10, 0.80),
    Variant.SINGLE_SCALE: (79.81, 0.88),
    Variant.MS_SHC_SHS: (74.41, 0.81),
    Variant.MS_SC_SHS: (80.30, 0.89),
    Variant.MS_SC_SS: (78.94, 0.87),
}
REFERENCE_NOTE = "published reference values (not reproduced locally; require the original cohort)"


def _fmt(x, pct=False):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "n/a"
    return f"{100 * x:.2f}%" if pct else f"{x:.2f}"


def report_csv(report: AblationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "architecture", "variant", "fold", "accuracy", "f1", "status"])
    for row in report.rows:
        for f in row.folds:
            w.writerow(["local", row.label, row.variant.value, f.fold_index + 1,
                        f"{f.accuracy:.6f}", f"{f.f1:.6f}", f.status])
        w.writerow(["local", row.label, row.variant.value, "mean",
                    f"{row.mean_accuracy:.6f}", f"{row.mean_f1:.6f}", row.status])
    for variant, (acc, f1) in REFERENCE_TABLE.items():
        w.writerow(["published-reference", VARIANT_LABELS[variant], variant.value, "mean",
                    f"{acc / 100:.4f}", f"{f1:.2f}", "REFERENCE"])
    return buf.getvalue()


def render_table(report: AblationReport, include_reference=True) -> str:
    width = max(len(v) for v in VARIANT_LABELS.values()) + 2
    head = f"{'Architecture':<{width}}{'Accuracy':>10}{'F1-Score':>10}  Status"
    lines = [f"Local results ({report.k}-fold cross-validation, seed {report.seed})", head, "-" * len(head)]
    for row in report.rows:
        lines.append(f"{row.label:<{width}}{_fmt(row.mean_accuracy, True):>10}{_fmt(row.mean_f1):>10}  {row.status}")
        for f in row.folds:
            lines.append(f"{'  fold ' + str(f.fold_index + 1):<{width}}{_fmt(f.accuracy, True):>10}"
                         f"{_fmt(f.f1):>10}  {f.status}")
    if include_reference:
        lines += ["", f"Published reference: {REFERENCE_NOTE}", head, "-" * len(head)]
        for variant, (acc, f1) in REFERENCE_TABLE.items():
            lines.append(f"{VARIANT_LABELS[variant]:<{width}}{acc:>9.2f}%{f1:>10.2f}  REFERENCE")
    return "\n".join(lines) + "\n"


def write_report(run_dir, report: AblationReport):
    run_dir = Path(run_dir)
    (run_dir / "report.csv").write_text(report_csv(report))
    (run_dir / "report.txt").write_text(render_table(report))
    return run_dir / "report.csv", run_dir / "report.txt"


def plot_loss_curves(run_dir, report: AblationReport):
    """One PNG per (variant, fold) under ``fold_<i>/``; returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run_dir = Path(run_dir)
    paths = []
    for row in report.rows:
        for f in row.folds:
            if not f.loss_curve:
                continue
            out = run_dir / f"fold_{f.fold_index}" / f"loss_{row.variant.value}.png"
            out.parent.mkdir(parents=True, exist_ok=True)
            fig, ax = plt.subplots(figsize=(5, 3))
            ax.plot(range(1, len(f.loss_curve) + 1), f.loss_curve)
            ax.set_xlabel("epoch")
            ax.set_ylabel("BCE loss")
            ax.set_title(f"{row.label} - fold {f.fold_index + 1}", fontsize=9)
            fig.tight_layout()
            fig.savefig(out, metadata={"Software": None})
            plt.close(fig)
            paths.append(out)
    return paths
