"""Experiment reports: delimited output plus rendered figures.

Every report is written three ways side by side: a CSV with a fixed header,
a markdown table for humans, and PNG figures. Numeric cells use shortest
round-trip float formatting so identical runs produce identical files.
"""

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

ABLATION_HEADER = ["condition", "degree", "accuracy", "n_videos"]
ROBUSTNESS_HEADER = ["kind", "degree", "accuracy", "n_videos", "mmst_distance"]


@dataclass
class ExperimentReport:
    rows: list                      # dicts keyed by the header columns
    header: list
    config_hash: str
    seed: int
    kind: str = "ablation"
    metadata: dict = field(default_factory=dict)

    def cell(self, value):
        if value is None:
            return ""
        if isinstance(value, float):
            return repr(value)
        return str(value)

    def write_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header)
            for row in self.rows:
                writer.writerow([self.cell(row.get(col)) for col in self.header])

    def write_metadata(self, path):
        meta = {"kind": self.kind, "config_hash": self.config_hash, "seed": self.seed,
                "timestamp": datetime.now(timezone.utc).isoformat()}
        meta.update(self.metadata)
        Path(path).write_text(json.dumps(meta, indent=2) + "\n")

    def write_markdown(self, path, title):
        lines = [f"# {title}", "", f"config hash: `{self.config_hash}`  seed: {self.seed}", ""]
        lines.append("| " + " | ".join(self.header) + " |")
        lines.append("|" + "|".join("---" for _ in self.header) + "|")
        for row in self.rows:
            lines.append("| " + " | ".join(self.cell(row.get(col)) for col in self.header) + " |")
        Path(path).write_text("\n".join(lines) + "\n")


def read_report_csv(path):
    """Rows back from a report CSV, numbers parsed where they look numeric."""
    with Path(path).open() as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        rows = []
        for raw in reader:
            row = {}
            for key, value in raw.items():
                if value == "":
                    row[key] = None
                else:
                    try:
                        row[key] = float(value) if "." in value or "e" in value else int(value)
                    except ValueError:
                        row[key] = value
            rows.append(row)
    return header, rows


def ablation_report(results, config_hash, seed):
    """Table-shaped report from {variant: (model, metrics)} in ladder order."""
    from .pipeline import LADDER

    rows = []
    for name, _flags, _init in LADDER:
        if name not in results:
            continue
        metrics = results[name][1]
        rows.append({"condition": name, "degree": None,
                     "accuracy": metrics["accuracy"], "n_videos": metrics["n_videos"]})
    return ExperimentReport(rows=rows, header=ABLATION_HEADER,
                            config_hash=config_hash, seed=seed, kind="ablation")


def robustness_report(rows, config_hash, seed):
    return ExperimentReport(rows=rows, header=ROBUSTNESS_HEADER,
                            config_hash=config_hash, seed=seed, kind="robustness")


# ---------------------------------------------------------------------------
# figures


def render_ablation_figure(rows, path):
    names = [r["condition"] for r in rows]
    accs = [r["accuracy"] for r in rows]
    fig, ax = plt.subplots(figsize=(8, 4))
    bars = ax.bar(range(len(names)), accs, color="#4878a8")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1.05)
    ax.set_title("ablation ladder")
    for bar, acc in zip(bars, accs):
        if acc is not None:
            ax.text(bar.get_x() + bar.get_width() / 2, acc + 0.01, f"{acc:.3f}",
                    ha="center", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_robustness_figures(rows, out_dir, stem="robustness"):
    """One accuracy-vs-degree plot per degradation kind plus a distance plot."""
    out = Path(out_dir)
    kinds = sorted({r["kind"] for r in rows})
    paths = []
    for kind in kinds:
        sub = [r for r in rows if r["kind"] == kind and r["accuracy"] is not None]
        if not sub:
            continue
        sub = sorted(sub, key=lambda r: r["degree"])
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot([r["degree"] for r in sub], [r["accuracy"] for r in sub], "o-", color="#a85448")
        ax.set_xlabel(f"{kind} degree")
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1.05)
        ax.set_title(f"robustness: {kind}")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        p = out / f"{stem}_{kind}.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    sub = [r for r in rows if r.get("mmst_distance") is not None]
    if sub:
        fig, ax = plt.subplots(figsize=(5.5, 3.2))
        for kind in kinds:
            pts = sorted((r for r in sub if r["kind"] == kind), key=lambda r: r["degree"])
            if pts:
                ax.plot([r["degree"] for r in pts], [r["mmst_distance"] for r in pts],
                        "o-", label=kind)
        ax.set_xlabel("degree")
        ax.set_ylabel("relative map distance")
        ax.set_title("map distortion by degradation")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        p = out / f"{stem}_map_distance.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths


def render_training_curves(log_path, out_path):
    """Loss/accuracy curves from an epoch log CSV."""
    epochs, train_loss, val_loss, val_acc = [], [], [], []
    with Path(log_path).open() as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            epochs.append(int(row["epoch"]))
            train_loss.append(float(row["train_loss"]))
            val_loss.append(float(row["val_loss"]))
            val_acc.append(float(row["val_acc"]))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.plot(epochs, train_loss, label="train")
    ax1.plot(epochs, val_loss, label="val")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, val_acc, color="#488a54")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("val accuracy")
    ax2.set_ylim(0, 1.05)
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def write_report_bundle(report, out_dir, stem, title):
    """CSV + markdown + metadata + figures for one report; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    report.write_csv(csv_path)
    report.write_markdown(out / f"{stem}.md", title)
    report.write_metadata(out / f"{stem}.meta.json")
    figures = []
    if report.kind == "ablation":
        fig_path = out / f"{stem}_accuracy.png"
        render_ablation_figure(report.rows, fig_path)
        figures.append(fig_path)
    elif report.kind == "robustness":
        figures.extend(render_robustness_figures(report.rows, out, stem=stem))
    return csv_path, figures
