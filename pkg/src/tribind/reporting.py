"""Result tables and report files.

Reports are grouped the way the headline comparison lays them out: one row
per (training strategy, item modality), a column block of R@1 / R@5 / R@10 /
MedR per dataset, recalls with two decimals and the best value per column
flagged. The file writer puts a markdown table, a CSV with the same numbers
and a pair of rendered figures next to each other.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .evaluation import RECALL_KS, MetricsReport
from .models import Modality

_MODALITY_LABEL = {
    Modality.AUDIO: "Audio",
    Modality.SYMBOLIC: "Symbolic",
    Modality.FUSED: "Trimodal",
    Modality.TEXT: "Text",
}
_MODALITY_ORDER = [Modality.AUDIO, Modality.SYMBOLIC, Modality.FUSED, Modality.TEXT]


def _fmt_recall(v: float) -> str:
    return f"{v:.2f}"


def _fmt_medr(v: float) -> str:
    return f"{v:g}"


def render_table(reports: list[MetricsReport]) -> str:
    """Markdown table of retrieval results, best value per column in bold."""
    if not reports:
        raise ValueError("need at least one report")
    datasets = list(dict.fromkeys(r.dataset for r in reports))
    strategies = list(dict.fromkeys(r.strategy for r in reports))

    def cell_values(r: MetricsReport) -> list[float]:
        return [r.r_at[k] for k in RECALL_KS] + [r.medr]

    rows: list[tuple[str, list[float | None]]] = []
    for strategy in strategies:
        if strategy:
            rows.append((f"*{strategy}*", [None] * (4 * len(datasets))))
        for modality in _MODALITY_ORDER:
            cells: list[float | None] = []
            found = False
            for dataset in datasets:
                match = [
                    r
                    for r in reports
                    if r.strategy == strategy
                    and r.item_modality == modality
                    and r.dataset == dataset
                ]
                if match:
                    found = True
                    cells.extend(cell_values(match[0]))
                else:
                    cells.extend([None] * 4)
            if found:
                rows.append((_MODALITY_LABEL[modality], cells))

    n_cols = 4 * len(datasets)
    best: list[float | None] = []
    for c in range(n_cols):
        values = [row[1][c] for row in rows if row[1][c] is not None]
        if not values:
            best.append(None)
        elif c % 4 == 3:  # MedR column: lower is better
            best.append(min(values))
        else:
            best.append(max(values))

    header = ["Training Strategy"]
    for dataset in datasets:
        label = f"{dataset} " if dataset else ""
        header += [f"{label}R@1", f"{label}R@5", f"{label}R@10", f"{label}MedR"]
    lines = ["| " + " | ".join(header) + " |",
             "|" + "---|" * len(header)]
    for name, cells in rows:
        rendered = [name]
        for c, v in enumerate(cells):
            if v is None:
                rendered.append("")
                continue
            text = _fmt_medr(v) if c % 4 == 3 else _fmt_recall(v)
            if best[c] is not None and v == best[c]:
                text = f"**{text}**"
            rendered.append(text)
        lines.append("| " + " | ".join(rendered) + " |")
    return "\n".join(lines) + "\n"


def write_csv(reports: list[MetricsReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "item_modality", "dataset",
                         "r_at_1", "r_at_5", "r_at_10", "medr", "n_queries"])
        for r in reports:
            writer.writerow([
                r.strategy, r.item_modality.value, r.dataset,
                f"{r.r_at[1]:.2f}", f"{r.r_at[5]:.2f}", f"{r.r_at[10]:.2f}",
                f"{r.medr:g}", r.n_queries,
            ])


def plot_recalls(reports: list[MetricsReport], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = [
        f"{r.strategy + ' ' if r.strategy else ''}{_MODALITY_LABEL[r.item_modality]}"
        f"{' / ' + r.dataset if r.dataset else ''}"
        for r in reports
    ]
    x = range(len(reports))
    width = 0.25
    for j, k in enumerate(RECALL_KS):
        ax.bar([i + (j - 1) * width for i in x], [r.r_at[k] for r in reports],
               width, label=f"R@{k}")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("Recall (%)")
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_medr(reports: list[MetricsReport], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = [
        f"{r.strategy + ' ' if r.strategy else ''}{_MODALITY_LABEL[r.item_modality]}"
        f"{' / ' + r.dataset if r.dataset else ''}"
        for r in reports
    ]
    ax.bar(range(len(reports)), [r.medr for r in reports], color="#4878d0")
    ax.set_xticks(range(len(reports)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("Median rank (lower is better)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(reports: list[MetricsReport], md_path: str | Path) -> list[Path]:
    """Markdown table plus CSV and figures alongside; returns written paths."""
    md_path = Path(md_path)
    md_path.parent.mkdir(parents=True, exist_ok=True)
    stem = md_path.with_suffix("")
    csv_path = stem.with_suffix(".csv")
    recall_png = Path(f"{stem}_recall.png")
    medr_png = Path(f"{stem}_medr.png")

    md_path.write_text("# Text-to-music retrieval\n\n" + render_table(reports))
    write_csv(reports, csv_path)
    plot_recalls(reports, recall_png)
    plot_medr(reports, medr_png)
    return [md_path, csv_path, recall_png, medr_png]


def plot_training_curves(log_path: str | Path, out_path: str | Path) -> None:
    """Loss and temperature over steps from a run's log.jsonl."""
    steps, losses, taus = [], [], []
    with open(log_path) as fh:
        for line in fh:
            rec = json.loads(line)
            steps.append(rec["step"])
            losses.append(rec["loss"])
            taus.append(rec["tau"])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(steps, losses)
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax2.plot(steps, taus, color="#d65f5f")
    ax2.set_xlabel("step")
    ax2.set_ylabel("temperature")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
