"""Report rendering: delimited metric tables plus matplotlib figures."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


class ReportError(ValueError):
    pass


def metrics_rows(report: dict) -> list[tuple[str, str, str]]:
    """(section, metric, value) rows for the overall and per-mode metrics."""
    rows: list[tuple[str, str, str]] = []
    for name in sorted(report.get("metrics", {})):
        value = report["metrics"][name]
        rows.append(("overall", name, "" if value is None else f"{value:.4f}"))
    for mode in sorted(report.get("modes", {})):
        for name in sorted(report["modes"][mode]):
            value = report["modes"][mode][name]
            rows.append((mode, name, "" if value is None else f"{value:.4f}"))
    return rows


def render_table(report: dict, delimiter: str = "\t") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    writer.writerow(["section", "metric", "value"])
    writer.writerows(metrics_rows(report))
    if report.get("ranking"):
        writer.writerow([])
        writer.writerow(["ranking", "->".join(report["ranking"]), ""])
    return buf.getvalue()


def _metrics_figure(report: dict, path: Path) -> None:
    metrics = {k: v for k, v in report.get("metrics", {}).items() if v is not None}
    if not metrics:
        return
    names = sorted(metrics)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(range(len(names)), [metrics[n] for n in names], color="#4878a8")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy / recovery")
    ax.set_title("pipeline metrics")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _modes_figure(report: dict, path: Path) -> None:
    modes = report.get("modes", {})
    if len(modes) < 2:
        return
    names = list(report.get("ranking") or sorted(modes))
    accs = [modes[m].get("task_accuracy") or 0.0 for m in names]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(names)), accs, color="#6a9a58")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=15, fontsize=9)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("downstream task accuracy")
    ax.set_title("supervision modes")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _curves_figure(report: dict, path: Path) -> None:
    curves = report.get("loss_curves", {})
    if not curves:
        return
    fig, ax = plt.subplots(figsize=(7, 4))
    for name in sorted(curves):
        ax.plot(range(1, len(curves[name]) + 1), curves[name], label=name, linewidth=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title("training loss")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report(
    report: dict,
    out_dir: str | Path,
    fmt: str = "table",
    delimiter: str = "\t",
) -> dict[str, Path]:
    """Write the delimited metrics table and figures into ``out_dir``.

    Returns the written paths. ``fmt="json"`` writes the metrics document
    only (no figures).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    if fmt == "json":
        path = out_dir / "metrics.json"
        doc = {k: report.get(k) for k in ("config_digest", "seeds", "metrics", "modes", "ranking")}
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        written["metrics"] = path
        return written
    if fmt != "table":
        raise ReportError(f"unknown report format {fmt!r}")
    table_path = out_dir / "metrics.tsv"
    table_path.write_text(render_table(report, delimiter), encoding="utf-8")
    written["table"] = table_path
    figure_specs = [
        ("metrics_figure", out_dir / "metrics.png", _metrics_figure),
        ("modes_figure", out_dir / "modes.png", _modes_figure),
        ("curves_figure", out_dir / "loss_curves.png", _curves_figure),
    ]
    for name, path, fn in figure_specs:
        fn(report, path)
        if path.exists():
            written[name] = path
    return written
