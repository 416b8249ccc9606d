"""Report emission: aligned text tables, line-delimited records, and
matplotlib figures rendered to files next to them."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport
from .pipeline import BenchCell


def format_table(headers: list[str], rows: list[list], title: str | None = None) -> str:
    """Plain-text table with right-aligned numeric columns."""
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4f}" if abs(v) < 1e4 else f"{v:.1f}"
        return str(v)

    cells = [[fmt(v) for v in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(headers)]
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.rjust(w) for h, w in zip(headers, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def write_jsonl(path: str | Path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


# --------------------------------------------------------------------------
# Evaluation report
# --------------------------------------------------------------------------

def eval_table(labeled_reports: list[tuple[str, EvalReport]]) -> str:
    k_values = labeled_reports[0][1].k_values
    headers = ["run"] + [f"minADE_{k}" for k in k_values] + [f"minFDE_{k}" for k in k_values] \
        + [f"MR_{k}" for k in k_values] + ["scenes", "lat_ms_mean"]
    rows = []
    for label, report in labeled_reports:
        agg = report.aggregate()
        row = [label]
        row += [agg[f"minade_{k}"] for k in k_values]
        row += [agg[f"minfde_{k}"] for k in k_values]
        row += [agg[f"mr_{k}"] for k in k_values]
        row += [int(agg["n_scenes"]), agg.get("latency_ms_mean", float("nan"))]
        rows.append(row)
    return format_table(headers, rows, title="evaluation summary")


def save_eval_figure(labeled_reports: list[tuple[str, EvalReport]], path: str | Path) -> None:
    """Metric-vs-K curves per run, one panel per metric family."""
    k_values = list(labeled_reports[0][1].k_values)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    for metric, ax, title in zip(("minade", "minfde", "mr"), axes,
                                 ("minADE_K (m)", "minFDE_K (m)", "miss rate")):
        for label, report in labeled_reports:
            agg = report.aggregate()
            ax.plot(k_values, [agg[f"{metric}_{k}"] for k in k_values], marker="o", label=label)
        ax.set_xlabel("K")
        ax.set_title(title)
        ax.grid(alpha=0.3)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_eval_report(out_dir: str | Path, labeled_reports: list[tuple[str, EvalReport]]) -> dict[str, Path]:
    """Text table, per-scene records, and the figure, side by side."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = eval_table(labeled_reports)
    (out_dir / "report.txt").write_text(table + "\n", encoding="utf-8")
    records = []
    for label, report in labeled_reports:
        for row in report.rows:
            records.append({"run": label, **row})
        records.append({"run": label, "aggregate": True, **report.aggregate()})
    write_jsonl(out_dir / "report.jsonl", records)
    save_eval_figure(labeled_reports, out_dir / "report.png")
    return {
        "table": out_dir / "report.txt",
        "records": out_dir / "report.jsonl",
        "figure": out_dir / "report.png",
    }


# --------------------------------------------------------------------------
# Benchmark report
# --------------------------------------------------------------------------

def bench_tables(cells: list[BenchCell], k: int) -> str:
    m0 = cells[0].m
    panel_a = [c for c in cells if c.m == m0]
    smallest = min(c.steps for c in cells)
    panel_b = [c for c in cells if c.steps == smallest]
    headers_a = ["steps", "method", f"minADE_{k}", f"minFDE_{k}", "latency_ms"]
    rows_a = [[c.steps, c.method, c.metrics[f"minade_{k}"], c.metrics[f"minfde_{k}"], c.latency_ms]
              for c in panel_a]
    headers_b = ["M", f"minADE_{k}", f"minFDE_{k}", "latency_ms"]
    rows_b = [[c.m, c.metrics[f"minade_{k}"], c.metrics[f"minfde_{k}"], c.latency_ms]
              for c in panel_b]
    return (
        format_table(headers_a, rows_a, title=f"denoising steps (M={m0})")
        + "\n\n"
        + format_table(headers_b, rows_b, title=f"oversampling size (steps={smallest})")
    )


def save_bench_figure(cells: list[BenchCell], k: int, path: str | Path) -> None:
    """Two-panel grid: columnwise-normalized cells, green (better) to red."""
    m0 = cells[0].m
    panel_a = [c for c in cells if c.m == m0]
    smallest = min(c.steps for c in cells)
    panel_b = [c for c in cells if c.steps == smallest]

    metric_keys = [f"minade_{k}", f"minfde_{k}", "latency"]
    col_titles = [f"minADE_{k}", f"minFDE_{k}", "latency (ms)"]

    def values(cell: BenchCell, key: str) -> float:
        return cell.latency_ms if key == "latency" else cell.metrics[key]

    all_cols = {key: [values(c, key) for c in panel_a + panel_b] for key in metric_keys}

    fig, axes = plt.subplots(1, 2, figsize=(11, 0.6 * max(len(panel_a), len(panel_b)) + 2))
    for ax, panel, row_label, rows in (
        (axes[0], panel_a, "steps", [str(c.steps) for c in panel_a]),
        (axes[1], panel_b, "M", [str(c.m) for c in panel_b]),
    ):
        grid = np.zeros((len(panel), len(metric_keys)))
        for j, key in enumerate(metric_keys):
            col = np.asarray([values(c, key) for c in panel])
            lo, hi = min(all_cols[key]), max(all_cols[key])
            grid[:, j] = 0.5 if hi == lo else (col - lo) / (hi - lo)
        ax.imshow(grid, cmap="RdYlGn_r", vmin=0, vmax=1, aspect="auto")
        ax.set_xticks(range(len(col_titles)), col_titles)
        ax.set_yticks(range(len(panel)), rows)
        ax.set_ylabel(row_label)
        for i, c in enumerate(panel):
            for j, key in enumerate(metric_keys):
                ax.text(j, i, f"{values(c, key):.3g}", ha="center", va="center", fontsize=8)
    axes[0].set_title(f"denoising steps (M={m0})")
    axes[1].set_title(f"oversampling size (steps={smallest})")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_bench_report(out_dir: str | Path, cells: list[BenchCell], k: int) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "bench.txt").write_text(bench_tables(cells, k) + "\n", encoding="utf-8")
    write_jsonl(out_dir / "bench.jsonl", [
        {
            "steps": c.steps,
            "method": c.method,
            "m": c.m,
            "latency_ms": c.latency_ms,
            "repeat_latencies_ms": c.repeat_latencies_ms,
            "denoiser_calls": c.denoiser_calls,
            **c.metrics,
        }
        for c in cells
    ])
    save_bench_figure(cells, k, out_dir / "bench.png")
    return {
        "table": out_dir / "bench.txt",
        "records": out_dir / "bench.jsonl",
        "figure": out_dir / "bench.png",
    }
