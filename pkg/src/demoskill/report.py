"""Report rendering: delimited results, text tables, and matplotlib figures."""

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

RESULT_FIELDS = ("template", "configuration", "runs", "successes", "success_rate")


def write_results_csv(rows: list[dict], path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in RESULT_FIELDS})
    return path


def format_results_table(rows: list[dict]) -> str:
    widths = [14, 14, 6, 10, 12]
    header = ["template", "config", "runs", "successes", "rate"]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        cells = [row["template"], row["configuration"], str(row["runs"]),
                 str(row["successes"]), f"{row['success_rate']:.2f}"]
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines) + "\n"


def render_success_chart(rows: list[dict], path):
    """Grouped bar chart of success rates per template and configuration."""
    templates = sorted({r["template"] for r in rows})
    configs = sorted({r["configuration"] for r in rows})
    fig, ax = plt.subplots(figsize=(8, 4.5))
    width = 0.8 / max(len(configs), 1)
    x = np.arange(len(templates))
    for i, config in enumerate(configs):
        rates = []
        for t in templates:
            match = [r for r in rows if r["template"] == t and r["configuration"] == config]
            rates.append(match[0]["success_rate"] if match else 0.0)
        ax.bar(x + i * width, rates, width=width, label=config)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(templates, rotation=15)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("success rate")
    ax.legend()
    ax.set_title("task success per template")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_distance_series(series_by_object: dict, epsilon: float, path,
                           windows: dict | None = None):
    """Hand-object distance curves with the contact threshold marked."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for oid, series in sorted(series_by_object.items()):
        ts = [t for t, _ in series]
        ds = [d for _, d in series]
        ax.plot(ts, ds, label=oid)
        for start, end in (windows or {}).get(oid, []):
            ax.axvspan(ts[start], ts[end], alpha=0.15)
    ax.axhline(epsilon, linestyle="--", linewidth=1, label="epsilon")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("min cloud distance [m]")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def _bbox_rect(ax, extents, axes_idx, **kw):
    half = np.asarray(extents, dtype=float) / 2
    a, b = axes_idx
    rect = plt.Rectangle((-half[a], -half[b]), 2 * half[a], 2 * half[b],
                         fill=False, **kw)
    ax.add_patch(rect)


def render_scene_figure(scene: dict, path) -> list[str]:
    """Two-panel (front/top) projection of an annotated interaction scene.

    Usable as the learner's optional image renderer.
    """
    extents = scene.get("object", {}).get("extents", [1, 1, 1])
    panels = {"front": (0, 2), "top": (0, 1)}
    fig, axes = plt.subplots(1, 2, figsize=(9, 4.5))
    for ax, (name, axes_idx) in zip(axes, panels.items()):
        _bbox_rect(ax, extents, axes_idx, color="k", linewidth=1.2)
        a, b = axes_idx
        for notation in scene.get("notations", []):
            p = np.asarray(notation["position_norm"]) * np.asarray(extents)
            ax.plot(p[a], p[b], "o", color="tab:red", markersize=4)
            ax.annotate(notation["label"], (p[a], p[b]), fontsize=8,
                        textcoords="offset points", xytext=(3, 3))
        kps = scene.get("keypoints", [])
        if kps:
            pts = np.array([k["position"] for k in kps])
            ax.plot(pts[:, a], pts[:, b], "-o", color="tab:blue", markersize=3)
            ax.annotate(kps[0]["label"], (pts[0, a], pts[0, b]), fontsize=7)
            ax.annotate(kps[-1]["label"], (pts[-1, a], pts[-1, b]), fontsize=7)
        grid = scene.get("grid")
        if grid:
            dom = grid["domain"]
            col_axis, row_axis = grid["axes"][name]
            ext = np.asarray(extents)
            for i in range(grid["n"] + 1):
                frac = i / grid["n"]
                lo, hi = dom[col_axis]
                xval = (lo + frac * (hi - lo)) * ext[a]
                rlo, rhi = dom[row_axis]
                ax.plot([xval, xval], [rlo * ext[b], rhi * ext[b]],
                        color="gray", linewidth=0.4)
            for i in range(grid["m"] + 1):
                frac = i / grid["m"]
                rlo, rhi = dom[row_axis]
                yval = (rlo + frac * (rhi - rlo)) * ext[b]
                clo, chi = dom[col_axis]
                ax.plot([clo * ext[a], chi * ext[a]], [yval, yval],
                        color="gray", linewidth=0.4)
        ax.set_title(f"{name} view")
        ax.set_aspect("equal")
        ax.autoscale()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [str(path)]


def write_report(rows: list[dict], out_dir) -> dict:
    """CSV + text table + chart for an evaluation run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = write_results_csv(rows, out_dir / "results.csv")
    text = format_results_table(rows)
    (out_dir / "results.txt").write_text(text)
    chart = render_success_chart(rows, out_dir / "success_rates.png")
    return {"csv": str(csv_path), "table": str(out_dir / "results.txt"),
            "chart": str(chart), "text": text}
