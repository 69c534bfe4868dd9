"""Figure rendering for sweep and workload CSV artifacts.

Charts are rendered with matplotlib's Agg backend and written as SVG.
Reruns must be byte-identical, so the SVG hash salt is pinned and the
date stamp is stripped from every file.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import ConfigError  # noqa: E402
from .model import SWEEP_HEADER  # noqa: E402
from .workload import RESULTS_HEADER  # noqa: E402

HASH_SALT = "spectool"

# the salt seeds clip-path ids; a fixed value keeps reruns byte-identical
matplotlib.rcParams["svg.hashsalt"] = HASH_SALT


def save_figure(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _new_figure():
    return plt.figure(figsize=(6.0, 4.0))


def _parse_csv(text: str, expected_header: str) -> list[dict]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != expected_header:
        found = lines[0].strip() if lines else "<empty file>"
        raise ConfigError(f"expected header {expected_header!r}, found {found!r}")
    reader = csv.DictReader(io.StringIO(text))
    rows = [dict(r) for r in reader]
    if not rows:
        raise ConfigError("no data rows to plot")
    return rows


def parse_sweep(text: str) -> list[dict]:
    rows = _parse_csv(text, SWEEP_HEADER)
    return [{k: float(v) for k, v in r.items()} for r in rows]


def parse_results(text: str) -> list[dict]:
    rows = _parse_csv(text, RESULTS_HEADER)
    out = []
    for r in rows:
        parsed = dict(r)
        for key in ("alpha", "tool_mean", "throughput", "time_saved_pct", "hit_rate"):
            parsed[key] = float(r[key])
        parsed["extra_cost"] = float(r["extra_cost"]) if r["extra_cost"] else None
        out.append(parsed)
    return out


def detect_kind(text: str) -> str:
    first = text.splitlines()[0].strip() if text.splitlines() else ""
    if first == SWEEP_HEADER:
        return "sweep"
    if first == RESULTS_HEADER:
        return "results"
    raise ConfigError(f"unrecognized CSV header {first!r}")


def _fmt(value: float) -> str:
    return format(value, "g")


def plot_sweep(rows: list[dict], out_dir: Path) -> list[Path]:
    """One speedup heatmap (accept rate x draft ratio) per tool time."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    tool_times = sorted({r["T"] for r in rows})
    for t in tool_times:
        subset = [r for r in rows if r["T"] == t]
        alphas = sorted({r["alpha"] for r in subset})
        ratios = sorted({r["g_over_G"] for r in subset})
        grid = [
            [
                next(
                    (r["speedup"] for r in subset if r["alpha"] == a and r["g_over_G"] == g),
                    float("nan"),
                )
                for a in alphas
            ]
            for g in ratios
        ]
        fig = _new_figure()
        ax = fig.add_subplot(111)
        image = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
        ax.set_xticks(range(len(alphas)), [_fmt(a) for a in alphas])
        ax.set_yticks(range(len(ratios)), [_fmt(g) for g in ratios])
        ax.set_xlabel("accept rate")
        ax.set_ylabel("draft/main latency ratio")
        ax.set_title(f"client speedup, tool time {_fmt(t)}s")
        fig.colorbar(image, ax=ax)
        path = out_dir / f"speedup_tool_{_fmt(t)}.svg"
        save_figure(fig, path)
        written.append(path)
    return written


def _lines_by_mode(rows: list[dict], metric: str, ax) -> None:
    modes = sorted({r["mode"] for r in rows})
    for mode in modes:
        points: dict[float, list[float]] = {}
        for r in rows:
            if r["mode"] != mode or r[metric] is None:
                continue
            points.setdefault(r["tool_mean"], []).append(r[metric])
        if not points:
            continue
        xs = sorted(points)
        ys = [sum(points[x]) / len(points[x]) for x in xs]
        ax.plot(xs, ys, marker="o", label=mode)
    ax.set_xlabel("tool latency mean (s)")
    ax.legend()


def plot_results(rows: list[dict], out_dir: Path) -> list[Path]:
    """Per-metric line charts against tool latency, one series per mode."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    metrics = [
        ("time_saved_pct", "time saved (%)"),
        ("throughput", "tokens per second"),
        ("hit_rate", "speculation hit rate"),
    ]
    if any(r["extra_cost"] is not None for r in rows):
        metrics.append(("extra_cost", "draft spend per 100 turns"))
    for metric, label in metrics:
        fig = _new_figure()
        ax = fig.add_subplot(111)
        _lines_by_mode(rows, metric, ax)
        ax.set_ylabel(label)
        ax.set_title(f"{label} by mode")
        path = out_dir / f"{metric}.svg"
        save_figure(fig, path)
        written.append(path)
    return written


def render_csv(text: str, out_dir: Path) -> list[Path]:
    """Dispatch on the CSV header and render the matching chart set."""
    kind = detect_kind(text)
    if kind == "sweep":
        return plot_sweep(parse_sweep(text), out_dir)
    return plot_results(parse_results(text), out_dir)
