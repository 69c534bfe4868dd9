"""Command line front end: sweeps, simulations, serving, and plotting.

Exit codes follow one convention everywhere: 0 on success, 1 when a
run fails midway (simulation error, bind failure), 2 for usage and
configuration mistakes (malformed flags, bad scenario files, wrong
CSV headers). The SPECTOOL_SEED environment variable overrides the
configured seed for any command that runs a simulation.
"""

from __future__ import annotations

import os
import socket
import sys
from dataclasses import replace
from pathlib import Path

import click

from .errors import ConfigError, EmptyGrid, SpectoolError
from .model import SWEEP_HEADER, sweep_client_speedup
from .orchestrator import ENGINE_MODES, run_engine_scenario
from .workload import (
    MODES,
    RESULTS_HEADER,
    WorkloadConfig,
    format_value,
    load_scenario,
    records_jsonl,
    results_csv,
    run_workload,
    simulate_modes,
    time_saved,
)


def fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def parse_range(text: str) -> list[float]:
    """Inclusive numeric range `start:stop:step`, or a single value."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return [float(parts[0])]
        if len(parts) != 3:
            raise ValueError("expected `value` or `start:stop:step`")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("step must be positive")
        values = []
        index = 0
        # half-step slack keeps the endpoint in despite float accumulation
        while start + index * step <= stop + step * 1e-9:
            values.append(round(start + index * step, 12))
            index += 1
        return values
    except ValueError as exc:
        raise ConfigError(f"bad range {text!r}: {exc}") from exc


def seed_override(seed: int | None) -> int | None:
    if seed is not None:
        return seed
    env = os.environ.get("SPECTOOL_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"SPECTOOL_SEED must be an integer, got {env!r}") from exc


def write_text(path: str | None, text: str) -> None:
    if path is None:
        click.echo(text, nl=False)
    else:
        Path(path).write_bytes(text.encode())


@click.group()
def main() -> None:
    """Speculative tool execution: models, simulators, service, reports."""


@main.command("model-sweep")
@click.option("--alpha", default="0:1:0.1", show_default=True, help="Accept-rate range start:stop:step.")
@click.option("--g-ratio", default="0.25", show_default=True, help="Draft/main latency ratio range.")
@click.option("--tool-time", default="1.0", show_default=True, help="Tool latency range, seconds.")
@click.option("--G", "gen_seconds", default=2.0, show_default=True, type=float, help="Main-model latency per turn, seconds.")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="CSV destination; stdout when omitted.")
@click.option("--plot", "plot_dir", default=None, type=click.Path(file_okay=False), help="Also render heatmaps into this directory.")
def cmd_model_sweep(alpha, g_ratio, tool_time, gen_seconds, out, plot_dir) -> None:
    """Closed-form client speedup over a parameter grid."""
    try:
        rows = sweep_client_speedup(
            parse_range(alpha), parse_range(g_ratio), parse_range(tool_time), gen_seconds
        )
    except (ConfigError, EmptyGrid, SpectoolError) as exc:
        fail(str(exc), 2)
    text = SWEEP_HEADER + "\n" + "\n".join(
        ",".join(format_value(v) for v in row) for row in rows
    ) + "\n"
    write_text(out, text)
    if plot_dir is not None:
        from .report import render_csv

        for path in render_csv(text, Path(plot_dir)):
            click.echo(f"wrote {path}", err=True)


def _engine_report(scenario, draft_latency: float, seed: int) -> list[str]:
    lines = []
    for mode in ENGINE_MODES:
        report = run_engine_scenario(
            scenario, mode, draft_latency=draft_latency, seed=seed
        )
        lines.append(
            f"engine {mode} total_seconds={format_value(report.measured_seconds)} "
            f"fates={','.join(report.fates) or '-'}"
        )
    return lines


@main.command("simulate")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Scenario JSON file.")
@click.option("--mode", "mode_list", default=None, help="Comma-separated subset of baseline,client_spec,engine_spec.")
@click.option("--out", default="results.csv", show_default=True, type=click.Path(dir_okay=False), help="Metrics CSV destination.")
@click.option("--records", "records_path", default=None, type=click.Path(dir_okay=False), help="Per-task JSONL log; derived from --out when omitted.")
@click.option("--seed", default=None, type=int, help="Override the scenario seed.")
@click.option("--plot", "plot_dir", default=None, type=click.Path(file_okay=False), help="Also render charts into this directory.")
def cmd_simulate(scenario_path, mode_list, out, records_path, seed, plot_dir) -> None:
    """Run a workload scenario, write paired metrics and task logs."""
    try:
        doc = load_scenario(Path(scenario_path).read_text())
        seed = seed_override(seed)
        if "engine_scenario" in doc:
            scenario = doc["engine_scenario"]
            for line in _engine_report(scenario, doc["engine_draft_latency"], seed or 0):
                click.echo(line)
            if "workload" not in doc:
                return
        if "workload" not in doc:
            raise ConfigError("scenario has no workload section")
        config: WorkloadConfig = doc["workload"]
        if seed is not None:
            config = replace(config, seed=seed)
        if mode_list is not None:
            modes = [m.strip() for m in mode_list.split(",") if m.strip()]
        else:
            modes = doc.get("modes", [config.mode])
        for mode in modes:
            if mode not in MODES:
                raise ConfigError(f"unknown mode {mode!r}")
    except SpectoolError as exc:
        fail(str(exc), 2)

    try:
        metrics, runs = simulate_modes(config, modes, prices=doc.get("prices"))
    except SpectoolError as exc:
        fail(f"simulation failed: {exc}", 1)
    csv_text = results_csv(metrics)
    write_text(out, csv_text)
    if records_path is None:
        records_path = str(Path(out).with_suffix(".records.jsonl"))
    log = "".join(records_jsonl(runs[key], label=key) for key in sorted(runs))
    write_text(records_path, log)
    click.echo(f"wrote {out} and {records_path}", err=True)
    if plot_dir is not None:
        from .report import render_csv

        for path in render_csv(csv_text, Path(plot_dir)):
            click.echo(f"wrote {path}", err=True)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8077, show_default=True, type=int)
def cmd_serve(host, port) -> None:
    """Serve the tool-output cache API over HTTP on a wall clock."""
    import time

    import uvicorn

    from .engine import ToolCacheStore
    from .service import create_app

    started = time.monotonic()
    store = ToolCacheStore(clock=lambda: time.monotonic() - started)
    app = create_app(store)
    try:
        sock = socket.create_server((host, port))
    except OSError as exc:
        fail(f"cannot bind {host}:{port}: {exc}", 1)
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    try:
        server.run(sockets=[sock])
    finally:
        sock.close()


@main.command("compare")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Scenario JSON file.")
@click.option("--mode", "mode_list", default="client_spec", show_default=True, help="Comma-separated speculative modes to pit against baseline.")
@click.option("--seed", default=None, type=int, help="Override the scenario seed.")
def cmd_compare(scenario_path, mode_list, seed) -> None:
    """Paired baseline-versus-speculation table for one scenario."""
    try:
        doc = load_scenario(Path(scenario_path).read_text())
        if "workload" not in doc:
            raise ConfigError("scenario has no workload section")
        config: WorkloadConfig = doc["workload"]
        seed = seed_override(seed)
        if seed is not None:
            config = replace(config, seed=seed)
        modes = [m.strip() for m in mode_list.split(",") if m.strip()]
        for mode in modes:
            if mode not in MODES or mode == "baseline":
                raise ConfigError(f"compare wants speculative modes, got {mode!r}")
    except SpectoolError as exc:
        fail(str(exc), 2)

    header = f"{'mode':<14} {'baseline_s':>12} {'spec_s':>12} {'saved_pct':>10} {'hit_rate':>9}"
    click.echo(header)
    try:
        for mode in modes:
            run = run_workload(replace(config, mode=mode))
            base = run.paired_baseline
            base_elapsed = sum(a.elapsed for a in base.agents) / len(base.agents)
            mine_elapsed = sum(a.elapsed for a in run.agents) / len(run.agents)
            click.echo(
                f"{mode:<14} {base_elapsed:>12.3f} {mine_elapsed:>12.3f} "
                f"{time_saved(base_elapsed, mine_elapsed):>10.2f} {run.hit_rate:>9.3f}"
            )
    except SpectoolError as exc:
        fail(f"simulation failed: {exc}", 1)


@main.command("plot")
@click.argument("csv_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", default="figures", show_default=True, type=click.Path(file_okay=False), help="Directory for rendered SVG files.")
def cmd_plot(csv_path, out_dir) -> None:
    """Render charts from a sweep or results CSV."""
    from .report import render_csv

    try:
        paths = render_csv(Path(csv_path).read_text(), Path(out_dir))
    except SpectoolError as exc:
        fail(str(exc), 2)
    for path in paths:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
