"""Synthetic agent workloads, paired-run metrics, and CSV emission.

A workload runs M concurrent agents, each working through a sequence of
scripted tasks drawn from a fixed 64-task library (1 to 5 tool turns
per task). Baseline and speculative runs share scripts, tool latencies,
and speculation coin flips, so the time-saved metric isolates what
speculation changed. Two backends: a fixed-latency completion endpoint
("api") and the batched engine simulation ("engine").
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .domain import (
    TOOL_END,
    TOOL_START,
    Token,
    TokenKind,
    ToolCall,
    canonical_key,
)
from .engine import EngineConfig, EngineSim
from .errors import ConfigError, InvalidBaseline, InvalidWindow
from .model import EngineScenario, TurnProfile
from .mocks import GenerationScript, SpecConfig, ToolRuntime, derived_rng
from .orchestrator import (
    AgentResult,
    AgentSetup,
    EngineClient,
    run_baseline,
    run_speculative,
    uniform_hops,
)
from .sim import Simulator, spawn

MODES = ("baseline", "client_spec", "engine_spec")
BACKENDS = ("api", "engine")

RESULTS_HEADER = "mode,agents,alpha,lambda,tool_mean,rep,throughput,time_saved_pct,hit_rate,extra_cost"


# -- scalar metrics ----------------------------------------------------------


def time_saved(t_base: float, t_spec: float) -> float:
    """Percent of the baseline makespan that speculation removed."""
    if t_base <= 0:
        raise InvalidBaseline(f"baseline time must be positive, got {t_base!r}")
    return 100.0 * (t_base - t_spec) / t_base


def throughput(tokens: int, elapsed: float) -> float:
    """Generated tokens per second over a measurement window."""
    if elapsed <= 0:
        raise InvalidWindow(f"window must be positive, got {elapsed!r}")
    return tokens / elapsed


@dataclass(frozen=True)
class PriceSheet:
    """Per-million-token prices for the two endpoints."""

    main_input: float
    main_output: float
    draft_input: float
    draft_output: float

    def __post_init__(self) -> None:
        if min(self.main_input, self.main_output, self.draft_input, self.draft_output) < 0:
            raise ConfigError("prices cannot be negative")


def extra_cost(
    usage: list[tuple[str, int, int]],
    prices: PriceSheet | None,
    tool_turns: int,
    prefix_discount: float = 1.0,
) -> float:
    """Draft-endpoint spend normalized to 100 agent turns.

    Draft input tokens are billed at full prompt length per sample;
    prefix_discount < 1 models a provider that charges cached prompt
    prefixes at a fraction of the listed input price.
    """
    if prices is None:
        raise ConfigError("a price sheet is required for cost accounting")
    if not 0.0 <= prefix_discount <= 1.0:
        raise ConfigError("prefix_discount must lie in [0, 1]")
    if tool_turns <= 0:
        raise ConfigError("cost is normalized per tool turn; need at least one")
    spend = 0.0
    for endpoint, input_tokens, output_tokens in usage:
        if endpoint == "draft":
            spend += input_tokens * prefix_discount * prices.draft_input / 1e6
            spend += output_tokens * prices.draft_output / 1e6
    return spend / tool_turns * 100.0


def main_cost(usage: list[tuple[str, int, int]], prices: PriceSheet) -> float:
    """Main-endpoint spend for the same usage rows, for comparisons."""
    spend = 0.0
    for endpoint, input_tokens, output_tokens in usage:
        if endpoint == "main":
            spend += input_tokens * prices.main_input / 1e6
            spend += output_tokens * prices.main_output / 1e6
    return spend


# -- task library ------------------------------------------------------------

TASK_LIBRARY_SIZE = 64

TOOL_ROSTER = (
    "web_search",
    "read_file",
    "run_query",
    "fetch_url",
    "list_dir",
    "get_weather",
    "calculate",
    "translate",
)


@dataclass(frozen=True)
class TaskSpec:
    """One scripted task: token turns plus the tool outputs it will need."""

    library_index: int
    script: GenerationScript
    fixtures: dict
    tool_turns: int


def build_task(library_index: int, seed: int = 0) -> TaskSpec:
    """Deterministic task: 1-5 tool turns, varied reasoning and outputs."""
    rng = derived_rng(seed, "task", library_index)
    tool_turns = 1 + library_index % 5
    turns: list[list[Token]] = []
    fixtures: dict = {}
    for j in range(tool_turns):
        name = TOOL_ROSTER[rng.randrange(len(TOOL_ROSTER))]
        call = ToolCall.of(name, q=f"task{library_index} step{j}")
        reason = [Token(TokenKind.TEXT, "mull ")] * rng.randint(4, 24)
        payload = json.dumps(dict(call.args))
        span = [TOOL_START, Token(TokenKind.TEXT, f"{call.name} {payload}"), TOOL_END]
        turns.append(reason + span)
        fixtures[canonical_key(call)] = (
            f"{name} result {rng.randrange(1000)} for task {library_index} step {j}"
        )
    closing = [Token(TokenKind.TEXT, "answer ")] * rng.randint(2, 6)
    turns.append(closing + [Token(TokenKind.EOS)])
    return TaskSpec(library_index, GenerationScript(turns), fixtures, tool_turns)


def build_task_library(seed: int = 0, size: int = TASK_LIBRARY_SIZE) -> list[TaskSpec]:
    return [build_task(i, seed) for i in range(size)]


def verify_fixtures(tasks: list[TaskSpec], fixtures: dict) -> None:
    """Fail fast if any scripted call lacks a canned output."""
    for task in tasks:
        for j in range(task.tool_turns):
            key = canonical_key(task.script.tool_call_at(j))
            if key not in fixtures:
                raise ConfigError(
                    f"missing fixture for task {task.library_index} turn {j}"
                )


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class WorkloadConfig:
    """Knobs for one workload invocation.

    gen_seconds is the fixed main-model latency on the api backend; the
    engine backend instead charges prefill_rate/decode_rate per token.
    samples is the number of concurrent draft guesses per turn.
    """

    agents: int = 1
    tasks_per_agent: int = 32
    tool_mean: float = 1.0
    tool_stddev: float = 0.0
    gen_seconds: float = 2.0
    draft_seconds: float = 0.5
    accept_rate: float = 0.8
    samples: int = 1
    mode: str = "baseline"
    backend: str = "api"
    seed: int = 0
    repetitions: int = 5
    dispatch_overhead: float = 0.0
    prefill_rate: float = 0.001
    decode_rate: float = 0.02
    prompt_tokens: int = 256
    prefix_discount: float = 1.0

    def __post_init__(self) -> None:
        if self.agents < 1:
            raise ConfigError("need at least one agent")
        if self.tasks_per_agent < 1:
            raise ConfigError("need at least one task per agent")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.mode == "engine_spec" and self.backend != "engine":
            raise ConfigError("engine_spec requires the engine backend")
        if not 0.0 <= self.accept_rate <= 1.0:
            raise ConfigError("accept_rate must lie in [0, 1]")
        if self.samples < 0:
            raise ConfigError("samples cannot be negative")
        if self.repetitions < 1:
            raise ConfigError("need at least one repetition")
        if min(self.tool_mean, self.gen_seconds, self.draft_seconds) <= 0:
            raise ConfigError("latencies must be positive")
        if self.tool_stddev < 0 or self.dispatch_overhead < 0:
            raise ConfigError("spread and overhead cannot be negative")

    def spec_config(self) -> SpecConfig:
        return SpecConfig(
            latency_seconds=self.draft_seconds,
            accuracy=self.accept_rate,
            samples=self.samples,
            seed=self.seed,
        )


def task_assignment(agent_index: int, slot: int) -> int:
    """Library index for one agent slot; independent of the agent count."""
    return (agent_index * 13 + slot) % TASK_LIBRARY_SIZE


# -- running -----------------------------------------------------------------


@dataclass
class AgentSummary:
    agent_index: int
    elapsed: float
    tokens: int
    tool_turns: int
    hits: int

    @property
    def throughput(self) -> float:
        return throughput(self.tokens, self.elapsed)


@dataclass
class WorkloadRun:
    """One simulated pass of a config, plus its paired baseline twin."""

    config: WorkloadConfig
    agents: list[AgentSummary]
    task_results: dict[str, AgentResult]
    usage: list[tuple[str, int, int]]
    fates: dict[str, list[str]] = field(default_factory=dict)
    paired_baseline: "WorkloadRun | None" = None

    @property
    def total_tool_turns(self) -> int:
        return sum(a.tool_turns for a in self.agents)

    @property
    def hit_rate(self) -> float:
        turns = self.total_tool_turns
        return sum(a.hits for a in self.agents) / turns if turns else 0.0

    @property
    def mean_throughput(self) -> float:
        return sum(a.throughput for a in self.agents) / len(self.agents)

    def per_agent_time_saved(self) -> list[float]:
        if self.paired_baseline is None:
            return [0.0 for _ in self.agents]
        return [
            time_saved(base.elapsed, mine.elapsed)
            for base, mine in zip(self.paired_baseline.agents, self.agents)
        ]

    @property
    def mean_time_saved(self) -> float:
        saved = self.per_agent_time_saved()
        return sum(saved) / len(saved)


def _execute(config: WorkloadConfig) -> WorkloadRun:
    library = build_task_library(config.seed)
    fixtures: dict = {}
    for task in library:
        fixtures.update(task.fixtures)
    verify_fixtures(library, fixtures)
    runtime = ToolRuntime(
        fixtures, mean=config.tool_mean, stddev=config.tool_stddev, seed=config.seed
    )
    sim = Simulator()
    usage: list[tuple[str, int, int]] = []
    task_results: dict[str, AgentResult] = {}
    fates: dict[str, list[str]] = {}
    plan: list[tuple[int, str, TaskSpec]] = []
    for agent_index in range(config.agents):
        for slot in range(config.tasks_per_agent):
            task = library[task_assignment(agent_index, slot)]
            plan.append((agent_index, f"a{agent_index}_s{slot}", task))

    engine: EngineSim | None = None
    if config.backend == "engine":
        engine = EngineSim(
            sim,
            EngineConfig(
                prefill_rate=config.prefill_rate,
                decode_rate=config.decode_rate,
                batch_size=max(64, config.agents),
                prefix_cache=True,
                tool_cache=config.mode == "engine_spec",
            ),
        )

    def make_setup(task_id: str, task: TaskSpec) -> AgentSetup:
        script = task.script
        if config.backend == "api":
            script = GenerationScript(script.turns, fixed_latency=config.gen_seconds)
        return AgentSetup(
            script=script,
            runtime=runtime,
            task_id=task_id,
            prompt_tokens=config.prompt_tokens,
            dispatch_overhead=config.dispatch_overhead,
            usage=usage,
        )

    def start_task(task_id: str, task: TaskSpec) -> AgentResult:
        setup = make_setup(task_id, task)
        if config.backend == "api":
            if config.mode == "baseline":
                return run_baseline(sim, setup)
            return run_speculative(sim, setup, config.spec_config())
        client = EngineClient(
            sim,
            engine,
            setup,
            spec=None if config.mode == "baseline" else config.spec_config(),
            hops=uniform_hops(config.dispatch_overhead),
            submit_to_engine=config.mode == "engine_spec",
        )
        client.start()
        return client.result

    def agent_loop(agent_index: int):
        for a, task_id, task in plan:
            if a != agent_index:
                continue
            result = start_task(task_id, task)
            task_results[task_id] = result
            yield result.completion
            if engine is not None:
                fates[task_id] = list(engine.sequences[task_id].fates)

    for agent_index in range(config.agents):
        spawn(agent_loop(agent_index))
    sim.run_until_idle()

    agents = []
    for agent_index in range(config.agents):
        ids = [task_id for a, task_id, _ in plan if a == agent_index]
        results = [task_results[t] for t in ids]
        if not all(r.done for r in results):
            raise ConfigError(f"agent {agent_index} did not finish all tasks")
        agents.append(
            AgentSummary(
                agent_index,
                elapsed=max(r.finished_at for r in results),
                tokens=sum(r.tokens_emitted for r in results),
                tool_turns=sum(len(r.outcomes) for r in results),
                hits=sum(r.hits for r in results),
            )
        )
    return WorkloadRun(config, agents, task_results, usage, fates)


def run_workload(config: WorkloadConfig) -> WorkloadRun:
    """Simulate one config; non-baseline modes carry a paired baseline twin."""
    run = _execute(config)
    if config.mode != "baseline":
        run.paired_baseline = _execute(replace(config, mode="baseline"))
    return run


# -- metrics and emission ----------------------------------------------------


@dataclass
class RunMetrics:
    mode: str
    agents: int
    accept_rate: float
    samples: int
    tool_mean: float
    rep: int
    throughput_per_agent: list[float]
    throughput_mean: float
    time_saved_pct: float
    hit_rate: float
    extra_cost_per_100: float | None


def summarize(run: WorkloadRun, rep: int = 0, prices: PriceSheet | None = None) -> RunMetrics:
    cfg = run.config
    cost = None
    if prices is not None:
        cost = extra_cost(run.usage, prices, run.total_tool_turns, cfg.prefix_discount)
    return RunMetrics(
        mode=cfg.mode,
        agents=cfg.agents,
        accept_rate=cfg.accept_rate,
        samples=cfg.samples,
        tool_mean=cfg.tool_mean,
        rep=rep,
        throughput_per_agent=[a.throughput for a in run.agents],
        throughput_mean=run.mean_throughput,
        time_saved_pct=run.mean_time_saved,
        hit_rate=run.hit_rate,
        extra_cost_per_100=cost,
    )


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def metrics_row(m: RunMetrics) -> str:
    cells = [
        m.mode,
        m.agents,
        m.accept_rate,
        m.samples,
        m.tool_mean,
        m.rep,
        m.throughput_mean,
        m.time_saved_pct,
        m.hit_rate,
        m.extra_cost_per_100,
    ]
    return ",".join(format_value(c) for c in cells)


def results_csv(metrics: list[RunMetrics]) -> str:
    return "\n".join([RESULTS_HEADER] + [metrics_row(m) for m in metrics]) + "\n"


def records_jsonl(run: WorkloadRun, label: str | None = None) -> str:
    """Per-task record lines: durations, hits, and engine fates if any."""
    lines = []
    for task_id in sorted(run.task_results):
        result = run.task_results[task_id]
        record = {
            "task": task_id,
            "mode": result.mode,
            "seconds": result.total_seconds,
            "tool_turns": len(result.outcomes),
            "hits": result.hits,
            "tokens": result.tokens_emitted,
        }
        if label is not None:
            record["run"] = label
        if task_id in run.fates:
            record["fates"] = run.fates[task_id]
        lines.append(json.dumps(record, sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n" if lines else ""


def simulate_modes(
    config: WorkloadConfig,
    modes: list[str],
    prices: PriceSheet | None = None,
) -> tuple[list[RunMetrics], dict[str, WorkloadRun]]:
    """Run each requested mode for each repetition on derived seeds."""
    for mode in modes:
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
    metrics: list[RunMetrics] = []
    runs: dict[str, WorkloadRun] = {}
    for mode in modes:
        for rep in range(config.repetitions):
            cfg = replace(config, mode=mode, seed=config.seed + rep)
            run = run_workload(cfg)
            runs[f"{mode}_rep{rep}"] = run
            metrics.append(summarize(run, rep=rep, prices=prices))
    return metrics, runs


# -- scenario files ----------------------------------------------------------


def config_from_dict(data: dict) -> WorkloadConfig:
    allowed = set(WorkloadConfig.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown workload fields: {sorted(unknown)}")
    try:
        return WorkloadConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"bad workload config: {exc}") from exc


def engine_scenario_from_dict(data: dict) -> EngineScenario:
    if not isinstance(data, dict):
        raise ConfigError("engine_scenario must be a JSON object")
    fields = {k: v for k, v in data.items() if k != "draft_latency"}
    turns = fields.pop("turns", [])
    if not isinstance(turns, list):
        raise ConfigError("engine_scenario turns must be a list")
    try:
        profiles = tuple(TurnProfile(**t) for t in turns)
        return EngineScenario(turns=profiles, **fields)
    except TypeError as exc:
        raise ConfigError(f"bad engine scenario: {exc}") from exc


def load_scenario(text: str) -> dict:
    """Parse a scenario document: workload config plus optional extras.

    Shape: {"workload": {...}, "modes": [...], "prices": {...},
    "engine_scenario": {...}}; every section optional except workload
    when modes are to be simulated.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    out: dict = {}
    if "workload" in data:
        out["workload"] = config_from_dict(data["workload"])
    if "modes" in data:
        modes = data["modes"]
        if not isinstance(modes, list) or not all(isinstance(m, str) for m in modes):
            raise ConfigError("modes must be a list of strings")
        out["modes"] = modes
    if "prices" in data:
        try:
            out["prices"] = PriceSheet(**data["prices"])
        except TypeError as exc:
            raise ConfigError(f"bad price sheet: {exc}") from exc
    if "engine_scenario" in data:
        out["engine_scenario"] = engine_scenario_from_dict(data["engine_scenario"])
        out["engine_draft_latency"] = data["engine_scenario"].get("draft_latency", 0.25)
    return out
