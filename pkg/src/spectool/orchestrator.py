"""Agent loops that race a cheap draft model against the main model.

Two deployment shapes share the machinery here. Against a plain
completion endpoint, the client fires draft samples alongside each main
generation, pre-executes guessed tool calls, and serves the real call
from a matching in-flight execution (run_baseline / run_speculative).
Against the simulated inference engine, EngineClient drives the same
loop through engine callbacks and can push speculated tool outputs into
the engine-side cache so the sequence never leaves the batch.
run_engine_scenario wires a token-accounting scenario to the engine and
measures the per-flavor makespans that the closed forms in model.py
predict.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .domain import (
    TOOL_END,
    TOOL_START,
    AgentTurn,
    CanonicalKey,
    Token,
    TokenKind,
    ToolCall,
    ToolSpec,
    assistant_text,
    canonical_key,
    extract_tool_call,
    token_estimate,
)
from .engine import CacheEntry, EngineConfig, EngineSim
from .errors import ConfigError, MalformedToolCall, NoToolCall, UnknownTool
from .mocks import (
    GenerationScript,
    MainModel,
    SpecConfig,
    SpecSample,
    Speculator,
    ToolExecution,
    ToolRuntime,
)
from .model import EngineScenario
from .sim import Future, Simulator, spawn


class PendingToolCache:
    """In-flight speculative executions for the current turn, one per key.

    clear() bumps an epoch counter; draft arrivals captured under an
    older epoch are dropped, so a slow guess can never leak into a later
    turn's cache.
    """

    def __init__(self) -> None:
        self.epoch = 0
        self._entries: dict[bytes, ToolExecution] = {}

    def clear(self) -> None:
        self.epoch += 1
        self._entries.clear()

    def get(self, key: CanonicalKey) -> ToolExecution | None:
        return self._entries.get(key.data)

    def add(self, key: CanonicalKey, execution: ToolExecution) -> bool:
        """Register an execution; False if the key is already in flight."""
        if key.data in self._entries:
            return False
        self._entries[key.data] = execution
        return True

    def __len__(self) -> int:
        return len(self._entries)


@dataclass
class TurnOutcome:
    """Timing record for one tool turn of one agent run."""

    turn_index: int
    hit: bool
    main_done_at: float
    turn_done_at: float
    tokens_emitted: int
    spec_done_at: float | None = None
    tool_done_at: float | None = None

    def to_json(self) -> dict:
        return {
            "turn_index": self.turn_index,
            "hit": self.hit,
            "main_done_at": self.main_done_at,
            "turn_done_at": self.turn_done_at,
            "tokens_emitted": self.tokens_emitted,
            "spec_done_at": self.spec_done_at,
            "tool_done_at": self.tool_done_at,
        }


@dataclass
class AgentResult:
    """Everything one agent run produced: transcript, outcomes, timings."""

    task_id: str
    mode: str
    outcomes: list[TurnOutcome] = field(default_factory=list)
    transcript: list[AgentTurn] = field(default_factory=list)
    started_at: float = 0.0
    finished_at: float | None = None
    tokens_emitted: int = 0
    done: bool = False
    completion: Future = field(default_factory=Future, repr=False, compare=False)

    @property
    def total_seconds(self) -> float:
        if self.finished_at is None:
            raise ConfigError(f"run {self.task_id!r} never finished")
        return self.finished_at - self.started_at

    @property
    def hits(self) -> int:
        return sum(1 for o in self.outcomes if o.hit)


def transcript_jsonl(result: AgentResult) -> str:
    return "\n".join(
        json.dumps(turn.to_json(), sort_keys=True, separators=(",", ":"))
        for turn in result.transcript
    )


def outcomes_jsonl(result: AgentResult) -> str:
    return "\n".join(
        json.dumps(o.to_json(), sort_keys=True, separators=(",", ":"))
        for o in result.outcomes
    )


@dataclass
class AgentSetup:
    """Everything an agent loop needs besides its clock."""

    script: GenerationScript
    runtime: ToolRuntime
    task_id: str = "task"
    prompt_text: str = "do the task"
    prompt_tokens: int = 16
    dispatch_overhead: float = 0.0
    toolset: dict[str, ToolSpec] | None = None
    usage: list | None = None  # (endpoint, input_tokens, output_tokens) rows


def _speculation_allowed(toolset: dict[str, ToolSpec] | None, name: str) -> bool:
    # without a declared toolset every call is assumed safe to pre-execute
    if toolset is None:
        return True
    spec = toolset.get(name)
    return spec is not None and spec.speculatable


def _record_tool_turn(
    result: AgentResult, turn_tokens: list[Token], call: ToolCall, output: str
) -> None:
    result.transcript.append(
        AgentTurn("assistant", assistant_text(turn_tokens), tool_call=call)
    )
    result.transcript.append(AgentTurn("tool", "", tool_call=call, tool_output=output))


def run_baseline(sim: Simulator, setup: AgentSetup) -> AgentResult:
    """Sequential agent loop: generate, run the tool, repeat, then answer."""
    result = AgentResult(task_id=setup.task_id, mode="baseline")
    model = MainModel(sim, setup.script, usage=setup.usage)

    def loop():
        result.started_at = sim.now
        result.transcript.append(AgentTurn("user", setup.prompt_text))
        prompt = setup.prompt_tokens
        for turn_index in range(setup.script.tool_turns):
            if setup.dispatch_overhead:
                yield sim.sleep(setup.dispatch_overhead)
            gen = yield model.generate(prompt)
            call = extract_tool_call(gen.tokens)
            execution = setup.runtime.launch(sim, (setup.task_id, turn_index), call, "main")
            output = yield execution.future
            prompt += gen.output_tokens + token_estimate(output)
            _record_tool_turn(result, gen.tokens, call, output)
            result.outcomes.append(
                TurnOutcome(
                    turn_index,
                    False,
                    gen.done_at,
                    sim.now,
                    gen.output_tokens,
                    tool_done_at=sim.now,
                )
            )
            result.tokens_emitted += gen.output_tokens
        if setup.dispatch_overhead:
            yield sim.sleep(setup.dispatch_overhead)
        gen = yield model.generate(prompt)
        result.transcript.append(AgentTurn("assistant", assistant_text(gen.tokens)))
        result.tokens_emitted += gen.output_tokens
        result.finished_at = sim.now
        result.done = True
        result.completion.resolve(result)

    spawn(loop())
    return result


def run_speculative(
    sim: Simulator,
    setup: AgentSetup,
    spec: SpecConfig,
    outcome_plan: list[bool] | None = None,
) -> AgentResult:
    """Race draft guesses against the main model; serve hits from cache.

    Every draft sample runs concurrently with the main call. When the
    main model's call matches an in-flight execution by canonical key,
    the turn's critical path collapses from generate-then-call to
    max(generate, draft + call). The pending cache is cleared as each
    turn begins, so speculation never crosses a turn boundary.
    """
    result = AgentResult(task_id=setup.task_id, mode="client_spec")
    model = MainModel(sim, setup.script, usage=setup.usage)
    speculator = Speculator(spec, outcome_plan)
    cache = PendingToolCache()

    def launch_samples(turn_index: int, prompt: int, state: dict) -> None:
        intended_span = setup.script.call_span_at(turn_index)
        intended = extract_tool_call(intended_span)
        if not _speculation_allowed(setup.toolset, intended.name):
            return
        epoch = cache.epoch
        samples = speculator.draft((setup.task_id, turn_index), intended_span)
        for sample in samples:
            if setup.usage is not None:
                setup.usage.append(("draft", prompt, len(sample.tokens)))

            def arrived(sample: SpecSample = sample) -> None:
                if cache.epoch != epoch:
                    return
                if state["spec_done_at"] is None:
                    state["spec_done_at"] = sim.now
                try:
                    call = extract_tool_call(sample.tokens)
                except (NoToolCall, MalformedToolCall):
                    return
                key = canonical_key(call)
                if cache.get(key) is not None:
                    return  # single flight per distinct guessed call
                try:
                    execution = setup.runtime.launch(
                        sim, (setup.task_id, turn_index), call, "speculative"
                    )
                except UnknownTool:
                    return
                cache.add(key, execution)

            sim.schedule(spec.latency_seconds, arrived, name=f"draft_{turn_index}")

    def loop():
        result.started_at = sim.now
        result.transcript.append(AgentTurn("user", setup.prompt_text))
        prompt = setup.prompt_tokens
        for turn_index in range(setup.script.tool_turns):
            cache.clear()
            if setup.dispatch_overhead:
                yield sim.sleep(setup.dispatch_overhead)
            state = {"spec_done_at": None}
            main_future = model.generate(prompt)
            if spec.samples:
                launch_samples(turn_index, prompt, state)
            gen = yield main_future
            call = extract_tool_call(gen.tokens)
            pending = cache.get(canonical_key(call))
            hit = pending is not None
            if pending is None:
                pending = setup.runtime.launch(sim, (setup.task_id, turn_index), call, "main")
            output = yield pending.future
            prompt += gen.output_tokens + token_estimate(output)
            _record_tool_turn(result, gen.tokens, call, output)
            result.outcomes.append(
                TurnOutcome(
                    turn_index,
                    hit,
                    gen.done_at,
                    sim.now,
                    gen.output_tokens,
                    spec_done_at=state["spec_done_at"],
                    tool_done_at=pending.started_at + pending.duration,
                )
            )
            result.tokens_emitted += gen.output_tokens
        if setup.dispatch_overhead:
            yield sim.sleep(setup.dispatch_overhead)
        gen = yield model.generate(prompt)
        result.transcript.append(AgentTurn("assistant", assistant_text(gen.tokens)))
        result.tokens_emitted += gen.output_tokens
        result.finished_at = sim.now
        result.done = True
        result.completion.resolve(result)

    spawn(loop())
    return result


# -- engine-backed client ----------------------------------------------------


@dataclass(frozen=True)
class HopPolicy:
    """One-way client/engine latencies charged around engine interactions."""

    initial: float = 0.0
    emit: float = 0.0
    resubmit: float = 0.0
    resubmit_final: float | None = None  # None: same as resubmit
    final: float = 0.0

    def resubmit_delay(self, is_last_tool_turn: bool) -> float:
        if is_last_tool_turn and self.resubmit_final is not None:
            return self.resubmit_final
        return self.resubmit


def uniform_hops(seconds: float) -> HopPolicy:
    return HopPolicy(initial=seconds, emit=seconds, resubmit=seconds, final=seconds)


class EngineClient:
    """Drives one request through an EngineSim, optionally speculating.

    The engine calls back on_turn_start / on_emit / on_ingest /
    on_final. This client starts draft samples whenever a turn begins
    streaming, pushes finished speculative outputs into the engine's
    tool cache when enabled, and resolves engine-emitted calls from
    in-flight executions before falling back to a fresh tool call.
    """

    def __init__(
        self,
        sim: Simulator,
        engine: EngineSim,
        setup: AgentSetup,
        spec: SpecConfig | None = None,
        outcome_plan: list[bool] | None = None,
        hops: HopPolicy | None = None,
        submit_to_engine: bool = True,
        submit_wrong_samples: bool = True,
        output_tokens_fn=None,
    ):
        self.sim = sim
        self.engine = engine
        self.setup = setup
        self.spec = spec
        self.speculator = Speculator(spec, outcome_plan) if spec is not None else None
        self.hops = hops if hops is not None else HopPolicy()
        self.submit_to_engine = submit_to_engine and engine.store is not None
        self.submit_wrong_samples = submit_wrong_samples
        self.output_tokens_fn = output_tokens_fn or (lambda turn, output: token_estimate(output))
        if spec is None:
            mode = "engine_baseline"
        elif self.submit_to_engine:
            mode = "engine_spec"
        else:
            mode = "engine_client_spec"
        self.result = AgentResult(task_id=setup.task_id, mode=mode)
        self.pending = PendingToolCache()
        self.spec_done_at: dict[int, float] = {}
        self.tool_finished_times: list[float] = []
        self.prompt_tokens = setup.prompt_tokens
        self._last_submitted = setup.prompt_tokens
        self._undelivered = 0

    @property
    def rid(self) -> str:
        return self.setup.task_id

    def start(self) -> None:
        self.result.started_at = self.sim.now
        self.result.transcript.append(AgentTurn("user", self.setup.prompt_text))

        def submit() -> None:
            self._last_submitted = self.setup.prompt_tokens
            self.engine.submit_request(
                self.rid, self.setup.script, self.setup.prompt_tokens, self
            )

        self.sim.schedule(self.hops.initial, submit, name=f"submit_{self.rid}")

    # -- engine callbacks ----------------------------------------------------

    def on_turn_start(self, rid: str, turn: int) -> None:
        self.pending.clear()
        if self.speculator is None or turn >= self.setup.script.tool_turns:
            return
        intended_span = self.setup.script.call_span_at(turn)
        intended = extract_tool_call(intended_span)
        if not _speculation_allowed(self.setup.toolset, intended.name):
            return
        epoch = self.pending.epoch
        for sample in self.speculator.draft((self.rid, turn), intended_span):
            if self.setup.usage is not None:
                self.setup.usage.append(("draft", self.prompt_tokens, len(sample.tokens)))
            self.sim.schedule(
                self.spec.latency_seconds,
                lambda s=sample: self._draft_arrived(turn, s, epoch),
                name=f"draft_{self.rid}_{turn}",
            )

    def _draft_arrived(self, turn: int, sample: SpecSample, epoch: int) -> None:
        if self.pending.epoch != epoch:
            return  # a later turn began; this guess answers a stale question
        self.spec_done_at.setdefault(turn, self.sim.now)
        try:
            call = extract_tool_call(sample.tokens)
        except (NoToolCall, MalformedToolCall):
            return
        key = canonical_key(call)
        if self.pending.get(key) is not None:
            return
        try:
            execution = self.setup.runtime.launch(
                self.sim, (self.rid, turn), call, "speculative"
            )
        except UnknownTool:
            return
        self.pending.add(key, execution)
        if self.submit_to_engine and (sample.correct or self.submit_wrong_samples):
            entry = CacheEntry(
                call.name,
                execution.output,
                key=key,
                call_tokens=list(sample.tokens),
                output_tokens=self.output_tokens_fn(turn, execution.output),
            )
            execution.future.add_done_callback(
                lambda _out: self.engine.submit_tool_cache(self.rid, entry)
            )

    def on_emit(self, rid: str, turn: int, span, call: ToolCall, base: int) -> None:
        self.sim.schedule(
            self.hops.emit,
            lambda: self._resolve_miss(turn, span, call, base),
            name=f"receive_{self.rid}_{turn}",
        )

    def _resolve_miss(self, turn: int, span, call: ToolCall, base: int) -> None:
        turn_tokens = self.setup.script.turns[turn]
        self._undelivered += len(turn_tokens)
        if self.setup.usage is not None:
            self.setup.usage.append(("main", self._last_submitted, self._undelivered))
            self._undelivered = 0
        main_done = self.sim.now
        key = canonical_key(call)
        pending = self.pending.get(key)
        served_in_flight = pending is not None
        if pending is None:
            pending = self.setup.runtime.launch(self.sim, (self.rid, turn), call, "main")

        def tool_done(output: str) -> None:
            now = self.sim.now
            self.tool_finished_times.append(now)
            _record_tool_turn(self.result, turn_tokens, call, output)
            self.result.outcomes.append(
                TurnOutcome(
                    turn,
                    served_in_flight,
                    main_done,
                    now,
                    len(turn_tokens),
                    spec_done_at=self.spec_done_at.get(turn),
                    tool_done_at=now,
                )
            )
            self.result.tokens_emitted += len(turn_tokens)
            new_prompt = base + len(span) + self.output_tokens_fn(turn, output)
            self.prompt_tokens = new_prompt
            is_last = turn == self.setup.script.tool_turns - 1

            def resubmit() -> None:
                self._last_submitted = new_prompt
                self.engine.resubmit(self.rid, new_prompt, turn_resolved=True)

            self.sim.schedule(
                self.hops.resubmit_delay(is_last), resubmit, name=f"resubmit_{self.rid}_{turn}"
            )

        pending.future.add_done_callback(tool_done)

    def on_ingest(self, rid: str, turn: int, entry: CacheEntry) -> None:
        turn_tokens = self.setup.script.turns[turn]
        call = extract_tool_call(turn_tokens)
        now = self.sim.now
        self._undelivered += len(turn_tokens)
        _record_tool_turn(self.result, turn_tokens, call, entry.output)
        self.result.outcomes.append(
            TurnOutcome(
                turn,
                True,
                now,
                now,
                len(turn_tokens),
                spec_done_at=self.spec_done_at.get(turn),
                tool_done_at=now,
            )
        )
        self.result.tokens_emitted += len(turn_tokens)
        self.prompt_tokens += len(turn_tokens) + entry.output_tokens

    def on_final(self, rid: str, tokens: list[Token]) -> None:
        self._undelivered += len(tokens)
        if self.setup.usage is not None:
            self.setup.usage.append(("main", self._last_submitted, self._undelivered))
            self._undelivered = 0

        def deliver() -> None:
            self.result.transcript.append(AgentTurn("assistant", assistant_text(tokens)))
            self.result.tokens_emitted += len(tokens)
            self.result.finished_at = self.sim.now
            self.result.done = True
            self.result.completion.resolve(self.result)

        self.sim.schedule(self.hops.final, deliver, name=f"final_{self.rid}")


# -- accounting scenarios against the engine ---------------------------------


def chunk_text(text: str, pieces: int) -> list[str]:
    """Split text into exactly `pieces` nonempty chunks, padding with spaces.

    Concatenating the chunks recovers the text (plus trailing padding),
    which JSON parsing tolerates, so a chunked call payload still parses.
    """
    if pieces <= 0:
        raise ConfigError("cannot chunk into zero pieces")
    padded = text + " " * max(0, pieces - len(text))
    base, extra = divmod(len(padded), pieces)
    out = []
    pos = 0
    for i in range(pieces):
        size = base + (1 if i < extra else 0)
        out.append(padded[pos : pos + size])
        pos += size
    return out


@dataclass
class ScenarioBuild:
    script: GenerationScript
    calls: list[ToolCall]
    fixtures: dict
    outputs: list[str]


def build_scenario_script(scenario: EngineScenario) -> ScenarioBuild:
    """Token-exact script for an accounting scenario.

    Each turn calls its own tool name, so a cached entry from an earlier
    turn can never shadow a later validation bet. Span text is padded so
    the rendered call occupies exactly call_tokens tokens and reasoning
    exactly reason_tokens, matching what the closed forms charge.
    """
    turns: list[list[Token]] = []
    calls: list[ToolCall] = []
    fixtures: dict = {}
    outputs: list[str] = []
    for i, profile in enumerate(scenario.turns):
        if profile.call_tokens < 3:
            raise ConfigError("a rendered call needs marker, payload, marker")
        call = ToolCall.of(f"step{i}", index=i)
        payload = f"{call.name} {json.dumps(dict(call.args))}"
        interior = chunk_text(payload, profile.call_tokens - 2)
        span = [TOOL_START] + [Token(TokenKind.TEXT, c) for c in interior] + [TOOL_END]
        reason = [Token(TokenKind.TEXT, "think")] * profile.reason_tokens
        turns.append(reason + span)
        calls.append(call)
        output = f"result-{i}"
        fixtures[canonical_key(call)] = output
        outputs.append(output)
    turns.append([Token(TokenKind.EOS)])
    return ScenarioBuild(GenerationScript(turns), calls, fixtures, outputs)


ENGINE_MODES = ("vanilla", "prefix_cache", "tool_cache")


@dataclass
class EngineRunReport:
    mode: str
    measured_seconds: float
    fates: list[str]
    result: AgentResult
    events: list[str]
    evictions: int
    store_submissions: int


def run_engine_scenario(
    scenario: EngineScenario,
    mode: str,
    hit_plan: list[bool] | None = None,
    draft_latency: float = 0.25,
    seed: int = 0,
) -> EngineRunReport:
    """Simulate one request end to end and measure the accounted window.

    The window opens at client submission and closes at the last event
    the accounting identities charge for: the final tool completion
    (vanilla re-prefills everything afterwards anyway), the tail prefill
    that re-ingests the last call and output (prefix_cache), or the
    final ingest / miss-suffix prefill (tool_cache). Dispatch overhead
    is charged per submission hop for the first two modes; with the
    in-engine cache only misses pay the round trip.
    """
    if mode not in ENGINE_MODES:
        raise ConfigError(f"unknown engine mode {mode!r}")
    build = build_scenario_script(scenario)
    sim = Simulator()
    runtime = ToolRuntime(build.fixtures, mean=0.0, stddev=0.0, seed=seed, fallback="")
    for call, profile in zip(build.calls, scenario.turns):
        runtime.duration_map[canonical_key(call)] = profile.tool_seconds
    config = EngineConfig(
        prefill_rate=scenario.prefill_rate,
        decode_rate=scenario.decode_rate,
        prefix_cache=mode != "vanilla",
        tool_cache=mode == "tool_cache",
    )
    engine = EngineSim(sim, config)
    o = scenario.dispatch_overhead
    if mode == "tool_cache":
        hops = HopPolicy(initial=0.0, emit=o, resubmit=o, final=0.0)
        spec = SpecConfig(
            latency_seconds=draft_latency,
            accuracy=scenario.accept_rate,
            samples=1,
            seed=seed,
        )
    else:
        hops = HopPolicy(initial=o, emit=o, resubmit=o, resubmit_final=0.0, final=0.0)
        spec = None
    setup = AgentSetup(
        script=build.script,
        runtime=runtime,
        task_id=f"scenario_{mode}",
        prompt_tokens=scenario.prompt_tokens,
    )
    client = EngineClient(
        sim,
        engine,
        setup,
        spec=spec,
        outcome_plan=hit_plan if mode == "tool_cache" else None,
        hops=hops,
        submit_wrong_samples=False,
        output_tokens_fn=lambda turn, _out: scenario.turns[turn].output_tokens,
    )
    last_phase_time: dict[str, float] = {}
    engine.observers.append(
        lambda t, rid, phase, n: last_phase_time.__setitem__(phase, t)
    )
    client.start()
    sim.run_until_idle()
    fates = engine.sequences[setup.task_id].fates
    if mode == "vanilla":
        measured = max(client.tool_finished_times)
    elif mode == "prefix_cache":
        measured = last_phase_time["prefill"]
    else:
        if fates[-1].endswith("hit"):
            measured = last_phase_time["ingest"]
        else:
            measured = last_phase_time["prefill"]
    return EngineRunReport(
        mode=mode,
        measured_seconds=measured - client.result.started_at,
        fates=fates,
        result=client.result,
        events=list(engine.events),
        evictions=engine.evictions,
        store_submissions=engine.store.submissions if engine.store is not None else 0,
    )
