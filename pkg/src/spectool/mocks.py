"""Scripted stand-ins for the main model, the draft model, and tools.

Determinism scheme: every random draw (tool latency, speculation coin) is
produced by a PRNG seeded from a stable hash of (seed, scope, ...), never
from a shared stream. Two runs that execute the same logical event in a
different order, or skip events the other run performs, still agree on
every shared draw. That is what makes baseline and speculative runs
strictly paired.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

from .domain import (
    CanonicalKey,
    Token,
    TokenKind,
    ToolCall,
    canonical_key,
    extract_tool_call,
    render_tool_call,
    validate_stream,
    _canon_scalar,
)
from .errors import ConfigError, MalformedToolCall, ScriptExhausted, UnknownTool
from .sim import Future, Simulator

MISS_SENTINEL = "__spec_miss__"


def derived_rng(*scope: object) -> random.Random:
    """PRNG seeded from a stable hash of the scope (order matters, repr-based)."""
    digest = hashlib.sha256(repr(scope).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def truncated_normal(rng: random.Random, mean: float, stddev: float) -> float:
    """Normal draw clamped at zero; zero spread returns the mean exactly."""
    if stddev == 0.0:
        return max(0.0, mean)
    return max(0.0, rng.gauss(mean, stddev))


class GenerationScript:
    """Per-turn token sequences the mock main model will emit.

    Timing is either a fixed latency per call (client-side experiments) or
    token-rate based: prefill_rate seconds per prompt token plus
    decode_rate per emitted token.
    """

    def __init__(
        self,
        turns: list[list[Token]],
        fixed_latency: float | None = None,
        prefill_rate: float = 0.0,
        decode_rate: float = 0.0,
    ):
        if not turns:
            raise ConfigError("a script needs at least one turn")
        flat = [t for turn in turns for t in turn]
        try:
            validate_stream(flat)
        except MalformedToolCall as e:
            raise ConfigError(f"malformed script: {e}") from e
        if not flat or flat[-1].kind is not TokenKind.EOS:
            raise ConfigError("a script must end with EOS")
        for turn in turns[:-1]:
            if any(t.kind is TokenKind.EOS for t in turn):
                raise ConfigError("EOS before the final turn")
        if fixed_latency is not None and fixed_latency < 0:
            raise ConfigError("fixed_latency cannot be negative")
        self.turns = [list(t) for t in turns]
        self.fixed_latency = fixed_latency
        self.prefill_rate = prefill_rate
        self.decode_rate = decode_rate

    @property
    def tool_turns(self) -> int:
        return len(self.turns) - 1

    def tool_call_at(self, turn_index: int) -> ToolCall:
        return extract_tool_call(self.turns[turn_index])

    def call_span_at(self, turn_index: int) -> list[Token]:
        """The marker-to-marker slice of a turn, for drafting."""
        toks = self.turns[turn_index]
        start = next(i for i, t in enumerate(toks) if t.kind is TokenKind.TOOL_START)
        end = next(i for i, t in enumerate(toks) if t.kind is TokenKind.TOOL_END)
        return toks[start : end + 1]


@dataclass
class GenerationResult:
    tokens: list[Token]
    turn_index: int
    input_tokens: int
    output_tokens: int
    done_at: float


class MainModel:
    """Plays a GenerationScript one turn per call."""

    def __init__(self, sim: Simulator, script: GenerationScript, usage: list | None = None):
        self.sim = sim
        self.script = script
        self.next_turn = 0
        self.usage = usage

    def generate(self, prompt_tokens: int) -> Future:
        """Schedule one turn; resolves to a GenerationResult."""
        if self.next_turn >= len(self.script.turns):
            raise ScriptExhausted(f"script has only {len(self.script.turns)} turns")
        turn_index = self.next_turn
        self.next_turn += 1
        tokens = self.script.turns[turn_index]
        if self.script.fixed_latency is not None:
            latency = self.script.fixed_latency
        else:
            latency = (
                self.script.prefill_rate * prompt_tokens
                + self.script.decode_rate * len(tokens)
            )
        if self.usage is not None:
            self.usage.append(("main", prompt_tokens, len(tokens)))
        fut = Future()

        def finish() -> None:
            fut.resolve(
                GenerationResult(
                    tokens=list(tokens),
                    turn_index=turn_index,
                    input_tokens=prompt_tokens,
                    output_tokens=len(tokens),
                    done_at=self.sim.now,
                )
            )

        self.sim.schedule(latency, finish, name=f"main_turn_{turn_index}")
        return fut


@dataclass(frozen=True)
class SpecConfig:
    """Draft-model knobs: latency, per-sample accuracy, samples per turn."""

    latency_seconds: float
    accuracy: float
    samples: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.latency_seconds <= 0:
            raise ConfigError("draft latency must be positive")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ConfigError("accuracy must lie in [0, 1]")
        if self.samples < 0:
            raise ConfigError("samples cannot be negative")


@dataclass
class SpecSample:
    tokens: list[Token]
    call: ToolCall
    correct: bool
    sample_index: int


def perturb_call(call: ToolCall) -> ToolCall:
    """A deliberately wrong variant that can never share the original's key.

    The first argument value is replaced by a sentinel-prefixed string (a
    nonempty prefix guarantees inequality); argument-free calls instead
    gain a sentinel argument.
    """
    if call.args:
        key0, value0 = call.args[0]
        wrong = (key0, MISS_SENTINEL + _canon_scalar(value0))
        return ToolCall(call.name, (wrong,) + call.args[1:])
    return ToolCall(call.name, ((MISS_SENTINEL, MISS_SENTINEL),))


class Speculator:
    """Mock draft model: guesses the upcoming tool call, right or wrong.

    Correctness is an independent Bernoulli(accuracy) per sample, derived
    from (seed, scope, sample). An optional outcome plan forces whole
    turns to hit or miss for oracle tests. Correct guesses reproduce the
    script's exact call tokens; wrong ones render a perturbed call.
    """

    def __init__(self, config: SpecConfig, outcome_plan: list[bool] | None = None):
        self.config = config
        self.outcome_plan = outcome_plan

    def sample_correct(self, scope: tuple, sample_index: int) -> bool:
        if self.outcome_plan is not None:
            turn_index = scope[-1]
            if isinstance(turn_index, int) and turn_index < len(self.outcome_plan):
                return self.outcome_plan[turn_index]
        rng = derived_rng(self.config.seed, "spec_coin", scope, sample_index)
        return rng.random() < self.config.accuracy

    def draft(self, scope: tuple, intended_span: list[Token]) -> list[SpecSample]:
        intended = extract_tool_call(intended_span)
        out = []
        for i in range(self.config.samples):
            if self.sample_correct(scope, i):
                out.append(SpecSample(list(intended_span), intended, True, i))
            else:
                wrong = perturb_call(intended)
                out.append(SpecSample(render_tool_call(wrong), wrong, False, i))
        return out


@dataclass
class ToolExecution:
    future: Future
    key_hex: str
    output: str
    duration: float
    started_at: float
    source: str


class ToolRuntime:
    """Executes tool calls against a fixture map with seeded latencies.

    Latency for a given (scope, call) is a truncated normal draw that
    depends only on the seed, the scope, and the call's canonical key, so
    any run that executes the same logical call sees the same duration.
    """

    def __init__(
        self,
        fixtures: dict,  # CanonicalKey -> output string
        mean: float,
        stddev: float,
        seed: int = 0,
        fallback: str | None = None,
    ):
        if mean < 0 or stddev < 0:
            raise ConfigError("latency mean and stddev cannot be negative")
        self.fixtures = fixtures
        self.mean = mean
        self.stddev = stddev
        self.seed = seed
        self.fallback = fallback
        self.duration_map: dict = {}  # CanonicalKey -> exact seconds, overrides the draw
        self.log: list[ToolExecution] = []

    def output_for(self, call: ToolCall) -> str:
        key = canonical_key(call)
        if key in self.fixtures:
            return self.fixtures[key]
        if self.fallback is not None:
            return self.fallback
        raise UnknownTool(f"no fixture for {call.name} ({key.hex[:16]}...)")

    def duration_for(self, scope: tuple, call: ToolCall) -> float:
        key = canonical_key(call)
        if key in self.duration_map:
            return self.duration_map[key]
        rng = derived_rng(self.seed, "tool_latency", scope, key.hex)
        return truncated_normal(rng, self.mean, self.stddev)

    def launch(self, sim: Simulator, scope: tuple, call: ToolCall, source: str) -> ToolExecution:
        """Start the call on the virtual clock; future resolves to its output."""
        output = self.output_for(call)  # fail fast on unknown tools
        duration = self.duration_for(scope, call)
        execution = ToolExecution(
            future=Future(),
            key_hex=canonical_key(call).hex,
            output=output,
            duration=duration,
            started_at=sim.now,
            source=source,
        )
        self.log.append(execution)
        sim.schedule(duration, lambda: execution.future.resolve(output), name=f"tool_{call.name}")
        return execution


def fixtures_to_json(fixtures: dict) -> dict[str, str]:
    """Serialize a fixture map with hex-encoded canonical keys."""
    return {key.hex: output for key, output in sorted(fixtures.items(), key=lambda kv: kv[0].hex)}


def fixtures_from_json(obj: dict[str, str]) -> dict:
    return {CanonicalKey(bytes.fromhex(h)): output for h, output in obj.items()}
