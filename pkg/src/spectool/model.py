"""Closed-form latency model for speculative tool execution.

Two settings are modeled. Client-side: a fast draft model races the main
model each turn and pre-runs the predicted tool, so a correct guess
collapses a turn from gen + tool to max(gen, draft + tool). Engine-side: a
tool-output cache inside the inference engine lets a sequence skip
eviction, re-dispatch overhead, and tool-call decoding whenever the
speculated output arrived in time.

Everything here is straight arithmetic; the simulators are checked against
these functions term by term.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import EmptyGrid, InvalidScenario, LemmaHypothesisViolated


@dataclass(frozen=True)
class ClientScenario:
    """Per-turn timing for the client-side race.

    gen_seconds: main-model time to produce a turn, end to end.
    draft_seconds: draft-model time to produce its guess for the same turn.
    tool_seconds: tool execution time.
    accept_rate: probability a turn's guess matches the real call.
    turns: number of tool-calling turns.
    """

    gen_seconds: float
    draft_seconds: float
    tool_seconds: float
    accept_rate: float = 1.0
    turns: int = 1

    def __post_init__(self) -> None:
        for label in ("gen_seconds", "draft_seconds", "tool_seconds"):
            if getattr(self, label) <= 0:
                raise InvalidScenario(f"{label} must be strictly positive")
        if not 0.0 <= self.accept_rate <= 1.0:
            raise InvalidScenario("accept_rate must lie in [0, 1]")
        if self.turns < 1:
            raise InvalidScenario("turns must be at least 1")


@dataclass(frozen=True)
class TurnProfile:
    """Token and tool costs of one agent turn inside the engine."""

    reason_tokens: int
    call_tokens: int
    output_tokens: int
    tool_seconds: float

    def __post_init__(self) -> None:
        if self.reason_tokens < 0 or self.output_tokens < 0:
            raise InvalidScenario("token counts cannot be negative")
        if self.call_tokens < 1:
            raise InvalidScenario("a tool call is at least one token")
        if self.tool_seconds < 0:
            raise InvalidScenario("tool_seconds cannot be negative")


@dataclass(frozen=True)
class EngineScenario:
    """A multi-turn request as the engine sees it.

    dispatch_overhead: seconds per hop between client and engine (HTTP,
    batch admission); charged per eviction round trip.
    prefill_rate / decode_rate: seconds per prompt token / per generated token.
    prompt_tokens: length of the initial prompt.
    """

    dispatch_overhead: float
    prefill_rate: float
    decode_rate: float
    prompt_tokens: int
    turns: tuple[TurnProfile, ...]
    accept_rate: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        if self.dispatch_overhead < 0 or self.prefill_rate < 0 or self.decode_rate < 0:
            raise InvalidScenario("rates and overhead cannot be negative")
        if self.prompt_tokens < 0:
            raise InvalidScenario("prompt_tokens cannot be negative")
        if not self.turns:
            raise InvalidScenario("an engine scenario needs at least one turn")
        if not 0.0 <= self.accept_rate <= 1.0:
            raise InvalidScenario("accept_rate must lie in [0, 1]")

    @property
    def turn_count(self) -> int:
        return len(self.turns)

    def prompt_lengths(self) -> list[int]:
        """Prompt length of each turn: history grows by call + output tokens."""
        lengths = [self.prompt_tokens]
        for p in self.turns[:-1]:
            lengths.append(lengths[-1] + p.call_tokens + p.output_tokens)
        return lengths


# --- client side ------------------------------------------------------------

def time_baseline_client(s: ClientScenario) -> float:
    """Sequential turns: generate, then wait for the tool."""
    return s.turns * (s.gen_seconds + s.tool_seconds)


def hit_turn_seconds(s: ClientScenario) -> float:
    """A turn whose guess was right: tool runs concurrently with generation."""
    return max(s.gen_seconds, s.draft_seconds + s.tool_seconds)


def time_speculative_client(s: ClientScenario) -> float:
    hit = hit_turn_seconds(s)
    miss = s.gen_seconds + s.tool_seconds
    return s.turns * (s.accept_rate * hit + (1.0 - s.accept_rate) * miss)


def time_client_realized(s: ClientScenario, hits: list[bool]) -> float:
    """Same accounting with the per-turn hit pattern pinned down."""
    if len(hits) != s.turns:
        raise InvalidScenario("hit vector length must equal turn count")
    hit = hit_turn_seconds(s)
    miss = s.gen_seconds + s.tool_seconds
    return sum(hit if h else miss for h in hits)


def client_speedup(s: ClientScenario) -> float:
    """Baseline over speculative time; turn count cancels."""
    miss = s.gen_seconds + s.tool_seconds
    return miss / (s.accept_rate * hit_turn_seconds(s) + (1.0 - s.accept_rate) * miss)


def speedup_bound(s: ClientScenario) -> tuple[float, float]:
    """Best achievable speedup (accept_rate 1) and its universal cap.

    Only meaningful when the draft really is faster than the main model;
    otherwise speculation cannot win and the bound's hypotheses fail.
    Returns (best, cap) with best <= cap < 2.
    """
    if s.draft_seconds >= s.gen_seconds:
        raise LemmaHypothesisViolated("draft must be strictly faster than the main model")
    best = (s.gen_seconds + s.tool_seconds) / hit_turn_seconds(s)
    cap = 2.0 - 2.0 * s.draft_seconds / (s.gen_seconds + s.draft_seconds + s.tool_seconds)
    return best, cap


# --- engine side ------------------------------------------------------------

def time_vanilla_engine(s: EngineScenario) -> float:
    """No caching: every turn re-prefills the whole grown prompt."""
    decode = sum(p.reason_tokens + p.call_tokens for p in s.turns)
    tools = sum(p.tool_seconds for p in s.turns)
    return (
        2.0 * s.turn_count * s.dispatch_overhead
        + s.prefill_rate * sum(s.prompt_lengths())
        + s.decode_rate * decode
        + tools
    )


def _unique_prompt_tokens(s: EngineScenario) -> int:
    # initial prompt plus every call/output suffix, final turn included
    return s.prompt_tokens + sum(p.call_tokens + p.output_tokens for p in s.turns)


def time_prefix_cached_engine(s: EngineScenario) -> float:
    """Prefix caching: each prompt token is prefilled once, ever."""
    decode = sum(p.reason_tokens + p.call_tokens for p in s.turns)
    tools = sum(p.tool_seconds for p in s.turns)
    return (
        2.0 * s.turn_count * s.dispatch_overhead
        + s.prefill_rate * _unique_prompt_tokens(s)
        + s.decode_rate * decode
        + tools
    )


def time_tool_cache_engine(s: EngineScenario) -> float:
    """Engine-side speculation: hits skip eviction, tool wait, and call decode.

    A hit turn validates the whole drafted call in one decode step and
    ingests the pre-run tool output directly, so only misses pay the round
    trip and the tool latency. At accept_rate 0 this equals the
    prefix-cached time; at 1 it saves the full round trips, the tool waits,
    and all but one decode step per call.
    """
    a = s.accept_rate
    k = s.turn_count
    reason = sum(p.reason_tokens for p in s.turns)
    calls = sum(p.call_tokens for p in s.turns)
    tools = sum(p.tool_seconds for p in s.turns)
    return (
        (1.0 - a) * 2.0 * k * s.dispatch_overhead
        + s.prefill_rate * _unique_prompt_tokens(s)
        + s.decode_rate * (a * k + reason + (1.0 - a) * calls)
        + (1.0 - a) * tools
    )


class TurnFate(Enum):
    """How one engine turn resolved under speculation."""

    FULL_HIT = "full_hit"    # draft validated at call start, output ingested
    LATE_HIT = "late_hit"    # call decoded normally, output still ingested
    MISS = "miss"            # evicted; client ran the tool and resubmitted


def time_engine_realized(s: EngineScenario, fates: list[TurnFate]) -> float:
    """Tool-cache engine time for one concrete outcome vector.

    Averaging this over independent per-turn hits with probability
    accept_rate (all full hits) recovers time_tool_cache_engine.
    """
    if len(fates) != s.turn_count:
        raise InvalidScenario("fate vector length must equal turn count")
    total = s.prefill_rate * s.prompt_tokens
    for p, fate in zip(s.turns, fates):
        if fate is TurnFate.FULL_HIT:
            total += s.decode_rate * (p.reason_tokens + 1)
            total += s.prefill_rate * (p.call_tokens + p.output_tokens)
        elif fate is TurnFate.LATE_HIT:
            total += s.decode_rate * (p.reason_tokens + p.call_tokens)
            total += s.prefill_rate * p.output_tokens
        else:
            total += s.decode_rate * (p.reason_tokens + p.call_tokens)
            total += s.prefill_rate * (p.call_tokens + p.output_tokens)
            total += 2.0 * s.dispatch_overhead + p.tool_seconds
    return total


def tool_cache_saving_terms(s: EngineScenario) -> float:
    """Exact saving of an all-hit run over the prefix-cached engine."""
    calls = sum(p.call_tokens for p in s.turns)
    tools = sum(p.tool_seconds for p in s.turns)
    return (
        2.0 * s.turn_count * s.dispatch_overhead
        + s.decode_rate * (calls - s.turn_count)
        + tools
    )


# --- hit-rate law and sweeps ------------------------------------------------

def expected_hit_rate(accept_rate: float, samples: int) -> float:
    """Chance at least one of `samples` independent guesses is right."""
    if not 0.0 <= accept_rate <= 1.0:
        raise InvalidScenario("accept_rate must lie in [0, 1]")
    if samples < 0:
        raise InvalidScenario("samples cannot be negative")
    return 1.0 - (1.0 - accept_rate) ** samples

SWEEP_HEADER = "alpha,g_over_G,T,speedup"


def sweep_client_speedup(
    accept_rates: list[float],
    draft_ratios: list[float],
    tool_times: list[float],
    gen_seconds: float,
) -> list[tuple[float, float, float, float]]:
    """Grid of client speedups over accept rate, draft/gen ratio, tool time."""
    if not accept_rates or not draft_ratios or not tool_times:
        raise EmptyGrid("sweep grid has no points")
    rows = []
    for a in accept_rates:
        for ratio in draft_ratios:
            for t in tool_times:
                s = ClientScenario(
                    gen_seconds=gen_seconds,
                    draft_seconds=ratio * gen_seconds,
                    tool_seconds=t,
                    accept_rate=a,
                )
                rows.append((a, ratio, t, client_speedup(s)))
    return rows
