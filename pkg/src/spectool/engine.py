"""Simulated inference engine with an optional in-engine tool-output cache.

Sequence lifecycle per turn: prefill the unseen prompt tokens, decode
reasoning, decode (or validate) the tool-call span, then either ingest a
cached tool output and keep decoding, or emit the call to the client and
evict. Three engine flavors fall out of two flags: vanilla (no caching),
prefix-cached (re-prefill only new suffixes), and tool-cache (prefix
caching plus speculated tool outputs ingested in place).

Costs are charged as event durations: prefill_rate per prompt token,
decode_rate per generated token, one decode step plus prefill-rate work
for a draft validation pass. Client/engine hop latency is applied by the
caller around submissions and emissions, not here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .domain import CanonicalKey, Token, TokenKind, ToolCall, canonical_key, extract_tool_call
from .errors import ConfigError, InvalidScenario
from .mocks import GenerationScript
from .sim import Simulator


@dataclass
class CacheEntry:
    """One speculated tool result submitted for a request."""

    name: str
    output: str
    key: CanonicalKey | None = None          # absent when no params were given
    call_tokens: list[Token] = field(default_factory=list)
    output_tokens: int = 0
    keep_alive: float | None = None          # seconds; None = until request done
    submitted_at: float = 0.0


class ToolCacheStore:
    """Tool outputs keyed by (request, tool name) and (request, canonical key).

    The name index keeps only the latest entry per name: that is the draft
    a validation pass will bet on. Expired entries are invisible and
    dropped lazily. Finishing a request purges everything it submitted.
    """

    def __init__(self, clock: Callable[[], float]):
        self._clock = clock
        self._by_name: dict[tuple[str, str], CacheEntry] = {}
        self._by_key: dict[tuple[str, str], CacheEntry] = {}
        self.submissions = 0

    def _alive(self, entry: CacheEntry) -> bool:
        if entry.keep_alive is None:
            return True
        return self._clock() - entry.submitted_at <= entry.keep_alive

    def submit(self, request_id: str, entry: CacheEntry) -> None:
        """Insert or overwrite; unknown request ids are accepted as-is."""
        entry.submitted_at = self._clock()
        self._by_name[(request_id, entry.name)] = entry
        if entry.key is not None:
            self._by_key[(request_id, entry.key.hex)] = entry
        self.submissions += 1

    def lookup_name(self, request_id: str, name: str) -> CacheEntry | None:
        entry = self._by_name.get((request_id, name))
        if entry is None:
            return None
        if not self._alive(entry):
            del self._by_name[(request_id, name)]
            return None
        return entry

    def lookup_key(self, request_id: str, key: CanonicalKey) -> CacheEntry | None:
        entry = self._by_key.get((request_id, key.hex))
        if entry is None:
            return None
        if not self._alive(entry):
            del self._by_key[(request_id, key.hex)]
            return None
        return entry

    def purge_request(self, request_id: str) -> None:
        self._by_name = {k: v for k, v in self._by_name.items() if k[0] != request_id}
        self._by_key = {k: v for k, v in self._by_key.items() if k[0] != request_id}

    def live_entries(self, request_id: str) -> int:
        return sum(
            1 for (rid, _), e in self._by_name.items() if rid == request_id and self._alive(e)
        )


def validate_draft(draft: list[Token], scripted_span: list[Token]) -> tuple[int, Token | None]:
    """Greedy longest-common-prefix acceptance of a drafted tool-call span.

    Returns (accepted, next_token): the number of leading draft tokens that
    match the scripted span and the span token after them (None when the
    whole span matched). One validation pass nets accepted + 1 tokens; the
    caller stops consuming at the span boundary, because anything sampled
    beyond it would predate the tool output and be discarded anyway.
    """
    accepted = 0
    for d, s in zip(draft, scripted_span):
        if d != s:
            break
        accepted += 1
    nxt = scripted_span[accepted] if accepted < len(scripted_span) else None
    return accepted, nxt


class SeqStatus(Enum):
    NEW = "new"
    DECODE = "decode"
    WAITING_TOOL = "waiting_tool"  # evicted, client owns the tool call
    DONE = "done"


@dataclass(frozen=True)
class EngineConfig:
    prefill_rate: float
    decode_rate: float
    dispatch_overhead: float = 0.0
    batch_size: int = 64
    prefix_cache: bool = True
    tool_cache: bool = False
    validate_per_token: bool = False  # pessimistic verify: decode cost per draft token

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if min(self.prefill_rate, self.decode_rate, self.dispatch_overhead) < 0:
            raise ConfigError("rates and overhead cannot be negative")
        if self.tool_cache and not self.prefix_cache:
            raise ConfigError("the tool cache requires prefix caching")


class EngineSequence:
    """Book-keeping for one request inside the engine."""

    def __init__(self, rid: str, script: GenerationScript, prompt_tokens: int, client):
        self.rid = rid
        self.script = script
        self.client = client
        self.status = SeqStatus.NEW
        self.turn = 0                  # index into script.turns
        self.prompt_tokens = prompt_tokens
        self.cached_prefix = 0         # prompt tokens already in KV from before
        self.kv_tokens = 0
        self.turn_base = 0             # KV length when the current turn began decoding
        self.emit_pending = 0          # tokens generated/ingested since last delivery
        self.advance_on_prefill = False
        self.fates: list[str] = []     # per tool turn: full_hit|late_hit|partial_hit|miss
        self.accepted_counts: list[int] = []


def split_turn(tokens: list[Token]) -> tuple[list[Token], list[Token] | None]:
    """Split a scripted turn into (reasoning prefix, tool span or None)."""
    for i, t in enumerate(tokens):
        if t.kind is TokenKind.TOOL_START:
            for j in range(i + 1, len(tokens)):
                if tokens[j].kind is TokenKind.TOOL_END:
                    if j != len(tokens) - 1:
                        raise InvalidScenario("scripted turn continues past TOOL_END")
                    return tokens[:i], tokens[i : j + 1]
            raise InvalidScenario("scripted turn opens a span it never closes")
    return list(tokens), None


class EngineSim:
    """Event-driven engine; one instance can host many concurrent sequences.

    Clients interact through submit/resubmit plus three callbacks on their
    side: on_turn_start (streaming progress, used to begin speculating),
    on_emit (a tool call left the engine; sequence is evicted), and
    on_final (request finished). Admission beyond batch_size queues FIFO;
    resident sequences do not contend with each other.
    """

    def __init__(self, sim: Simulator, config: EngineConfig):
        self.sim = sim
        self.config = config
        self.store = ToolCacheStore(sim.clock) if config.tool_cache else None
        self.sequences: dict[str, EngineSequence] = {}
        self.events: list[str] = []
        self.observers: list[Callable[[float, str, str, int], None]] = []
        self._resident = 0
        self._admit_queue: list[EngineSequence] = []
        self.evictions = 0

    # -- plumbing ------------------------------------------------------------

    def _log(self, rid: str, phase: str, tokens: int) -> None:
        t = self.sim.now
        self.events.append(f"t={t!r} rid={rid} phase={phase} tokens={tokens}")
        for obs in self.observers:
            obs(t, rid, phase, tokens)

    # -- client-facing API ---------------------------------------------------

    def submit_request(self, rid: str, script: GenerationScript, prompt_tokens: int, client) -> None:
        if rid in self.sequences:
            raise ConfigError(f"request id {rid!r} already submitted")
        seq = EngineSequence(rid, script, prompt_tokens, client)
        self.sequences[rid] = seq
        self._admit(seq)

    def resubmit(self, rid: str, prompt_tokens: int, turn_resolved: bool) -> None:
        """Continue an evicted request with a longer prompt.

        turn_resolved marks that the prompt now carries the missed turn's
        call and output, so decoding resumes at the next scripted turn.
        """
        seq = self.sequences[rid]
        if seq.status is not SeqStatus.WAITING_TOOL:
            raise ConfigError(f"request {rid!r} is not waiting on a tool")
        seq.prompt_tokens = prompt_tokens
        seq.advance_on_prefill = turn_resolved
        seq.status = SeqStatus.NEW
        self._admit(seq)

    def submit_tool_cache(self, rid: str, entry: CacheEntry) -> int:
        """Accept one speculated tool result; visible to the next lookup."""
        if self.store is None:
            raise ConfigError("this engine has no tool cache")
        self.store.submit(rid, entry)
        return 1

    # -- admission and phases ------------------------------------------------

    def _admit(self, seq: EngineSequence) -> None:
        if self._resident < self.config.batch_size:
            self._resident += 1
            self._start_prefill(seq)
        else:
            self._admit_queue.append(seq)

    def _pull_queue(self) -> None:
        while self._admit_queue and self._resident < self.config.batch_size:
            self._resident += 1
            self._start_prefill(self._admit_queue.pop(0))

    def _start_prefill(self, seq: EngineSequence) -> None:
        seq.client.on_turn_start(seq.rid, seq.turn + (1 if seq.advance_on_prefill else 0))
        cached = seq.cached_prefix if self.config.prefix_cache else 0
        new_tokens = seq.prompt_tokens - cached
        if new_tokens < 0:
            raise InvalidScenario("resubmitted prompt shrank below the cached prefix")
        self.sim.schedule(
            self.config.prefill_rate * new_tokens,
            lambda: self._prefill_done(seq, new_tokens),
            name=f"prefill_{seq.rid}",
        )

    def _prefill_done(self, seq: EngineSequence, new_tokens: int) -> None:
        self._log(seq.rid, "prefill", new_tokens)
        seq.kv_tokens = seq.prompt_tokens
        if seq.advance_on_prefill:
            seq.advance_on_prefill = False
            seq.turn += 1
        seq.status = SeqStatus.DECODE
        self._decode_turn(seq)

    def _decode_turn(self, seq: EngineSequence) -> None:
        seq.turn_base = seq.kv_tokens
        reason, span = split_turn(seq.script.turns[seq.turn])
        if span is None:
            self.sim.schedule(
                self.config.decode_rate * len(reason),
                lambda: self._final_done(seq, reason),
                name=f"final_{seq.rid}",
            )
            return
        self.sim.schedule(
            self.config.decode_rate * len(reason),
            lambda: self._reason_done(seq, reason, span),
            name=f"reason_{seq.rid}",
        )

    def _reason_done(self, seq: EngineSequence, reason: list[Token], span: list[Token]) -> None:
        if reason:
            self._log(seq.rid, "decode", len(reason))
        seq.kv_tokens += len(reason)
        seq.emit_pending += len(reason)
        call = extract_tool_call(span)
        entry = self.store.lookup_name(seq.rid, call.name) if self.store else None
        if entry is not None and entry.call_tokens:
            accepted, _ = validate_draft(entry.call_tokens, span)
            consume = len(span) if accepted >= len(span) else accepted + 1
            if self.config.validate_per_token:
                cost = self.config.decode_rate * (accepted + 1)
            else:
                cost = self.config.decode_rate + self.config.prefill_rate * accepted
            self.sim.schedule(
                cost,
                lambda: self._validated(seq, span, call, accepted, consume),
                name=f"validate_{seq.rid}",
            )
        else:
            self.sim.schedule(
                self.config.decode_rate * len(span),
                lambda: self._span_decoded(seq, span, call, validated=None),
                name=f"call_{seq.rid}",
            )

    def _validated(
        self, seq: EngineSequence, span: list[Token], call: ToolCall, accepted: int, consume: int
    ) -> None:
        self._log(seq.rid, "validate", accepted)
        seq.accepted_counts.append(accepted)
        seq.kv_tokens += consume
        seq.emit_pending += consume
        remaining = len(span) - consume
        if remaining > 0:
            self.sim.schedule(
                self.config.decode_rate * remaining,
                lambda: self._span_decoded(seq, span, call, validated=accepted, tokens=remaining),
                name=f"call_rest_{seq.rid}",
            )
        else:
            self._span_end(seq, span, call, validated=accepted)

    def _span_decoded(
        self,
        seq: EngineSequence,
        span: list[Token],
        call: ToolCall,
        validated: int | None,
        tokens: int | None = None,
    ) -> None:
        n = len(span) if tokens is None else tokens
        self._log(seq.rid, "decode", n)
        seq.kv_tokens += n
        seq.emit_pending += n
        self._span_end(seq, span, call, validated)

    def _span_end(
        self, seq: EngineSequence, span: list[Token], call: ToolCall, validated: int | None
    ) -> None:
        full = validated is not None and validated >= len(span)
        if self.store is not None:
            entry = self.store.lookup_key(seq.rid, canonical_key(call))
            if entry is not None:
                if full:
                    seq.fates.append("full_hit")
                elif validated is None:
                    seq.fates.append("late_hit")
                else:
                    seq.fates.append("partial_hit")
                self._ingest(seq, entry)
                return
        seq.fates.append("miss")
        self._emit_and_evict(seq, span, call)

    def _ingest(self, seq: EngineSequence, entry: CacheEntry) -> None:
        self.sim.schedule(
            self.config.prefill_rate * entry.output_tokens,
            lambda: self._ingest_done(seq, entry),
            name=f"ingest_{seq.rid}",
        )

    def _ingest_done(self, seq: EngineSequence, entry: CacheEntry) -> None:
        self._log(seq.rid, "ingest", entry.output_tokens)
        seq.kv_tokens += entry.output_tokens
        seq.emit_pending += entry.output_tokens
        seq.prompt_tokens = seq.kv_tokens
        seq.turn += 1
        seq.client.on_ingest(seq.rid, seq.turn - 1, entry)
        seq.client.on_turn_start(seq.rid, seq.turn)
        self._decode_turn(seq)

    def _emit_and_evict(self, seq: EngineSequence, span: list[Token], call: ToolCall) -> None:
        delivered = seq.emit_pending
        seq.emit_pending = 0
        self._log(seq.rid, "emit", delivered)
        self._log(seq.rid, "evict", seq.kv_tokens)
        self.evictions += 1
        # follow-up prompts replay only the call and its output, not the
        # interim reasoning, so the KV from before this turn is the prefix
        seq.cached_prefix = seq.turn_base
        seq.status = SeqStatus.WAITING_TOOL
        seq.kv_tokens = 0
        self._resident -= 1
        self._pull_queue()
        seq.client.on_emit(seq.rid, seq.turn, span, call, seq.turn_base)

    def _final_done(self, seq: EngineSequence, tokens: list[Token]) -> None:
        self._log(seq.rid, "decode", len(tokens))
        seq.kv_tokens += len(tokens)
        seq.emit_pending += len(tokens)
        delivered = seq.emit_pending
        seq.emit_pending = 0
        self._log(seq.rid, "emit", delivered)
        seq.status = SeqStatus.DONE
        self._resident -= 1
        self._pull_queue()
        if self.store is not None:
            self.store.purge_request(seq.rid)
        seq.client.on_final(seq.rid, tokens)
