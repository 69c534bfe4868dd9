"""Core vocabulary: tokens, tool specs, tool calls, canonical cache keys.

A tool call travels between components in three forms: as a structured
ToolCall, as a token span (TOOL_START marker, payload text, TOOL_END marker),
and as a canonical byte key used by every cache in the package. The byte key
is the identity of a call: two calls that spell the same arguments
differently (3 vs 3.0, reordered keys) must map to the same key.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

from .errors import ConfigError, InvalidCall, MalformedToolCall, NoToolCall

Scalar = str | int | float | bool | None


class TokenKind(Enum):
    TEXT = "text"
    TOOL_START = "tool_start"
    TOOL_END = "tool_end"
    EOS = "eos"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str = ""


TOOL_START = Token(TokenKind.TOOL_START)
TOOL_END = Token(TokenKind.TOOL_END)
EOS = Token(TokenKind.EOS)


def text_tokens(*chunks: str) -> list[Token]:
    return [Token(TokenKind.TEXT, c) for c in chunks]


class CostClass(Enum):
    CHEAP = "cheap"
    EXPENSIVE = "expensive"


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str = "string"


@dataclass(frozen=True)
class ToolSpec:
    """Declaration of a callable tool.

    Only stateless, cheap tools may be executed ahead of confirmation: a
    speculative run of anything else would have visible side effects or a
    real price tag attached to a guess.
    """

    name: str
    params: tuple[ParamSpec, ...] = ()
    stateless: bool = True
    cost_class: CostClass = CostClass.CHEAP

    @property
    def speculatable(self) -> bool:
        return self.stateless and self.cost_class is CostClass.CHEAP


def make_toolset(specs: list[ToolSpec] | tuple[ToolSpec, ...]) -> dict[str, ToolSpec]:
    """Index specs by name, rejecting duplicates."""
    out: dict[str, ToolSpec] = {}
    for s in specs:
        if s.name in out:
            raise ConfigError(f"duplicate tool name {s.name!r} in toolset")
        out[s.name] = s
    return out


@dataclass(frozen=True)
class ToolCall:
    """A named call with an ordered list of (key, value) scalar arguments."""

    name: str
    args: tuple[tuple[str, Scalar], ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise InvalidCall("tool call needs a non-empty name")
        object.__setattr__(self, "args", tuple((k, v) for k, v in self.args))
        seen = set()
        for key, value in self.args:
            if not isinstance(key, str):
                raise InvalidCall(f"argument key {key!r} is not a string")
            if key in seen:
                raise InvalidCall(f"duplicate argument key {key!r}")
            seen.add(key)
            _canon_scalar(value)  # validates the value type

    @classmethod
    def of(cls, name: str, **kwargs: Scalar) -> "ToolCall":
        return cls(name, tuple(kwargs.items()))


@dataclass(frozen=True)
class CanonicalKey:
    """Opaque, order-insensitive identity of a tool call."""

    data: bytes

    @property
    def hex(self) -> str:
        return self.data.hex()

    def __repr__(self) -> str:  # keep logs short
        return f"CanonicalKey({self.data!r})"


def _canon_scalar(value: Scalar) -> str:
    # bool first: it is an int subclass
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return repr(value)
    if isinstance(value, float):
        # shortest decimal that round-trips; integral floats collapse to the
        # integer spelling so 3.0 and 3 share a key
        if math.isfinite(value) and value == int(value):
            return repr(int(value))
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if value is None:
        return "null"
    raise InvalidCall(f"argument value {value!r} is not a flat scalar")


def canonical_key(call: ToolCall) -> CanonicalKey:
    """Serialize a call to its canonical byte key.

    Keys are sorted by their UTF-8 bytes and values rendered in one fixed
    spelling each, so formatting and ordering differences vanish.
    """
    ordered = sorted(call.args, key=lambda kv: kv[0].encode("utf-8"))
    body = ",".join(
        f"{json.dumps(k, ensure_ascii=False)}:{_canon_scalar(v)}" for k, v in ordered
    )
    return CanonicalKey(f"{call.name}({body})".encode("utf-8"))


def render_tool_call(call: ToolCall) -> list[Token]:
    """Wire form: marker, 'name {json args}' payload, closing marker."""
    payload = f"{call.name} {json.dumps(dict(call.args))}"
    return [TOOL_START, Token(TokenKind.TEXT, payload), TOOL_END]


def _parse_payload(payload: str) -> ToolCall:
    head = payload.strip()
    if not head:
        raise MalformedToolCall("empty tool-call payload")
    name, _, rest = head.partition(" ")
    try:
        obj = json.loads(rest)
    except json.JSONDecodeError as e:
        raise MalformedToolCall(f"bad argument JSON in {payload!r}: {e}") from e
    if not isinstance(obj, dict):
        raise MalformedToolCall("tool-call arguments must be a JSON object")
    for v in obj.values():
        if isinstance(v, (dict, list)):
            raise MalformedToolCall("tool-call arguments must be flat scalars")
    try:
        return ToolCall(name, tuple(obj.items()))
    except InvalidCall as e:
        raise MalformedToolCall(str(e)) from e


def extract_tool_call(tokens: list[Token]) -> ToolCall:
    """Return the last complete tool call in a token stream.

    Agents sometimes emit several calls while thinking; the one that counts
    is the final complete one. An opened span that never closes marks the
    stream as malformed rather than merely call-free.
    """
    spans: list[str] = []
    open_parts: list[str] | None = None
    for tok in tokens:
        if tok.kind is TokenKind.TOOL_START:
            if open_parts is not None:
                raise MalformedToolCall("nested tool-call markers")
            open_parts = []
        elif tok.kind is TokenKind.TOOL_END:
            if open_parts is None:
                raise MalformedToolCall("closing marker without opening marker")
            spans.append("".join(open_parts))
            open_parts = None
        elif open_parts is not None:
            if tok.kind is not TokenKind.TEXT:
                raise MalformedToolCall("non-text token inside tool-call span")
            open_parts.append(tok.text)
    if open_parts is not None:
        raise MalformedToolCall("unterminated tool-call span")
    if not spans:
        raise NoToolCall("no complete tool-call span in stream")
    return _parse_payload(spans[-1])


def validate_stream(tokens: list[Token]) -> None:
    """Check script well-formedness: EOS only final, spans properly paired."""
    depth = 0
    for i, tok in enumerate(tokens):
        if tok.kind is TokenKind.EOS and i != len(tokens) - 1:
            raise MalformedToolCall("EOS before end of stream")
        if tok.kind is TokenKind.TOOL_START:
            if depth:
                raise MalformedToolCall("nested tool-call markers")
            depth = 1
        elif tok.kind is TokenKind.TOOL_END:
            if not depth:
                raise MalformedToolCall("closing marker without opening marker")
            depth = 0
        elif tok.kind is TokenKind.EOS and depth:
            raise MalformedToolCall("EOS inside tool-call span")
    if depth:
        raise MalformedToolCall("unterminated tool-call span")


def assistant_text(tokens: list[Token]) -> str:
    """Concatenated free text outside tool-call spans."""
    parts: list[str] = []
    depth = 0
    for tok in tokens:
        if tok.kind is TokenKind.TOOL_START:
            depth += 1
        elif tok.kind is TokenKind.TOOL_END:
            depth -= 1
        elif tok.kind is TokenKind.TEXT and depth == 0:
            parts.append(tok.text)
    return "".join(parts)


def token_estimate(text: str) -> int:
    """Rough 4-bytes-per-token sizing for tool outputs fed back as context."""
    return max(1, (len(text.encode("utf-8")) + 3) // 4)


@dataclass(frozen=True)
class AgentTurn:
    """One transcript entry: user prompt, assistant output, or tool result."""

    role: str  # user | assistant | tool
    content: str = ""
    tool_call: ToolCall | None = None
    tool_output: str | None = None

    def to_json(self) -> dict:
        out: dict = {"role": self.role, "content": self.content}
        if self.tool_call is not None:
            out["tool_call"] = {"name": self.tool_call.name, "args": dict(self.tool_call.args)}
        if self.tool_output is not None:
            out["tool_output"] = self.tool_output
        return out
