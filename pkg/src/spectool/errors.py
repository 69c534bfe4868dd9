"""Exception types shared across the package."""

from __future__ import annotations


class SpectoolError(Exception):
    """Base class for every error raised by this package."""


class InvalidCall(SpectoolError):
    """A tool call violates a structural rule (duplicate keys, bad value type)."""


class NoToolCall(SpectoolError):
    """A token stream contains no complete tool-call span."""


class MalformedToolCall(SpectoolError):
    """A tool-call span exists but its interior cannot be parsed."""


class InvalidScenario(SpectoolError):
    """Scenario parameters violate their domain (non-positive rates, alpha out of range)."""


class LemmaHypothesisViolated(SpectoolError):
    """Speedup bound requested outside the regime where it holds (draft not faster)."""


class EmptyGrid(SpectoolError):
    """A parameter sweep was asked to run over zero grid points."""


class InvalidDelay(SpectoolError):
    """Negative delay passed to the simulator."""


class ScriptExhausted(SpectoolError):
    """A scripted model was asked to generate past its final turn."""


class UnknownTool(SpectoolError):
    """Tool execution requested for a call with no fixture and no fallback."""


class ConfigError(SpectoolError):
    """A run configuration is inconsistent or incomplete."""


class InvalidBaseline(SpectoolError):
    """Baseline duration must be positive to compute relative savings."""


class InvalidWindow(SpectoolError):
    """Throughput requested over a non-positive time window."""
