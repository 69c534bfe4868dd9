"""Speculative tool execution for LM agents: model, simulators, cache service."""

from .domain import (
    CanonicalKey,
    CostClass,
    ToolCall,
    ToolSpec,
    canonical_key,
    extract_tool_call,
    render_tool_call,
)
from .engine import CacheEntry, EngineConfig, EngineSim, ToolCacheStore
from .mocks import GenerationScript, SpecConfig, Speculator, ToolRuntime
from .model import (
    ClientScenario,
    EngineScenario,
    TurnProfile,
    client_speedup,
    expected_hit_rate,
    speedup_bound,
    time_baseline_client,
    time_prefix_cached_engine,
    time_speculative_client,
    time_tool_cache_engine,
    time_vanilla_engine,
)
from .orchestrator import (
    AgentResult,
    AgentSetup,
    EngineClient,
    run_baseline,
    run_engine_scenario,
    run_speculative,
)
from .service import create_app
from .sim import Simulator
from .workload import (
    PriceSheet,
    WorkloadConfig,
    results_csv,
    run_workload,
    simulate_modes,
    throughput,
    time_saved,
)

__all__ = [
    "AgentResult",
    "AgentSetup",
    "CacheEntry",
    "CanonicalKey",
    "ClientScenario",
    "CostClass",
    "EngineClient",
    "EngineConfig",
    "EngineScenario",
    "EngineSim",
    "GenerationScript",
    "PriceSheet",
    "Simulator",
    "SpecConfig",
    "Speculator",
    "ToolCacheStore",
    "ToolCall",
    "ToolRuntime",
    "ToolSpec",
    "TurnProfile",
    "WorkloadConfig",
    "canonical_key",
    "client_speedup",
    "create_app",
    "expected_hit_rate",
    "extract_tool_call",
    "render_tool_call",
    "results_csv",
    "run_baseline",
    "run_engine_scenario",
    "run_speculative",
    "run_workload",
    "simulate_modes",
    "speedup_bound",
    "throughput",
    "time_baseline_client",
    "time_prefix_cached_engine",
    "time_saved",
    "time_speculative_client",
    "time_tool_cache_engine",
    "time_vanilla_engine",
]

__version__ = "0.1.0"
