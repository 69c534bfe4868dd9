"""Agent loops and the engine-backed accounting scenarios.

Client-loop timings are checked against hand-computed turn algebra with
fixed latencies; engine-window measurements are checked against the
closed forms in model.py at tight tolerance.
"""

import pytest

from spectool.domain import (
    TOOL_END,
    TOOL_START,
    ParamSpec,
    Token,
    TokenKind,
    ToolCall,
    ToolSpec,
    canonical_key,
    make_toolset,
)
from spectool.engine import EngineConfig, EngineSim
from spectool.errors import ConfigError
from spectool.mocks import GenerationScript, SpecConfig, ToolRuntime
from spectool.model import (
    EngineScenario,
    TurnFate,
    TurnProfile,
    expected_hit_rate,
    time_engine_realized,
    time_prefix_cached_engine,
    time_tool_cache_engine,
    time_vanilla_engine,
)
from spectool.orchestrator import (
    AgentSetup,
    EngineClient,
    HopPolicy,
    PendingToolCache,
    build_scenario_script,
    chunk_text,
    outcomes_jsonl,
    run_baseline,
    run_engine_scenario,
    run_speculative,
    transcript_jsonl,
    uniform_hops,
)
from spectool.sim import Simulator


def span(name: str, payload: str) -> list[Token]:
    return [TOOL_START, Token(TokenKind.TEXT, f"{name} {payload}"), TOOL_END]


def agent_script(turns: int, latency: float = 2.0) -> GenerationScript:
    body = []
    for i in range(turns):
        body.append(
            [Token(TokenKind.TEXT, "I should look this up. ")]
            + span("fetch", '{"page": %d}' % i)
        )
    body.append([Token(TokenKind.TEXT, "All done."), Token(TokenKind.EOS)])
    return GenerationScript(body, fixed_latency=latency)


def agent_runtime(turns: int, tool_seconds: float = 2.0, seed: int = 0) -> ToolRuntime:
    fixtures = {
        canonical_key(ToolCall.of("fetch", page=i)): f"page {i} body" for i in range(turns)
    }
    return ToolRuntime(fixtures, mean=tool_seconds, stddev=0.0, seed=seed)


def make_setup(turns: int, overhead: float = 0.0, **kwargs) -> AgentSetup:
    return AgentSetup(
        script=agent_script(turns),
        runtime=agent_runtime(turns),
        dispatch_overhead=overhead,
        **kwargs,
    )


SPEC = SpecConfig(latency_seconds=0.5, accuracy=1.0, samples=1, seed=7)


def finish(sim: Simulator, result):
    sim.run_until_idle()
    assert result.done
    return result


# -- pending cache ----------------------------------------------------------


def test_pending_cache_single_flight_and_epoch():
    cache = PendingToolCache()
    key = canonical_key(ToolCall.of("fetch", page=1))
    sentinel = object()
    assert cache.add(key, sentinel)
    assert not cache.add(key, object())
    assert cache.get(key) is sentinel
    epoch = cache.epoch
    cache.clear()
    assert cache.epoch == epoch + 1
    assert cache.get(key) is None
    assert len(cache) == 0


# -- baseline loop ----------------------------------------------------------


def test_baseline_is_sequential_sum():
    sim = Simulator()
    result = finish(sim, run_baseline(sim, make_setup(1)))
    # generate 2.0 + tool 2.0 + final generate 2.0
    assert result.total_seconds == 6.0
    assert result.hits == 0
    assert [t.role for t in result.transcript] == ["user", "assistant", "tool", "assistant"]


def test_baseline_three_turns_with_overhead():
    sim = Simulator()
    result = finish(sim, run_baseline(sim, make_setup(3, overhead=0.25)))
    assert result.total_seconds == pytest.approx(3 * 4.0 + 2.0 + 4 * 0.25, abs=1e-12)


# -- speculative loop -------------------------------------------------------


def test_hit_turn_collapses_to_race_winner():
    sim = Simulator()
    result = finish(sim, run_speculative(sim, make_setup(1), SPEC, outcome_plan=[True]))
    # max(2.0, 0.5 + 2.0) + final 2.0
    assert result.total_seconds == 4.5
    assert result.hits == 1
    out = result.outcomes[0]
    assert out.spec_done_at == 0.5
    assert out.main_done_at == 2.0
    assert out.tool_done_at == 2.5
    assert out.turn_done_at == 2.5


def test_miss_turn_costs_full_sequence():
    sim = Simulator()
    result = finish(sim, run_speculative(sim, make_setup(1), SPEC, outcome_plan=[False]))
    assert result.total_seconds == 6.0
    assert result.hits == 0


def test_all_hit_three_turns():
    sim = Simulator()
    result = finish(sim, run_speculative(sim, make_setup(3), SPEC, outcome_plan=[True] * 3))
    assert result.total_seconds == 3 * 2.5 + 2.0
    assert result.hits == 3


def test_speculative_transcript_matches_baseline():
    sim_a = Simulator()
    base = finish(sim_a, run_baseline(sim_a, make_setup(2)))
    sim_b = Simulator()
    spec = finish(sim_b, run_speculative(sim_b, make_setup(2), SPEC, outcome_plan=[True, False]))
    assert transcript_jsonl(base) == transcript_jsonl(spec)


def test_duplicate_correct_samples_share_one_execution():
    sim = Simulator()
    setup = make_setup(1)
    result = finish(
        sim,
        run_speculative(
            sim,
            setup,
            SpecConfig(latency_seconds=0.5, accuracy=1.0, samples=4, seed=7),
        ),
    )
    assert result.hits == 1
    speculative = [e for e in setup.runtime.log if e.source == "speculative"]
    assert len(speculative) == 1


def test_non_speculatable_tool_is_never_preexecuted():
    toolset = make_toolset(
        [ToolSpec("fetch", (ParamSpec("page", "int"),), stateless=False)]
    )
    sim = Simulator()
    setup = make_setup(1, toolset=toolset)
    result = finish(sim, run_speculative(sim, setup, SPEC, outcome_plan=[True]))
    assert result.hits == 0
    assert result.total_seconds == 6.0
    assert all(e.source != "speculative" for e in setup.runtime.log)


def test_slow_draft_arrives_too_late_to_hit():
    slow = SpecConfig(latency_seconds=2.5, accuracy=1.0, samples=1, seed=7)
    sim = Simulator()
    setup = make_setup(2)
    result = finish(sim, run_speculative(sim, setup, slow, outcome_plan=[True, True]))
    assert result.hits == 0
    assert result.total_seconds == 2 * 4.0 + 2.0
    # the late guesses still ran, they just could not help
    assert sum(1 for e in setup.runtime.log if e.source == "speculative") == 2


def test_hit_rate_follows_at_least_one_right_guess_law():
    turns = 2
    spec = SpecConfig(latency_seconds=0.5, accuracy=0.5, samples=2, seed=0)
    hits = total = 0
    for task in range(300):
        sim = Simulator()
        setup = make_setup(turns, task_id=f"task{task}")
        result = finish(sim, run_speculative(sim, setup, spec))
        hits += result.hits
        total += turns
    assert hits / total == pytest.approx(expected_hit_rate(0.5, 2), abs=0.05)


def test_same_seed_reproduces_outcomes_exactly():
    def one_run():
        sim = Simulator()
        spec = SpecConfig(latency_seconds=0.5, accuracy=0.6, samples=2, seed=11)
        return outcomes_jsonl(finish(sim, run_speculative(sim, make_setup(3), spec)))

    assert one_run() == one_run()


def test_usage_rows_cover_draft_and_main_calls():
    sim = Simulator()
    usage: list = []
    setup = make_setup(1, usage=usage)
    finish(sim, run_speculative(sim, setup, SPEC, outcome_plan=[True]))
    endpoints = [row[0] for row in usage]
    assert endpoints.count("draft") == 1
    assert endpoints.count("main") == 2  # tool turn plus final answer


# -- scenario scripts --------------------------------------------------------


def test_chunk_text_reassembles_and_pads():
    chunks = chunk_text("abcdef", 4)
    assert len(chunks) == 4
    assert all(chunks)
    assert "".join(chunks) == "abcdef"
    padded = chunk_text("ab", 5)
    assert len(padded) == 5
    assert "".join(padded).rstrip() == "ab"
    with pytest.raises(ConfigError):
        chunk_text("abc", 0)


TWO_TURN = EngineScenario(
    dispatch_overhead=0.05,
    prefill_rate=0.001,
    decode_rate=0.02,
    prompt_tokens=1000,
    turns=(
        TurnProfile(reason_tokens=100, call_tokens=20, output_tokens=200, tool_seconds=1.0),
        TurnProfile(reason_tokens=100, call_tokens=20, output_tokens=200, tool_seconds=1.0),
    ),
)


def test_scenario_script_token_counts_are_exact():
    build = build_scenario_script(TWO_TURN)
    for i, profile in enumerate(TWO_TURN.turns):
        turn = build.script.turns[i]
        assert len(turn) == profile.reason_tokens + profile.call_tokens
        assert len(build.script.call_span_at(i)) == profile.call_tokens
        assert build.script.tool_call_at(i) == build.calls[i]
    assert build.script.turns[-1] == [Token(TokenKind.EOS)]
    assert len({c.name for c in build.calls}) == len(build.calls)


# -- engine windows vs closed forms ------------------------------------------


def test_vanilla_window_matches_closed_form():
    report = run_engine_scenario(TWO_TURN, "vanilla")
    assert report.measured_seconds == pytest.approx(time_vanilla_engine(TWO_TURN), abs=1e-9)
    assert report.measured_seconds == pytest.approx(9.22, abs=1e-9)
    assert report.fates == ["miss", "miss"]
    assert report.evictions == 2


def test_prefix_cache_window_matches_closed_form():
    report = run_engine_scenario(TWO_TURN, "prefix_cache")
    assert report.measured_seconds == pytest.approx(
        time_prefix_cached_engine(TWO_TURN), abs=1e-9
    )
    assert report.measured_seconds == pytest.approx(8.44, abs=1e-9)


def test_tool_cache_all_hits_matches_closed_form():
    report = run_engine_scenario(TWO_TURN, "tool_cache", hit_plan=[True, True])
    want = time_tool_cache_engine(
        EngineScenario(
            TWO_TURN.dispatch_overhead,
            TWO_TURN.prefill_rate,
            TWO_TURN.decode_rate,
            TWO_TURN.prompt_tokens,
            TWO_TURN.turns,
            accept_rate=1.0,
        )
    )
    assert report.measured_seconds == pytest.approx(want, abs=1e-9)
    assert report.measured_seconds == pytest.approx(5.48, abs=1e-9)
    assert report.fates == ["full_hit", "full_hit"]
    assert report.evictions == 0
    assert report.store_submissions == 2


def test_tool_cache_all_misses_equals_prefix_cached_time():
    report = run_engine_scenario(TWO_TURN, "tool_cache", hit_plan=[False, False])
    assert report.measured_seconds == pytest.approx(
        time_prefix_cached_engine(TWO_TURN), abs=1e-9
    )
    assert report.fates == ["miss", "miss"]
    assert report.store_submissions == 0


def test_tool_cache_mixed_plan_matches_realized_accounting():
    report = run_engine_scenario(TWO_TURN, "tool_cache", hit_plan=[True, False])
    want = time_engine_realized(TWO_TURN, [TurnFate.FULL_HIT, TurnFate.MISS])
    assert report.measured_seconds == pytest.approx(want, abs=1e-9)
    assert report.fates == ["full_hit", "miss"]


def test_uneven_tool_times_flow_through_vanilla_window():
    scenario = EngineScenario(
        dispatch_overhead=0.01,
        prefill_rate=0.002,
        decode_rate=0.01,
        prompt_tokens=400,
        turns=(
            TurnProfile(30, 10, 50, 0.4),
            TurnProfile(60, 12, 80, 2.2),
            TurnProfile(10, 8, 20, 0.9),
        ),
    )
    report = run_engine_scenario(scenario, "vanilla")
    assert report.measured_seconds == pytest.approx(time_vanilla_engine(scenario), abs=1e-9)


def test_engine_transcripts_agree_across_modes():
    texts = {
        transcript_jsonl(run_engine_scenario(TWO_TURN, mode, hit_plan=plan).result)
        for mode, plan in [
            ("vanilla", None),
            ("prefix_cache", None),
            ("tool_cache", [True, True]),
            ("tool_cache", [False, True]),
        ]
    }
    assert len(texts) == 1


def test_engine_event_log_is_deterministic():
    a = run_engine_scenario(TWO_TURN, "tool_cache", hit_plan=[True, False])
    b = run_engine_scenario(TWO_TURN, "tool_cache", hit_plan=[True, False])
    assert a.events == b.events
    assert a.events  # non-empty, fails loudly if logging is disabled


def test_unknown_engine_mode_rejected():
    with pytest.raises(ConfigError):
        run_engine_scenario(TWO_TURN, "turbo")


# -- EngineClient against a live engine (workload shape) ---------------------


def client_script() -> GenerationScript:
    return GenerationScript(
        [
            [Token(TokenKind.TEXT, "x"), Token(TokenKind.TEXT, "y")]
            + span("fetch", '{"page": 0}'),
            [Token(TokenKind.EOS)],
        ]
    )


def client_runtime() -> ToolRuntime:
    call = ToolCall.of("fetch", page=0)
    runtime = ToolRuntime({canonical_key(call): "page 0 body"}, mean=0.0, stddev=0.0)
    runtime.duration_map[canonical_key(call)] = 2.0
    return runtime


def run_engine_client(config: EngineConfig, spec=None, submit=True, plan=None):
    sim = Simulator()
    engine = EngineSim(sim, config)
    setup = AgentSetup(
        script=client_script(), runtime=client_runtime(), task_id="job", prompt_tokens=10
    )
    client = EngineClient(
        sim,
        engine,
        setup,
        spec=spec,
        outcome_plan=plan,
        hops=uniform_hops(0.1),
        submit_to_engine=submit,
        output_tokens_fn=lambda turn, out: 4,
    )
    client.start()
    sim.run_until_idle()
    assert client.result.done
    return client


def test_engine_baseline_round_trip_timing():
    client = run_engine_client(EngineConfig(prefill_rate=0.25, decode_rate=0.5))
    # 0.1 submit + 2.5 prefill + 1.0 reason + 1.5 span + 0.1 emit + 2.0 tool
    # + 0.1 resubmit + 1.75 suffix prefill + 0.5 final + 0.1 delivery
    assert client.result.total_seconds == pytest.approx(9.65, abs=1e-9)
    assert client.result.hits == 0


def test_engine_client_side_speculation_masks_tool_wait():
    spec = SpecConfig(latency_seconds=0.5, accuracy=1.0, samples=1, seed=3)
    client = run_engine_client(
        EngineConfig(prefill_rate=0.25, decode_rate=0.5),
        spec=spec,
        submit=False,
        plan=[True],
    )
    # tool finished at 2.6, long before the emitted call reaches us at 5.2
    assert client.result.total_seconds == pytest.approx(7.65, abs=1e-9)
    assert client.result.hits == 1


def test_engine_tool_cache_submission_keeps_sequence_resident():
    spec = SpecConfig(latency_seconds=0.5, accuracy=1.0, samples=1, seed=3)
    client = run_engine_client(
        EngineConfig(prefill_rate=0.25, decode_rate=0.5, tool_cache=True),
        spec=spec,
        submit=True,
        plan=[True],
    )
    # submit 0.1 + prefill 2.5 + reason 1.0 + validate (0.5 + 3*0.25)
    # + ingest 1.0 + final decode 0.5 + delivery 0.1
    assert client.result.total_seconds == pytest.approx(6.45, abs=1e-9)
    assert client.result.hits == 1
    assert client.engine.evictions == 0


def test_hop_policy_final_resubmission_override():
    hops = HopPolicy(initial=1.0, emit=1.0, resubmit=1.0, resubmit_final=0.0)
    assert hops.resubmit_delay(is_last_tool_turn=False) == 1.0
    assert hops.resubmit_delay(is_last_tool_turn=True) == 0.0
    assert uniform_hops(0.3).resubmit_delay(is_last_tool_turn=True) == 0.3
