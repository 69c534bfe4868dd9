"""Closed-form model checks against independently hand-computed values."""

import itertools
import random

import pytest

from spectool.errors import EmptyGrid, InvalidScenario, LemmaHypothesisViolated
from spectool.model import (
    ClientScenario,
    EngineScenario,
    TurnFate,
    TurnProfile,
    client_speedup,
    expected_hit_rate,
    speedup_bound,
    sweep_client_speedup,
    time_baseline_client,
    time_client_realized,
    time_engine_realized,
    time_prefix_cached_engine,
    time_speculative_client,
    time_tool_cache_engine,
    time_vanilla_engine,
    tool_cache_saving_terms,
)

# hand oracle: gen 2, draft 0.5, tool 2, accept 0.8, one turn
#   hit turn  = max(2, 0.5 + 2) = 2.5
#   miss turn = 2 + 2 = 4
#   spec time = 0.8 * 2.5 + 0.2 * 4 = 2.0 + 0.8 = 2.8
CLIENT = ClientScenario(gen_seconds=2.0, draft_seconds=0.5, tool_seconds=2.0, accept_rate=0.8)


def test_client_times_match_hand_arithmetic():
    assert time_baseline_client(CLIENT) == pytest.approx(4.0, rel=1e-12)
    assert time_speculative_client(CLIENT) == pytest.approx(2.8, rel=1e-12)
    assert client_speedup(CLIENT) == pytest.approx(4.0 / 2.8, rel=1e-12)


def test_speedup_ignores_turn_count():
    for n in (1, 3, 17):
        s = ClientScenario(2.0, 0.5, 2.0, 0.8, turns=n)
        assert client_speedup(s) == pytest.approx(4.0 / 2.8, rel=1e-12)
        assert time_speculative_client(s) == pytest.approx(n * 2.8, rel=1e-12)


def test_speedup_bound_values():
    # best = 4 / 2.5 = 1.6, cap = 2 - 2*0.5/4.5 = 16/9
    best, cap = speedup_bound(CLIENT)
    assert best == pytest.approx(1.6, rel=1e-12)
    assert cap == pytest.approx(2.0 - 1.0 / 4.5, rel=1e-12)
    assert best <= cap < 2.0


def test_speedup_bound_needs_fast_draft():
    slow = ClientScenario(gen_seconds=1.0, draft_seconds=1.0, tool_seconds=2.0)
    with pytest.raises(LemmaHypothesisViolated):
        speedup_bound(slow)


def test_zero_accept_rate_means_no_speedup():
    s = ClientScenario(2.0, 0.5, 2.0, accept_rate=0.0)
    assert client_speedup(s) == 1.0
    assert time_speculative_client(s) == time_baseline_client(s)


def test_speedup_strictly_increases_with_accept_rate():
    rng = random.Random(3)
    for _ in range(200):
        gen = rng.uniform(0.01, 10.0)
        draft = rng.uniform(0.001, gen * 0.999)
        tool = rng.uniform(0.01, 10.0)
        prev = None
        for a in (0.0, 0.25, 0.5, 0.75, 1.0):
            cur = client_speedup(ClientScenario(gen, draft, tool, a))
            if prev is not None:
                assert cur > prev
            prev = cur


def test_client_realized_matches_mixture():
    hits = [True, False, True, True]
    s = ClientScenario(2.0, 0.5, 2.0, 0.8, turns=4)
    assert time_client_realized(s, hits) == pytest.approx(2.5 + 4.0 + 2.5 + 2.5, rel=1e-12)


def test_scenario_validation():
    with pytest.raises(InvalidScenario):
        ClientScenario(0.0, 0.5, 1.0)
    with pytest.raises(InvalidScenario):
        ClientScenario(1.0, 0.5, 1.0, accept_rate=1.5)
    with pytest.raises(InvalidScenario):
        ClientScenario(1.0, 0.5, 1.0, turns=0)


# hand oracle for the engine forms, two identical turns:
#   overhead 0.05, prefill 0.001 s/tok, decode 0.02 s/tok, prompt 1000
#   reason 100, call 20, output 200, tool 1.0 per turn
#   prompts: 1000, then 1000+20+200 = 1220
#   vanilla = 2*2*0.05 + 0.001*(1000+1220) + 0.02*(120+120) + 2.0
#           = 0.2 + 2.22 + 4.8 + 2.0 = 9.22
#   cached  = 0.2 + 0.001*(1000+220+220) + 4.8 + 2.0 = 8.44
#   all-hit = 0.001*1440 + 0.02*(2 + 200) = 1.44 + 4.04 = 5.48
#   half    = 0.1 + 1.44 + 0.02*(1 + 200 + 20) + 1.0 = 6.96
TURN = TurnProfile(reason_tokens=100, call_tokens=20, output_tokens=200, tool_seconds=1.0)


def engine_scenario(accept_rate: float) -> EngineScenario:
    return EngineScenario(
        dispatch_overhead=0.05,
        prefill_rate=0.001,
        decode_rate=0.02,
        prompt_tokens=1000,
        turns=(TURN, TURN),
        accept_rate=accept_rate,
    )


def test_engine_times_match_hand_arithmetic():
    assert time_vanilla_engine(engine_scenario(0.0)) == pytest.approx(9.22, abs=1e-12)
    assert time_prefix_cached_engine(engine_scenario(0.0)) == pytest.approx(8.44, abs=1e-12)
    assert time_tool_cache_engine(engine_scenario(1.0)) == pytest.approx(5.48, abs=1e-12)
    assert time_tool_cache_engine(engine_scenario(0.0)) == pytest.approx(8.44, abs=1e-12)
    assert time_tool_cache_engine(engine_scenario(0.5)) == pytest.approx(6.96, abs=1e-12)


def test_all_hit_saving_decomposition():
    s = engine_scenario(1.0)
    saving = time_prefix_cached_engine(s) - time_tool_cache_engine(s)
    # 2*2*0.05 + 0.02*(40 - 2) + 2.0 = 0.2 + 0.76 + 2.0 = 2.96
    assert saving == pytest.approx(2.96, abs=1e-12)
    assert tool_cache_saving_terms(s) == pytest.approx(saving, abs=1e-12)


def test_prompt_length_recurrence():
    assert engine_scenario(0.0).prompt_lengths() == [1000, 1220]


def test_prefix_cache_never_hurts_on_long_prompts():
    # holds whenever the initial prompt dominates the final call + output;
    # the cached form charges the last turn's suffix, the vanilla form does not
    rng = random.Random(5)
    for _ in range(200):
        turns = tuple(
            TurnProfile(rng.randrange(0, 200), rng.randrange(1, 40), rng.randrange(0, 300), 0.5)
            for _ in range(rng.randrange(2, 6))
        )
        last = turns[-1]
        x1 = last.call_tokens + last.output_tokens + rng.randrange(0, 2000)
        s = EngineScenario(0.05, 0.001, 0.02, x1, turns)
        assert time_vanilla_engine(s) >= time_prefix_cached_engine(s) - 1e-12


def test_zero_prefill_rate_makes_caching_irrelevant():
    s = EngineScenario(0.05, 0.0, 0.02, 10, (TURN,))
    assert time_vanilla_engine(s) == time_prefix_cached_engine(s)


def test_single_turn_cached_charges_final_suffix():
    s = EngineScenario(0.05, 0.001, 0.02, 1000, (TURN,))
    diff = time_prefix_cached_engine(s) - time_vanilla_engine(s)
    assert diff == pytest.approx(0.001 * (20 + 200), abs=1e-12)


def test_tool_cache_time_decreases_with_accept_rate():
    prev = None
    for a in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        cur = time_tool_cache_engine(engine_scenario(a))
        if prev is not None:
            assert cur < prev
        prev = cur


def test_realized_endpoints():
    s = engine_scenario(1.0)
    full = [TurnFate.FULL_HIT, TurnFate.FULL_HIT]
    miss = [TurnFate.MISS, TurnFate.MISS]
    assert time_engine_realized(s, full) == pytest.approx(5.48, abs=1e-12)
    assert time_engine_realized(s, miss) == pytest.approx(8.44, abs=1e-12)


def test_realized_expectation_recovers_closed_form():
    for a in (0.0, 0.3, 0.5, 0.9, 1.0):
        s = engine_scenario(a)
        total = 0.0
        for fates in itertools.product([TurnFate.FULL_HIT, TurnFate.MISS], repeat=2):
            hits = sum(f is TurnFate.FULL_HIT for f in fates)
            weight = a**hits * (1 - a) ** (2 - hits)
            total += weight * time_engine_realized(s, list(fates))
        assert total == pytest.approx(time_tool_cache_engine(s), abs=1e-12)


def test_late_hit_between_full_hit_and_miss():
    s = engine_scenario(1.0)
    full = time_engine_realized(s, [TurnFate.FULL_HIT] * 2)
    late = time_engine_realized(s, [TurnFate.LATE_HIT] * 2)
    miss = time_engine_realized(s, [TurnFate.MISS] * 2)
    assert full < late < miss


def test_hit_rate_law_values():
    assert expected_hit_rate(0.3, 3) == pytest.approx(1 - 0.7**3, rel=1e-12)
    assert expected_hit_rate(0.0, 9) == 0.0
    assert expected_hit_rate(1.0, 1) == 1.0
    assert expected_hit_rate(0.5, 0) == 0.0


def test_sweep_grid_and_shape():
    rows = sweep_client_speedup([0.0, 0.25, 0.5, 0.75, 1.0], [0.25], [2.0], 2.0)
    assert len(rows) == 5
    assert all(r[3] < 2.0 for r in rows)
    assert rows[0][3] == pytest.approx(1.0, rel=1e-12)  # accept 0


def test_sweep_peaks_at_moderate_tool_time():
    # accept 1, ratio 0.25, gen 2: speedup = (2+T)/max(2, 0.5+T)
    #   T=0.02 -> 1.01,  T=2 -> 1.6,  T=200 -> ~1.0075
    rows = sweep_client_speedup([1.0], [0.25], [0.02, 2.0, 200.0], 2.0)
    by_tool = {r[2]: r[3] for r in rows}
    assert by_tool[2.0] > by_tool[0.02]
    assert by_tool[2.0] > by_tool[200.0]


def test_empty_sweep_rejected():
    with pytest.raises(EmptyGrid):
        sweep_client_speedup([], [0.25], [1.0], 2.0)
