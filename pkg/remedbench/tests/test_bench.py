from unittest import mock

import pytest

from remedbench.config import BackendName, Difficulty, PolicyName, RunConfig, SystemId
from remedbench.exceptions import ScenarioError
from remedbench.functions import bench, cluster_sim
from remedbench.functions.bench import EpisodeResult, Scenario
from remedbench.functions.chaos import FailureSpec, FailureType


def _episode(scenario_id, types, injected=True, success=False, wall=0.0, tokens=0,
             difficulty=Difficulty.EASY):
    return EpisodeResult(scenario_id=scenario_id, system_id=SystemId.SM_LIKE, difficulty=difficulty,
                         policy=PolicyName.THINKREMED, backend="oracle",
                         specs=[FailureSpec(type=t, target_service=f"svc-{i}") for i, t in enumerate(types)],
                         injected_ok=injected, success=success, wall_latency_s=wall, tokens=tokens)


@pytest.fixture
def six_episodes():
    return [
        _episode("e1", [FailureType.CPU_SATURATION], success=True, wall=2.0, tokens=100),
        _episode("e2", [FailureType.MEM_SATURATION], success=True, wall=4.0, tokens=300),
        _episode("e3", [FailureType.CPU_SATURATION], wall=9.0, tokens=500),
        _episode("e4", [FailureType.NETWORK_LOSS], wall=1.0, tokens=50),
        _episode("e5", [FailureType.POD_FAILURE], injected=False),
        _episode("e6", [FailureType.CPU_SATURATION, FailureType.NETWORK_DELAY], success=True, wall=3.0,
                 tokens=200, difficulty=Difficulty.HARD),
    ]


def test_generate_scenarios_is_deterministic():
    first = bench.generate_scenarios("sm", "easy", seed=3)
    again = bench.generate_scenarios("sm_like", Difficulty.EASY, seed=3)
    other = bench.generate_scenarios("sm", "easy", seed=4)
    assert first == again
    assert len(first.scenarios) == 23
    assert first.scenarios[0].id == "sm_like-easy-3-001"
    assert [s.specs for s in first.scenarios] != [s.specs for s in other.scenarios]


def test_scenario_shapes():
    for scenario in bench.generate_scenarios("tt", "easy", count=20).scenarios:
        assert len(scenario.specs) == 1
    for scenario in bench.generate_scenarios("tt", "medium").scenarios:
        assert len(scenario.specs) == 2
        assert len({s.target_service for s in scenario.specs}) == 2
    for scenario in bench.generate_scenarios("tt", "hard").scenarios:
        assert len(scenario.specs) in (2, 3)
        assert len({s.target_service for s in scenario.specs}) == len(scenario.specs)
        assert len({s.type.category for s in scenario.specs}) >= 2


def test_scenario_capacity():
    assert bench.scenario_capacity("sm", "easy") == 28
    assert bench.scenario_capacity("sm", "medium") == 294
    assert bench.scenario_capacity("sm", "hard") == 1392
    with pytest.raises(ScenarioError):
        bench.generate_scenarios("sm", "easy", count=29)
    with pytest.raises(ScenarioError):
        bench.generate_scenarios("sm", "easy", count=0)


def test_scenario_file_round_trip(tmp_path):
    scenario_set = bench.generate_scenarios("ob", "hard", seed=2, count=5)
    path = bench.save_scenarios(scenario_set, tmp_path / "hard.json")
    assert bench.load_scenarios(path) == scenario_set
    (tmp_path / "broken.json").write_text('{"system_id": "nowhere"}', encoding="utf-8")
    with pytest.raises(ScenarioError):
        bench.load_scenarios(tmp_path / "broken.json")
    with pytest.raises(ScenarioError):
        bench.load_scenarios(tmp_path / "missing.json")


def test_aggregate(six_episodes):
    summary = bench.aggregate(six_episodes)
    assert (summary.n_episodes, summary.n_injected, summary.n_success) == (6, 5, 3)
    assert summary.ra == pytest.approx(0.6, abs=1e-9)
    assert summary.arl_s == pytest.approx(3.0, abs=1e-9)
    assert summary.atc == pytest.approx(200.0, abs=1e-9)
    assert summary.atc_all == pytest.approx(230.0, abs=1e-9)
    cpu = summary.per_type[FailureType.CPU_SATURATION]
    assert (cpu.n, cpu.n_success) == (3, 2)
    assert cpu.ra == pytest.approx(2 / 3, abs=1e-9)
    assert summary.per_type[FailureType.NETWORK_LOSS].ra == 0.0
    assert summary.per_type[FailureType.NETWORK_DELAY].ra == 1.0
    assert FailureType.POD_FAILURE not in summary.per_type
    easy, hard = summary.per_difficulty
    assert (easy.difficulty, easy.n_episodes, easy.n_injected, easy.n_success) == (Difficulty.EASY, 5, 4, 2)
    assert easy.arl_s == pytest.approx(3.0, abs=1e-9)
    assert (hard.difficulty, hard.ra, hard.atc) == (Difficulty.HARD, 1.0, 200.0)


def test_aggregate_without_successes():
    summary = bench.aggregate([_episode("e1", [FailureType.IO_SATURATION], tokens=80),
                               _episode("e2", [FailureType.IO_SATURATION], injected=False)])
    assert summary.ra == 0.0
    assert summary.arl_s is None
    assert summary.atc is None
    assert summary.atc_all == 80.0
    nothing = bench.aggregate([_episode("e1", [FailureType.IO_SATURATION], injected=False)])
    assert nothing.ra is None
    assert bench.aggregate([]).n_episodes == 0


@pytest.mark.parametrize("system_id", list(SystemId))
def test_oracle_remediates_every_easy_scenario(oracle_config, system_id):
    config = oracle_config.model_copy(update={"system_id": system_id})
    results = bench.run_benchmark(config, progress=False)
    summary = bench.aggregate(results)
    assert summary.n_injected == len(results) == 23
    assert summary.ra == 1.0
    assert all(r.attempts == 1 for r in results)


def test_scale_only_fixes_nothing(oracle_config):
    config = oracle_config.model_copy(update={"backend": BackendName.SCALE_ONLY, "count": 10})
    summary = bench.aggregate(bench.run_benchmark(config, progress=False))
    assert summary.ra == 0.0
    assert summary.atc is None


def test_scaling_cannot_fix_application_faults_but_reflection_can(oracle_config):
    every_easy = bench.generate_scenarios("sm", "easy", count=28)
    application = every_easy.model_copy(update={"scenarios": [
        s for s in every_easy.scenarios if s.specs[0].type in (FailureType.POD_FAILURE, FailureType.CONFIG_ERROR)]})
    assert len(application.scenarios) == 8

    scaled = bench.run_benchmark(oracle_config.model_copy(update={"backend": BackendName.SCALE_ONLY}),
                                 [application], progress=False)
    assert bench.aggregate(scaled).ra == 0.0
    assert all(r.transcripts[0].status.value == "Ok" for r in scaled)

    reflective = oracle_config.model_copy(update={"policy": PolicyName.THINKREMED,
                                                  "backend": BackendName.NAIVE_THEN_ORACLE, "t_max": 1})
    results = bench.run_benchmark(reflective, [application], progress=False)
    assert bench.aggregate(results).ra == 1.0
    assert all(r.attempts == 2 for r in results)


@pytest.mark.parametrize("system_id", list(SystemId))
def test_ra_grows_with_reflection_budget(system_id):
    config = RunConfig(system_id=system_id, difficulty="easy", policy="thinkremed",
                       backend="naive_then_oracle", use_probe=False, seed=5)
    points = bench.sweep_t_max(config, [0, 1, 2, 3], progress=False)
    assert [p.t_max for p in points] == [0, 1, 2, 3]
    assert all(p.n_injected == 23 for p in points)
    assert [p.ra for p in points] == [0.0, 1.0, 1.0, 1.0]
    assert points[0].atc is None


def test_sweep_rejects_negative_budget(oracle_config):
    with pytest.raises(ScenarioError):
        bench.sweep_t_max(oracle_config.model_copy(update={"count": 1}), [-1], progress=False)


def test_news_service_case_study(oracle_config):
    case = bench.news_service_cpu_case()
    config = oracle_config.model_copy(update={"system_id": SystemId.TT_LIKE})
    result, = bench.run_benchmark(config, [case], progress=False)
    assert result.scenario_id == "tt_like-news-cpu"
    assert result.success
    assert "--limits=cpu=1000m" in result.final_playbooks[0]


def test_episode_restores_baseline(oracle_config, sm_state):
    baseline = cluster_sim.state_hash(sm_state)
    scenario = Scenario(id="pods", specs=[FailureSpec(type=FailureType.POD_FAILURE, target_service="sm-db")])
    result = bench.run_episode(scenario, oracle_config.model_copy(update={"backend": BackendName.BROKEN}),
                               state=sm_state)
    assert result.injected_ok and not result.success
    assert cluster_sim.state_hash(sm_state) == baseline


def test_failed_injection_is_not_counted(oracle_config, sm_state):
    baseline = cluster_sim.state_hash(sm_state)
    unknown = Scenario(id="x", specs=[FailureSpec(type=FailureType.NETWORK_DELAY, target_service="sm-cache")])
    twice = Scenario(id="y", specs=[FailureSpec(type=FailureType.NETWORK_DELAY, target_service="sm-db")] * 2)
    results = [bench.run_episode(s, oracle_config, state=sm_state) for s in (unknown, twice)]
    assert [r.detail for r in results] == ["injection_failed", "injection_failed"]
    assert results[0].injection_reasons == ["unknown service: sm-cache"]
    assert "already injected" in results[1].injection_reasons[0]
    assert cluster_sim.state_hash(sm_state) == baseline
    assert bench.aggregate(results).ra is None


@pytest.mark.parametrize("fraction", [0, "x"])
def test_bad_injection_params_are_not_counted(oracle_config, sm_state, fraction):
    baseline = cluster_sim.state_hash(sm_state)
    scenario = Scenario(id="bad", specs=[FailureSpec(type=FailureType.POD_FAILURE, target_service="sm-db",
                                                     params={"fraction": fraction})])
    result = bench.run_episode(scenario, oracle_config, state=sm_state)
    assert not result.injected_ok
    assert result.detail == "injection_failed"
    assert "positive number for fraction" in result.injection_reasons[0]
    assert cluster_sim.state_hash(sm_state) == baseline


@mock.patch('remedbench.functions.bench.chaos.inject')
def test_value_errors_during_injection_are_recorded(mock_inject, oracle_config, sm_state):
    mock_inject.side_effect = ValueError("could not convert string to float: 'x'")
    scenario = Scenario(id="odd", specs=[FailureSpec(type=FailureType.NETWORK_LOSS, target_service="sm-db")])
    result = bench.run_episode(scenario, oracle_config, state=sm_state)
    assert result.detail == "injection_failed"
    assert result.injection_reasons == ["could not convert string to float: 'x'"]


@mock.patch('remedbench.functions.bench.policy.sologen')
def test_policy_error_ends_the_episode(mock_sologen, oracle_config):
    mock_sologen.side_effect = RuntimeError("backend exploded")
    scenario = Scenario(id="boom", specs=[FailureSpec(type=FailureType.IO_SATURATION, target_service="sm-user")])
    result = bench.run_episode(scenario, oracle_config)
    assert result.injected_ok
    assert not result.success
    assert result.detail == "error: backend exploded"


def test_parallel_results_keep_scenario_order(oracle_config):
    scenario_set = bench.generate_scenarios("sm", "medium", seed=1, count=8)
    config = oracle_config.model_copy(update={"jobs": 4, "difficulty": Difficulty.MEDIUM})
    results = bench.run_benchmark(config, [scenario_set], progress=False)
    assert [r.scenario_id for r in results] == [s.id for s in scenario_set.scenarios]
    assert all(r.success for r in results)


def test_thinkremed_records_probe_rounds(oracle_config):
    config = oracle_config.model_copy(update={"policy": PolicyName.THINKREMED, "count": 3})
    results = bench.run_benchmark(config, progress=False)
    assert all(r.probe_rounds == 1 and r.success for r in results)
    no_probe = bench.run_benchmark(config.model_copy(update={"use_probe": False}), progress=False)
    assert all(r.probe_rounds == 0 for r in no_probe)
    assert sum(r.tokens for r in results) > sum(r.tokens for r in no_probe)


def test_every_difficulty(oracle_config):
    config = oracle_config.model_copy(update={"difficulty": None, "count": 2})
    results = bench.run_benchmark(config, progress=False)
    assert [r.difficulty for r in results] == [Difficulty.EASY] * 2 + [Difficulty.MEDIUM] * 2 + [Difficulty.HARD] * 2
