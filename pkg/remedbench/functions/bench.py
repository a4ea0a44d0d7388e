"""Benchmark harness: scenario generation, the episode loop and metric aggregation."""
import itertools
import logging
import random
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from statistics import fmean
from typing import Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError
from tqdm import tqdm

from remedbench.config import DEFAULT_SCENARIO_COUNTS, Difficulty, PolicyName, RunConfig, SystemId, resolve_system
from remedbench.exceptions import RemedBenchError, ScenarioError
from remedbench.functions import chaos, cluster_sim, policy
from remedbench.functions.backends import make_backend
from remedbench.functions.chaos import FailureSpec, FailureType, InjectionRecord
from remedbench.functions.cluster_sim import ClusterState
from remedbench.functions.playbook import Inventory, Transcript
from remedbench.functions.prompts import build_report
from remedbench.functions.verify import VerifyOutcome

logger = logging.getLogger(__name__)

# (spec sizes, minimum number of distinct failure categories)
_SHAPES = {
    Difficulty.EASY: ((1,), 1),
    Difficulty.MEDIUM: ((2,), 1),
    Difficulty.HARD: ((2, 3), 2),
}


class Scenario(BaseModel):
    id: str
    specs: List[FailureSpec]
    difficulty: Optional[Difficulty] = None


class ScenarioSet(BaseModel):
    system_id: SystemId
    difficulty: Difficulty
    seed: int = 0
    scenarios: List[Scenario] = Field(default_factory=list)


class EpisodeResult(BaseModel):
    scenario_id: str
    system_id: SystemId
    difficulty: Optional[Difficulty] = None
    policy: PolicyName
    backend: str
    specs: List[FailureSpec]
    injected_ok: bool = False
    injection_reasons: List[str] = Field(default_factory=list)
    success: bool = False
    attempts: int = 0
    wall_latency_s: float = 0.0
    attempt_latencies_s: List[float] = Field(default_factory=list)
    tokens: int = 0
    tokens_estimated: bool = False
    availability_violations: int = 0
    probe_rounds: int = 0
    detail: Optional[str] = None
    final_playbooks: List[Optional[str]] = Field(default_factory=list)
    transcripts: List[Transcript] = Field(default_factory=list)
    verify_outcomes: List[VerifyOutcome] = Field(default_factory=list)
    messages: List[Dict[str, str]] = Field(default_factory=list)

    @property
    def failure_types(self) -> List[FailureType]:
        return list(dict.fromkeys(s.type for s in self.specs))


class TypeStats(BaseModel):
    n: int = 0
    n_success: int = 0
    ra: Optional[float] = None


class SummaryRow(BaseModel):
    system_id: SystemId
    difficulty: Optional[Difficulty] = None
    policy: PolicyName
    backend: str
    n_episodes: int = 0
    n_injected: int = 0
    n_success: int = 0
    ra: Optional[float] = None
    arl_s: Optional[float] = None
    atc: Optional[float] = None
    atc_all: Optional[float] = None


class MetricsSummary(BaseModel):
    n_episodes: int = 0
    n_injected: int = 0
    n_success: int = 0
    ra: Optional[float] = None
    arl_s: Optional[float] = None
    atc: Optional[float] = None
    atc_all: Optional[float] = None
    availability_violations: int = 0
    per_type: Dict[FailureType, TypeStats] = Field(default_factory=dict)
    per_difficulty: List[SummaryRow] = Field(default_factory=list)


class SweepPoint(BaseModel):
    t_max: int
    n_injected: int
    n_success: int
    ra: Optional[float] = None
    arl_s: Optional[float] = None
    atc: Optional[float] = None


# ---------------------------------------------------------------------------
# scenarios


def _combinations(services: List[str], difficulty: Difficulty) -> List[Tuple[Tuple[FailureType, str], ...]]:
    sizes, min_categories = _SHAPES[difficulty]
    space = []
    for size in sizes:
        for group in itertools.combinations(services, size):
            for types in itertools.product(list(FailureType), repeat=size):
                if len({t.category for t in types}) >= min_categories:
                    space.append(tuple(zip(types, group)))
    return space


def scenario_capacity(system_id, difficulty) -> int:
    services = list(cluster_sim.load_builtin_topology(resolve_system(system_id).value).deployments)
    return len(_combinations(services, Difficulty(difficulty)))


def generate_scenarios(system_id, difficulty, seed: int = 0, count: Optional[int] = None) -> ScenarioSet:
    """Sample scenarios without replacement. The same arguments always give the same set."""
    system = resolve_system(system_id)
    difficulty = Difficulty(difficulty)
    count = DEFAULT_SCENARIO_COUNTS[difficulty] if count is None else count
    if count < 1:
        raise ScenarioError("count must be >= 1")
    services = list(cluster_sim.load_builtin_topology(system.value).deployments)
    space = _combinations(services, difficulty)
    if count > len(space):
        raise ScenarioError(f"{system.value} {difficulty.value} has room for {len(space)} scenarios, "
                            f"{count} requested")
    rng = random.Random(f"{system.value}:{difficulty.value}:{seed}")
    picked = rng.sample(space, count)
    scenarios = [
        Scenario(id=f"{system.value}-{difficulty.value}-{seed}-{i:03d}", difficulty=difficulty,
                 specs=[FailureSpec(type=t, target_service=s) for t, s in combo])
        for i, combo in enumerate(picked, start=1)
    ]
    logger.debug(f"Generated {count} {difficulty.value} scenarios for {system.value} (seed {seed})")
    return ScenarioSet(system_id=system, difficulty=difficulty, seed=seed, scenarios=scenarios)


def news_service_cpu_case() -> ScenarioSet:
    """CPU saturation on the news service of the train-ticket-like system: one replica, 500m limit."""
    scenario = Scenario(id="tt_like-news-cpu", difficulty=Difficulty.EASY,
                        specs=[FailureSpec(type=FailureType.CPU_SATURATION, target_service="ts-news-service")])
    return ScenarioSet(system_id=SystemId.TT_LIKE, difficulty=Difficulty.EASY, scenarios=[scenario])


def save_scenarios(scenario_set: ScenarioSet, path) -> Path:
    path = Path(path)
    try:
        path.write_text(scenario_set.model_dump_json(indent=2), encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"cannot write scenario file {path}: {e}")
    return path


def load_scenarios(path) -> ScenarioSet:
    path = Path(path)
    try:
        return ScenarioSet.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ScenarioError(f"cannot read scenario file {path}: {e}")
    except ValidationError as e:
        raise ScenarioError(f"malformed scenario file {path}: {e.errors()[0]['msg']}")


# ---------------------------------------------------------------------------
# episodes


def _inject_all(state: ClusterState, specs: List[FailureSpec], seed: int) -> List[InjectionRecord]:
    records = []
    for spec in specs:
        try:
            state, record = chaos.inject(state, spec, seed=seed)
        except (RemedBenchError, ValueError) as e:
            record = InjectionRecord(spec=spec, injected_ok=False, reason=str(e), injected_at_clock=state.clock_s)
        records.append(record)
        if not record.injected_ok:
            break
    return records


def _run_policy(config: RunConfig, state: ClusterState, records: List[InjectionRecord]) -> policy.PolicyOutcome:
    inventory = Inventory()
    report = build_report(state, records, inventory)
    thinking = config.policy == PolicyName.THINKREMED
    backend = make_backend(config.backend, records, state,
                           probe_first=thinking and config.use_probe and config.probe_budget > 0,
                           endpoint=config.endpoint, model=config.model)
    if not thinking:
        return policy.sologen(report, backend, state, records, inventory=inventory, timeout_s=config.timeout_s)
    return policy.thinkremed(report, backend, state, records, t_max=config.t_max,
                             probe_budget=config.probe_budget, use_probe=config.use_probe,
                             use_reflection=config.use_reflection, inventory=inventory,
                             timeout_s=config.timeout_s)


def run_episode(scenario: Scenario, config: RunConfig, system_id=None,
                state: Optional[ClusterState] = None) -> EpisodeResult:
    """Inject, report, remediate, verify, then put the cluster back to its baseline."""
    system = resolve_system(system_id or config.system_id)
    state = state if state is not None else cluster_sim.load_builtin_topology(system.value)
    result = EpisodeResult(scenario_id=scenario.id, system_id=system, difficulty=scenario.difficulty,
                           policy=config.policy, backend=config.backend.value, specs=scenario.specs)
    logger.info(f"Episode {scenario.id}: {', '.join(f'{s.type.value}@{s.target_service}' for s in scenario.specs)}")
    try:
        records = _inject_all(state, scenario.specs, config.seed)
        result.injection_reasons = [r.reason for r in records if not r.injected_ok and r.reason]
        if len(records) < len(scenario.specs) or not all(r.injected_ok for r in records):
            logger.warning(f"Episode {scenario.id} not injected: {'; '.join(result.injection_reasons)}")
            result.detail = "injection_failed"
            return result
        result.injected_ok = True
        try:
            outcome = _run_policy(config, state, records)
        except Exception as e:
            logger.error(f"Episode {scenario.id} policy error: {e}")
            result.detail = f"error: {e}"
            return result
        result.success = outcome.success
        result.attempts = outcome.attempts_used
        result.wall_latency_s = outcome.wall_latency_s
        result.attempt_latencies_s = outcome.attempt_latencies_s
        result.tokens = outcome.tokens
        result.tokens_estimated = outcome.chat.token_usage.estimated
        result.availability_violations = outcome.availability_violations
        result.probe_rounds = outcome.chat.probe_rounds
        result.detail = outcome.detail
        result.final_playbooks = outcome.final_playbooks
        result.transcripts = outcome.transcripts
        result.verify_outcomes = outcome.verify_outcomes
        result.messages = outcome.chat.messages
    finally:
        cluster_sim.reset(state)
    logger.info(f"Episode {scenario.id}: {'remediated' if result.success else 'not remediated'} "
                f"after {result.attempts} attempt(s)")
    return result


def run_benchmark(config: RunConfig, scenario_sets: Optional[List[ScenarioSet]] = None,
                  progress: bool = True) -> List[EpisodeResult]:
    """Run every scenario on its own cluster. Results keep scenario order whatever the job count."""
    if scenario_sets is None:
        scenario_sets = [generate_scenarios(config.system_id, d, config.seed, config.count)
                         for d in config.difficulties()]
    jobs = [(s.system_id, sc) for s in scenario_sets for sc in s.scenarios]
    results: List[Optional[EpisodeResult]] = [None] * len(jobs)
    with ThreadPoolExecutor(max_workers=config.jobs) as executor:
        future_to_index = {
            executor.submit(run_episode, scenario, config, system): i
            for i, (system, scenario) in enumerate(jobs)
        }
        for future in tqdm(as_completed(future_to_index), total=len(jobs), desc="Episodes", unit="episode",
                           disable=None if progress else True):
            results[future_to_index[future]] = future.result()
    return results


def sweep_t_max(config: RunConfig, values: Iterable[int], scenario_sets: Optional[List[ScenarioSet]] = None,
                progress: bool = True) -> List[SweepPoint]:
    """Run one scenario set under several reflection budgets."""
    if scenario_sets is None:
        scenario_sets = [generate_scenarios(config.system_id, d, config.seed, config.count)
                         for d in config.difficulties()]
    points = []
    for t_max in values:
        if t_max < 0:
            raise ScenarioError("t_max values must be >= 0")
        results = run_benchmark(config.model_copy(update={"t_max": t_max}), scenario_sets, progress=progress)
        summary = aggregate(results)
        points.append(SweepPoint(t_max=t_max, n_injected=summary.n_injected, n_success=summary.n_success,
                                 ra=summary.ra, arl_s=summary.arl_s, atc=summary.atc))
        logger.info(f"t_max={t_max}: RA {summary.ra}")
    return points


# ---------------------------------------------------------------------------
# metrics


def _mean(values: List[float]) -> Optional[float]:
    return fmean(values) if values else None


def _fold(results: List[EpisodeResult]) -> Dict:
    injected = [r for r in results if r.injected_ok]
    successes = [r for r in injected if r.success]
    return {
        "n_episodes": len(results),
        "n_injected": len(injected),
        "n_success": len(successes),
        "ra": len(successes) / len(injected) if injected else None,
        "arl_s": _mean([r.wall_latency_s for r in successes]),
        "atc": _mean([float(r.tokens) for r in successes]),
        "atc_all": _mean([float(r.tokens) for r in injected]),
    }


def aggregate(results: List[EpisodeResult]) -> MetricsSummary:
    """RA over injected episodes; ARL and ATC over successful ones, absent when there are none."""
    summary = MetricsSummary(**_fold(results))
    summary.availability_violations = sum(r.availability_violations for r in results)

    for failure_type in FailureType:
        involved = [r for r in results if r.injected_ok and failure_type in r.failure_types]
        if involved:
            won = sum(1 for r in involved if r.success)
            summary.per_type[failure_type] = TypeStats(n=len(involved), n_success=won, ra=won / len(involved))

    groups: Dict[Tuple, List[EpisodeResult]] = {}
    for r in results:
        groups.setdefault((r.system_id, r.difficulty, r.policy, r.backend), []).append(r)
    for (system, difficulty, policy_name, backend), members in groups.items():
        summary.per_difficulty.append(SummaryRow(system_id=system, difficulty=difficulty, policy=policy_name,
                                                 backend=backend, **_fold(members)))
    return summary
