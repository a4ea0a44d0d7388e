"""Targeted status verification against the injection ground truth."""
import logging
from typing import List, Union

from pydantic import BaseModel

from remedbench.exceptions import VerifyError
from remedbench.functions import cluster_sim
from remedbench.functions.chaos import FailureType, InjectionRecord
from remedbench.functions.cluster_sim import ClusterState

logger = logging.getLogger(__name__)

CPU_UTIL_THRESHOLD = 0.8
MEM_FRACTION_THRESHOLD = 0.8
IO_WAIT_THRESHOLD = 20.0
LOSS_THRESHOLD = 1.0
DELAY_SLACK_MS = 10.0


class Check(BaseModel):
    name: str
    observed: Union[float, str]
    threshold: str
    ok: bool


class VerifyOutcome(BaseModel):
    passed: bool
    checks: List[Check]
    detail: str = ""


def _ready_check(metrics) -> Check:
    ok = metrics.desired >= 1 and metrics.ready == metrics.desired
    return Check(name="ready", observed=f"{metrics.ready}/{metrics.desired}",
                 threshold="ready == desired >= 1", ok=ok)


def verify(state: ClusterState, record: InjectionRecord) -> VerifyOutcome:
    if not record.injected_ok:
        raise VerifyError(f"cannot verify a failed injection: {record.reason}")
    service = record.spec.target_service
    failure = record.spec.type
    m = cluster_sim.observe(state, service)
    checks = []
    if failure == FailureType.CPU_SATURATION:
        util = round(m.max_cpu_util, 6)
        checks.append(Check(name="cpu_utilization", observed=util, threshold=f"< {CPU_UTIL_THRESHOLD}",
                            ok=util < CPU_UTIL_THRESHOLD))
        checks.append(_ready_check(m))
    elif failure == FailureType.MEM_SATURATION:
        frac = round(m.max_mem_fraction, 6)
        checks.append(Check(name="memory_fraction", observed=frac, threshold=f"< {MEM_FRACTION_THRESHOLD}",
                            ok=frac < MEM_FRACTION_THRESHOLD))
        checks.append(_ready_check(m))
    elif failure == FailureType.IO_SATURATION:
        checks.append(Check(name="io_wait_pct", observed=m.max_io_wait, threshold=f"< {IO_WAIT_THRESHOLD:g}",
                            ok=m.max_io_wait < IO_WAIT_THRESHOLD))
        checks.append(_ready_check(m))
    elif failure == FailureType.NETWORK_LOSS:
        checks.append(Check(name="loss_pct", observed=m.loss_pct, threshold=f"<= {LOSS_THRESHOLD:g}",
                            ok=m.loss_pct <= LOSS_THRESHOLD))
    elif failure == FailureType.NETWORK_DELAY:
        limit = m.base_delay_ms + DELAY_SLACK_MS
        checks.append(Check(name="delay_ms", observed=m.delay_ms, threshold=f"<= {limit:g}",
                            ok=m.delay_ms <= limit))
    elif failure == FailureType.POD_FAILURE:
        checks.append(_ready_check(m))
        checks.append(Check(name="failed_pods", observed=float(m.failed), threshold="== 0", ok=m.failed == 0))
    elif failure == FailureType.CONFIG_ERROR:
        env = record.corrupted_env
        current = cluster_sim.get_deployment(state, service).template.env.get(env.key, "<unset>")
        checks.append(Check(name=f"env.{env.key}", observed=current, threshold=f"== {env.baseline_value!r}",
                            ok=current == env.baseline_value))
        checks.append(_ready_check(m))

    passed = all(c.ok for c in checks)
    failing = [c.name for c in checks if not c.ok]
    detail = "remediated" if passed else "still failing: " + ", ".join(failing)
    logger.debug(f"verify {failure.value} on {service}: {detail}")
    return VerifyOutcome(passed=passed, checks=checks, detail=detail)


def verify_all(state: ClusterState, records: List[InjectionRecord]) -> List[VerifyOutcome]:
    return [verify(state, r) for r in records]


def all_passed(outcomes: List[VerifyOutcome]) -> bool:
    """Episode success: a non-empty list where every outcome passed."""
    return bool(outcomes) and all(o.passed for o in outcomes)


def combine_outcomes(outcomes: List[VerifyOutcome], records: List[InjectionRecord]) -> VerifyOutcome:
    """Fold per-fault outcomes of one attempt into a single outcome."""
    checks = []
    for outcome, record in zip(outcomes, records):
        prefix = f"{record.spec.type.value}:{record.spec.target_service}"
        checks += [c.model_copy(update={"name": f"{prefix}.{c.name}"}) for c in outcome.checks]
    passed = all_passed(outcomes)
    details = [o.detail for o in outcomes if not o.passed]
    return VerifyOutcome(passed=passed, checks=checks,
                         detail="remediated" if passed else "; ".join(details) or "nothing to verify")
