"""Failure injection: runtime chaos objects plus direct configuration corruption."""
import logging
import math
import random
import shlex
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from remedbench.exceptions import ChaosError
from remedbench.functions import cluster_sim
from remedbench.functions.cluster_sim import ChaosKind, ChaosObject, ClusterState

logger = logging.getLogger(__name__)

CPU_STRESS_FRACTION = 0.9
MEM_STRESS_FRACTION = 0.9
IO_WAIT_PCT = 60.0
LOSS_PCT = 40.0
DELAY_MS = 300.0
POD_FRACTION = 1.0
LIMIT_RAISE_FACTOR = 2


class FailureCategory(str, Enum):
    RESOURCE = "Resource"
    NETWORK = "Network"
    APPLICATION = "Application"


class FailureType(str, Enum):
    CPU_SATURATION = "CpuSaturation"
    MEM_SATURATION = "MemSaturation"
    IO_SATURATION = "IoSaturation"
    NETWORK_LOSS = "NetworkLoss"
    NETWORK_DELAY = "NetworkDelay"
    POD_FAILURE = "PodFailure"
    CONFIG_ERROR = "ConfigError"

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @property
    def category(self) -> FailureCategory:
        return _CATEGORIES[self]

    @property
    def slug(self) -> str:
        return self.display_name.lower().replace(" ", "-")


_DISPLAY_NAMES = {
    FailureType.CPU_SATURATION: "CPU Saturation",
    FailureType.MEM_SATURATION: "Memory Saturation",
    FailureType.IO_SATURATION: "IO Saturation",
    FailureType.NETWORK_LOSS: "Network Loss",
    FailureType.NETWORK_DELAY: "Network Delay",
    FailureType.POD_FAILURE: "Pod Failure",
    FailureType.CONFIG_ERROR: "Configuration Error",
}

_CATEGORIES = {
    FailureType.CPU_SATURATION: FailureCategory.RESOURCE,
    FailureType.MEM_SATURATION: FailureCategory.RESOURCE,
    FailureType.IO_SATURATION: FailureCategory.RESOURCE,
    FailureType.NETWORK_LOSS: FailureCategory.NETWORK,
    FailureType.NETWORK_DELAY: FailureCategory.NETWORK,
    FailureType.POD_FAILURE: FailureCategory.APPLICATION,
    FailureType.CONFIG_ERROR: FailureCategory.APPLICATION,
}


class RemedyAction(str, Enum):
    RAISE_CPU_LIMIT = "raise cpu limit"
    RAISE_MEM_LIMIT = "raise memory limit"
    ROLLOUT_RESTART = "rollout restart"
    DELETE_CHAOS = "delete chaos object"
    RESTORE_ENV = "set env to baseline"


@dataclass(frozen=True)
class EffectDescriptor:
    type: FailureType
    category: FailureCategory
    chaos_kind: Optional[ChaosKind]
    perturbs: Tuple[str, ...]
    # alternative remediation paths, each an ordered tuple of actions; the first is the oracle's
    remedies: Tuple[Tuple[RemedyAction, ...], ...]


_EFFECTS = {
    FailureType.CPU_SATURATION: EffectDescriptor(
        FailureType.CPU_SATURATION, FailureCategory.RESOURCE, ChaosKind.STRESS,
        ("pods.cpu_util",),
        ((RemedyAction.RAISE_CPU_LIMIT, RemedyAction.ROLLOUT_RESTART), (RemedyAction.DELETE_CHAOS,))),
    FailureType.MEM_SATURATION: EffectDescriptor(
        FailureType.MEM_SATURATION, FailureCategory.RESOURCE, ChaosKind.STRESS,
        ("pods.mem_fraction",),
        ((RemedyAction.RAISE_MEM_LIMIT, RemedyAction.ROLLOUT_RESTART), (RemedyAction.DELETE_CHAOS,))),
    FailureType.IO_SATURATION: EffectDescriptor(
        FailureType.IO_SATURATION, FailureCategory.RESOURCE, ChaosKind.STRESS,
        ("pods.io_wait_pct",),
        ((RemedyAction.DELETE_CHAOS,),)),
    FailureType.NETWORK_LOSS: EffectDescriptor(
        FailureType.NETWORK_LOSS, FailureCategory.NETWORK, ChaosKind.NETWORK,
        ("links.loss_pct",),
        ((RemedyAction.DELETE_CHAOS,),)),
    FailureType.NETWORK_DELAY: EffectDescriptor(
        FailureType.NETWORK_DELAY, FailureCategory.NETWORK, ChaosKind.NETWORK,
        ("links.delay_ms",),
        ((RemedyAction.DELETE_CHAOS,),)),
    FailureType.POD_FAILURE: EffectDescriptor(
        FailureType.POD_FAILURE, FailureCategory.APPLICATION, ChaosKind.POD,
        ("pods.phase", "pods.ready"),
        ((RemedyAction.DELETE_CHAOS,),)),
    FailureType.CONFIG_ERROR: EffectDescriptor(
        FailureType.CONFIG_ERROR, FailureCategory.APPLICATION, None,
        ("deployments.template.env", "pods.ready"),
        ((RemedyAction.RESTORE_ENV, RemedyAction.ROLLOUT_RESTART),)),
}


def effect_table(failure_type: FailureType) -> EffectDescriptor:
    return _EFFECTS[FailureType(failure_type)]


class FailureSpec(BaseModel):
    type: FailureType
    target_service: str
    # overrides of the default magnitudes; ConfigError also takes "env_key"
    params: Dict[str, Any] = Field(default_factory=dict)


class CorruptedEnv(BaseModel):
    key: str
    bad_value: str
    baseline_value: str


class InjectionRecord(BaseModel):
    spec: FailureSpec
    injected_ok: bool
    reason: Optional[str] = None
    chaos_object_name: Optional[str] = None
    chaos_kind: Optional[ChaosKind] = None
    corrupted_env: Optional[CorruptedEnv] = None
    injected_at_clock: float = 0.0


def chaos_name(failure_type: FailureType, service: str) -> str:
    return f"{FailureType(failure_type).slug}-{service}"


def resolve_params(spec: FailureSpec, state: ClusterState) -> Dict[str, Any]:
    """Defaults for the failure type, overridden by any explicit params."""
    d = cluster_sim.get_deployment(state, spec.target_service)
    defaults = {
        FailureType.CPU_SATURATION: {"stress_cpu_millis": round(CPU_STRESS_FRACTION * d.template.limits_cpu.millis)},
        FailureType.MEM_SATURATION: {"stress_mem_mib": round(MEM_STRESS_FRACTION * d.template.limits_mem.millis)},
        FailureType.IO_SATURATION: {"io_wait_pct": IO_WAIT_PCT},
        FailureType.NETWORK_LOSS: {"loss_pct": LOSS_PCT},
        FailureType.NETWORK_DELAY: {"delay_ms": DELAY_MS},
        FailureType.POD_FAILURE: {"fraction": POD_FRACTION},
        FailureType.CONFIG_ERROR: {},
    }[spec.type]
    params = {**defaults, **spec.params}
    if spec.type == FailureType.CONFIG_ERROR:
        return params
    for key, value in params.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value) or value <= 0:
            raise ChaosError(f"{spec.type.display_name} needs a positive number for {key}, got {value!r}")
    if params.get("fraction", 0) > 1:
        raise ChaosError(f"pod fraction must be at most 1, got {params['fraction']!r}")
    return params


def inject(state: ClusterState, spec: FailureSpec, seed: int = 0) -> Tuple[ClusterState, InjectionRecord]:
    service = spec.target_service
    if service not in state.deployments:
        reason = f"unknown service: {service}"
        logger.warning(f"Injection of {spec.type.value} skipped: {reason}")
        return state, InjectionRecord(spec=spec, injected_ok=False, reason=reason,
                                      injected_at_clock=state.clock_s)
    key = f"{spec.type.value}:{service}"
    if key in state.injected:
        raise ChaosError(f"{spec.type.display_name} already injected into {service}")

    rng = random.Random(f"{seed}:{spec.type.value}:{service}")
    params = resolve_params(spec, state)
    record = InjectionRecord(spec=spec, injected_ok=True, injected_at_clock=state.clock_s)
    effect = effect_table(spec.type)

    if spec.type == FailureType.CONFIG_ERROR:
        d = state.deployments[service]
        keys = list(d.template.env)
        if not keys:
            return state, InjectionRecord(spec=spec, injected_ok=False, reason=f"{service} has no env to corrupt",
                                          injected_at_clock=state.clock_s)
        env_key = params.get("env_key") or rng.choice(keys)
        if env_key not in d.template.env:
            return state, InjectionRecord(spec=spec, injected_ok=False, reason=f"{service} has no env {env_key}",
                                          injected_at_clock=state.clock_s)
        original = d.template.env[env_key]
        bad = f"INVALID_{original}"
        d.template.env = {**d.template.env, env_key: bad}
        d.generation += 1
        record.corrupted_env = CorruptedEnv(key=env_key, bad_value=bad, baseline_value=original)
    else:
        name = chaos_name(spec.type, service)
        numeric = {k: float(v) for k, v in params.items()}
        chaos = ChaosObject(kind=effect.chaos_kind, name=name, namespace=state.namespace,
                            selector_service=service, params=numeric, created_at_s=state.clock_s)
        if spec.type == FailureType.POD_FAILURE:
            pods = sorted(p.name for p in cluster_sim.pods_of(state, service))
            k = min(len(pods), math.ceil(numeric["fraction"] * len(pods) - 1e-9))
            chaos.selected = sorted(rng.sample(pods, k))
        state.chaos.append(chaos)
        record.chaos_object_name = name
        record.chaos_kind = effect.chaos_kind

    state.injected.append(key)
    cluster_sim.reconcile(state)
    logger.info(f"Injected {spec.type.display_name} into {state.namespace}/{service}")
    return state, record


def oracle_commands(record: InjectionRecord, state: ClusterState) -> List[Tuple[str, str]]:
    """(task name, command) pairs walking the first remediation path of the effect table."""
    service = record.spec.target_service
    ns = state.namespace
    d = cluster_sim.get_deployment(state, service)
    steps = []
    for action in effect_table(record.spec.type).remedies[0]:
        if action == RemedyAction.RAISE_CPU_LIMIT:
            new = d.template.limits_cpu.millis * LIMIT_RAISE_FACTOR
            steps.append((f"Raise CPU limit of {service}",
                          f"kubectl set resources deployment/{service} -n {ns} --limits=cpu={new}m --record"))
        elif action == RemedyAction.RAISE_MEM_LIMIT:
            new = d.template.limits_mem.millis * LIMIT_RAISE_FACTOR
            steps.append((f"Raise memory limit of {service}",
                          f"kubectl set resources deployment/{service} -n {ns} --limits=memory={new}Mi --record"))
        elif action == RemedyAction.DELETE_CHAOS:
            kind = record.chaos_kind.value.lower()
            steps.append((f"Remove {kind} {record.chaos_object_name}",
                          f"kubectl delete {kind} {record.chaos_object_name} -n {ns}"))
        elif action == RemedyAction.RESTORE_ENV:
            env = record.corrupted_env
            assignment = shlex.quote(f"{env.key}={env.baseline_value}")
            steps.append((f"Restore {env.key} on {service}",
                          f"kubectl set env deployment/{service} -n {ns} {assignment}"))
        elif action == RemedyAction.ROLLOUT_RESTART:
            steps.append((f"Restart {service}", f"kubectl rollout restart deployment/{service} -n {ns}"))
    return steps
