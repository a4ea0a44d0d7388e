"""Deterministic state machine for a namespaced microservice cluster.

Every public mutation works in place on the ClusterState it is handed and
returns that same object, so call sites can chain or ignore the result.
"""
import hashlib
import json
import logging
import math
from collections import deque
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml
from pydantic import BaseModel, Field

from remedbench.exceptions import LookupFailure, QuantityError, TopologyError
from remedbench.functions.quantities import ResourceQuantity, parse_cpu, parse_memory

logger = logging.getLogger(__name__)

TOPOLOGY_DIR = Path(__file__).resolve().parent.parent / "topologies"


class PodPhase(str, Enum):
    RUNNING = "Running"
    PENDING = "Pending"
    FAILED = "Failed"


class ChaosKind(str, Enum):
    STRESS = "StressChaos"
    NETWORK = "NetworkChaos"
    POD = "PodChaos"


class ContainerSpec(BaseModel):
    image: str
    requests_cpu: ResourceQuantity
    limits_cpu: ResourceQuantity
    requests_mem: ResourceQuantity
    limits_mem: ResourceQuantity
    env: Dict[str, str] = Field(default_factory=dict)


class Deployment(BaseModel):
    name: str
    namespace: str
    desired_replicas: int = Field(ge=0)
    template: ContainerSpec
    generation: int = 1
    annotations: Dict[str, str] = Field(default_factory=dict)


class PodInstance(BaseModel):
    uid: str
    name: str
    deployment: str
    generation: int
    seq: int
    phase: PodPhase = PodPhase.RUNNING
    ready: bool = True
    base_cpu_millis: int = 0
    base_mem_mib: int = 0
    restart_count: int = 0
    created_at_s: float = 0.0


class ChaosObject(BaseModel):
    kind: ChaosKind
    name: str
    namespace: str
    selector_service: str
    params: Dict[str, float] = Field(default_factory=dict)
    # PodChaos only: pods picked at injection time, failed first
    selected: List[str] = Field(default_factory=list)
    created_at_s: float = 0.0


class LinkState(BaseModel):
    service: str
    loss_pct: float = Field(default=0.0, ge=0, le=100)
    delay_ms: float = Field(default=0.0, ge=0)


class ServiceProfile(BaseModel):
    base_cpu_millis: int = 0
    base_mem_mib: int = 0
    base_latency_ms: float = 0.0
    # the configuration the service needs to come up ready
    env: Dict[str, str] = Field(default_factory=dict)


class ServiceGraph(BaseModel):
    system_id: str
    services: List[str]
    edges: List[Tuple[str, str]] = Field(default_factory=list)
    profiles: Dict[str, ServiceProfile] = Field(default_factory=dict)


class SnapshotHandle(BaseModel):
    system_id: str
    fingerprint: str
    payload: Dict[str, Any]


class ClusterState(BaseModel):
    namespace: str
    deployments: Dict[str, Deployment] = Field(default_factory=dict)
    pods: List[PodInstance] = Field(default_factory=list)
    chaos: List[ChaosObject] = Field(default_factory=list)
    links: Dict[str, LinkState] = Field(default_factory=dict)
    clock_s: float = 0.0
    baseline: Optional[SnapshotHandle] = None
    topology: ServiceGraph
    next_uid: int = 1
    pod_seq: Dict[str, int] = Field(default_factory=dict)
    # ground truth of active injections ("<FailureType>:<service>"); never rendered by kubectl
    injected: List[str] = Field(default_factory=list)


class PodMetrics(BaseModel):
    name: str
    phase: PodPhase
    ready: bool
    cpu_millis: int
    cpu_demand_millis: int
    cpu_util: float
    mem_mib: int
    mem_fraction: float
    io_wait_pct: float


class ServiceMetrics(BaseModel):
    service: str
    desired: int
    ready: int
    failed: int
    pods: List[PodMetrics]
    loss_pct: float
    delay_ms: float
    base_delay_ms: float
    limits_cpu_millis: int
    limits_mem_mib: int

    @property
    def max_cpu_util(self) -> float:
        return max((p.cpu_util for p in self.pods if p.phase != PodPhase.FAILED), default=0.0)

    @property
    def max_mem_fraction(self) -> float:
        return max((p.mem_fraction for p in self.pods if p.phase != PodPhase.FAILED), default=0.0)

    @property
    def max_io_wait(self) -> float:
        return max((p.io_wait_pct for p in self.pods if p.phase != PodPhase.FAILED), default=0.0)


# ---------------------------------------------------------------------------
# topology loading


def _quantity(value, parser, where):
    try:
        return parser(str(value))
    except QuantityError as e:
        raise TopologyError(f"{where}: {e}")


def parse_topology(text: str):
    """Validate a topology document and return (system_id, namespace, graph, deployments)."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise TopologyError(f"malformed topology: {getattr(e, 'problem', e)}",
                            line=mark.line + 1 if mark is not None else None)
    if not isinstance(doc, dict):
        raise TopologyError("topology must be a mapping")
    for key in ("system_id", "services"):
        if key not in doc:
            raise TopologyError(f"missing key: {key}")
    system_id = str(doc["system_id"])
    namespace = str(doc.get("namespace") or system_id.replace("_", "-"))
    if not isinstance(doc["services"], list) or not doc["services"]:
        raise TopologyError("services must be a non-empty list")

    names = []
    profiles = {}
    deployments = {}
    for index, svc in enumerate(doc["services"]):
        where = f"services[{index}]"
        if not isinstance(svc, dict) or "name" not in svc:
            raise TopologyError(f"{where}: service needs a name")
        name = str(svc["name"])
        if name in profiles:
            raise TopologyError(f"{where}: duplicate service {name}")
        requests = svc.get("requests") or {}
        limits = svc.get("limits") or {}
        template = ContainerSpec(
            image=str(svc.get("image", f"{system_id}/{name}:latest")),
            requests_cpu=_quantity(requests.get("cpu", "100m"), parse_cpu, where),
            limits_cpu=_quantity(limits.get("cpu", "500m"), parse_cpu, where),
            requests_mem=_quantity(requests.get("memory", "128Mi"), parse_memory, where),
            limits_mem=_quantity(limits.get("memory", "512Mi"), parse_memory, where),
            env={str(k): str(v) for k, v in (svc.get("env") or {}).items()},
        )
        if template.requests_cpu.millis > template.limits_cpu.millis:
            raise TopologyError(f"{where}: cpu requests exceed limits")
        if template.requests_mem.millis > template.limits_mem.millis:
            raise TopologyError(f"{where}: memory requests exceed limits")
        if template.limits_cpu.millis == 0 or template.limits_mem.millis == 0:
            raise TopologyError(f"{where}: limits must be positive")
        replicas = int(svc.get("replicas", 1))
        if replicas < 0:
            raise TopologyError(f"{where}: replicas must be >= 0")
        profiles[name] = ServiceProfile(
            base_cpu_millis=_quantity(svc.get("base_cpu", "0m"), parse_cpu, where).millis,
            base_mem_mib=_quantity(svc.get("base_memory", "0Mi"), parse_memory, where).millis,
            base_latency_ms=float(svc.get("base_latency_ms", 0)),
            env=dict(template.env),
        )
        deployments[name] = Deployment(name=name, namespace=namespace,
                                       desired_replicas=replicas, template=template)
        names.append(name)

    edges = []
    for index, edge in enumerate(doc.get("edges") or []):
        if not isinstance(edge, (list, tuple)) or len(edge) != 2:
            raise TopologyError(f"edges[{index}]: expected [caller, callee]")
        caller, callee = str(edge[0]), str(edge[1])
        for end in (caller, callee):
            if end not in profiles:
                raise TopologyError(f"edges[{index}]: undeclared service {end}")
        edges.append((caller, callee))

    graph = ServiceGraph(system_id=system_id, services=names, edges=edges, profiles=profiles)
    if not _connected(graph):
        raise TopologyError("service graph is not connected")
    return system_id, namespace, graph, deployments


def _connected(graph: ServiceGraph) -> bool:
    if len(graph.services) <= 1:
        return True
    neighbours = {s: set() for s in graph.services}
    for a, b in graph.edges:
        neighbours[a].add(b)
        neighbours[b].add(a)
    seen = {graph.services[0]}
    queue = deque(seen)
    while queue:
        for nxt in neighbours[queue.popleft()]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return len(seen) == len(graph.services)


def load_topology(text: str) -> ClusterState:
    system_id, namespace, graph, deployments = parse_topology(text)
    state = ClusterState(namespace=namespace, deployments=deployments, topology=graph)
    reconcile(state)
    state.baseline = snapshot(state)
    logger.debug(f"Loaded topology {system_id}: {len(deployments)} deployments, {len(state.pods)} pods")
    return state


def load_builtin_topology(system_id: str) -> ClusterState:
    path = TOPOLOGY_DIR / f"{system_id}.yaml"
    if not path.exists():
        raise TopologyError(f"no built-in topology named {system_id}")
    return load_topology(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# controller


def get_deployment(state: ClusterState, name: str) -> Deployment:
    try:
        return state.deployments[name]
    except KeyError:
        raise LookupFailure(f"unknown service: {name}")


def pods_of(state: ClusterState, deployment: str) -> List[PodInstance]:
    return [p for p in state.pods if p.deployment == deployment]


def _config_ok(state: ClusterState, d: Deployment) -> bool:
    wanted = state.topology.profiles[d.name].env
    return all(d.template.env.get(key) == value for key, value in wanted.items())


def _new_pod(state: ClusterState, d: Deployment) -> PodInstance:
    seq = state.pod_seq.get(d.name, 0) + 1
    state.pod_seq[d.name] = seq
    uid = f"uid-{state.next_uid:06d}"
    state.next_uid += 1
    profile = state.topology.profiles[d.name]
    return PodInstance(
        uid=uid,
        name=f"{d.name}-{d.generation}-{seq}",
        deployment=d.name,
        generation=d.generation,
        seq=seq,
        phase=PodPhase.RUNNING,
        ready=_config_ok(state, d),
        base_cpu_millis=profile.base_cpu_millis,
        base_mem_mib=profile.base_mem_mib,
        created_at_s=state.clock_s,
    )


def _victim_order(pod: PodInstance):
    # failed first, then not ready, then newest
    return (pod.phase != PodPhase.FAILED, pod.ready, -pod.seq)


def reconcile(state: ClusterState) -> ClusterState:
    """Drive every deployment toward its desired state. Total and idempotent."""
    by_deployment = []
    for d in state.deployments.values():
        pod_chaos = [c for c in state.chaos if c.kind == ChaosKind.POD and c.selector_service == d.name]
        keep = []
        for pod in pods_of(state, d.name):
            if pod.generation < d.generation:
                continue
            if pod.phase == PodPhase.FAILED and not pod_chaos:
                continue
            keep.append(pod)
        if len(keep) > d.desired_replicas:
            keep.sort(key=_victim_order)
            keep = keep[len(keep) - d.desired_replicas:]
        while len(keep) < d.desired_replicas:
            keep.append(_new_pod(state, d))
        keep.sort(key=lambda p: (p.generation, p.seq))
        if pod_chaos:
            fraction = max(c.params.get("fraction", 1.0) for c in pod_chaos)
            target = math.ceil(fraction * d.desired_replicas - 1e-9)
            selected = [name for c in pod_chaos for name in c.selected]
            failed = sum(1 for p in keep if p.phase == PodPhase.FAILED)
            order = sorted(keep, key=lambda p: (p.name not in selected, p.generation, p.seq))
            for pod in order:
                if failed >= target:
                    break
                if pod.phase != PodPhase.FAILED:
                    pod.phase = PodPhase.FAILED
                    pod.ready = False
                    pod.restart_count += 1
                    failed += 1
        by_deployment.extend(keep)
    state.pods = by_deployment

    for service in state.topology.services:
        profile = state.topology.profiles[service]
        loss = 0.0
        delay = 0.0
        for c in state.chaos:
            if c.kind == ChaosKind.NETWORK and c.selector_service == service:
                loss += c.params.get("loss_pct", 0.0)
                delay += c.params.get("delay_ms", 0.0)
        state.links[service] = LinkState(service=service, loss_pct=min(100.0, loss),
                                         delay_ms=profile.base_latency_ms + delay)
    return state


def tick(state: ClusterState, seconds: float = 1.0) -> ClusterState:
    state.clock_s += seconds
    return state


def _stress(state: ClusterState, service: str, key: str) -> float:
    return sum(c.params.get(key, 0.0) for c in state.chaos
               if c.kind == ChaosKind.STRESS and c.selector_service == service)


def observe(state: ClusterState, service: str) -> ServiceMetrics:
    """Pure read of the metrics a monitoring stack would report for one service."""
    d = get_deployment(state, service)
    limit_cpu = d.template.limits_cpu.millis
    limit_mem = d.template.limits_mem.millis
    stress_cpu = int(_stress(state, service, "stress_cpu_millis"))
    stress_mem = int(_stress(state, service, "stress_mem_mib"))
    io_wait = min(100.0, _stress(state, service, "io_wait_pct"))
    metrics = []
    for pod in pods_of(state, service):
        if pod.phase == PodPhase.FAILED:
            metrics.append(PodMetrics(name=pod.name, phase=pod.phase, ready=False, cpu_millis=0,
                                      cpu_demand_millis=0, cpu_util=0.0, mem_mib=0,
                                      mem_fraction=0.0, io_wait_pct=0.0))
            continue
        demand = pod.base_cpu_millis + stress_cpu
        used = min(demand, limit_cpu)
        mem = min(pod.base_mem_mib + stress_mem, limit_mem)
        metrics.append(PodMetrics(
            name=pod.name,
            phase=pod.phase,
            ready=pod.ready,
            cpu_millis=used,
            cpu_demand_millis=demand,
            cpu_util=used / limit_cpu if limit_cpu else 1.0,
            mem_mib=mem,
            mem_fraction=mem / limit_mem if limit_mem else 1.0,
            io_wait_pct=io_wait,
        ))
    link = state.links.get(service) or LinkState(service=service)
    return ServiceMetrics(
        service=service,
        desired=d.desired_replicas,
        ready=sum(1 for m in metrics if m.ready),
        failed=sum(1 for m in metrics if m.phase == PodPhase.FAILED),
        pods=metrics,
        loss_pct=link.loss_pct,
        delay_ms=link.delay_ms,
        base_delay_ms=state.topology.profiles[service].base_latency_ms,
        limits_cpu_millis=limit_cpu,
        limits_mem_mib=limit_mem,
    )


def ready_counts(state: ClusterState, service: str) -> Tuple[int, int]:
    d = get_deployment(state, service)
    ready = sum(1 for p in pods_of(state, service) if p.ready)
    return ready, d.desired_replicas


# ---------------------------------------------------------------------------
# snapshots and hashing

_VOLATILE = {"clock_s", "baseline"}


def _canonical(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def topology_fingerprint(graph: ServiceGraph) -> str:
    return hashlib.sha256(_canonical(graph.model_dump(mode="json")).encode()).hexdigest()


def snapshot(state: ClusterState) -> SnapshotHandle:
    return SnapshotHandle(
        system_id=state.topology.system_id,
        fingerprint=topology_fingerprint(state.topology),
        payload=state.model_dump(mode="json", exclude=_VOLATILE),
    )


def reset(state: ClusterState, handle: Optional[SnapshotHandle] = None) -> ClusterState:
    """Restore the snapshotted world. The clock keeps running."""
    handle = handle or state.baseline
    if handle is None:
        raise TopologyError("no baseline snapshot to reset to")
    if handle.fingerprint != topology_fingerprint(state.topology):
        raise TopologyError(f"snapshot belongs to topology {handle.system_id}, "
                            f"not {state.topology.system_id}")
    restored = ClusterState.model_validate({**handle.payload, "clock_s": state.clock_s})
    for name in ClusterState.model_fields:
        if name not in _VOLATILE:
            setattr(state, name, getattr(restored, name))
    return state


def serialize_state(state: ClusterState) -> str:
    return json.dumps(state.model_dump(mode="json", exclude={"baseline"}), sort_keys=True, indent=2)


def state_hash(state: ClusterState) -> str:
    return hashlib.sha256(_canonical(state.model_dump(mode="json", exclude=_VOLATILE)).encode()).hexdigest()
