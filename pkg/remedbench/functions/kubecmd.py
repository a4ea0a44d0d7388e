"""kubectl dialect understood by the simulator.

``parse_command`` turns one command line into a ``Command``; ``execute`` applies it
to a ClusterState and answers the way kubectl would. ``run_command`` does both and
never raises, which is what playbooks and probes go through.
"""
import json
import logging
import shlex
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import yaml
from pydantic import BaseModel

from remedbench.exceptions import (CommandParseError, JsonPathError, QuantityError,
                                   UnsupportedCommand)
from remedbench.functions import cluster_sim
from remedbench.functions.cluster_sim import ChaosKind, ClusterState, PodPhase
from remedbench.functions.jsonpath import compile_jsonpath, jsonpath_eval
from remedbench.functions.quantities import format_cpu, format_memory, parse_cpu, parse_memory

logger = logging.getLogger(__name__)

CHANGE_CAUSE = "kubernetes.io/change-cause"
RESTARTED_AT = "kubectl.kubernetes.io/restartedAt"
NODE_NAME = "k3s-node-1"


class Verb(str, Enum):
    GET = "Get"
    DESCRIBE = "Describe"
    TOP = "Top"
    SCALE = "Scale"
    SET_RESOURCES = "SetResources"
    SET_ENV = "SetEnv"
    ROLLOUT_RESTART = "RolloutRestart"
    ROLLOUT_STATUS = "RolloutStatus"
    DELETE_POD = "DeletePod"
    DELETE_CHAOS = "DeleteChaos"
    GET_CHAOS = "GetChaos"


MUTATING_VERBS = {Verb.SCALE, Verb.SET_RESOURCES, Verb.SET_ENV, Verb.ROLLOUT_RESTART,
                  Verb.DELETE_POD, Verb.DELETE_CHAOS}

_KIND_ALIASES = {
    "deployment": "deployment", "deployments": "deployment", "deploy": "deployment",
    "deployment.apps": "deployment", "deployments.apps": "deployment",
    "pod": "pod", "pods": "pod", "po": "pod",
    "hpa": "hpa", "horizontalpodautoscaler": "hpa", "horizontalpodautoscalers": "hpa",
    "horizontalpodautoscalers.autoscaling": "hpa",
}
for _kind in ChaosKind:
    _lower = _kind.value.lower()
    for _alias in (_lower, f"{_lower}s", f"{_lower}.chaos-mesh.org"):
        _KIND_ALIASES[_alias] = _lower

CHAOS_KINDS = {k.value.lower(): k for k in ChaosKind}

# (singular qualified, plural qualified) as kubectl prints them
_RESOURCE_NAMES = {
    "deployment": ("deployment.apps", "deployments.apps"),
    "pod": ("pod", "pods"),
    "hpa": ("horizontalpodautoscaler.autoscaling", "horizontalpodautoscalers.autoscaling"),
}
for _lower in CHAOS_KINDS:
    _RESOURCE_NAMES[_lower] = (f"{_lower}.chaos-mesh.org", f"{_lower}.chaos-mesh.org")

_VALUE_FLAGS = {
    "-n": "namespace", "--namespace": "namespace",
    "-o": "output", "--output": "output",
    "-l": "selector", "--selector": "selector",
    "--replicas": "replicas",
    "--requests": "requests",
    "--limits": "limits",
    "-c": "container", "--containers": "container", "--container": "container",
}
_BOOL_FLAGS = {"--record": "record"}

_ALLOWED_FLAGS = {
    Verb.GET: {"namespace", "output", "selector"},
    Verb.GET_CHAOS: {"namespace", "output"},
    Verb.DESCRIBE: {"namespace", "selector"},
    Verb.TOP: {"namespace", "selector"},
    Verb.SCALE: {"namespace", "replicas", "record"},
    Verb.SET_RESOURCES: {"namespace", "requests", "limits", "container", "record"},
    Verb.SET_ENV: {"namespace", "container", "record"},
    Verb.ROLLOUT_RESTART: {"namespace"},
    Verb.ROLLOUT_STATUS: {"namespace"},
    Verb.DELETE_POD: {"namespace"},
    Verb.DELETE_CHAOS: {"namespace"},
}

_OUTPUTS = {"json", "yaml", "name", "wide"}


@dataclass(frozen=True)
class Command:
    verb: Verb
    kind: str
    name: Optional[str]
    namespace: str
    replicas: Optional[int] = None
    requests: Tuple[Tuple[str, str], ...] = ()
    limits: Tuple[Tuple[str, str], ...] = ()
    # a value of None unsets the variable ("KEY-")
    env: Tuple[Tuple[str, Optional[str]], ...] = ()
    container: Optional[str] = None
    output: Optional[str] = None
    selector: Optional[str] = None
    record: bool = False

    @property
    def mutating(self) -> bool:
        return self.verb in MUTATING_VERBS

    def render(self) -> str:
        words = ["kubectl"]
        words += {
            Verb.GET: ["get"], Verb.GET_CHAOS: ["get"], Verb.DESCRIBE: ["describe"],
            Verb.TOP: ["top"], Verb.SCALE: ["scale"], Verb.SET_RESOURCES: ["set", "resources"],
            Verb.SET_ENV: ["set", "env"], Verb.ROLLOUT_RESTART: ["rollout", "restart"],
            Verb.ROLLOUT_STATUS: ["rollout", "status"], Verb.DELETE_POD: ["delete"],
            Verb.DELETE_CHAOS: ["delete"],
        }[self.verb]
        words.append(self.kind)
        if self.name is not None:
            words.append(self.name)
        words += [shlex.quote(f"{k}={v}") if v is not None else f"{k}-" for k, v in self.env]
        words += ["-n", self.namespace]
        if self.replicas is not None:
            words.append(f"--replicas={self.replicas}")
        if self.requests:
            words.append("--requests=" + ",".join(f"{k}={v}" for k, v in self.requests))
        if self.limits:
            words.append("--limits=" + ",".join(f"{k}={v}" for k, v in self.limits))
        if self.container is not None:
            words += ["-c", self.container]
        if self.selector is not None:
            words += ["-l", self.selector]
        if self.output is not None:
            words += ["-o", shlex.quote(self.output)]
        if self.record:
            words.append("--record")
        return " ".join(words)


class CmdResult(BaseModel):
    stdout: str = ""
    stderr: str = ""
    rc: int = 0
    mutated: bool = False


# ---------------------------------------------------------------------------
# parsing


def _offsets(line: str, tokens: List[str]) -> List[int]:
    offsets = []
    cursor = 0
    for token in tokens:
        found = line.find(token, cursor)
        if found < 0:
            found = cursor
        offsets.append(found)
        cursor = found + len(token) if found >= cursor else cursor
    return offsets


def _assignments(text: str, offset: int) -> Tuple[Tuple[str, str], ...]:
    pairs = []
    for part in text.split(","):
        key, sep, value = part.partition("=")
        if not sep or key not in ("cpu", "memory") or not value:
            raise CommandParseError(f"invalid resource assignment: {part!r}", offset)
        pairs.append((key, value))
    return tuple(pairs)


def _kind_and_name(verb_word: str, args: List[str], offset: int) -> Tuple[str, Optional[str], List[str]]:
    if not args:
        raise CommandParseError(f"{verb_word}: resource type required", offset)
    first, rest = args[0], args[1:]
    if "/" in first:
        kind_word, _, name = first.partition("/")
        if not name:
            raise CommandParseError(f"{verb_word}: empty resource name in {first}", offset)
    else:
        kind_word = first
        name = rest[0] if rest else None
        rest = rest[1:]
    kind = _KIND_ALIASES.get(kind_word.lower())
    if kind is None:
        raise UnsupportedCommand(f"{verb_word} {kind_word}")
    return kind, name, rest


def parse_command(line: str, default_namespace: Optional[str] = None) -> Command:
    """Parse one kubectl command line. Shell composition is the mini shell's business."""
    try:
        tokens = shlex.split(line)
    except ValueError as e:
        raise CommandParseError(str(e), len(line))
    if not tokens:
        raise CommandParseError("empty command", 0)
    if tokens[0] != "kubectl":
        raise UnsupportedCommand(tokens[0])
    offsets = _offsets(line, tokens)

    flags: Dict[str, object] = {}
    positional: List[Tuple[str, int]] = []
    i = 1
    while i < len(tokens):
        token, offset = tokens[i], offsets[i]
        if token in ("-A", "--all-namespaces") or token.startswith("--all-namespaces="):
            raise CommandParseError("multi-namespace queries are not supported", offset)
        if token.startswith("-") and token != "-":
            name, sep, value = token.partition("=")
            if name in _BOOL_FLAGS:
                if sep and value.lower() not in ("true", "false"):
                    raise CommandParseError(f"invalid value for {name}: {value}", offset)
                flags[_BOOL_FLAGS[name]] = (value.lower() != "false") if sep else True
            elif name in _VALUE_FLAGS:
                if not sep:
                    if i + 1 >= len(tokens):
                        raise CommandParseError(f"flag needs an argument: {name}", offset)
                    i += 1
                    value = tokens[i]
                flags[_VALUE_FLAGS[name]] = (value, offset)
            elif name.startswith("-o") and len(name) > 2 and not name.startswith("--"):
                flags["output"] = (token[2:], offset)
            elif name.startswith("-n") and len(name) > 2 and not name.startswith("--"):
                flags["namespace"] = (token[2:], offset)
            else:
                raise CommandParseError(f"unknown flag: {name}", offset)
        else:
            positional.append((token, offset))
        i += 1

    if not positional:
        raise CommandParseError("missing verb", len(line))
    verb_word, verb_offset = positional[0]
    args = [p[0] for p in positional[1:]]
    arg_offset = positional[1][1] if len(positional) > 1 else len(line)
    env: Tuple[Tuple[str, Optional[str]], ...] = ()

    if verb_word in ("get", "describe"):
        kind, name, rest = _kind_and_name(verb_word, args, arg_offset)
        if verb_word == "get":
            verb = Verb.GET_CHAOS if kind in CHAOS_KINDS else Verb.GET
        else:
            verb = Verb.DESCRIBE
    elif verb_word == "top":
        kind, name, rest = _kind_and_name(verb_word, args, arg_offset)
        if kind != "pod":
            raise UnsupportedCommand(f"top {args[0]}")
        verb = Verb.TOP
    elif verb_word == "scale":
        kind, name, rest = _kind_and_name(verb_word, args, arg_offset)
        verb = Verb.SCALE
    elif verb_word == "set":
        if not args or args[0] not in ("resources", "env"):
            raise UnsupportedCommand(f"set {args[0]}" if args else "set")
        kind, name, rest = _kind_and_name(f"set {args[0]}", args[1:], arg_offset)
        if args[0] == "resources":
            verb = Verb.SET_RESOURCES
        else:
            verb = Verb.SET_ENV
            pairs = []
            for item in rest:
                if item.endswith("-") and "=" not in item:
                    pairs.append((item[:-1], None))
                elif "=" in item and not item.startswith("="):
                    key, _, value = item.partition("=")
                    pairs.append((key, value))
                else:
                    raise CommandParseError(f"invalid env assignment: {item!r}", arg_offset)
            env = tuple(pairs)
            rest = []
            if not env:
                raise CommandParseError("set env: at least one KEY=VALUE required", arg_offset)
    elif verb_word == "rollout":
        if not args or args[0] not in ("restart", "status"):
            raise UnsupportedCommand(f"rollout {args[0]}" if args else "rollout")
        kind, name, rest = _kind_and_name(f"rollout {args[0]}", args[1:], arg_offset)
        verb = Verb.ROLLOUT_RESTART if args[0] == "restart" else Verb.ROLLOUT_STATUS
    elif verb_word == "delete":
        kind, name, rest = _kind_and_name(verb_word, args, arg_offset)
        if kind == "pod":
            verb = Verb.DELETE_POD
        elif kind in CHAOS_KINDS:
            verb = Verb.DELETE_CHAOS
        else:
            raise UnsupportedCommand(f"delete {kind}")
    else:
        raise UnsupportedCommand(verb_word)

    if rest:
        raise CommandParseError(f"unexpected argument: {rest[0]}", arg_offset)
    if verb in MUTATING_VERBS | {Verb.ROLLOUT_STATUS} and name is None:
        raise CommandParseError(f"{verb_word}: resource name required", arg_offset)
    if verb in (Verb.SCALE, Verb.SET_RESOURCES, Verb.SET_ENV, Verb.ROLLOUT_RESTART,
                Verb.ROLLOUT_STATUS) and kind != "deployment":
        raise UnsupportedCommand(f"{verb_word} {kind}")

    allowed = _ALLOWED_FLAGS[verb]
    for flag, value in flags.items():
        if flag not in allowed:
            offset = value[1] if isinstance(value, tuple) else verb_offset
            raise CommandParseError(f"flag not allowed for {verb_word}: {flag}", offset)

    def value_of(flag):
        entry = flags.get(flag)
        return entry[0] if entry else None

    replicas = None
    if "replicas" in flags:
        text, offset = flags["replicas"]
        try:
            replicas = int(text)
        except ValueError:
            raise CommandParseError(f"invalid replicas: {text}", offset)
        if replicas < 0:
            raise CommandParseError("replicas must be >= 0", offset)
    elif verb == Verb.SCALE:
        raise CommandParseError("scale: --replicas is required", len(line))

    requests = _assignments(*flags["requests"]) if "requests" in flags else ()
    limits = _assignments(*flags["limits"]) if "limits" in flags else ()
    if verb == Verb.SET_RESOURCES and not (requests or limits):
        raise CommandParseError("set resources: --requests or --limits required", len(line))

    output = value_of("output")
    if output is not None:
        output = output.strip()
        if output.startswith("jsonpath="):
            try:
                compile_jsonpath(output[len("jsonpath="):])
            except JsonPathError as e:
                raise CommandParseError(str(e), flags["output"][1])
        elif output not in _OUTPUTS:
            raise CommandParseError(f"unsupported output format: {output}", flags["output"][1])

    return Command(
        verb=verb,
        kind=kind,
        name=name,
        namespace=value_of("namespace") or default_namespace or "default",
        replicas=replicas,
        requests=requests,
        limits=limits,
        env=env,
        container=value_of("container"),
        output=output,
        selector=value_of("selector"),
        record=bool(flags.get("record", False)),
    )


# ---------------------------------------------------------------------------
# canonical JSON renderings


def _container_json(d: cluster_sim.Deployment) -> dict:
    t = d.template
    return {
        "name": d.name,
        "image": t.image,
        "env": [{"name": k, "value": v} for k, v in t.env.items()],
        "resources": {
            "requests": {"cpu": format_cpu(t.requests_cpu), "memory": format_memory(t.requests_mem)},
            "limits": {"cpu": format_cpu(t.limits_cpu), "memory": format_memory(t.limits_mem)},
        },
    }


def deployment_json(state: ClusterState, d: cluster_sim.Deployment) -> dict:
    pods = cluster_sim.pods_of(state, d.name)
    ready = sum(1 for p in pods if p.ready)
    updated = sum(1 for p in pods if p.generation == d.generation)
    return {
        "apiVersion": "apps/v1",
        "kind": "Deployment",
        "metadata": {
            "name": d.name,
            "namespace": d.namespace,
            "generation": d.generation,
            "labels": {"app": d.name},
            "annotations": {"deployment.kubernetes.io/revision": str(d.generation), **d.annotations},
        },
        "spec": {
            "replicas": d.desired_replicas,
            "selector": {"matchLabels": {"app": d.name}},
            "template": {
                "metadata": {"labels": {"app": d.name}},
                "spec": {"containers": [_container_json(d)]},
            },
        },
        "status": {
            "observedGeneration": d.generation,
            "replicas": len(pods),
            "updatedReplicas": updated,
            "readyReplicas": ready,
            "availableReplicas": ready,
            "unavailableReplicas": len(pods) - ready,
        },
    }


def pod_json(state: ClusterState, pod: cluster_sim.PodInstance) -> dict:
    d = state.deployments[pod.deployment]
    return {
        "apiVersion": "v1",
        "kind": "Pod",
        "metadata": {
            "name": pod.name,
            "namespace": d.namespace,
            "uid": pod.uid,
            "labels": {"app": pod.deployment, "pod-template-generation": str(pod.generation)},
        },
        "spec": {"nodeName": NODE_NAME, "containers": [_container_json(d)]},
        "status": {
            "phase": pod.phase.value,
            "containerStatuses": [{
                "name": pod.deployment,
                "ready": pod.ready,
                "restartCount": pod.restart_count,
            }],
        },
    }


def chaos_json(chaos: cluster_sim.ChaosObject) -> dict:
    return {
        "apiVersion": "chaos-mesh.org/v1alpha1",
        "kind": chaos.kind.value,
        "metadata": {"name": chaos.name, "namespace": chaos.namespace},
        "spec": {
            "mode": "all",
            "selector": {"namespaces": [chaos.namespace],
                         "labelSelectors": {"app": chaos.selector_service}},
            **{k: v for k, v in sorted(chaos.params.items())},
        },
    }


# ---------------------------------------------------------------------------
# text rendering helpers


def _age(seconds: float) -> str:
    seconds = max(0, int(seconds))
    if seconds < 120:
        return f"{seconds}s"
    if seconds < 7200:
        return f"{seconds // 60}m"
    return f"{seconds // 3600}h"


def _table(header: List[str], rows: List[List[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    lines = []
    for row in [header] + rows:
        cells = [str(c).ljust(widths[i]) for i, c in enumerate(row)]
        lines.append("   ".join(cells).rstrip())
    return "\n".join(lines)


def _pod_status(pod: cluster_sim.PodInstance) -> str:
    if pod.phase == PodPhase.RUNNING and not pod.ready:
        return "CrashLoopBackOff"
    return pod.phase.value


def _not_found(kind: str, name: str) -> CmdResult:
    return CmdResult(rc=1, stderr=f'Error from server (NotFound): {_RESOURCE_NAMES[kind][1]} "{name}" not found')


def _no_resources(namespace: str) -> CmdResult:
    return CmdResult(stdout=f"No resources found in {namespace} namespace.")


def _render_documents(cmd: Command, docs: List[dict], names: List[str], single: bool) -> CmdResult:
    doc = docs[0] if single else {"apiVersion": "v1", "kind": "List", "items": docs}
    if cmd.output == "json":
        return CmdResult(stdout=json.dumps(doc, indent=4))
    if cmd.output == "yaml":
        return CmdResult(stdout=yaml.safe_dump(doc, sort_keys=False).rstrip("\n"))
    if cmd.output == "name":
        return CmdResult(stdout="\n".join(f"{_RESOURCE_NAMES[cmd.kind][0]}/{n}" for n in names))
    return CmdResult(stdout=jsonpath_eval(cmd.output[len("jsonpath="):], doc))


def _select_pods(state: ClusterState, cmd: Command) -> List[cluster_sim.PodInstance]:
    pods = list(state.pods)
    if cmd.selector is not None:
        key, _, value = cmd.selector.partition("=")
        if key != "app":
            return []
        pods = [p for p in pods if p.deployment == value]
    return pods


def _find_pod(state: ClusterState, name: str) -> Optional[cluster_sim.PodInstance]:
    return next((p for p in state.pods if p.name == name), None)


def _find_chaos(state: ClusterState, kind: str, name: str) -> Optional[cluster_sim.ChaosObject]:
    return next((c for c in state.chaos if c.kind == CHAOS_KINDS[kind] and c.name == name), None)


# ---------------------------------------------------------------------------
# read verbs


def _get(cmd: Command, state: ClusterState) -> CmdResult:
    ns = cmd.namespace
    wide = cmd.output == "wide"
    structured = cmd.output is not None and not wide
    if cmd.kind == "hpa":
        return _not_found("hpa", cmd.name) if cmd.name else _no_resources(ns)

    if cmd.kind == "deployment":
        if cmd.name is not None:
            d = state.deployments.get(cmd.name) if ns == state.namespace else None
            if d is None:
                return _not_found("deployment", cmd.name)
            items = [d]
        else:
            items = list(state.deployments.values()) if ns == state.namespace else []
            if not items:
                return _no_resources(ns)
        if structured:
            return _render_documents(cmd, [deployment_json(state, d) for d in items],
                                     [d.name for d in items], cmd.name is not None)
        rows = []
        for d in items:
            pods = cluster_sim.pods_of(state, d.name)
            ready = sum(1 for p in pods if p.ready)
            updated = sum(1 for p in pods if p.generation == d.generation)
            row = [d.name, f"{ready}/{d.desired_replicas}", str(updated), str(ready), _age(state.clock_s)]
            if wide:
                row += [d.name, d.template.image, f"app={d.name}"]
            rows.append(row)
        header = ["NAME", "READY", "UP-TO-DATE", "AVAILABLE", "AGE"]
        if wide:
            header += ["CONTAINERS", "IMAGES", "SELECTOR"]
        return CmdResult(stdout=_table(header, rows))

    if cmd.kind == "pod":
        if ns != state.namespace:
            return _not_found("pod", cmd.name) if cmd.name else _no_resources(ns)
        if cmd.name is not None:
            pod = _find_pod(state, cmd.name)
            if pod is None:
                return _not_found("pod", cmd.name)
            pods = [pod]
        else:
            pods = _select_pods(state, cmd)
            if not pods:
                return _no_resources(ns)
        if structured:
            return _render_documents(cmd, [pod_json(state, p) for p in pods],
                                     [p.name for p in pods], cmd.name is not None)
        rows = []
        for p in pods:
            row = [p.name, f"{1 if p.ready else 0}/1", _pod_status(p), str(p.restart_count),
                   _age(state.clock_s - p.created_at_s)]
            if wide:
                row += [_pod_ip(p), NODE_NAME]
            rows.append(row)
        header = ["NAME", "READY", "STATUS", "RESTARTS", "AGE"]
        if wide:
            header += ["IP", "NODE"]
        return CmdResult(stdout=_table(header, rows))
    return CmdResult(rc=1, stderr=f"error: cannot get {cmd.kind}")


def _pod_ip(pod: cluster_sim.PodInstance) -> str:
    number = int(pod.uid.split("-")[-1])
    return f"10.42.{number // 250}.{number % 250 + 2}"


def _get_chaos(cmd: Command, state: ClusterState) -> CmdResult:
    if cmd.namespace != state.namespace:
        return _not_found(cmd.kind, cmd.name) if cmd.name else _no_resources(cmd.namespace)
    if cmd.name is not None:
        chaos = _find_chaos(state, cmd.kind, cmd.name)
        if chaos is None:
            return _not_found(cmd.kind, cmd.name)
        items = [chaos]
    else:
        items = [c for c in state.chaos if c.kind == CHAOS_KINDS[cmd.kind]]
        if not items:
            return _no_resources(cmd.namespace)
    if cmd.output is not None and cmd.output != "wide":
        return _render_documents(cmd, [chaos_json(c) for c in items], [c.name for c in items],
                                 cmd.name is not None)
    rows = [[c.name, _age(state.clock_s - c.created_at_s)] for c in items]
    return CmdResult(stdout=_table(["NAME", "AGE"], rows))


def _describe_container(d: cluster_sim.Deployment, indent: str) -> List[str]:
    t = d.template
    lines = [
        f"{indent}{d.name}:",
        f"{indent}  Image:      {t.image}",
        f"{indent}  Limits:",
        f"{indent}    cpu:     {format_cpu(t.limits_cpu)}",
        f"{indent}    memory:  {format_memory(t.limits_mem)}",
        f"{indent}  Requests:",
        f"{indent}    cpu:     {format_cpu(t.requests_cpu)}",
        f"{indent}    memory:  {format_memory(t.requests_mem)}",
        f"{indent}  Environment:",
    ]
    lines += [f"{indent}    {k}:  {v}" for k, v in t.env.items()] or [f"{indent}    <none>"]
    return lines


def _describe_deployment(state: ClusterState, d: cluster_sim.Deployment) -> str:
    pods = cluster_sim.pods_of(state, d.name)
    ready = sum(1 for p in pods if p.ready)
    updated = sum(1 for p in pods if p.generation == d.generation)
    annotations = {"deployment.kubernetes.io/revision": str(d.generation), **d.annotations}
    lines = [
        f"Name:                   {d.name}",
        f"Namespace:              {d.namespace}",
        f"Labels:                 app={d.name}",
        "Annotations:            " + "\n                        ".join(f"{k}: {v}" for k, v in annotations.items()),
        f"Selector:               app={d.name}",
        f"Replicas:               {d.desired_replicas} desired | {updated} updated | {len(pods)} total | "
        f"{ready} available | {len(pods) - ready} unavailable",
        "Pod Template:",
        f"  Labels:  app={d.name}",
        "  Containers:",
    ]
    lines += _describe_container(d, "   ")
    return "\n".join(lines)


def _describe_pod(state: ClusterState, pod: cluster_sim.PodInstance) -> str:
    d = state.deployments[pod.deployment]
    metrics = cluster_sim.observe(state, pod.deployment)
    m = next(x for x in metrics.pods if x.name == pod.name)
    lines = [
        f"Name:             {pod.name}",
        f"Namespace:        {d.namespace}",
        f"Node:             {NODE_NAME}",
        f"Labels:           app={pod.deployment}",
        f"                  pod-template-generation={pod.generation}",
        f"Status:           {_pod_status(pod)}",
        f"IP:               {_pod_ip(pod)}",
        "Containers:",
    ]
    lines += _describe_container(d, "  ")
    lines += [
        f"    Ready:          {str(pod.ready)}",
        f"    Restart Count:  {pod.restart_count}",
        "Observed Metrics:",
        f"  cpu:            {m.cpu_millis}m / {metrics.limits_cpu_millis}m ({m.cpu_util * 100:.0f}%)",
        f"  memory:         {m.mem_mib}Mi / {metrics.limits_mem_mib}Mi ({m.mem_fraction * 100:.0f}%)",
        f"  io wait:        {m.io_wait_pct:.0f}%",
        f"  network loss:   {metrics.loss_pct:.0f}%",
        f"  network delay:  {metrics.delay_ms:.0f}ms",
    ]
    return "\n".join(lines)


def _describe_chaos(chaos: cluster_sim.ChaosObject) -> str:
    lines = [
        f"Name:         {chaos.name}",
        f"Namespace:    {chaos.namespace}",
        "API Version:  chaos-mesh.org/v1alpha1",
        f"Kind:         {chaos.kind.value}",
        "Spec:",
        "  Mode:  all",
        "  Selector:",
        f"    Label Selectors:  app={chaos.selector_service}",
    ]
    lines += [f"  {k}:  {v:g}" for k, v in sorted(chaos.params.items())]
    return "\n".join(lines)


def _describe(cmd: Command, state: ClusterState) -> CmdResult:
    ns = cmd.namespace
    if cmd.kind == "hpa":
        return _not_found("hpa", cmd.name) if cmd.name else _no_resources(ns)
    if ns != state.namespace:
        return _not_found(cmd.kind, cmd.name) if cmd.name else _no_resources(ns)
    if cmd.kind == "deployment":
        if cmd.name is not None:
            d = state.deployments.get(cmd.name)
            if d is None:
                return _not_found("deployment", cmd.name)
            return CmdResult(stdout=_describe_deployment(state, d))
        return CmdResult(stdout="\n\n\n".join(_describe_deployment(state, d) for d in state.deployments.values()))
    if cmd.kind == "pod":
        if cmd.name is not None:
            pod = _find_pod(state, cmd.name)
            if pod is None:
                return _not_found("pod", cmd.name)
            pods = [pod]
        else:
            pods = _select_pods(state, cmd)
            if not pods:
                return _no_resources(ns)
        return CmdResult(stdout="\n\n\n".join(_describe_pod(state, p) for p in pods))
    if cmd.name is not None:
        chaos = _find_chaos(state, cmd.kind, cmd.name)
        if chaos is None:
            return _not_found(cmd.kind, cmd.name)
        return CmdResult(stdout=_describe_chaos(chaos))
    items = [c for c in state.chaos if c.kind == CHAOS_KINDS[cmd.kind]]
    if not items:
        return _no_resources(ns)
    return CmdResult(stdout="\n\n\n".join(_describe_chaos(c) for c in items))


def _top(cmd: Command, state: ClusterState) -> CmdResult:
    if cmd.namespace != state.namespace:
        return _not_found("pod", cmd.name) if cmd.name else _no_resources(cmd.namespace)
    if cmd.name is not None:
        pod = _find_pod(state, cmd.name)
        if pod is None:
            return _not_found("pod", cmd.name)
        pods = [pod]
    else:
        pods = _select_pods(state, cmd)
    rows = []
    cache = {}
    for p in pods:
        if p.phase == PodPhase.FAILED:
            continue
        if p.deployment not in cache:
            cache[p.deployment] = {m.name: m for m in cluster_sim.observe(state, p.deployment).pods}
        m = cache[p.deployment][p.name]
        rows.append([p.name, f"{m.cpu_millis}m", f"{m.mem_mib}Mi"])
    if not rows:
        if cmd.name is not None:
            return CmdResult(rc=1, stderr=f'error: metrics not available yet for pod "{cmd.name}"')
        return _no_resources(cmd.namespace)
    return CmdResult(stdout=_table(["NAME", "CPU(cores)", "MEMORY(bytes)"], rows))


def _rollout_status(cmd: Command, state: ClusterState) -> CmdResult:
    d = state.deployments.get(cmd.name) if cmd.namespace == state.namespace else None
    if d is None:
        return _not_found("deployment", cmd.name)
    ready, desired = cluster_sim.ready_counts(state, d.name)
    if ready == desired:
        return CmdResult(stdout=f'deployment "{d.name}" successfully rolled out')
    return CmdResult(rc=1, stdout=f'Waiting for deployment "{d.name}" rollout to finish: '
                                  f'{ready} of {desired} updated replicas are available...',
                     stderr="error: timed out waiting for the condition")


# ---------------------------------------------------------------------------
# mutating verbs


def _deployment_for(cmd: Command, state: ClusterState):
    if cmd.namespace != state.namespace:
        return None
    return state.deployments.get(cmd.name)


def _record(cmd: Command, d: cluster_sim.Deployment):
    if cmd.record:
        d.annotations[CHANGE_CAUSE] = cmd.render()


def _scale(cmd: Command, state: ClusterState) -> CmdResult:
    d = _deployment_for(cmd, state)
    if d is None:
        return _not_found("deployment", cmd.name)
    d.desired_replicas = cmd.replicas
    _record(cmd, d)
    cluster_sim.reconcile(state)
    return CmdResult(stdout=f"deployment.apps/{d.name} scaled", mutated=True)


def _set_resources(cmd: Command, state: ClusterState) -> CmdResult:
    d = _deployment_for(cmd, state)
    if d is None:
        return _not_found("deployment", cmd.name)
    if cmd.container is not None and cmd.container != d.name:
        return CmdResult(rc=1, stderr=f'error: unable to find container named "{cmd.container}"')
    template = d.template.model_copy(deep=True)
    try:
        for section, pairs in (("requests", cmd.requests), ("limits", cmd.limits)):
            for key, value in pairs:
                if key == "cpu":
                    setattr(template, f"{section}_cpu", parse_cpu(value))
                else:
                    setattr(template, f"{section}_mem", parse_memory(value))
    except QuantityError as e:
        return CmdResult(rc=1, stderr=f"error: {e}")
    for key, req, lim in (("cpu", template.requests_cpu, template.limits_cpu),
                          ("memory", template.requests_mem, template.limits_mem)):
        if req.millis > lim.millis:
            shown = format_cpu(req) if key == "cpu" else format_memory(req)
            return CmdResult(rc=1, stderr=(
                f'The Deployment "{d.name}" is invalid: spec.template.spec.containers[0].resources.requests: '
                f'Invalid value: "{shown}": must be less than or equal to {key} limit'))
        if lim.millis == 0:
            return CmdResult(rc=1, stderr=f"error: {key} limit must be positive")
    changed = template.model_dump() != d.template.model_dump()
    if changed:
        d.template = template
        d.generation += 1
        _record(cmd, d)
        cluster_sim.reconcile(state)
    return CmdResult(stdout=f"deployment.apps/{d.name} resource requirements updated", mutated=changed)


def _set_env(cmd: Command, state: ClusterState) -> CmdResult:
    d = _deployment_for(cmd, state)
    if d is None:
        return _not_found("deployment", cmd.name)
    if cmd.container is not None and cmd.container != d.name:
        return CmdResult(rc=1, stderr=f'error: unable to find container named "{cmd.container}"')
    env = dict(d.template.env)
    for key, value in cmd.env:
        if value is None:
            env.pop(key, None)
        else:
            env[key] = value
    if env == d.template.env:
        return CmdResult(stdout="")
    d.template.env = env
    d.generation += 1
    _record(cmd, d)
    cluster_sim.reconcile(state)
    return CmdResult(stdout=f"deployment.apps/{d.name} env updated", mutated=True)


def _rollout_restart(cmd: Command, state: ClusterState) -> CmdResult:
    d = _deployment_for(cmd, state)
    if d is None:
        return _not_found("deployment", cmd.name)
    d.generation += 1
    d.annotations[RESTARTED_AT] = f"{state.clock_s:.0f}s"
    cluster_sim.reconcile(state)
    return CmdResult(stdout=f"deployment.apps/{d.name} restarted", mutated=True)


def _delete_pod(cmd: Command, state: ClusterState) -> CmdResult:
    pod = _find_pod(state, cmd.name) if cmd.namespace == state.namespace else None
    if pod is None:
        return _not_found("pod", cmd.name)
    state.pods = [p for p in state.pods if p.uid != pod.uid]
    cluster_sim.reconcile(state)
    return CmdResult(stdout=f'pod "{pod.name}" deleted', mutated=True)


def _delete_chaos(cmd: Command, state: ClusterState) -> CmdResult:
    chaos = _find_chaos(state, cmd.kind, cmd.name) if cmd.namespace == state.namespace else None
    if chaos is None:
        return _not_found(cmd.kind, cmd.name)
    state.chaos = [c for c in state.chaos if c is not chaos]
    cluster_sim.reconcile(state)
    return CmdResult(stdout=f'{_RESOURCE_NAMES[cmd.kind][0]} "{chaos.name}" deleted', mutated=True)


_HANDLERS = {
    Verb.GET: _get,
    Verb.GET_CHAOS: _get_chaos,
    Verb.DESCRIBE: _describe,
    Verb.TOP: _top,
    Verb.ROLLOUT_STATUS: _rollout_status,
    Verb.SCALE: _scale,
    Verb.SET_RESOURCES: _set_resources,
    Verb.SET_ENV: _set_env,
    Verb.ROLLOUT_RESTART: _rollout_restart,
    Verb.DELETE_POD: _delete_pod,
    Verb.DELETE_CHAOS: _delete_chaos,
}


def execute(cmd: Command, state: ClusterState) -> Tuple[ClusterState, CmdResult]:
    result = _HANDLERS[cmd.verb](cmd, state)
    logger.debug(f"kubectl {cmd.verb.value} {cmd.kind}/{cmd.name} -> rc {result.rc}")
    return state, result


def run_command(line: str, state: ClusterState, read_only: bool = False) -> Tuple[ClusterState, CmdResult]:
    """Parse and execute one kubectl line. Every failure becomes rc/stderr."""
    try:
        cmd = parse_command(line, default_namespace=state.namespace)
    except UnsupportedCommand as e:
        return state, CmdResult(rc=127, stderr=str(e))
    except CommandParseError as e:
        return state, CmdResult(rc=1, stderr=f"error: {e}")
    if read_only and cmd.mutating:
        return state, CmdResult(rc=1, stderr="probe must be read-only")
    return execute(cmd, state)
