"""Model backends: the scripted stand-ins used for testing and the remote chat client."""
import json
import logging
import math
from typing import Dict, List, Optional

import requests
from pydantic import BaseModel

from remedbench.config import BackendName, Config
from remedbench.exceptions import BackendError, BackendTimeout
from remedbench.functions import chaos
from remedbench.functions.chaos import InjectionRecord
from remedbench.functions.cluster_sim import ClusterState

logger = logging.getLogger(__name__)

TOKEN_FACTOR = 1.3
PROBE_RESULT_PREFIX = "Probe output"
PROBE_EXHAUSTED_PREFIX = "No probes are left"


class Usage(BaseModel):
    prompt_tokens: int = 0
    completion_tokens: int = 0
    total_tokens: int = 0
    estimated: bool = False


class Completion(BaseModel):
    content: str
    usage: Usage


def estimate_tokens(*texts: str) -> int:
    return math.ceil(TOKEN_FACTOR * sum(len(t.split()) for t in texts))


def estimated_usage(messages: List[Dict[str, str]], content: str) -> Usage:
    texts = [m["content"] for m in messages]
    # the total is rounded once over everything; the split is informational
    return Usage(prompt_tokens=estimate_tokens(*texts), completion_tokens=estimate_tokens(content),
                 total_tokens=estimate_tokens(*texts, content), estimated=True)


class ModelBackend:
    name = "backend"
    replayable = True

    def complete(self, messages: List[Dict[str, str]], timeout_s: float) -> Completion:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# scripted backends


def _fence(tag: str, body: str, lead: str) -> str:
    return f"{lead}\n\n```{tag}\n{body.rstrip()}\n```"


def _task(name: str, command: str, register: str, extra: Optional[List[str]] = None) -> str:
    lines = [f"    - name: {name}", f"      command: {command}", f"      register: {register}"]
    return "\n".join(lines + (extra or []))


def _playbook(title: str, tasks: List[str]) -> str:
    header = f"---\n- name: {title}\n  hosts: k3s_control_plane\n  tasks:"
    return header + ("\n" + "\n".join(tasks) if tasks else " []")


class _Scripted(ModelBackend):
    def __init__(self, records: List[InjectionRecord], state: ClusterState, probe_first: bool = False):
        self.records = [r for r in records if r.injected_ok]
        self.state = state
        self.probe_first = probe_first

    @property
    def services(self) -> List[str]:
        return list(dict.fromkeys(r.spec.target_service for r in self.records))

    def complete(self, messages, timeout_s):
        content = self.respond(messages)
        usage = estimated_usage(messages, content)
        usage.estimated = False
        return Completion(content=content, usage=usage)

    def respond(self, messages) -> str:
        raise NotImplementedError

    def _should_probe(self, messages) -> bool:
        if not self.probe_first:
            return False
        last = messages[-1]["content"] if messages else ""
        return not (last.startswith(PROBE_RESULT_PREFIX) or last.startswith(PROBE_EXHAUSTED_PREFIX))

    def probe(self) -> str:
        ns = self.state.namespace
        lines = []
        for service in self.services:
            lines.append(f"kubectl get deployment {service} -n {ns} -o wide; "
                         f"kubectl describe pods -n {ns} -l app={service}")
        return _fence("probe", "\n".join(lines), "Let me look at the affected services first.")

    def oracle_playbook(self) -> str:
        tasks = []
        step = 0
        for record in self.records:
            for name, command in chaos.oracle_commands(record, self.state):
                step += 1
                tasks.append(_task(name, json.dumps(command), f"step_{step}"))
        names = " and ".join(dict.fromkeys(r.spec.type.display_name for r in self.records))
        title = f"Remediate {names} on {', '.join(self.services)}"
        return _fence("yaml", _playbook(title, tasks), "Here is the remediation playbook.")

    def scale_playbook(self) -> str:
        ns = self.state.namespace
        tasks = []
        many = len(self.services) > 1
        for i, service in enumerate(self.services, start=1):
            suffix = f"_{i}" if many else ""
            tasks.append(_task(
                "Scale deployment to increase replicas",
                f"kubectl scale deployment {service} --namespace={ns} --replicas=3",
                f"scale_result{suffix}",
                ["      args:", "        executable: /bin/bash", "      ignore_errors: yes",
                 f"      changed_when: \"'scaled to' in scale_result{suffix}.stderr\""],
            ))
            tasks.append(_task(
                "Verify deployment scale",
                f"kubectl get deployment {service} -n {ns} -o jsonpath='{{.spec.replicas}}'",
                f"verify_result{suffix}",
                [f"      failed_when: verify_result{suffix}.stdout | int < 3"],
            ))
        names = " and ".join(dict.fromkeys(r.spec.type.display_name for r in self.records))
        return _fence("yaml", _playbook(f"Remediate {names} on {', '.join(self.services)}", tasks),
                      "Scaling out should spread the load.")


class ScriptedOracle(_Scripted):
    name = BackendName.ORACLE.value

    def respond(self, messages):
        if self._should_probe(messages):
            return self.probe()
        return self.oracle_playbook()


class ScriptedNaiveThenOracle(_Scripted):
    """Scales replicas on its first playbook; every later playbook is the oracle's."""

    name = BackendName.NAIVE_THEN_ORACLE.value

    def respond(self, messages):
        if self._should_probe(messages):
            return self.probe()
        earlier = sum(1 for m in messages if m["role"] == "assistant" and "```yaml" in m["content"])
        return self.scale_playbook() if earlier == 0 else self.oracle_playbook()


class ScriptedScaleOnly(_Scripted):
    name = BackendName.SCALE_ONLY.value

    def respond(self, messages):
        if self._should_probe(messages):
            return self.probe()
        return self.scale_playbook()


class ScriptedBroken(_Scripted):
    name = BackendName.BROKEN.value

    def respond(self, messages):
        return "I think the issue is CPU related. Scaling the service out is probably the right call."


# ---------------------------------------------------------------------------
# remote chat endpoint


class RemoteChat(ModelBackend):
    name = BackendName.REMOTE.value
    replayable = False

    def __init__(self, endpoint: str, model: str, api_key: Optional[str] = None):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key if api_key is not None else Config.api_key

    def complete(self, messages, timeout_s=Config.MAX_THINKING_TIME_S):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {"model": self.model, "messages": [{"role": m["role"], "content": m["content"]} for m in messages]}
        try:
            response = requests.post(self.endpoint, json=payload, headers=headers, timeout=timeout_s)
        except requests.exceptions.Timeout:
            raise BackendTimeout(f"no answer from {self.endpoint} within {timeout_s:g}s")
        except requests.exceptions.RequestException as e:
            raise BackendError(f"request to {self.endpoint} failed: {e}")
        if not 200 <= response.status_code < 300:
            raise BackendError(f"{self.endpoint} answered {response.status_code}: {response.text[:300]}")
        try:
            data = response.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise BackendError(f"unexpected response from {self.endpoint}: {e}")
        raw_usage = data.get("usage")
        if raw_usage and "total_tokens" in raw_usage:
            prompt = int(raw_usage.get("prompt_tokens", 0))
            completion = int(raw_usage.get("completion_tokens", 0))
            usage = Usage(prompt_tokens=prompt, completion_tokens=completion,
                          total_tokens=int(raw_usage["total_tokens"]))
        else:
            usage = estimated_usage(messages, content or "")
            logger.warning(f"{self.endpoint} returned no usage; estimated {usage.total_tokens} tokens")
        logger.debug(f"{self.model} answered with {usage.total_tokens} tokens")
        return Completion(content=content or "", usage=usage)


_SCRIPTED = {
    BackendName.ORACLE: ScriptedOracle,
    BackendName.NAIVE_THEN_ORACLE: ScriptedNaiveThenOracle,
    BackendName.SCALE_ONLY: ScriptedScaleOnly,
    BackendName.BROKEN: ScriptedBroken,
}


def make_backend(name, records: List[InjectionRecord], state: ClusterState, probe_first: bool = False,
                 endpoint: Optional[str] = None, model: Optional[str] = None) -> ModelBackend:
    name = BackendName(name)
    if name == BackendName.REMOTE:
        if not endpoint or not model:
            raise BackendError("remote backend needs an endpoint and a model")
        return RemoteChat(endpoint, model)
    return _SCRIPTED[name](records, state, probe_first=probe_first)
