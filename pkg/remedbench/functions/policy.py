"""Remediation policies: one-shot generation and the probe / execute / verify / reflect loop."""
import logging
import re
import time
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from remedbench.config import Config
from remedbench.exceptions import BackendError, BackendTimeout, PlaybookError
from remedbench.functions import mini_shell, prompts
from remedbench.functions.backends import ModelBackend, Usage
from remedbench.functions.chaos import InjectionRecord
from remedbench.functions.cluster_sim import ClusterState
from remedbench.functions.playbook import Inventory, Transcript, parse_playbook, run_playbook
from remedbench.functions.prompts import FailureReport
from remedbench.functions.verify import VerifyOutcome, combine_outcomes, verify_all

logger = logging.getLogger(__name__)

_FENCE_RE = re.compile(r"```([A-Za-z0-9_\-]*)[ \t]*\n(.*?)```", re.DOTALL)


class OutputKind(str, Enum):
    PROBE = "probe"
    FINAL = "final"
    UNPARSEABLE = "unparseable"


@dataclass(frozen=True)
class ModelOutput:
    kind: OutputKind
    body: str = ""


def parse_model_output(content: str) -> ModelOutput:
    for match in _FENCE_RE.finditer(content or ""):
        tag, body = match.group(1).lower(), match.group(2)
        if tag == "probe":
            return ModelOutput(OutputKind.PROBE, body.strip())
        if tag in ("yaml", "yml"):
            return ModelOutput(OutputKind.FINAL, body)
        if tag == "":
            try:
                parse_playbook(body)
            except PlaybookError:
                continue
            return ModelOutput(OutputKind.FINAL, body)
    return ModelOutput(OutputKind.UNPARSEABLE)


class ChatTranscript(BaseModel):
    messages: List[Dict[str, str]] = Field(default_factory=list)
    probe_rounds: int = 0
    token_usage: Usage = Field(default_factory=Usage)
    calls: List[Usage] = Field(default_factory=list)

    def add(self, role: str, content: str):
        self.messages.append({"role": role, "content": content})

    def count(self, usage: Usage):
        self.calls.append(usage)
        self.token_usage = Usage(
            prompt_tokens=self.token_usage.prompt_tokens + usage.prompt_tokens,
            completion_tokens=self.token_usage.completion_tokens + usage.completion_tokens,
            total_tokens=self.token_usage.total_tokens + usage.total_tokens,
            estimated=self.token_usage.estimated or usage.estimated,
        )


class PolicyOutcome(BaseModel):
    final_playbooks: List[Optional[str]] = Field(default_factory=list)
    transcripts: List[Transcript] = Field(default_factory=list)
    verify_outcomes: List[VerifyOutcome] = Field(default_factory=list)
    attempts_used: int = 0
    success: bool = False
    wall_latency_s: float = 0.0
    attempt_latencies_s: List[float] = Field(default_factory=list)
    tokens: int = 0
    chat: ChatTranscript = Field(default_factory=ChatTranscript)
    detail: Optional[str] = None
    # per-fault outcomes of the last attempt, in record order
    last_outcomes: List[VerifyOutcome] = Field(default_factory=list)

    @property
    def availability_violations(self) -> int:
        return sum(t.availability_violations for t in self.transcripts)


def _verify(state, records, outcome: PolicyOutcome) -> VerifyOutcome:
    outcomes = verify_all(state, records)
    outcome.last_outcomes = outcomes
    combined = combine_outcomes(outcomes, records)
    outcome.verify_outcomes.append(combined)
    return combined


def _remediation_loop(report: FailureReport, backend: ModelBackend, state: ClusterState,
                      records: List[InjectionRecord], t_max: int, probe_budget: int, use_probe: bool,
                      inventory: Optional[Inventory], timeout_s: float) -> PolicyOutcome:
    records = [r for r in records if r.injected_ok]
    probing = use_probe and probe_budget > 0
    outcome = PolicyOutcome()
    chat = outcome.chat
    chat.add("system", prompts.role_definition(report))
    chat.add("user", _kickoff(report, probing, probe_budget))
    started = time.perf_counter()

    for attempt in range(t_max + 1):
        attempt_started = time.perf_counter()
        outcome.attempts_used = attempt + 1
        probes_left = probe_budget if probing else 0
        exhausted_told = False
        playbook_text = None
        transcript = None
        ended = False
        while transcript is None:
            call_started = time.perf_counter()
            try:
                completion = backend.complete(chat.messages, timeout_s)
            except BackendTimeout as e:
                logger.warning(f"attempt {attempt + 1}: {e}")
                outcome.detail = "timeout"
                transcript = Transcript.from_parse_error(f"timeout: {e}")
                ended = True
                break
            except BackendError as e:
                logger.warning(f"attempt {attempt + 1}: {e}")
                outcome.detail = f"backend_error: {e}"
                transcript = Transcript.from_parse_error(str(e))
                ended = True
                break
            if time.perf_counter() - call_started > timeout_s:
                outcome.detail = "timeout"
                transcript = Transcript.from_parse_error("timeout: thinking time exceeded")
                ended = True
                break
            chat.count(completion.usage)
            chat.add("assistant", completion.content)
            logger.debug(f"{backend.name} reply ({completion.usage.total_tokens} tokens)")
            reply = parse_model_output(completion.content)

            if reply.kind == OutputKind.PROBE:
                if probes_left > 0:
                    _, result = mini_shell.run_shell(reply.body, state, read_only=True)
                    probes_left -= 1
                    chat.probe_rounds += 1
                    chat.add("user", prompts.probe_result_prompt(result.stdout, result.stderr, result.rc,
                                                                 remaining=probes_left))
                    continue
                if not exhausted_told:
                    exhausted_told = True
                    chat.add("user", prompts.probe_exhausted_prompt())
                    continue
                outcome.detail = "probe_budget_exhausted"
                transcript = Transcript.from_parse_error("probe budget exhausted without a playbook")
            elif reply.kind == OutputKind.FINAL:
                playbook_text = reply.body
                try:
                    pb = parse_playbook(reply.body)
                except PlaybookError as e:
                    outcome.detail = "parse_error"
                    transcript = Transcript.from_parse_error(str(e))
                else:
                    _, transcript = run_playbook(pb, state, inventory)
                    outcome.detail = None
            else:
                outcome.detail = "parse_error"
                transcript = Transcript.from_parse_error("no fenced playbook in the reply")

        outcome.final_playbooks.append(playbook_text)
        outcome.transcripts.append(transcript)
        verdict = _verify(state, records, outcome)
        outcome.attempt_latencies_s.append(time.perf_counter() - attempt_started)
        logger.debug(f"attempt {attempt + 1}: playbook {transcript.status.value}, {verdict.detail}")
        if verdict.passed:
            outcome.success = True
            outcome.detail = None
            break
        if outcome.detail is None:
            outcome.detail = verdict.detail
        if ended:
            break
        if attempt < t_max:
            chat.add("user", prompts.regeneration_prompt(*transcript.summary()))

    outcome.wall_latency_s = time.perf_counter() - started
    outcome.tokens = chat.token_usage.total_tokens
    return outcome


def _kickoff(report: FailureReport, probing: bool, probe_budget: int) -> str:
    if probing:
        return prompts.render("probe_protocol", namespace=report.namespace, probe_budget=probe_budget)
    return prompts.render("oneshot")


def sologen(report: FailureReport, backend: ModelBackend, state: ClusterState,
            records: List[InjectionRecord], inventory: Optional[Inventory] = None,
            timeout_s: float = Config.MAX_THINKING_TIME_S) -> PolicyOutcome:
    """One prompt, one playbook, one verification."""
    return _remediation_loop(report, backend, state, records, t_max=0, probe_budget=0, use_probe=False,
                             inventory=inventory, timeout_s=timeout_s)


def thinkremed(report: FailureReport, backend: ModelBackend, state: ClusterState,
               records: List[InjectionRecord], t_max: int = Config.DEFAULT_T_MAX,
               probe_budget: int = Config.DEFAULT_PROBE_BUDGET, use_probe: bool = True,
               use_reflection: bool = True, inventory: Optional[Inventory] = None,
               timeout_s: float = Config.MAX_THINKING_TIME_S) -> PolicyOutcome:
    """Probe, write a playbook, run it, verify; on failure reflect and retry up to t_max times."""
    if t_max < 0 or probe_budget < 0:
        raise ValueError("t_max and probe_budget must be >= 0")
    return _remediation_loop(report, backend, state, records,
                             t_max=t_max if use_reflection else 0,
                             probe_budget=probe_budget, use_probe=use_probe,
                             inventory=inventory, timeout_s=timeout_s)
