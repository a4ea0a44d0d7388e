import math
from unittest import mock

import pytest
import requests

from remedbench.exceptions import BackendError
from remedbench.functions import chaos, cluster_sim
from remedbench.functions.backends import (Completion, ModelBackend, RemoteChat, ScriptedOracle, Usage,
                                           estimated_usage, make_backend)
from remedbench.functions.chaos import FailureSpec, FailureType
from remedbench.functions.playbook import PlaybookStatus
from remedbench.functions.policy import OutputKind, parse_model_output, sologen, thinkremed
from remedbench.functions.prompts import build_report, regeneration_prompt, role_definition
from remedbench.tests.conftest import NEWS_PROBE

ENDPOINT = "http://llm.internal:8000/v1/chat/completions"


class Canned(ModelBackend):
    """Replays fixed replies, repeating the last one."""

    name = "canned"

    def __init__(self, *replies):
        self.replies = list(replies)
        self.seen = []

    def complete(self, messages, timeout_s):
        self.seen.append(list(messages))
        content = self.replies[min(len(self.seen), len(self.replies)) - 1]
        return Completion(content=content, usage=Usage(prompt_tokens=7, completion_tokens=3, total_tokens=10))


def _run(policy, backend_name, state, record, **kwargs):
    backend = make_backend(backend_name, [record], state, probe_first=kwargs.pop("probe_first", False))
    return policy(build_report(state, [record]), backend, state, [record], **kwargs)


@pytest.mark.parametrize("content, kind, body", [
    ("Let me check.\n```probe\nkubectl get pods -n train-ticket\n```", OutputKind.PROBE,
     "kubectl get pods -n train-ticket"),
    ("```yaml\n- hosts: all\n  tasks: []\n```", OutputKind.FINAL, "- hosts: all\n  tasks: []\n"),
    ("```YML\n- hosts: all\n```", OutputKind.FINAL, "- hosts: all\n"),
    ("```\n- hosts: all\n  tasks: []\n```", OutputKind.FINAL, "- hosts: all\n  tasks: []\n"),
    ("```\njust words\n```", OutputKind.UNPARSEABLE, ""),
    ("```bash\nkubectl get pods\n```", OutputKind.UNPARSEABLE, ""),
    ("Scaling is probably the right call.", OutputKind.UNPARSEABLE, ""),
    ("```probe\necho first\n```\n```yaml\n- hosts: all\n```", OutputKind.PROBE, "echo first"),
])
def test_parse_model_output(content, kind, body):
    output = parse_model_output(content)
    assert output.kind == kind
    assert output.body == body


def test_build_report(news_cpu):
    state, record = news_cpu
    report = build_report(state, [record])
    assert report.namespace == "train-ticket"
    assert report.root_cause == "ts-news-service"
    assert report.failure_category == "CPU Saturation"
    assert "[k3s_control_plane]" in report.inventory_content
    assert "ts-news-service" in report.runtime_envs


def test_role_definition_wording(news_cpu):
    state, record = news_cpu
    text = role_definition(build_report(state, [record]))
    assert text.startswith("You are an experienced SRE managing a microservice system.\n")
    assert "restarting services should not be considered a primary strategy." in text
    assert "The content of inventory.ini is [k3s_control_plane]" in text
    assert text.endswith("The current namespace is: train-ticket, failure root cause service is: ts-news-service, "
                         "and the failure category is: CPU Saturation.")
    _, second = chaos.inject(state, FailureSpec(type=FailureType.NETWORK_DELAY, target_service="ts-order-service"))
    text = role_definition(build_report(state, [record, second]))
    assert "failure root cause service is: ts-news-service, ts-order-service" in text
    assert text.endswith("Several faults are active at once:\n- ts-news-service: CPU Saturation\n"
                         "- ts-order-service: Network Delay")


def test_regeneration_wording():
    assert regeneration_prompt("failed", "TASK [x] failed rc=1") == (
        "The failure of online service has not yet been remediated.\n"
        "You may use the probe agent to further inspect the system state and generate a new Ansible playbook "
        "to attempt remediation again.\n"
        "The previous playbook execution returned: failed, output: TASK [x] failed rc=1")


def test_sologen_oracle(news_cpu):
    state, record = news_cpu
    outcome = _run(sologen, "oracle", state, record)
    assert outcome.success
    assert outcome.attempts_used == 1
    assert outcome.detail is None
    assert outcome.transcripts[0].status == PlaybookStatus.OK
    assert [m["role"] for m in outcome.chat.messages] == ["system", "user", "assistant"]
    assert outcome.tokens == outcome.chat.token_usage.total_tokens > 0
    assert len(outcome.attempt_latencies_s) == 1


def test_sologen_broken(news_cpu):
    state, record = news_cpu
    outcome = _run(sologen, "broken", state, record)
    assert not outcome.success
    assert outcome.detail == "parse_error"
    assert outcome.final_playbooks == [None]
    assert outcome.transcripts[0].parse_error == "no fenced playbook in the reply"


def test_sologen_scale_only(news_cpu):
    state, record = news_cpu
    outcome = _run(sologen, "scale_only", state, record)
    assert not outcome.success
    assert outcome.transcripts[0].status == PlaybookStatus.OK
    assert outcome.detail == "still failing: cpu_utilization"
    assert cluster_sim.get_deployment(state, "ts-news-service").desired_replicas == 3


def test_reflection_recovers_from_scaling(news_cpu):
    state, record = news_cpu
    outcome = _run(thinkremed, "naive_then_oracle", state, record, t_max=1, use_probe=False)
    assert outcome.success
    assert outcome.attempts_used == 2
    assert [v.passed for v in outcome.verify_outcomes] == [False, True]
    regeneration = outcome.chat.messages[3]
    assert regeneration["role"] == "user"
    assert regeneration["content"].startswith("The failure of online service has not yet been remediated.")
    assert "The previous playbook execution returned: successful, output: " in regeneration["content"]
    assert "TASK [Verify deployment scale] changed rc=0 stdout='3'" in regeneration["content"]


def test_no_reflection_budget_means_one_attempt(news_cpu):
    state, record = news_cpu
    outcome = _run(thinkremed, "naive_then_oracle", state, record, t_max=0, use_probe=False)
    assert not outcome.success
    assert outcome.attempts_used == 1
    _, record = chaos.inject(cluster_sim.reset(state), record.spec)
    outcome = _run(thinkremed, "naive_then_oracle", state, record,
                   t_max=3, use_reflection=False, use_probe=False)
    assert outcome.attempts_used == 1


def test_probe_round_then_playbook(news_cpu):
    state, record = news_cpu
    outcome = _run(thinkremed, "oracle", state, record, probe_first=True)
    assert outcome.success
    assert outcome.chat.probe_rounds == 1
    roles = [m["role"] for m in outcome.chat.messages]
    assert roles == ["system", "user", "assistant", "user", "assistant"]
    assert outcome.chat.messages[3]["content"].startswith("Probe output (exit code 0):")
    assert "Probes left in this attempt: 4." in outcome.chat.messages[3]["content"]


def test_probe_output_reaches_the_model(news_cpu):
    state, record = news_cpu
    backend = Canned(f"```probe\n{NEWS_PROBE}\n```", "I am not sure.")
    thinkremed(build_report(state, [record]), backend, state, [record], t_max=0)
    probe_answer = backend.seen[1][-1]["content"]
    assert "1\n500m\nNo HPA found" in probe_answer


def test_probes_are_read_only(news_cpu):
    state, record = news_cpu
    before = cluster_sim.state_hash(state)
    backend = Canned("```probe\nkubectl scale deployment ts-news-service -n train-ticket --replicas=0\n```",
                     "no playbook")
    outcome = thinkremed(build_report(state, [record]), backend, state, [record], t_max=0)
    assert "probe must be read-only" in backend.seen[1][-1]["content"]
    assert cluster_sim.state_hash(state) == before
    assert outcome.detail == "parse_error"


def test_probe_budget_exhausted(news_cpu):
    state, record = news_cpu
    backend = Canned("```probe\nkubectl get pods -n train-ticket\n```")
    outcome = thinkremed(build_report(state, [record]), backend, state, [record], t_max=0, probe_budget=2)
    assert outcome.chat.probe_rounds == 2
    assert outcome.detail == "probe_budget_exhausted"
    assert outcome.chat.messages[-2]["content"].startswith("No probes are left")
    assert len(backend.seen) == 4
    assert outcome.tokens == 40


def test_thinkremed_spends_more_tokens_than_sologen(news_cpu):
    state, record = news_cpu
    once = _run(sologen, "oracle", state, record)
    cluster_sim.reset(state)
    _, record = chaos.inject(state, record.spec)
    probed = _run(thinkremed, "oracle", state, record, probe_first=True)
    assert once.success and probed.success
    assert probed.tokens > once.tokens


def test_thinkremed_rejects_negative_budgets(news_cpu):
    state, record = news_cpu
    with pytest.raises(ValueError):
        _run(thinkremed, "oracle", state, record, t_max=-1)


def test_make_backend_remote_needs_endpoint(news_cpu):
    state, record = news_cpu
    with pytest.raises(BackendError):
        make_backend("remote", [record], state)
    assert isinstance(make_backend("remote", [record], state, endpoint=ENDPOINT, model="m"), RemoteChat)


def _chat_response(content, usage=None, status_code=200):
    response = mock.Mock(status_code=status_code, text="upstream exploded")
    body = {"choices": [{"message": {"role": "assistant", "content": content}}]}
    if usage is not None:
        body["usage"] = usage
    response.json.return_value = body
    return response


@mock.patch('remedbench.functions.backends.requests.post')
def test_remote_backend_reports_usage(mock_post, news_cpu):
    state, record = news_cpu
    playbook = ScriptedOracle([record], state).oracle_playbook()
    mock_post.return_value = _chat_response(playbook, {"prompt_tokens": 100, "completion_tokens": 23,
                                                       "total_tokens": 123})
    backend = RemoteChat(ENDPOINT, "test-model", api_key="secret")
    outcome = sologen(build_report(state, [record]), backend, state, [record], timeout_s=30)
    assert outcome.success
    assert outcome.tokens == 123
    assert not outcome.chat.token_usage.estimated
    kwargs = mock_post.call_args.kwargs
    assert mock_post.call_args.args == (ENDPOINT,)
    assert kwargs["json"]["model"] == "test-model"
    assert kwargs["headers"]["Authorization"] == "Bearer secret"
    assert kwargs["timeout"] == 30


@mock.patch('remedbench.functions.backends.requests.post')
def test_remote_backend_estimates_missing_usage(mock_post, news_cpu):
    state, record = news_cpu
    mock_post.return_value = _chat_response("I would scale it out.")
    backend = RemoteChat(ENDPOINT, "test-model", api_key="")
    outcome = sologen(build_report(state, [record]), backend, state, [record])
    assert outcome.chat.token_usage.estimated
    words = sum(len(m["content"].split()) for m in outcome.chat.messages[:2]) + 5
    assert outcome.tokens == math.ceil(1.3 * words)
    assert "Authorization" not in mock_post.call_args.kwargs["headers"]


@mock.patch('remedbench.functions.backends.requests.post')
def test_remote_backend_timeout(mock_post, news_cpu):
    state, record = news_cpu
    mock_post.side_effect = requests.exceptions.Timeout()
    backend = RemoteChat(ENDPOINT, "test-model", api_key="")
    outcome = thinkremed(build_report(state, [record]), backend, state, [record], t_max=2, use_probe=False)
    assert outcome.detail == "timeout"
    assert not outcome.success
    assert outcome.attempts_used == 1
    assert outcome.transcripts[0].parse_error.startswith("timeout: ")
    assert outcome.tokens == 0


@mock.patch('remedbench.functions.backends.requests.post')
def test_remote_backend_http_error(mock_post, news_cpu):
    state, record = news_cpu
    mock_post.return_value = _chat_response("", status_code=500)
    backend = RemoteChat(ENDPOINT, "test-model", api_key="")
    outcome = sologen(build_report(state, [record]), backend, state, [record])
    assert outcome.detail.startswith("backend_error: ")
    assert "answered 500" in outcome.detail


@pytest.mark.parametrize("texts, content, split, total", [
    (["a"], "b", (2, 2), 3),
    (["one two", "three"], "four five six seven", (4, 6), 10),
    ([], "", (0, 0), 0),
])
def test_estimated_usage_rounds_the_total_once(texts, content, split, total):
    usage = estimated_usage([{"role": "user", "content": t} for t in texts], content)
    assert (usage.prompt_tokens, usage.completion_tokens) == split
    assert usage.total_tokens == total
    assert usage.estimated
