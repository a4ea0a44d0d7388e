import random

import pytest

from remedbench.functions import cluster_sim
from remedbench.functions.mini_shell import binaries, run_shell, run_single
from remedbench.tests.conftest import NEWS_PROBE

FUZZ_FRAGMENTS = [
    "kubectl get pods -n simple-micro",
    "kubectl get deployment sm-order -o jsonpath='{.spec.replicas}'",
    "kubectl get deployments -o json",
    "kubectl describe deployment sm-db",
    "kubectl describe pods -l app=sm-gateway",
    "kubectl top pods",
    "kubectl get hpa",
    "kubectl get podchaos",
    "kubectl rollout status deployment/sm-user",
    "kubectl scale deployment/sm-order --replicas=4",
    "kubectl set env deployment/sm-user DB_HOST=nowhere",
    "kubectl set resources deployment/sm-db --limits=cpu=4",
    "kubectl rollout restart deployment/sm-gateway",
    "kubectl delete pod sm-db-1-1",
    "kubectl delete networkchaos anything",
    "kubectl get pods 2>/dev/null",
    "kubectl get deployment nope 2>&1",
    "kubectl get pods 'unterminated",
    "kubectl exec sm-db-1-1 ls",
    "top -bn1",
    "awk '{print $1}'",
    "echo hi",
    "true",
    "false",
    "echo a &",
]
FUZZ_JOINERS = [" ; ", " && ", " || ", " | ", "\n"]


def test_news_probe(news_cpu):
    state, _ = news_cpu
    _, result = run_shell(NEWS_PROBE, state, read_only=True)
    assert result.rc == 0
    assert result.stdout == "1\n500m\nNo HPA found"
    assert result.stderr == ""


def test_and_or_short_circuit(sm_state):
    _, result = run_shell("false && echo no || echo yes", sm_state)
    assert (result.rc, result.stdout) == (0, "yes")
    _, result = run_shell("true || echo skipped; echo done", sm_state)
    assert result.stdout == "done"


def test_unsupported_binary_in_pipeline(sm_state):
    _, result = run_shell("top -bn1 | grep 'Cpu(s)' | awk '{print $2}'", sm_state)
    assert result.rc == 127
    assert result.stderr == "unsupported in simulator: top"


def test_syntax_errors(sm_state):
    _, result = run_shell("kubectl get pods > pods.txt", sm_state)
    assert result.rc == 2
    assert "redirect target not supported" in result.stderr
    _, result = run_shell("echo a &", sm_state)
    assert result.rc == 2
    _, result = run_shell("echo 'open", sm_state)
    assert result.rc == 2


def test_stderr_merge(sm_state):
    _, result = run_shell("kubectl get deployment nope -n simple-micro 2>&1", sm_state)
    assert result.rc == 1
    assert 'deployments.apps "nope" not found' in result.stdout
    assert result.stderr == ""


def test_mutation_is_reported(sm_state):
    _, result = run_shell("kubectl scale deployment/sm-order --replicas=2 && "
                          "kubectl rollout status deployment/sm-order", sm_state)
    assert result.rc == 0
    assert result.mutated
    assert cluster_sim.ready_counts(sm_state, "sm-order") == (2, 2)


def test_empty_line(sm_state):
    _, result = run_shell("   \n", sm_state)
    assert (result.rc, result.stdout, result.stderr) == (0, "", "")


def test_binaries():
    line = "kubectl get pods | grep x && top -bn1"
    assert binaries(line) == ["kubectl", "grep", "top"]
    assert binaries(line, composed=False) == ["kubectl"]
    assert binaries("echo 'open") == []


def test_run_single(sm_state):
    _, result = run_single("kubectl get deployment sm-db -o jsonpath='{.spec.replicas}'", sm_state)
    assert result.stdout == "1"
    _, result = run_single("top -bn1", sm_state)
    assert result.rc == 127


@pytest.mark.parametrize("seed", range(4))
def test_read_only_probes_never_change_state(sm_state, seed):
    rng = random.Random(seed)
    before = cluster_sim.state_hash(sm_state)
    for _ in range(250):
        parts = [rng.choice(FUZZ_FRAGMENTS) for _ in range(rng.randint(1, 4))]
        line = parts[0]
        for part in parts[1:]:
            line += rng.choice(FUZZ_JOINERS) + part
        _, result = run_shell(line, sm_state, read_only=True)
        assert not result.mutated
        assert cluster_sim.state_hash(sm_state) == before
