import json
import os
from pathlib import Path

import pytest

from remedbench.config import RunConfig
from remedbench.functions import chaos, cluster_sim
from remedbench.functions.chaos import FailureSpec, FailureType

TESTS_DIR = Path(__file__).resolve().parent
GOLDEN_DIR = TESTS_DIR / "goldens"
CORPUS_DIR = TESTS_DIR.parent / "corpus"

# replica count, CPU limit and autoscaler of the news service in one probe line
NEWS_PROBE = (
    "kubectl get deployment ts-news-service -n train-ticket -o jsonpath='{.spec.replicas}'; "
    "kubectl get deployment ts-news-service -n train-ticket "
    "-o jsonpath='{.spec.template.spec.containers[0].resources.limits.cpu}'; "
    "kubectl get hpa ts-news-service -n train-ticket 2>/dev/null || echo 'No HPA found'"
)


@pytest.fixture
def sm_state():
    return cluster_sim.load_builtin_topology("sm_like")


@pytest.fixture
def tt_state():
    return cluster_sim.load_builtin_topology("tt_like")


@pytest.fixture
def news_cpu(tt_state):
    """train-ticket cluster with CPU saturation on ts-news-service."""
    state, record = chaos.inject(tt_state, FailureSpec(type=FailureType.CPU_SATURATION,
                                                       target_service="ts-news-service"))
    return state, record


@pytest.fixture
def oracle_config():
    return RunConfig(system_id="sm_like", difficulty="easy", policy="sologen", backend="oracle", seed=1)


def transcript_digest(transcript) -> dict:
    return {
        "status": transcript.status.value,
        "warnings": list(transcript.warnings),
        "availability_violations": transcript.availability_violations,
        "records": [
            {
                "play": r.play,
                "task": r.task,
                "module": r.module,
                "command": r.command,
                "rc": r.result.rc if r.result else None,
                "stdout": r.result.stdout if r.result else None,
                "stderr": r.result.stderr if r.result else None,
                "skipped": r.skipped,
                "failed": r.failed,
                "changed": r.changed,
                "ignored": r.ignored,
                "clock_s": r.clock_s,
            }
            for r in transcript.records
        ],
    }


def check_golden(name: str, payload: dict):
    path = GOLDEN_DIR / f"{name}.json"
    rendered = json.dumps(payload, indent=2) + "\n"
    if os.getenv("REMEDBENCH_REGEN_GOLDENS") == "1":
        path.write_text(rendered, encoding="utf-8")
    # compared as text so key order and number spelling count
    assert rendered == path.read_text(encoding="utf-8")
