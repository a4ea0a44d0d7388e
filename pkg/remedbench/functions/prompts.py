"""Failure reports and the chat prompts built from them."""
import logging
from pathlib import Path
from typing import List, Optional, Tuple

from jinja2 import Environment, FileSystemLoader, StrictUndefined
from pydantic import BaseModel, Field

from remedbench.functions.chaos import InjectionRecord
from remedbench.functions.cluster_sim import ClusterState
from remedbench.functions.playbook import Inventory

logger = logging.getLogger(__name__)

PROMPT_DIR = Path(__file__).resolve().parent.parent / "prompts"

_env = Environment(
    loader=FileSystemLoader(str(PROMPT_DIR)),
    undefined=StrictUndefined,
    autoescape=False,
    keep_trailing_newline=False,
)


def render(template: str, **values) -> str:
    return _env.get_template(f"{template}.j2").render(**values).strip()


class FailureReport(BaseModel):
    namespace: str
    root_cause: str
    failure_category: str
    runtime_envs: str
    inventory_content: str
    # every (service, failure category) pair; more than one on multi-fault scenarios
    faults: List[Tuple[str, str]] = Field(default_factory=list)


def build_report(state: ClusterState, records: List[InjectionRecord],
                 inventory: Optional[Inventory] = None) -> FailureReport:
    inventory = inventory or Inventory()
    faults = [(r.spec.target_service, r.spec.type.display_name) for r in records if r.injected_ok]
    services = list(dict.fromkeys(s for s, _ in faults))
    categories = list(dict.fromkeys(c for _, c in faults))
    return FailureReport(
        namespace=state.namespace,
        root_cause=", ".join(services),
        failure_category=", ".join(categories),
        runtime_envs=render("runtime_envs", namespace=state.namespace, services=list(state.deployments)),
        inventory_content=inventory.render(),
        faults=faults,
    )


def role_definition(report: FailureReport) -> str:
    return render("role_definition", **report.model_dump())


def regeneration_prompt(playbook_exec_status: str, status: str) -> str:
    return render("regeneration", playbook_exec_status=playbook_exec_status, status=status)


def probe_result_prompt(stdout: str, stderr: str, rc: int, remaining: Optional[int] = None) -> str:
    return render("probe_result", stdout=stdout, stderr=stderr, rc=rc, remaining=remaining)


def probe_exhausted_prompt() -> str:
    return render("probe_exhausted")
