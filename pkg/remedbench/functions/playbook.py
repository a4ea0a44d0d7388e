"""Restricted Ansible playbook dialect: parsing, linting and execution against the simulator."""
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, Field

from remedbench.exceptions import ExprError, PlaybookError
from remedbench.functions import cluster_sim, mini_shell
from remedbench.functions.cluster_sim import ClusterState
from remedbench.functions.expressions import Expr, eval_expr, parse_expr
from remedbench.functions.kubecmd import CmdResult

logger = logging.getLogger(__name__)

MODULES = ("command", "shell")
MODULE_ALIASES = {
    "command": "command", "ansible.builtin.command": "command",
    "shell": "shell", "ansible.builtin.shell": "shell",
}
TASK_KEYS = {"name", "args", "register", "when", "failed_when", "changed_when",
             "ignore_errors", "become", "tags", "no_log"}
PLAY_KEYS = {"name", "hosts", "become", "become_user", "gather_facts", "tasks"}
UNSUPPORTED_KEYWORDS = {
    "loop", "with_items", "with_list", "with_dict", "with_sequence", "until", "retries", "delay",
    "notify", "block", "rescue", "always", "include_tasks", "import_tasks", "include_role",
    "import_role", "vars", "vars_files", "environment", "delegate_to", "async", "poll",
    "handlers", "roles", "pre_tasks", "post_tasks",
}
_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_FENCE_RE = re.compile(r"```[A-Za-z0-9_\-]*[ \t]*\n(.*?)```", re.DOTALL)

Condition = Union[Expr, bool]


@dataclass(frozen=True)
class Task:
    name: str
    module: str
    line: str
    register: Optional[str] = None
    when: Tuple[Condition, ...] = ()
    failed_when: Optional[Tuple[Condition, ...]] = None
    changed_when: Optional[Tuple[Condition, ...]] = None
    ignore_errors: bool = False
    source_line: Optional[int] = None


@dataclass(frozen=True)
class Play:
    name: str
    hosts: str
    become: bool = False
    tasks: Tuple[Task, ...] = ()


@dataclass(frozen=True)
class Playbook:
    plays: Tuple[Play, ...]

    @property
    def tasks(self) -> List[Task]:
        return [t for p in self.plays for t in p.tasks]


class Inventory(BaseModel):
    groups: Dict[str, List[str]] = Field(default_factory=lambda: {
        "k3s_control_plane": ["k3s-master"],
        "microservice_nodes": ["k3s-node-1"],
    })
    addresses: Dict[str, str] = Field(default_factory=lambda: {
        "k3s-master": "10.0.0.10",
        "k3s-node-1": "10.0.0.11",
    })

    @property
    def hosts(self) -> List[str]:
        seen = []
        for members in self.groups.values():
            seen += [h for h in members if h not in seen]
        return seen

    def resolve(self, pattern: str) -> List[str]:
        matched = []
        for part in re.split(r"[,:]", str(pattern)):
            part = part.strip()
            if part in ("all", "*"):
                found = self.hosts
            elif part == "localhost":
                found = ["localhost"]
            elif part in self.groups:
                found = self.groups[part]
            elif part in self.hosts:
                found = [part]
            else:
                found = []
            matched += [h for h in found if h not in matched]
        return matched

    def render(self) -> str:
        blocks = []
        for group, members in self.groups.items():
            lines = [f"[{group}]"]
            lines += [f"{h} ansible_host={self.addresses.get(h, h)} ansible_user=root" for h in members]
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks)


class TaskResult(BaseModel):
    stdout: Optional[str] = None
    stderr: Optional[str] = None
    rc: Optional[int] = None
    skipped: bool = False
    failed: bool = False
    changed: bool = False


class TaskRecord(BaseModel):
    play: str
    task: str
    module: str
    command: str
    result: Optional[CmdResult] = None
    skipped: bool = False
    failed: bool = False
    changed: bool = False
    ignored: bool = False
    error: Optional[str] = None
    clock_s: float = 0.0


class PlaybookStatus(str, Enum):
    OK = "Ok"
    FAILED = "Failed"


class Transcript(BaseModel):
    records: List[TaskRecord] = Field(default_factory=list)
    status: PlaybookStatus = PlaybookStatus.OK
    warnings: List[str] = Field(default_factory=list)
    availability_violations: int = 0
    parse_error: Optional[str] = None

    @classmethod
    def from_parse_error(cls, message: str) -> "Transcript":
        return cls(status=PlaybookStatus.FAILED, parse_error=message)

    def summary(self) -> Tuple[str, str]:
        """(playbook_exec_status, status) as handed back to the model on regeneration."""
        exec_status = "successful" if self.status == PlaybookStatus.OK else "failed"
        if self.parse_error is not None:
            return exec_status, f"playbook could not be parsed: {self.parse_error}"
        lines = list(self.warnings)
        for r in self.records:
            if r.skipped:
                lines.append(f"TASK [{r.task}] skipping")
                continue
            state = "failed" if r.failed else ("changed" if r.changed else "ok")
            if r.failed and r.ignored:
                state += " (ignored)"
            line = f"TASK [{r.task}] {state}"
            if r.result is not None:
                line += f" rc={r.result.rc}"
                if r.result.stdout:
                    line += f" stdout={r.result.stdout!r}"
                if r.result.stderr:
                    line += f" stderr={r.result.stderr!r}"
            if r.error:
                line += f" error={r.error!r}"
            lines.append(line)
        return exec_status, "\n".join(lines) if lines else "no tasks executed"


# ---------------------------------------------------------------------------
# parsing


def strip_code_fence(text: str) -> str:
    match = _FENCE_RE.search(text)
    return match.group(1) if match else text


def _node_line(root, path) -> Optional[int]:
    node = root
    for step in path:
        if node is None:
            return None
        if isinstance(node, yaml.SequenceNode) and isinstance(step, int) and step < len(node.value):
            node = node.value[step]
        elif isinstance(node, yaml.MappingNode):
            node = next((v for k, v in node.value if k.value == step), None)
        else:
            return None
    return node.start_mark.line + 1 if node is not None else None


def _as_bool(value, where: str, line) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("yes", "true", "no", "false"):
        return value.lower() in ("yes", "true")
    raise PlaybookError(f"expected a boolean, got {value!r}", line, where)


def _conditions(value, where: str, line) -> Tuple[Condition, ...]:
    items = value if isinstance(value, list) else [value]
    parsed = []
    for item in items:
        if isinstance(item, bool):
            parsed.append(item)
        elif isinstance(item, (str, int, float)):
            try:
                parsed.append(parse_expr(str(item)))
            except ExprError as e:
                raise PlaybookError(str(e), line, where)
        else:
            raise PlaybookError(f"condition must be a string, got {type(item).__name__}", line, where)
    return tuple(parsed)


def _parse_task(raw, where: str, root, path) -> Task:
    line = _node_line(root, path)
    if not isinstance(raw, dict):
        raise PlaybookError("task must be a mapping", line, where)
    modules = []
    for key in raw:
        if key in TASK_KEYS:
            continue
        if key in UNSUPPORTED_KEYWORDS:
            raise PlaybookError(f"unsupported keyword: {key}", _node_line(root, path + [key]), f"{where}.{key}")
        if key in MODULE_ALIASES:
            modules.append(key)
            continue
        raise PlaybookError(f"unsupported module: {key} (supported: {', '.join(MODULES)})",
                            _node_line(root, path + [key]), f"{where}.{key}")
    if not modules:
        raise PlaybookError(f"task has no action (supported modules: {', '.join(MODULES)})", line, where)
    if len(modules) > 1:
        raise PlaybookError(f"task has more than one action: {', '.join(modules)}", line, where)
    module_key = modules[0]
    value = raw[module_key]
    args = raw.get("args") or {}
    if not isinstance(args, dict):
        raise PlaybookError("args must be a mapping", line, f"{where}.args")
    if isinstance(value, dict):
        value = value.get("cmd")
    if value is None:
        value = args.get("cmd")
    if not isinstance(value, str) or not value.strip():
        raise PlaybookError(f"{module_key} needs a command line", line, f"{where}.{module_key}")
    register = raw.get("register")
    if register is not None and not _IDENT_RE.match(str(register)):
        raise PlaybookError(f"invalid register name: {register!r}", line, f"{where}.register")
    when = _conditions(raw["when"], f"{where}.when", line) if "when" in raw else ()
    failed_when = _conditions(raw["failed_when"], f"{where}.failed_when", line) if "failed_when" in raw else None
    changed_when = _conditions(raw["changed_when"], f"{where}.changed_when", line) if "changed_when" in raw else None
    command = value.strip()
    return Task(
        name=str(raw.get("name") or f"{module_key} {command[:40]}"),
        module=MODULE_ALIASES[module_key],
        line=command,
        register=register,
        when=when,
        failed_when=failed_when,
        changed_when=changed_when,
        ignore_errors=_as_bool(raw.get("ignore_errors", False), f"{where}.ignore_errors", line),
        source_line=line,
    )


def parse_playbook(text: str) -> Playbook:
    body = strip_code_fence(text)
    try:
        doc = yaml.safe_load(body)
        root = yaml.compose(body, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise PlaybookError(f"malformed playbook: {getattr(e, 'problem', None) or e}",
                            mark.line + 1 if mark is not None else None)
    if not isinstance(doc, list) or not doc:
        raise PlaybookError("playbook must be a non-empty list of plays", 1 if doc is not None else None)
    plays = []
    for i, raw in enumerate(doc):
        where = f"plays[{i}]"
        line = _node_line(root, [i])
        if not isinstance(raw, dict):
            raise PlaybookError("play must be a mapping", line, where)
        for key in raw:
            if key in UNSUPPORTED_KEYWORDS:
                raise PlaybookError(f"unsupported keyword: {key}", _node_line(root, [i, key]), f"{where}.{key}")
            if key not in PLAY_KEYS:
                raise PlaybookError(f"unknown play key: {key}", _node_line(root, [i, key]), f"{where}.{key}")
        if not raw.get("hosts"):
            raise PlaybookError("play needs hosts", line, f"{where}.hosts")
        tasks_raw = raw.get("tasks") or []
        if not isinstance(tasks_raw, list):
            raise PlaybookError("tasks must be a list", line, f"{where}.tasks")
        tasks = tuple(_parse_task(t, f"{where}.tasks[{j}]", root, [i, "tasks", j])
                      for j, t in enumerate(tasks_raw))
        plays.append(Play(
            name=str(raw.get("name") or f"play {i + 1}"),
            hosts=str(raw["hosts"]),
            become=_as_bool(raw.get("become", False), f"{where}.become", line),
            tasks=tasks,
        ))
    return Playbook(plays=tuple(plays))


def lint_playbook(text: str, inventory: Optional[Inventory] = None) -> Tuple[List[str], List[str]]:
    """(errors, warnings). Errors mean the playbook does not parse under the dialect."""
    inventory = inventory or Inventory()
    try:
        pb = parse_playbook(text)
    except PlaybookError as e:
        return [str(e)], []
    warnings = []
    for i, play in enumerate(pb.plays):
        if not inventory.resolve(play.hosts):
            warnings.append(f"plays[{i}]: hosts {play.hosts!r} match nothing in the inventory")
        for j, task in enumerate(play.tasks):
            where = f"plays[{i}].tasks[{j}]"
            for binary in mini_shell.binaries(task.line, composed=task.module == "shell"):
                if binary not in mini_shell.KNOWN_BINARIES:
                    warnings.append(f"{where} ({task.name}): unsupported binary at runtime: {binary}")
    return [], warnings


# ---------------------------------------------------------------------------
# execution


def _evaluate(conditions: Tuple[Condition, ...], variables) -> bool:
    return all(eval_expr(c, variables) for c in conditions)


def _unavailable(state: ClusterState, healthy: List[str]) -> int:
    return sum(1 for s in healthy if cluster_sim.ready_counts(state, s)[0] == 0)


def run_playbook(pb: Playbook, state: ClusterState, inventory: Optional[Inventory] = None,
                 read_only: bool = False) -> Tuple[ClusterState, Transcript]:
    inventory = inventory or Inventory()
    transcript = Transcript()
    variables: Dict[str, TaskResult] = {}
    healthy = [s for s in state.deployments if cluster_sim.ready_counts(state, s)[0] > 0]

    for play in pb.plays:
        if not inventory.resolve(play.hosts):
            warning = f"[WARNING] Could not match supplied host pattern, ignoring: {play.hosts}"
            logger.warning(warning)
            transcript.warnings.append(warning)
            continue
        for task in play.tasks:
            record = TaskRecord(play=play.name, task=task.name, module=task.module, command=task.line,
                                clock_s=state.clock_s)
            try:
                run = _evaluate(task.when, variables)
            except ExprError as e:
                record.failed = True
                record.error = f"when: {e}"
                run = None
            if run is False:
                record.skipped = True
                if task.register:
                    variables[task.register] = TaskResult(skipped=True)
                transcript.records.append(record)
                continue
            if run:
                runner = mini_shell.run_shell if task.module == "shell" else mini_shell.run_single
                _, result = runner(task.line, state, read_only=read_only)
                cluster_sim.tick(state, 1.0)
                record.clock_s = state.clock_s
                record.result = result
                transcript.availability_violations += _unavailable(state, healthy)
                outcome = TaskResult(stdout=result.stdout, stderr=result.stderr, rc=result.rc)
                if task.register:
                    variables[task.register] = outcome
                record.failed = result.rc != 0
                record.changed = True
                try:
                    if task.changed_when is not None:
                        record.changed = _evaluate(task.changed_when, variables)
                    if task.failed_when is not None:
                        record.failed = _evaluate(task.failed_when, variables)
                except ExprError as e:
                    record.failed = True
                    record.error = str(e)
                outcome.failed = record.failed
                outcome.changed = record.changed
            transcript.records.append(record)
            logger.debug(f"task {task.name!r}: failed={record.failed} changed={record.changed}")
            if record.failed:
                if task.ignore_errors:
                    record.ignored = True
                    continue
                transcript.status = PlaybookStatus.FAILED
                return state, transcript
    return state, transcript
