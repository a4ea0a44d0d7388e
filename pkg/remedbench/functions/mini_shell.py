"""Just enough POSIX shell to run what remediation playbooks and probes write.

Lists joined by ``;`` or newlines, ``&&`` / ``||`` short-circuiting, ``|`` pipelines,
``2>/dev/null`` style redirects, and the ``echo`` / ``true`` / ``false`` builtins.
Every other binary but kubectl exits 127. Nothing in here raises on user input.
"""
import logging
import shlex
from typing import List, Tuple

from remedbench.exceptions import RemedBenchError
from remedbench.functions import kubecmd
from remedbench.functions.cluster_sim import ClusterState
from remedbench.functions.kubecmd import CmdResult

logger = logging.getLogger(__name__)

BUILTINS = ("echo", "true", "false")
KNOWN_BINARIES = ("kubectl",) + BUILTINS
NULL_DEVICE = "/dev/null"


class ShellSyntaxError(ValueError):
    pass


def _lex(line: str) -> List[str]:
    lexer = shlex.shlex(line, posix=True, punctuation_chars=True)
    lexer.whitespace_split = True
    lexer.commenters = ""
    return list(lexer)


def _logical_lines(text: str) -> List[str]:
    return [part for part in text.replace("\\\n", " ").splitlines() if part.strip()]


class _Simple:
    def __init__(self, words, drop_stdout=False, drop_stderr=False, merge_stderr=False):
        self.words = words
        self.drop_stdout = drop_stdout
        self.drop_stderr = drop_stderr
        self.merge_stderr = merge_stderr


def _parse_simple(tokens: List[str]) -> _Simple:
    simple = _Simple([])
    i = 0
    while i < len(tokens):
        token = tokens[i]
        fd = None
        if token.isdigit() and i + 1 < len(tokens) and tokens[i + 1] in (">", ">>", ">&"):
            fd = token
            i += 1
            token = tokens[i]
        if token in (">", ">>", ">&", "&>"):
            if i + 1 >= len(tokens):
                raise ShellSyntaxError(f"missing redirect target after {token}")
            target = tokens[i + 1]
            if token == ">&" and fd == "2" and target == "1":
                simple.merge_stderr = True
            elif target != NULL_DEVICE:
                raise ShellSyntaxError(f"redirect target not supported: {target}")
            elif token == "&>":
                simple.drop_stdout = simple.drop_stderr = True
            elif fd == "2":
                simple.drop_stderr = True
            elif fd in (None, "1"):
                simple.drop_stdout = True
            else:
                raise ShellSyntaxError(f"redirect of fd {fd} not supported")
            i += 2
            continue
        if token and all(c in "();<>|&" for c in token):
            raise ShellSyntaxError(f"unsupported shell syntax: {token}")
        simple.words.append(token)
        i += 1
    if not simple.words:
        raise ShellSyntaxError("empty command")
    return simple


def _split(tokens: List[str], separators) -> List[Tuple[str, List[str]]]:
    """Split on separator tokens; each chunk carries the separator that preceded it."""
    chunks = [(None, [])]
    for token in tokens:
        if token in separators:
            chunks.append((token, []))
        else:
            chunks[-1][1].append(token)
    return chunks


def _run_words(words: List[str], state: ClusterState, read_only: bool) -> CmdResult:
    binary, args = words[0], words[1:]
    if binary == "kubectl":
        _, result = kubecmd.run_command(shlex.join(words), state, read_only=read_only)
        return result
    if binary == "echo":
        newline = True
        if args and args[0] == "-n":
            newline = False
            args = args[1:]
        return CmdResult(stdout=" ".join(args) if newline or args else "")
    if binary == "true":
        return CmdResult()
    if binary == "false":
        return CmdResult(rc=1)
    return CmdResult(rc=127, stderr=f"unsupported in simulator: {binary}")


def _run_simple(simple: _Simple, state: ClusterState, read_only: bool) -> CmdResult:
    result = _run_words(simple.words, state, read_only)
    stdout, stderr = result.stdout, result.stderr
    if simple.merge_stderr:
        stdout = "\n".join(s for s in (stdout, stderr) if s)
        stderr = ""
    if simple.drop_stdout:
        stdout = ""
    if simple.drop_stderr:
        stderr = ""
    return CmdResult(stdout=stdout, stderr=stderr, rc=result.rc, mutated=result.mutated)


def _run_pipeline(tokens: List[str], state: ClusterState, read_only: bool) -> CmdResult:
    stages = [_parse_simple(chunk) for _, chunk in _split(tokens, {"|"})]
    for stage in stages:
        if stage.words[0] not in KNOWN_BINARIES:
            return CmdResult(rc=127, stderr=f"unsupported in simulator: {stage.words[0]}")
    # stdin is not modelled: every stage runs, the last one speaks
    results = [_run_simple(stage, state, read_only) for stage in stages]
    last = results[-1]
    return CmdResult(stdout=last.stdout, stderr="\n".join(r.stderr for r in results if r.stderr),
                     rc=last.rc, mutated=any(r.mutated for r in results))


def _run_list(tokens: List[str], state: ClusterState, read_only: bool, out: List[CmdResult]):
    for _, and_or in _split(tokens, {";"}):
        if not and_or:
            continue
        rc = None
        for operator, pipeline in _split(and_or, {"&&", "||"}):
            if not pipeline:
                raise ShellSyntaxError(f"missing command after {operator}")
            if operator == "&&" and rc != 0:
                continue
            if operator == "||" and rc == 0:
                continue
            result = _run_pipeline(pipeline, state, read_only)
            out.append(result)
            rc = result.rc


def run_shell(line: str, state: ClusterState, read_only: bool = False) -> Tuple[ClusterState, CmdResult]:
    executed: List[CmdResult] = []
    try:
        for logical in _logical_lines(line):
            _run_list(_lex(logical), state, read_only, executed)
    except ShellSyntaxError as e:
        executed.append(CmdResult(rc=2, stderr=f"syntax error: {e}"))
    except ValueError as e:
        executed.append(CmdResult(rc=2, stderr=f"syntax error: {e}"))
    except RemedBenchError as e:
        logger.warning(f"shell line {line!r} raised {e}")
        executed.append(CmdResult(rc=1, stderr=str(e)))
    if not executed:
        return state, CmdResult()
    result = CmdResult(
        stdout="\n".join(r.stdout for r in executed if r.stdout),
        stderr="\n".join(r.stderr for r in executed if r.stderr),
        rc=executed[-1].rc,
        mutated=any(r.mutated for r in executed),
    )
    logger.debug(f"shell {line!r} -> rc {result.rc}")
    return state, result


def binaries(line: str, composed: bool = True) -> List[str]:
    """First word of every command the line would run. Empty when the line does not lex."""
    try:
        if not composed:
            words = shlex.split(line)
            return words[:1]
        found = []
        for logical in _logical_lines(line):
            for _, chunk in _split(_lex(logical), {";", "&&", "||", "|"}):
                if chunk:
                    found.append(_parse_simple(chunk).words[0])
        return found
    except ValueError:
        return []


def run_single(line: str, state: ClusterState, read_only: bool = False) -> Tuple[ClusterState, CmdResult]:
    """The command module: one argv, no shell operators."""
    try:
        words = shlex.split(line)
    except ValueError as e:
        return state, CmdResult(rc=2, stderr=f"syntax error: {e}")
    if not words:
        return state, CmdResult(rc=2, stderr="syntax error: empty command")
    if words[0] == "kubectl":
        return kubecmd.run_command(line, state, read_only=read_only)
    return state, _run_words(words, state, read_only)
