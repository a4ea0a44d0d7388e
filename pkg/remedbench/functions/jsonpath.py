"""The kubectl ``-o jsonpath`` subset.

Grammar: ``{`` ``.`` field (``.`` field | ``[`` index ``]`` | ``[*]``)* ``}``.
The expression is checked against the grammar here and evaluated with jsonpath-ng.
"""
import json
import re

import jsonpath_ng
from jsonpath_ng.exceptions import JsonPathLexerError, JsonPathParserError

from remedbench.exceptions import JsonPathError

_FIELD = r"[A-Za-z_][A-Za-z0-9_\-]*"
_STEP_RE = re.compile(rf"\.({_FIELD})|\[(\d+|\*)\]")


def _steps(expr: str):
    text = expr.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        text = text[1:-1]
    if not (text.startswith("{") and text.endswith("}")):
        raise JsonPathError(f"jsonpath must be wrapped in braces: {expr}")
    body = text[1:-1].strip()
    if not body.startswith("."):
        raise JsonPathError(f"jsonpath must start with a field: {expr}")
    steps = []
    pos = 0
    while pos < len(body):
        match = _STEP_RE.match(body, pos)
        if not match:
            raise JsonPathError(f"unexpected {body[pos:]!r} in jsonpath {expr}")
        field, index = match.groups()
        steps.append(("field", field) if field is not None else ("index", index))
        pos = match.end()
    return steps


def compile_jsonpath(expr: str):
    path = "$"
    for kind, value in _steps(expr):
        path += f'."{value}"' if kind == "field" else f"[{value}]"
    try:
        return jsonpath_ng.parse(path)
    except (JsonPathLexerError, JsonPathParserError, Exception) as e:
        raise JsonPathError(f"invalid jsonpath {expr}: {e}")


def render_scalar(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    if isinstance(value, (dict, list)):
        return json.dumps(value, separators=(",", ":"))
    return str(value)


def _indexes_scalar(steps, document) -> bool:
    """True when an index step lands on anything but a list, strings included."""
    values = [document]
    for kind, key in steps:
        reached = []
        for value in values:
            if kind == "field":
                if isinstance(value, dict) and key in value:
                    reached.append(value[key])
            elif not isinstance(value, list):
                return True
            elif key == "*":
                reached.extend(value)
            elif int(key) < len(value):
                reached.append(value[int(key)])
        values = reached
    return False


def jsonpath_eval(expr: str, document) -> str:
    """Evaluate against a JSON document. A missing path or an index into a scalar renders as ""."""
    path = compile_jsonpath(expr)
    if _indexes_scalar(_steps(expr), document):
        return ""
    try:
        matches = path.find(document)
    except (TypeError, KeyError, IndexError):
        # an index step applied to a scalar or a mapping
        return ""
    return " ".join(render_scalar(m.value) for m in matches)
