"""Conditions for when / failed_when / changed_when.

Supported: int, float and quoted string literals, true/false, ``var.stdout`` /
``var.stderr`` / ``var.rc`` paths, the ``| int`` and ``| float`` filters, the six
comparisons, ``in`` / ``not in`` substring tests, ``and`` / ``or`` / ``not`` and
parentheses.
"""
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Mapping, Tuple, Union

from remedbench.exceptions import ExprError

FIELDS = ("stdout", "stderr", "rc")
FILTERS = ("int", "float")
COMPARISONS = ("==", "!=", ">=", "<=", ">", "<")
KEYWORDS = {"and", "or", "not", "in", "true", "false", "True", "False"}

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<number>\d+\.\d+|\d+)
  | (?P<string>'(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*")
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|>=|<=|>|<|\||\.|\(|\))
""", re.VERBOSE)

_INT_PREFIX = re.compile(r"^\s*[-+]?\d+")
_FLOAT_PREFIX = re.compile(r"^\s*[-+]?(?:\d+(?:\.\d*)?|\.\d+)")


@dataclass(frozen=True)
class Literal:
    value: Any


@dataclass(frozen=True)
class Path:
    var: str
    field: str


@dataclass(frozen=True)
class Filter:
    operand: "Expr"
    name: str


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Contains:
    needle: "Expr"
    haystack: "Expr"
    negate: bool = False


@dataclass(frozen=True)
class BoolOp:
    op: str
    items: Tuple["Expr", ...]


@dataclass(frozen=True)
class Not:
    operand: "Expr"


Expr = Union[Literal, Path, Filter, Compare, Contains, BoolOp, Not]


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if not match:
            raise ExprError(f"unexpected character {text[pos]!r} at {pos} in {text!r}")
        kind = match.lastgroup
        if kind != "ws":
            tokens.append((kind, match.group(kind)))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self, offset=0):
        index = self.pos + offset
        return self.tokens[index] if index < len(self.tokens) else (None, None)

    def take(self):
        token = self.peek()
        self.pos += 1
        return token

    def expect(self, value):
        kind, text = self.take()
        if text != value:
            raise ExprError(f"expected {value!r} in {self.text!r}")

    def parse(self) -> Expr:
        if not self.tokens:
            raise ExprError("empty expression")
        expr = self.or_expr()
        if self.pos != len(self.tokens):
            raise ExprError(f"unexpected {self.peek()[1]!r} in {self.text!r}")
        return expr

    def or_expr(self):
        items = [self.and_expr()]
        while self.peek() == ("name", "or"):
            self.take()
            items.append(self.and_expr())
        return items[0] if len(items) == 1 else BoolOp("or", tuple(items))

    def and_expr(self):
        items = [self.not_expr()]
        while self.peek() == ("name", "and"):
            self.take()
            items.append(self.not_expr())
        return items[0] if len(items) == 1 else BoolOp("and", tuple(items))

    def not_expr(self):
        if self.peek() == ("name", "not"):
            self.take()
            return Not(self.not_expr())
        return self.comparison()

    def comparison(self):
        left = self.operand()
        kind, text = self.peek()
        if kind == "op" and text in COMPARISONS:
            self.take()
            return Compare(text, left, self.operand())
        if (kind, text) == ("name", "in"):
            self.take()
            return Contains(left, self.operand())
        if (kind, text) == ("name", "not") and self.peek(1) == ("name", "in"):
            self.take()
            self.take()
            return Contains(left, self.operand(), negate=True)
        return left

    def operand(self):
        expr = self.primary()
        while self.peek() == ("op", "|"):
            self.take()
            kind, name = self.take()
            if name not in FILTERS:
                raise ExprError(f"unsupported filter: {name} (supported: {', '.join(FILTERS)})")
            expr = Filter(expr, name)
        return expr

    def primary(self):
        kind, text = self.take()
        if kind is None:
            raise ExprError(f"unexpected end of expression {self.text!r}")
        if kind == "number":
            return Literal(float(text) if "." in text else int(text))
        if kind == "string":
            body = text[1:-1]
            return Literal(re.sub(r"\\(.)", r"\1", body))
        if (kind, text) == ("op", "("):
            expr = self.or_expr()
            self.expect(")")
            return expr
        if kind == "name":
            if text in ("true", "True"):
                return Literal(True)
            if text in ("false", "False"):
                return Literal(False)
            if text in KEYWORDS:
                raise ExprError(f"unexpected keyword {text!r} in {self.text!r}")
            if self.peek() != ("op", "."):
                raise ExprError(f"{text}: expected one of {', '.join(f'{text}.{f}' for f in FIELDS)}")
            self.take()
            _, field = self.take()
            if field not in FIELDS:
                raise ExprError(f"unsupported field {text}.{field} (supported: {', '.join(FIELDS)})")
            return Path(text, field)
        raise ExprError(f"unexpected {text!r} in {self.text!r}")


@lru_cache(maxsize=512)
def parse_expr(text: str) -> Expr:
    return _Parser(str(text)).parse()


def _coerce(value, name: str):
    if isinstance(value, bool):
        return int(value) if name == "int" else float(value)
    if isinstance(value, (int, float)):
        return int(value) if name == "int" else float(value)
    text = "" if value is None else str(value)
    match = (_INT_PREFIX if name == "int" else _FLOAT_PREFIX).match(text)
    if not match:
        raise ExprError(f"cannot convert {text!r} with | {name}")
    return int(match.group(0)) if name == "int" else float(match.group(0))


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _value(expr: Expr, variables: Mapping[str, Any]):
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, Path):
        if expr.var not in variables:
            raise ExprError(f"undefined variable: {expr.var}")
        result = variables[expr.var]
        if getattr(result, "skipped", False):
            raise ExprError(f"{expr.var} was registered by a skipped task")
        return getattr(result, expr.field)
    if isinstance(expr, Filter):
        return _coerce(_value(expr.operand, variables), expr.name)
    if isinstance(expr, Compare):
        left = _value(expr.left, variables)
        right = _value(expr.right, variables)
        if _is_number(left) and _is_number(right):
            pass
        elif isinstance(left, str) and isinstance(right, str):
            pass
        elif expr.op in ("==", "!="):
            return expr.op == "!="
        else:
            raise ExprError(f"cannot compare {left!r} {expr.op} {right!r}")
        return {
            "==": left == right, "!=": left != right,
            ">": left > right, "<": left < right,
            ">=": left >= right, "<=": left <= right,
        }[expr.op]
    if isinstance(expr, Contains):
        needle = _value(expr.needle, variables)
        haystack = _value(expr.haystack, variables)
        if not isinstance(haystack, str):
            raise ExprError(f"'in' needs a string on the right, got {haystack!r}")
        found = str(needle) in haystack
        return not found if expr.negate else found
    if isinstance(expr, Not):
        return not _truthy(_value(expr.operand, variables))
    if isinstance(expr, BoolOp):
        if expr.op == "and":
            return all(_truthy(_value(item, variables)) for item in expr.items)
        return any(_truthy(_value(item, variables)) for item in expr.items)
    raise ExprError(f"unknown expression node: {expr!r}")


def _truthy(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() not in ("", "false", "no", "0")
    return bool(value)


def eval_expr(expr: Union[Expr, str, bool], variables: Mapping[str, Any]) -> bool:
    """Evaluate a condition. Undefined variables and failed coercions raise ExprError."""
    if isinstance(expr, bool):
        return expr
    if isinstance(expr, str):
        expr = parse_expr(expr)
    return _truthy(_value(expr, variables))
