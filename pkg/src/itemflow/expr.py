"""Builtin expression language for decision scripts.

A deliberately small, side-effect-free language: comparisons, boolean
connectives, arithmetic, and field access into bound documents. There is
no assignment, no iteration and no recursion, so evaluation of any parse
always terminates.

Precedence, lowest to highest:
  or
  and
  not
  == != < > <= >=
  + -
  * / %
  unary -
  . (field access), function call

Free variables resolve only against the bindings handed to ``evaluate``;
anything else raises EvaluationError. XML documents are bound as DocView
values whose fields are child elements (leaf elements read as their text).
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Any

from .errors import EvaluationError

_KEYWORDS = {"and", "or", "not", "true", "false", "null"}

_TWO_CHAR_OPS = ("==", "!=", "<=", ">=")


class DocView:
    """Read-only field access over an XML element."""

    def __init__(self, element: ET.Element, path: str = ""):
        self._element = element
        self._path = path or element.tag

    def field(self, name: str) -> Any:
        node = self._element.find(name)
        if node is None:
            raise EvaluationError(f"no element <{name}> under {self._path}")
        if len(node):
            return DocView(node, f"{self._path}/{name}")
        return node.text or ""

    def attribute(self, name: str) -> str:
        if name not in self._element.attrib:
            raise EvaluationError(f"no attribute '{name}' on {self._path}")
        return self._element.attrib[name]

    def has(self, name: str) -> bool:
        return self._element.find(name) is not None

    def __len__(self) -> int:
        return len(self._element)

    def __repr__(self) -> str:
        return f"DocView({self._path})"


def doc_view(document: bytes | str | ET.Element) -> DocView:
    if isinstance(document, ET.Element):
        return DocView(document)
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        return DocView(ET.fromstring(document))
    except ET.ParseError as exc:
        raise EvaluationError(f"unparseable document: {exc}") from exc


# --- lexer ---------------------------------------------------------------

def _tokenize(source: str) -> list[tuple[str, Any]]:
    tokens: list[tuple[str, Any]] = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            i += 1
            continue
        two = source[i:i + 2]
        if two in _TWO_CHAR_OPS:
            tokens.append(("op", two))
            i += 2
            continue
        if ch in "+-*/%<>(),.":
            tokens.append(("op", ch))
            i += 1
            continue
        if ch.isdigit():
            j = i
            seen_dot = False
            while j < n and (source[j].isdigit() or (source[j] == "." and not seen_dot
                                                     and j + 1 < n and source[j + 1].isdigit())):
                if source[j] == ".":
                    seen_dot = True
                j += 1
            literal = source[i:j]
            tokens.append(("num", float(literal) if seen_dot else int(literal)))
            i = j
            continue
        if ch in "\"'":
            j = i + 1
            parts: list[str] = []
            while j < n and source[j] != ch:
                if source[j] == "\\" and j + 1 < n:
                    parts.append(source[j + 1])
                    j += 2
                else:
                    parts.append(source[j])
                    j += 1
            if j >= n:
                raise EvaluationError(f"unterminated string at offset {i}")
            tokens.append(("str", "".join(parts)))
            i = j + 1
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            tokens.append(("kw" if word in _KEYWORDS else "name", word))
            i = j
            continue
        raise EvaluationError(f"unexpected character {ch!r} at offset {i}")
    tokens.append(("eof", None))
    return tokens


# --- parser (AST as nested tuples) -----------------------------------------

class _Parser:
    def __init__(self, tokens: list[tuple[str, Any]]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> tuple[str, Any]:
        return self.tokens[self.pos]

    def next(self) -> tuple[str, Any]:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def accept(self, kind: str, value: Any = None) -> bool:
        tok = self.peek()
        if tok[0] == kind and (value is None or tok[1] == value):
            self.pos += 1
            return True
        return False

    def expect(self, kind: str, value: Any) -> None:
        if not self.accept(kind, value):
            raise EvaluationError(f"expected {value!r}, found {self.peek()[1]!r}")

    def parse(self) -> Any:
        node = self.or_expr()
        if self.peek()[0] != "eof":
            raise EvaluationError(f"trailing input at token {self.peek()[1]!r}")
        return node

    def or_expr(self) -> Any:
        node = self.and_expr()
        while self.accept("kw", "or"):
            node = ("or", node, self.and_expr())
        return node

    def and_expr(self) -> Any:
        node = self.not_expr()
        while self.accept("kw", "and"):
            node = ("and", node, self.not_expr())
        return node

    def not_expr(self) -> Any:
        if self.accept("kw", "not"):
            return ("not", self.not_expr())
        return self.comparison()

    def comparison(self) -> Any:
        node = self.additive()
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("==", "!=", "<", ">", "<=", ">="):
            self.next()
            return ("cmp", tok[1], node, self.additive())
        return node

    def additive(self) -> Any:
        node = self.multiplicative()
        while True:
            tok = self.peek()
            if tok[0] == "op" and tok[1] in "+-":
                self.next()
                node = ("arith", tok[1], node, self.multiplicative())
            else:
                return node

    def multiplicative(self) -> Any:
        node = self.unary()
        while True:
            tok = self.peek()
            if tok[0] == "op" and tok[1] in "*/%":
                self.next()
                node = ("arith", tok[1], node, self.unary())
            else:
                return node

    def unary(self) -> Any:
        if self.accept("op", "-"):
            return ("neg", self.unary())
        return self.postfix()

    def postfix(self) -> Any:
        node = self.primary()
        while True:
            if self.accept("op", "."):
                kind, name = self.next()
                if kind != "name":
                    raise EvaluationError("expected field name after '.'")
                node = ("field", node, name)
            else:
                return node

    def primary(self) -> Any:
        kind, value = self.next()
        if kind == "num" or kind == "str":
            return ("lit", value)
        if kind == "kw":
            if value == "true":
                return ("lit", True)
            if value == "false":
                return ("lit", False)
            if value == "null":
                return ("lit", None)
            raise EvaluationError(f"unexpected keyword {value!r}")
        if kind == "name":
            if self.accept("op", "("):
                args = []
                if not self.accept("op", ")"):
                    args.append(self.or_expr())
                    while self.accept("op", ","):
                        args.append(self.or_expr())
                    self.expect("op", ")")
                return ("call", value, args)
            return ("var", value)
        if kind == "op" and value == "(":
            node = self.or_expr()
            self.expect("op", ")")
            return node
        raise EvaluationError(f"unexpected token {value!r}")


def parse(source: str) -> Any:
    return _Parser(_tokenize(source)).parse()


# --- evaluation -------------------------------------------------------------

def _as_number(value: Any) -> float | int:
    if isinstance(value, bool):
        raise EvaluationError("boolean used where a number is required")
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        try:
            return int(value)
        except ValueError:
            try:
                return float(value)
            except ValueError:
                raise EvaluationError(f"cannot read {value!r} as a number") from None
    raise EvaluationError(f"cannot read {type(value).__name__} as a number")


def _as_bool(value: Any, where: str) -> bool:
    if isinstance(value, bool):
        return value
    raise EvaluationError(f"{where} requires a boolean, got {type(value).__name__}")


def _numeric_pair(left: Any, right: Any) -> tuple[float | int, float | int] | None:
    try:
        return _as_number(left), _as_number(right)
    except EvaluationError:
        return None


def _equals(left: Any, right: Any) -> bool:
    pair = _numeric_pair(left, right)
    if pair is not None:
        return pair[0] == pair[1]
    if isinstance(left, bool) or isinstance(right, bool):
        return left is right
    if left is None or right is None:
        return left is None and right is None
    return str(left) == str(right)


def _order(op: str, left: Any, right: Any) -> bool:
    pair = _numeric_pair(left, right)
    if pair is not None:
        a, b = pair
    elif isinstance(left, str) and isinstance(right, str):
        a, b = left, right
    else:
        raise EvaluationError(f"cannot order {left!r} against {right!r}")
    if op == "<":
        return a < b
    if op == ">":
        return a > b
    if op == "<=":
        return a <= b
    return a >= b


_FUNCTIONS = {
    "num": lambda v: _as_number(v),
    "len": lambda v: len(v) if isinstance(v, (str, DocView)) else _fail_len(v),
    "text": lambda v: str(v) if not isinstance(v, DocView) else _fail_text(v),
    "exists": lambda doc, name: _fn_exists(doc, name),
    "attr": lambda doc, name: _fn_attr(doc, name),
}


def _fail_len(v: Any) -> int:
    raise EvaluationError(f"len() expects a string or document, got {type(v).__name__}")


def _fail_text(v: Any) -> str:
    raise EvaluationError("text() expects a scalar, got a document")


def _fn_exists(doc: Any, name: Any) -> bool:
    if not isinstance(doc, DocView):
        raise EvaluationError("exists() expects a document as first argument")
    return doc.has(str(name))


def _fn_attr(doc: Any, name: Any) -> str:
    if not isinstance(doc, DocView):
        raise EvaluationError("attr() expects a document as first argument")
    return doc.attribute(str(name))


def _eval(node: Any, bindings: dict[str, Any]) -> Any:
    op = node[0]
    if op == "lit":
        return node[1]
    if op == "var":
        name = node[1]
        if name not in bindings:
            raise EvaluationError(f"undeclared input '{name}'")
        return bindings[name]
    if op == "field":
        base = _eval(node[1], bindings)
        if not isinstance(base, DocView):
            raise EvaluationError(f"field access '.{node[2]}' on non-document value")
        return base.field(node[2])
    if op == "call":
        fn = _FUNCTIONS.get(node[1])
        if fn is None:
            raise EvaluationError(f"unknown function '{node[1]}'")
        args = [_eval(arg, bindings) for arg in node[2]]
        try:
            return fn(*args)
        except TypeError:
            raise EvaluationError(f"wrong number of arguments to '{node[1]}'") from None
    if op == "and":
        if not _as_bool(_eval(node[1], bindings), "'and'"):
            return False
        return _as_bool(_eval(node[2], bindings), "'and'")
    if op == "or":
        if _as_bool(_eval(node[1], bindings), "'or'"):
            return True
        return _as_bool(_eval(node[2], bindings), "'or'")
    if op == "not":
        return not _as_bool(_eval(node[1], bindings), "'not'")
    if op == "neg":
        return -_as_number(_eval(node[1], bindings))
    if op == "cmp":
        left = _eval(node[2], bindings)
        right = _eval(node[3], bindings)
        if node[1] == "==":
            return _equals(left, right)
        if node[1] == "!=":
            return not _equals(left, right)
        return _order(node[1], left, right)
    if op == "arith":
        left = _as_number(_eval(node[2], bindings))
        right = _as_number(_eval(node[3], bindings))
        symbol = node[1]
        if symbol == "+":
            return left + right
        if symbol == "-":
            return left - right
        if symbol == "*":
            return left * right
        if symbol in "/%" and right == 0:
            raise EvaluationError("division by zero")
        return left / right if symbol == "/" else left % right
    raise EvaluationError(f"unknown node {op!r}")


def evaluate(source: str, bindings: dict[str, Any]) -> Any:
    """Parse and evaluate; pure, deterministic, total."""
    return _eval(parse(source), bindings)


def branch_label(value: Any) -> str:
    """Map an evaluation result onto a branch label."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)
