"""Arithmetic expression trees over the terminals rho and drho.

Custom estimation-error profiles are written as plain text, for example
``"0.5 * (drho / rho) ** 3"``.  The grammar is deliberately tiny:

    expr    := term (('+' | '-') term)*
    term    := factor (('*' | '/') factor)*
    factor  := unary ('**' factor)?          (right associative)
    unary   := '-' unary | atom
    atom    := NUMBER | 'rho' | 'drho' | '(' expr ')'

Trees evaluate over numpy arrays and differentiate symbolically with
respect to either terminal, which is what the variational machinery needs
to turn an error profile into its induced nonlinear potential.  Exponents
must be constants (the only case with a clean derivative rule here).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

TERMINALS = ("rho", "drho")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[()+\-*/^]))"
)


class ExpressionError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    kind: str  # 'num' | 'var' | '+' | '-' | '*' | '/' | 'pow' | 'neg'
    value: float = 0.0
    name: str = ""
    left: "Node | None" = None
    right: "Node | None" = None


def _num(v) -> Node:
    return Node("num", value=float(v))


def _is_num(node: Node, v=None) -> bool:
    return node.kind == "num" and (v is None or node.value == v)


def tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"bad character at position {pos}: {text[pos:]!r}")
        if m.group("num") is not None:
            tokens.append(("num", float(m.group("num"))))
        elif m.group("name") is not None:
            name = m.group("name")
            if name not in TERMINALS:
                raise ExpressionError(
                    f"unknown name {name!r}; terminals are {TERMINALS}"
                )
            tokens.append(("var", name))
        else:
            op = m.group("op")
            tokens.append(("op", "**" if op == "^" else op))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise ExpressionError(f"expected {op!r}, got {val!r}")

    def parse(self) -> Node:
        node = self.expr()
        if self.pos != len(self.tokens):
            raise ExpressionError(f"trailing tokens: {self.tokens[self.pos:]}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.take()
            node = Node(op, left=node, right=self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            _, op = self.take()
            node = Node(op, left=node, right=self.factor())
        return node

    def factor(self) -> Node:
        base = self.unary()
        if self.peek() == ("op", "**"):
            self.take()
            return Node("pow", left=base, right=self.factor())
        return base

    def unary(self) -> Node:
        if self.peek() == ("op", "-"):
            self.take()
            return Node("neg", left=self.unary())
        return self.atom()

    def atom(self) -> Node:
        kind, val = self.take()
        if kind == "num":
            return _num(val)
        if kind == "var":
            return Node("var", name=val)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExpressionError(f"unexpected token {val!r}")


def parse_expression(text: str) -> Node:
    tokens = tokenize(text)
    if not tokens:
        raise ExpressionError("empty expression")
    return _Parser(tokens).parse()


def evaluate(node: Node, rho, drho):
    if node.kind == "num":
        return node.value
    if node.kind == "var":
        return rho if node.name == "rho" else drho
    if node.kind == "neg":
        return -evaluate(node.left, rho, drho)
    a = evaluate(node.left, rho, drho)
    b = evaluate(node.right, rho, drho)
    if node.kind == "+":
        return a + b
    if node.kind == "-":
        return a - b
    if node.kind == "*":
        return a * b
    if node.kind == "/":
        return a / b
    if node.kind == "pow":
        return np.power(a, b)
    raise ExpressionError(f"unknown node kind {node.kind!r}")


def _simplify(node: Node) -> Node:
    if node.kind in ("num", "var"):
        return node
    if node.kind == "neg":
        a = _simplify(node.left)
        if _is_num(a):
            return _num(-a.value)
        return Node("neg", left=a)
    a = _simplify(node.left)
    b = _simplify(node.right)
    if _is_num(a) and _is_num(b):
        return _num(evaluate(Node(node.kind, left=a, right=b), 0.0, 0.0))
    if node.kind == "+":
        if _is_num(a, 0.0):
            return b
        if _is_num(b, 0.0):
            return a
    if node.kind == "-" and _is_num(b, 0.0):
        return a
    if node.kind == "*":
        if _is_num(a, 0.0) or _is_num(b, 0.0):
            return _num(0.0)
        if _is_num(a, 1.0):
            return b
        if _is_num(b, 1.0):
            return a
    if node.kind == "/" and _is_num(a, 0.0):
        return _num(0.0)
    if node.kind == "pow":
        if _is_num(b, 1.0):
            return a
        if _is_num(b, 0.0):
            return _num(1.0)
    return Node(node.kind, left=a, right=b)


def differentiate(node: Node, wrt: str) -> Node:
    """Symbolic d(node)/d(wrt) for wrt in {'rho', 'drho'}."""
    if wrt not in TERMINALS:
        raise ExpressionError(f"can only differentiate wrt {TERMINALS}")
    return _simplify(_diff(node, wrt))


def _diff(node: Node, wrt: str) -> Node:
    if node.kind == "num":
        return _num(0.0)
    if node.kind == "var":
        return _num(1.0 if node.name == wrt else 0.0)
    if node.kind == "neg":
        return Node("neg", left=_diff(node.left, wrt))
    a, b = node.left, node.right
    da = _diff(a, wrt)
    if node.kind in ("+", "-"):
        return Node(node.kind, left=da, right=_diff(b, wrt))
    db = _diff(b, wrt)
    if node.kind == "*":
        return Node("+", left=Node("*", left=da, right=b),
                    right=Node("*", left=a, right=db))
    if node.kind == "/":
        num = Node("-", left=Node("*", left=da, right=b),
                   right=Node("*", left=a, right=db))
        den = Node("pow", left=b, right=_num(2.0))
        return Node("/", left=num, right=den)
    if node.kind == "pow":
        simplified_b = _simplify(b)
        if not _is_num(simplified_b):
            raise ExpressionError("exponents must be constants to differentiate")
        c = simplified_b.value
        return Node(
            "*",
            left=Node("*", left=_num(c),
                      right=Node("pow", left=a, right=_num(c - 1.0))),
            right=da,
        )
    raise ExpressionError(f"unknown node kind {node.kind!r}")


def depends_on(node: Node, name: str) -> bool:
    if node.kind == "var":
        return node.name == name
    if node.kind == "num":
        return False
    found = False
    if node.left is not None:
        found = depends_on(node.left, name)
    if not found and node.right is not None:
        found = depends_on(node.right, name)
    return found


def to_text(node: Node) -> str:
    if node.kind == "num":
        return repr(node.value)
    if node.kind == "var":
        return node.name
    if node.kind == "neg":
        return f"(-{to_text(node.left)})"
    if node.kind == "pow":
        return f"({to_text(node.left)} ** {to_text(node.right)})"
    return f"({to_text(node.left)} {node.kind} {to_text(node.right)})"
