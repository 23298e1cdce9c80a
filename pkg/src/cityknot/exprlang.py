"""Expression language for operation knots.

Scalars are numbers, single-quoted text, or null.  Null propagates through
every operator; comparisons yield 1 or 0; any nonzero number is true.
Precedence, high to low: unary ! and -, then * /, then + -, then the
relational comparisons, then == !=, then &&, then ||, then the right
associative ?: ternary.  Division by zero yields null and reports a warning.
"""

from __future__ import annotations

from dataclasses import dataclass

Scalar = float | str | None


class ExprSyntaxError(ValueError):
    """Parse failure; offset is the character position in the source text."""

    def __init__(self, offset: int, message: str):
        super().__init__(f"at offset {offset}: {message}")
        self.offset = offset


class ExprTypeError(TypeError):
    """Operator applied to operands outside its domain."""


@dataclass(frozen=True)
class Token:
    kind: str  # number | text | ident | op
    value: object
    offset: int


_TWO_CHAR_OPS = ("||", "&&", "==", "!=", "<=", ">=")
_ONE_CHAR_OPS = "+-*/<>!?:()"

_BINARY_PRECEDENCE = {
    "||": 1,
    "&&": 2,
    "==": 3, "!=": 3,
    "<": 4, "<=": 4, ">": 4, ">=": 4,
    "+": 5, "-": 5,
    "*": 6, "/": 6,
}


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if text[i:i + 2] in _TWO_CHAR_OPS:
            tokens.append(Token("op", text[i:i + 2], i))
            i += 2
            continue
        if c in _ONE_CHAR_OPS:
            tokens.append(Token("op", c, i))
            i += 1
            continue
        if c == "'":
            j = text.find("'", i + 1)
            if j < 0:
                raise ExprSyntaxError(i, "unterminated text literal")
            tokens.append(Token("text", text[i + 1:j], i))
            i = j + 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                seen_dot = seen_dot or text[j] == "."
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    while k < n and text[k].isdigit():
                        k += 1
                    j = k
            tokens.append(Token("number", float(text[i:j]), i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(Token("ident", text[i:j], i))
            i = j
            continue
        raise ExprSyntaxError(i, f"unexpected character {c!r}")
    return tokens


# AST nodes are plain tuples:
#   ("num", v) ("text", s) ("ident", name)
#   ("unary", op, a) ("binary", op, a, b) ("ternary", cond, a, b)


class _Parser:
    def __init__(self, tokens: list[Token], length: int):
        self.tokens = tokens
        self.pos = 0
        self.length = length

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise ExprSyntaxError(self.length, "unexpected end of expression")
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        tok = self.take()
        if tok.kind != "op" or tok.value != op:
            raise ExprSyntaxError(tok.offset, f"expected {op!r}")

    def parse_expression(self):
        node = self.parse_binary(1)
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.value == "?":
            self.take()
            then = self.parse_expression()
            self.expect_op(":")
            other = self.parse_expression()  # right associative
            return ("ternary", node, then, other)
        return node

    def parse_binary(self, min_prec: int):
        left = self.parse_unary()
        while True:
            tok = self.peek()
            if tok is None or tok.kind != "op":
                return left
            prec = _BINARY_PRECEDENCE.get(tok.value)
            if prec is None or prec < min_prec:
                return left
            self.take()
            right = self.parse_binary(prec + 1)  # all binaries left associative
            left = ("binary", tok.value, left, right)

    def parse_unary(self):
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.value in ("!", "-"):
            self.take()
            return ("unary", tok.value, self.parse_unary())
        return self.parse_atom()

    def parse_atom(self):
        tok = self.take()
        if tok.kind == "number":
            return ("num", tok.value)
        if tok.kind == "text":
            return ("text", tok.value)
        if tok.kind == "ident":
            return ("ident", tok.value)
        if tok.kind == "op" and tok.value == "(":
            node = self.parse_expression()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(tok.offset, f"unexpected token {tok.value!r}")


def parse_expression(text: str):
    """Parse source text into an AST; raises ExprSyntaxError with offsets."""
    parser = _Parser(tokenize(text), len(text))
    node = parser.parse_expression()
    trailing = parser.peek()
    if trailing is not None:
        raise ExprSyntaxError(trailing.offset, f"trailing input {trailing.value!r}")
    return node


def identifiers(node) -> list[str]:
    """Free identifiers in source order, deduplicated."""
    out: list[str] = []

    def walk(n):
        tag = n[0]
        if tag == "ident":
            if n[1] not in out:
                out.append(n[1])
        elif tag == "unary":
            walk(n[2])
        elif tag == "binary":
            walk(n[2])
            walk(n[3])
        elif tag == "ternary":
            walk(n[1])
            walk(n[2])
            walk(n[3])

    walk(node)
    return out


def _require_number(op: str, value: Scalar) -> float:
    if isinstance(value, str):
        raise ExprTypeError(f"operator {op!r} needs a number, got text {value!r}")
    return value  # float


def evaluate(node, env: dict, warn=None) -> Scalar:
    """Evaluate over one binding of identifiers to scalars.

    Unknown identifiers raise ExprTypeError (validation binds them earlier).
    The ternary evaluates only the taken branch; && and || evaluate both
    sides so null propagation is exact.
    """
    tag = node[0]
    if tag == "num":
        return node[1]
    if tag == "text":
        return node[1]
    if tag == "ident":
        try:
            return env[node[1]]
        except KeyError:
            raise ExprTypeError(f"unbound identifier {node[1]!r}") from None
    if tag == "unary":
        v = evaluate(node[2], env, warn)
        if v is None:
            return None
        v = _require_number(node[1], v)
        return -v if node[1] == "-" else (0.0 if v != 0.0 else 1.0)
    if tag == "ternary":
        cond = evaluate(node[1], env, warn)
        if cond is None:
            return None
        cond = _require_number("?:", cond)
        return evaluate(node[2] if cond != 0.0 else node[3], env, warn)

    op = node[1]
    a = evaluate(node[2], env, warn)
    b = evaluate(node[3], env, warn)
    if a is None or b is None:
        return None
    if op in ("==", "!="):
        a_text, b_text = isinstance(a, str), isinstance(b, str)
        if a_text != b_text:
            raise ExprTypeError(f"cannot compare {a!r} with {b!r}")
        eq = a == b
        return 1.0 if (eq if op == "==" else not eq) else 0.0
    a = _require_number(op, a)
    b = _require_number(op, b)
    if op == "||":
        return 1.0 if (a != 0.0 or b != 0.0) else 0.0
    if op == "&&":
        return 1.0 if (a != 0.0 and b != 0.0) else 0.0
    if op == "<":
        return 1.0 if a < b else 0.0
    if op == "<=":
        return 1.0 if a <= b else 0.0
    if op == ">":
        return 1.0 if a > b else 0.0
    if op == ">=":
        return 1.0 if a >= b else 0.0
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0.0:
            if warn is not None:
                warn("division by zero yields null")
            return None
        return a / b
    raise ExprTypeError(f"unknown operator {op!r}")
