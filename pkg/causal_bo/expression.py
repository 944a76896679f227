"""
式の構文木 - 構造方程式の右辺をパースし numpy 配列で評価する
"""
import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Set, Tuple

import numpy as np
from scipy.special import expit

from causal_bo.errors import SemSyntaxError, UnknownFunction

Array = np.ndarray


class Expr:
    """式ノードの基底"""

    def evaluate(self, env: "EvalEnv") -> Array:
        raise NotImplementedError

    def references(self) -> Set[Tuple[str, str]]:
        """(種類, 名前) の集合。種類は var / latent / noise"""
        return set()


@dataclass(frozen=True)
class EvalEnv:
    values: Mapping[str, Array]
    latents: Mapping[str, Array]
    noises: Mapping[str, Array]
    n: int


@dataclass(frozen=True)
class Constant(Expr):
    value: float

    def evaluate(self, env):
        return np.full(env.n, self.value, dtype=float)


@dataclass(frozen=True)
class VarRef(Expr):
    name: str

    def evaluate(self, env):
        return env.values[self.name]

    def references(self):
        return {("var", self.name)}


@dataclass(frozen=True)
class LatentRef(Expr):
    name: str

    def evaluate(self, env):
        return env.latents[self.name]

    def references(self):
        return {("latent", self.name)}


@dataclass(frozen=True)
class NoiseRef(Expr):
    """ノード固有の外生ノイズ"""
    node: str

    def evaluate(self, env):
        return env.noises[self.node]

    def references(self):
        return {("noise", self.node)}


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr

    def evaluate(self, env):
        return -self.operand.evaluate(env)

    def references(self):
        return self.operand.references()


_BINARY: Dict[str, Callable[[Array, Array], Array]] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": np.power,
}


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def evaluate(self, env):
        return _BINARY[self.op](self.left.evaluate(env), self.right.evaluate(env))

    def references(self):
        return self.left.references() | self.right.references()


FUNCTIONS: Dict[str, Callable[[Array], Array]] = {
    "exp": np.exp,
    "cos": np.cos,
    "sin": np.sin,
    "sigmoid": expit,
}


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr

    def evaluate(self, env):
        return FUNCTIONS[self.func](self.arg.evaluate(env))

    def references(self):
        return self.arg.references()


def map_refs(expr: Expr, fn: Callable[[VarRef], Expr]) -> Expr:
    """VarRef を置き換えた新しい式を返す"""
    if isinstance(expr, VarRef):
        return fn(expr)
    if isinstance(expr, Neg):
        return Neg(map_refs(expr.operand, fn))
    if isinstance(expr, BinOp):
        return BinOp(expr.op, map_refs(expr.left, fn), map_refs(expr.right, fn))
    if isinstance(expr, Call):
        return Call(expr.func, map_refs(expr.arg, fn))
    return expr


# ---- パーサ --------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^(),]))"
)


def tokenize(text: str, line: Optional[int] = None) -> List[Tuple[str, str]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise SemSyntaxError(f"unexpected character {text[pos:].strip()[:1]!r}", line=line)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens: List[Tuple[str, str]], line: Optional[int]):
        self.tokens = tokens
        self.pos = 0
        self.line = line

    def peek(self) -> Optional[Tuple[str, str]]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, value: Optional[str] = None) -> Tuple[str, str]:
        tok = self.peek()
        if tok is None or (value is not None and tok[1] != value):
            expected = value or "a token"
            found = tok[1] if tok else "end of expression"
            raise SemSyntaxError(f"expected {expected}, found {found}", line=self.line)
        self.pos += 1
        return tok

    def expr(self) -> Expr:
        node = self.term()
        while self.peek() and self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek() and self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek() and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        if self.peek() and self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek() and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, value = self.take()
        if kind == "num":
            return Constant(float(value))
        if kind == "name":
            if self.peek() and self.peek()[1] == "(":
                self.take("(")
                args = [self.expr()]
                while self.peek() and self.peek()[1] == ",":
                    self.take(",")
                    args.append(self.expr())
                self.take(")")
                return self.call(value, args)
            return VarRef(value)
        if value == "(":
            node = self.expr()
            self.take(")")
            return node
        raise SemSyntaxError(f"unexpected {value!r}", line=self.line)

    def call(self, name: str, args: List[Expr]) -> Expr:
        if name == "pow":
            if len(args) != 2:
                raise SemSyntaxError("pow takes two arguments", line=self.line)
            return BinOp("^", args[0], args[1])
        if name not in FUNCTIONS:
            raise UnknownFunction(f"unknown function {name!r}", line=self.line)
        if len(args) != 1:
            raise SemSyntaxError(f"{name} takes one argument", line=self.line)
        return Call(name, args[0])


def parse_expression(text: str, line: Optional[int] = None) -> Expr:
    """式の文字列を構文木に変換"""
    tokens = tokenize(text, line)
    if not tokens:
        raise SemSyntaxError("empty expression", line=line)
    parser = _Parser(tokens, line)
    node = parser.expr()
    if parser.peek() is not None:
        raise SemSyntaxError(f"trailing input {parser.peek()[1]!r}", line=line)
    return node


