"""Boolean predicate language over state-vector elements.

Discriminators are written as small expressions such as
``s[4] == 1 and s[0] > 15``.  The language is closed: element references
take literal indices only, and there are no names, calls or attributes,
so checking a discriminator against probe states is a true sandbox.

Grammar (standard precedence, left associative)::

    expr     := or_expr
    or_expr  := and_expr (('or' | '||') and_expr)*
    and_expr := not_expr (('and' | '&&') not_expr)*
    not_expr := ['not' | '!'] cmp
    cmp      := arith (('<' | '<=' | '>' | '>=' | '==' | '!=') arith)?
    arith    := term (('+' | '-') term)*
    term     := factor (('*' | '/') factor)*
    factor   := number | 's[' int ']' | '(' expr ')'
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence, Union

MAX_DEPTH = 64
RESERVED_SYMBOLS = ("init", "success")


class DslError(Exception):
    """Base class for predicate language errors."""


class PredicateSyntaxError(DslError, SyntaxError):
    def __init__(self, message: str, offset: int, expected: Iterable[str] = ()):
        self.position = offset
        self.expected = frozenset(expected)
        detail = f"{message} at byte {offset}"
        if self.expected:
            detail += f" (expected one of: {', '.join(sorted(self.expected))})"
        super().__init__(detail)


class IndexSyntaxError(PredicateSyntaxError):
    """Element index is not a non-negative integer literal."""


class IndexOutOfRange(DslError, IndexError):
    def __init__(self, index: int, length: int):
        self.index = index
        self.length = length
        super().__init__(f"IndexOutOfRange({index},{length})")


class DivisionByZero(DslError, ZeroDivisionError):
    pass


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: Union[int, float]


@dataclass(frozen=True)
class Ref:
    index: int


@dataclass(frozen=True)
class Arith:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Compare:
    op: str  # one of < <= > >= == !=
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class BoolOp:
    op: str  # "and" | "or"
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Not:
    operand: "Node"


Node = Union[Num, Ref, Arith, Compare, BoolOp, Not]


# ---------------------------------------------------------------------------
# Lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<word>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|==|!=|&&|\|\||[<>!+\-*/()\[\]])
    """,
    re.VERBOSE | re.ASCII,
)

_KEYWORDS = {"and": "and", "or": "or", "not": "not", "s": "s"}
_OP_ALIAS = {"&&": "and", "||": "or", "!": "not"}
_CMP_OPS = ("<", "<=", ">", ">=", "==", "!=")


@dataclass(frozen=True)
class _Tok:
    kind: str  # number | s | and | or | not | op | word | end
    text: str
    offset: int  # byte offset into the UTF-8 source


def _tokenize(source: str) -> list[_Tok]:
    tokens: list[_Tok] = []
    pos = 0
    byte_pos = 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise PredicateSyntaxError(
                f"unexpected character {source[pos]!r}", byte_pos,
                ("number", "s[", "(", "not"),
            )
        text = m.group()
        kind = m.lastgroup
        if kind == "word":
            kind = _KEYWORDS.get(text, "word")
        elif kind == "op":
            alias = _OP_ALIAS.get(text)
            if alias is not None:
                kind = alias
        if kind != "ws":
            tokens.append(_Tok(kind, text, byte_pos))
        byte_pos += len(text.encode("utf-8"))
        pos = m.end()
    tokens.append(_Tok("end", "", byte_pos))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, tokens: list[_Tok]):
        self.toks = tokens
        self.i = 0
        self.depth = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def _fail(self, expected: Iterable[str], message: str | None = None):
        tok = self.cur
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        raise PredicateSyntaxError(message or f"unexpected {what}", tok.offset, expected)

    def _is_op(self, *texts: str) -> bool:
        return self.cur.kind == "op" and self.cur.text in texts

    def _enter(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            self._fail((), "expression nested too deeply")

    def parse(self) -> Node:
        node, _ = self._or()
        if self.cur.kind != "end":
            self._fail(("and", "or", "end of input"))
        return node

    # every production returns (node, height) so tree height stays bounded
    def _grow(self, height: int) -> int:
        if height > MAX_DEPTH:
            self._fail((), "expression nested too deeply")
        return height

    def _or(self):
        left, h = self._and()
        while self.cur.kind == "or":
            self.i += 1
            right, hr = self._and()
            left, h = BoolOp("or", left, right), self._grow(1 + max(h, hr))
        return left, h

    def _and(self):
        left, h = self._not()
        while self.cur.kind == "and":
            self.i += 1
            right, hr = self._not()
            left, h = BoolOp("and", left, right), self._grow(1 + max(h, hr))
        return left, h

    def _not(self):
        if self.cur.kind == "not":
            self.i += 1
            operand, h = self._cmp()
            return Not(operand), self._grow(h + 1)
        return self._cmp()

    def _cmp(self):
        left, h = self._arith()
        if self._is_op(*_CMP_OPS):
            op = self.cur.text
            self.i += 1
            right, hr = self._arith()
            return Compare(op, left, right), self._grow(1 + max(h, hr))
        return left, h

    def _arith(self):
        left, h = self._term()
        while self._is_op("+", "-"):
            op = self.cur.text
            self.i += 1
            right, hr = self._term()
            left, h = Arith(op, left, right), self._grow(1 + max(h, hr))
        return left, h

    def _term(self):
        left, h = self._factor()
        while self._is_op("*", "/"):
            op = self.cur.text
            self.i += 1
            right, hr = self._factor()
            left, h = Arith(op, left, right), self._grow(1 + max(h, hr))
        return left, h

    def _factor(self):
        tok = self.cur
        if tok.kind == "number":
            self.i += 1
            return Num(_number(tok)), 1
        if tok.kind == "s":
            return self._ref(), 1
        if self._is_op("("):
            self._enter()
            self.i += 1
            node, h = self._or()
            if not self._is_op(")"):
                self._fail((")",))
            self.i += 1
            self.depth -= 1
            return node, h
        self._fail(("number", "s[", "("))

    def _ref(self) -> Ref:
        self.i += 1
        if not self._is_op("["):
            self._fail(("[",))
        self.i += 1
        tok = self.cur
        if tok.kind == "number" and tok.text.isdigit():
            self.i += 1
            if not self._is_op("]"):
                if self.cur.kind in ("op", "word", "s", "number") and not self._is_op("]"):
                    raise IndexSyntaxError(
                        "element index must be an integer literal", tok.offset, ("]",)
                    )
                self._fail(("]",))
            self.i += 1
            return Ref(int(tok.text))
        if tok.kind == "end":
            self._fail(("integer index",))
        raise IndexSyntaxError(
            "element index must be a non-negative integer literal",
            tok.offset, ("integer index",),
        )


def _number(tok: _Tok) -> Union[int, float]:
    text = tok.text
    if text.isdigit():
        return int(text)
    value = float(text)
    if not math.isfinite(value):
        raise PredicateSyntaxError("numeric literal out of range", tok.offset)
    return value


def parse(source: Union[str, bytes]) -> Node:
    """Parse predicate source into an AST.

    Raises PredicateSyntaxError (or its subclass IndexSyntaxError) carrying
    the byte offset of the offending token and the set of expected tokens.
    """
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise PredicateSyntaxError("invalid UTF-8", exc.start) from None
    return _Parser(_tokenize(source)).parse()


# ---------------------------------------------------------------------------
# Evaluation


def extract_subspace(ast: Node) -> tuple[int, ...]:
    """Sorted, deduplicated indices referenced by ``ast``."""
    found: set[int] = set()
    stack = [ast]
    while stack:
        node = stack.pop()
        if isinstance(node, Ref):
            found.add(node.index)
        elif isinstance(node, Not):
            stack.append(node.operand)
        elif isinstance(node, (Arith, Compare, BoolOp)):
            stack.append(node.left)
            stack.append(node.right)
    return tuple(sorted(found))


def _check_length(ast: Node, s: Sequence) -> None:
    indices = extract_subspace(ast)
    if indices and indices[-1] >= len(s):
        raise IndexOutOfRange(indices[-1], len(s))


_CMP = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def _value(node: Node, s: Sequence):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Ref):
        return s[node.index]
    if isinstance(node, Arith):
        a = _value(node.left, s)
        b = _value(node.right, s)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if b == 0:
            raise DivisionByZero("division by zero")
        return a / b
    if isinstance(node, Compare):
        return bool(_CMP[node.op](_value(node.left, s), _value(node.right, s)))
    if isinstance(node, BoolOp):
        left = bool(_value(node.left, s))
        if node.op == "and":
            return left and bool(_value(node.right, s))
        return left or bool(_value(node.right, s))
    if isinstance(node, Not):
        return not bool(_value(node.operand, s))
    raise TypeError(f"not a predicate node: {node!r}")


def evaluate(ast: Node, s: Sequence) -> bool:
    """Evaluate ``ast`` on state vector ``s``.

    Booleans act as 0/1 inside arithmetic and numbers act as their
    truthiness inside and/or/not.  ``and``/``or`` short-circuit.
    """
    _check_length(ast, s)
    return bool(_value(ast, s))


def _div(a, b):
    if b == 0:
        raise DivisionByZero("division by zero")
    return a / b


def _emit(node: Node) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Ref):
        return f"s[{node.index}]"
    if isinstance(node, Arith):
        if node.op == "/":
            return f"_div({_emit(node.left)}, {_emit(node.right)})"
        return f"({_emit(node.left)} {node.op} {_emit(node.right)})"
    if isinstance(node, Compare):
        return f"({_emit(node.left)} {node.op} {_emit(node.right)})"
    if isinstance(node, BoolOp):
        return f"(bool({_emit(node.left)}) {node.op} bool({_emit(node.right)}))"
    if isinstance(node, Not):
        return f"(not {_emit(node.operand)})"
    raise TypeError(f"not a predicate node: {node!r}")


def compile_predicate(ast: Node) -> Callable[[Sequence], bool]:
    """Return a fast callable equivalent to ``evaluate(ast, s)``.

    The generated code only contains literals, ``s[i]`` and fixed
    operators, so it runs without builtins.
    """
    indices = extract_subspace(ast)
    need = indices[-1] + 1 if indices else 0
    body = _emit(ast)
    code = compile(f"lambda s: bool({body})", "<predicate>", "eval")
    fn = eval(code, {"__builtins__": {}, "bool": bool, "_div": _div})

    def predicate(s: Sequence) -> bool:
        if len(s) < need:
            raise IndexOutOfRange(need - 1, len(s))
        return fn(s)

    return predicate


# ---------------------------------------------------------------------------
# Pretty printing

_LEVEL = {"or": 1, "and": 2, "not": 3, "cmp": 4, "+": 5, "-": 5, "*": 6, "/": 6}


def _level(node: Node) -> int:
    if isinstance(node, BoolOp):
        return _LEVEL[node.op]
    if isinstance(node, Not):
        return 3
    if isinstance(node, Compare):
        return 4
    if isinstance(node, Arith):
        return _LEVEL[node.op]
    return 7


def _fmt(node: Node, min_level: int) -> str:
    if isinstance(node, Num):
        text = repr(node.value)
    elif isinstance(node, Ref):
        text = f"s[{node.index}]"
    elif isinstance(node, BoolOp):
        lvl = _LEVEL[node.op]
        text = f"{_fmt(node.left, lvl)} {node.op} {_fmt(node.right, lvl + 1)}"
    elif isinstance(node, Not):
        text = f"not {_fmt(node.operand, 4)}"
    elif isinstance(node, Compare):
        text = f"{_fmt(node.left, 5)} {node.op} {_fmt(node.right, 5)}"
    elif isinstance(node, Arith):
        lvl = _LEVEL[node.op]
        text = f"{_fmt(node.left, lvl)} {node.op} {_fmt(node.right, lvl + 1)}"
    else:
        raise TypeError(f"not a predicate node: {node!r}")
    if _level(node) < min_level:
        return f"({text})"
    return text


def pretty(ast: Node) -> str:
    """Canonical source text; ``parse(pretty(ast)) == ast``."""
    return _fmt(ast, 1)


# ---------------------------------------------------------------------------
# Discriminator sets


@dataclass(frozen=True)
class DiscriminatorSpec:
    """One key state: its symbol, description, predicate source and subspace.

    ``subspace`` is the declared index list; ``validate_set`` checks it
    against the indices the predicate actually references.
    """

    symbol: str
    description: str
    source: str
    subspace: tuple[int, ...]

    @cached_property
    def predicate(self) -> Node:
        return parse(self.source)

    @cached_property
    def check(self) -> Callable[[Sequence], bool]:
        return compile_predicate(self.predicate)

    @classmethod
    def from_source(cls, symbol: str, source: str, description: str = "") -> "DiscriminatorSpec":
        return cls(symbol, description, source, extract_subspace(parse(source)))


@dataclass(frozen=True)
class DiscriminatorSet:
    specs: tuple[DiscriminatorSpec, ...] = ()
    init: str = "init state"
    success: str = "success state"

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))

    @property
    def symbols(self) -> list[str]:
        return [d.symbol for d in self.specs]

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    def __getitem__(self, symbol: str) -> DiscriminatorSpec:
        for d in self.specs:
            if d.symbol == symbol:
                return d
        raise KeyError(symbol)

    def to_dict(self) -> dict:
        key_states = {"init": self.init}
        key_states.update({d.symbol: d.description for d in self.specs})
        key_states["success"] = self.success
        return {
            "Key_states": key_states,
            "Discriminators": {d.symbol: d.source for d in self.specs},
            "Subspace_states": {d.symbol: list(d.subspace) for d in self.specs},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DiscriminatorSet":
        fields = {k.lower(): v for k, v in data.items()}
        key_states = fields.get("key_states", {})
        subspaces = fields.get("subspace_states", {})
        specs = [
            DiscriminatorSpec(
                symbol=sym,
                description=str(key_states.get(sym, "")),
                source=str(src),
                subspace=tuple(int(i) for i in subspaces.get(sym, ())),
            )
            for sym, src in fields.get("discriminators", {}).items()
        ]
        return cls(
            tuple(specs),
            init=str(key_states.get("init", "init state")),
            success=str(key_states.get("success", "success state")),
        )


@dataclass
class ValidationEntry:
    symbol: str
    parse_ok: bool = True
    subspace_ok: bool = True
    eval_ok: bool = True
    errors: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.parse_ok and self.subspace_ok and self.eval_ok and not self.errors


@dataclass
class ValidationReport:
    entries: list[ValidationEntry]

    @property
    def passed(self) -> bool:
        return bool(self.entries) and all(e.passed for e in self.entries)

    @property
    def failures(self) -> list[ValidationEntry]:
        return [e for e in self.entries if not e.passed]

    def format(self) -> str:
        lines = []
        for e in self.entries:
            status = "ok" if e.passed else "FAILED"
            lines.append(f"{e.symbol}: {status}")
            lines.extend(f"  - {msg}" for msg in e.errors)
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "entries": [
                {
                    "symbol": e.symbol,
                    "parse_ok": e.parse_ok,
                    "subspace_ok": e.subspace_ok,
                    "eval_ok": e.eval_ok,
                    "errors": list(e.errors),
                }
                for e in self.entries
            ],
        }


def validate_set(dset: DiscriminatorSet, probes: Sequence[Sequence]) -> ValidationReport:
    """Check every discriminator parses, declares its true subspace and runs on all probes."""
    if not probes:
        raise ValueError("validate_set needs at least one probe state")
    entries: list[ValidationEntry] = []
    seen: set[str] = set()
    if not dset.specs:
        entries.append(ValidationEntry("<set>", errors=["no discriminators given"]))
    for spec in dset.specs:
        entry = ValidationEntry(spec.symbol)
        entries.append(entry)
        if spec.symbol in seen:
            entry.errors.append(f"duplicate symbol {spec.symbol!r}")
        seen.add(spec.symbol)
        if spec.symbol in RESERVED_SYMBOLS:
            entry.errors.append(f"{spec.symbol!r} is reserved and cannot carry a discriminator")
        try:
            ast = parse(spec.source)
        except PredicateSyntaxError as exc:
            entry.parse_ok = False
            entry.subspace_ok = False
            entry.eval_ok = False
            entry.errors.append(f"{type(exc).__name__}: {exc}")
            continue
        actual = extract_subspace(ast)
        declared = tuple(sorted(set(spec.subspace)))
        if not actual:
            entry.subspace_ok = False
            entry.errors.append("empty subspace: predicate references no state element")
        elif declared != actual:
            entry.subspace_ok = False
            entry.errors.append(
                f"subspace mismatch: declared {list(spec.subspace)}, predicate uses {list(actual)}"
            )
        for k, probe in enumerate(probes):
            try:
                evaluate(ast, probe)
            except DslError as exc:
                entry.eval_ok = False
                entry.errors.append(f"probe {k}: {exc}")
                break
    return ValidationReport(entries)
