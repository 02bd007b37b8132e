"""Tokens, AST nodes, diagnostics and the pretty-printer for ``.sel`` sources."""

from __future__ import annotations

from dataclasses import dataclass, field

KEYWORDS = frozenset({"fn", "let", "select", "else", "true", "and", "or"})
COMPARISONS = ("<=", ">=", "==", "<", ">")
# longest first so "<=" wins over "<"
PUNCT = ("=>", "<=", ">=", "==", "<", ">", "+", "-", "*", "/", "(", ")", "{", "}", "[", "]", ",", ";", "=")


@dataclass(frozen=True)
class Span:
    line: int
    col: int
    end_line: int = 0
    end_col: int = 0

    def __str__(self):
        return f"{self.line}:{self.col}"


@dataclass(frozen=True)
class Diagnostic:
    span: Span
    message: str
    severity: str = "error"

    @property
    def line(self):
        return self.span.line

    @property
    def col(self):
        return self.span.col

    def __str__(self):
        return f"{self.span.line}:{self.span.col}: {self.severity}: {self.message}"

    def to_dict(self):
        return {"line": self.span.line, "col": self.span.col, "severity": self.severity, "message": self.message}


class DslError(Exception):
    """Raised with the full diagnostic list when parsing or compiling fails."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Token:
    kind: str  # "name", "number", "kw", "op", "eof"
    text: str
    span: Span


def tokenize(src: str):
    """Split ``src`` into tokens; returns (tokens, diagnostics)."""
    tokens, diags = [], []
    line, col, i, n = 1, 1, 0, len(src)
    while i < n:
        c = src[i]
        if c == "\n":
            line, col, i = line + 1, 1, i + 1
            continue
        if c.isspace():
            i, col = i + 1, col + 1
            continue
        if c == "#":
            while i < n and src[i] != "\n":
                i += 1
            continue
        start = Span(line, col)
        if c.isalpha() or c == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            text = src[i:j]
            kind = "kw" if text in KEYWORDS else "name"
        elif c.isdigit() or (c == "." and i + 1 < n and src[i + 1].isdigit()):
            j = i
            while j < n and src[j].isdigit():
                j += 1
            if j < n and src[j] == ".":
                j += 1
                while j < n and src[j].isdigit():
                    j += 1
            if j < n and src[j] in "eE":
                k = j + 1
                if k < n and src[k] in "+-":
                    k += 1
                if k < n and src[k].isdigit():
                    while k < n and src[k].isdigit():
                        k += 1
                    j = k
            text, kind = src[i:j], "number"
        else:
            text = next((p for p in PUNCT if src.startswith(p, i)), None)
            if text is None:
                diags.append(Diagnostic(start, f"unexpected character {c!r}"))
                i, col = i + 1, col + 1
                continue
            kind = "op"
        j = i + len(text)
        tokens.append(Token(kind, text, Span(line, col, line, col + len(text))))
        col += j - i
        i = j
    tokens.append(Token("eof", "", Span(line, col, line, col)))
    return tokens, diags


# ---------------------------------------------------------- AST
# spans are excluded from equality so a re-parsed AST compares structurally


def _span():
    return field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Num:
    value: float
    span: Span = _span()


@dataclass(frozen=True)
class Name:
    id: str
    span: Span = _span()


@dataclass(frozen=True)
class Neg:
    operand: object
    span: Span = _span()


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object
    span: Span = _span()


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    span: Span = _span()


@dataclass(frozen=True)
class AffineCall:
    coeffs: tuple
    offset: float
    args: tuple
    span: Span = _span()


@dataclass(frozen=True)
class TrueGuard:
    span: Span = _span()


@dataclass(frozen=True)
class Compare:
    op: str
    left: object
    right: object
    span: Span = _span()


@dataclass(frozen=True)
class BoolOp:
    op: str  # "and" | "or"
    terms: tuple
    span: Span = _span()


@dataclass(frozen=True)
class Arm:
    guard: object  # None for else
    body: object
    span: Span = _span()


@dataclass(frozen=True)
class Select:
    arms: tuple
    span: Span = _span()


@dataclass(frozen=True)
class Let:
    name: str
    value: object
    span: Span = _span()


@dataclass(frozen=True)
class FnDef:
    name: str
    params: tuple
    lets: tuple
    body: object
    span: Span = _span()


@dataclass(frozen=True)
class Module:
    functions: tuple

    def function(self, name):
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    @property
    def names(self):
        return [f.name for f in self.functions]


# ---------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_UNARY = 3
_ATOM = 4


def _prec(e):
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _UNARY
    return _ATOM


def _num(v):
    text = repr(float(v))
    return text[:-2] if text.endswith(".0") else text


def format_expr(e) -> str:
    if isinstance(e, Num):
        return _num(e.value)
    if isinstance(e, Name):
        return e.id
    if isinstance(e, Neg):
        inner = format_expr(e.operand)
        return f"-({inner})" if _prec(e.operand) < _UNARY else f"-{inner}"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left = format_expr(e.left)
        right = format_expr(e.right)
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    if isinstance(e, Call):
        return f"{e.name}({', '.join(format_expr(a) for a in e.args)})"
    if isinstance(e, AffineCall):
        coeffs = ", ".join(_num(c) for c in e.coeffs)
        args = "".join(f", {format_expr(a)}" for a in e.args)
        return f"affine([{coeffs}], {_num(e.offset)}{args})"
    if isinstance(e, Select):
        arms = ", ".join(_format_arm(a) for a in e.arms)
        return f"select {{ {arms} }}"
    raise TypeError(f"not an expression node: {e!r}")


def _format_arm(arm):
    head = "else" if arm.guard is None else format_guard(arm.guard)
    return f"{head} => {format_expr(arm.body)}"


def format_guard(g) -> str:
    if isinstance(g, TrueGuard):
        return "true"
    if isinstance(g, Compare):
        return f"{format_expr(g.left)} {g.op} {format_expr(g.right)}"
    if isinstance(g, BoolOp):
        parts = [f"({format_guard(t)})" if isinstance(t, BoolOp) else format_guard(t) for t in g.terms]
        return f" {g.op} ".join(parts)
    raise TypeError(f"not a guard node: {g!r}")


def format_fn(f: FnDef) -> str:
    lines = [f"fn {f.name}({', '.join(f.params)}) {{"]
    lines += [f"    let {let.name} = {format_expr(let.value)};" for let in f.lets]
    lines.append(f"    {format_expr(f.body)}")
    lines.append("}")
    return "\n".join(lines)


def pretty(module: Module) -> str:
    return "\n\n".join(format_fn(f) for f in module.functions) + "\n"
