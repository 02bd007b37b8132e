"""Recursive-descent parser with error recovery.

Grammar::

    module  := fn*
    fn      := 'fn' NAME '(' [NAME (',' NAME)*] ')' '{' let* expr '}'
    let     := 'let' NAME '=' expr ';'
    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | primary
    primary := NUMBER | NAME | NAME '(' args ')' | '(' expr ')' | select | affine
    affine  := 'affine' '(' '[' signed (',' signed)* ']' ',' signed (',' expr)* ')'
    select  := 'select' '{' arm (',' arm)* [','] '}'
    arm     := (guard | 'else') '=>' expr
    guard   := conj ('or' conj)*
    conj    := gatom ('and' gatom)*
    gatom   := 'true' | '(' guard ')' | expr CMP expr

A failed statement is reported and skipped up to the next ``;`` or the
closing brace of its function, so one pass reports every error.
"""

from __future__ import annotations

from .syntax import (
    COMPARISONS,
    AffineCall,
    Arm,
    BinOp,
    BoolOp,
    Call,
    Compare,
    Diagnostic,
    DslError,
    FnDef,
    Let,
    Module,
    Name,
    Neg,
    Num,
    Select,
    TrueGuard,
    tokenize,
)


class _Abort(Exception):
    def __init__(self, diagnostic):
        self.diagnostic = diagnostic


def _describe(tok):
    if tok.kind == "eof":
        return "end of input"
    return f"{tok.text!r}"


class Parser:
    def __init__(self, src: str):
        self.tokens, self.diagnostics = tokenize(src)
        self.pos = 0

    # -- token helpers

    @property
    def tok(self):
        return self.tokens[self.pos]

    def at(self, text, kind=None):
        t = self.tok
        return t.text == text and (kind is None or t.kind == kind) and t.kind != "eof"

    def advance(self):
        t = self.tok
        if t.kind != "eof":
            self.pos += 1
        return t

    def fail(self, message, tok=None):
        raise _Abort(Diagnostic((tok or self.tok).span, message))

    def expect(self, text, what=None):
        if self.tok.text == text and self.tok.kind in ("op", "kw"):
            return self.advance()
        self.fail(f"expected {what or repr(text)}, found {_describe(self.tok)}")

    def expect_name(self, what="a name"):
        if self.tok.kind == "name":
            return self.advance()
        self.fail(f"expected {what}, found {_describe(self.tok)}")

    # -- module level

    def parse_module(self) -> Module:
        fns = []
        while self.tok.kind != "eof":
            if not self.at("fn", "kw"):
                self.diagnostics.append(Diagnostic(self.tok.span, f"expected 'fn', found {_describe(self.tok)}"))
                self._skip_to_fn()
                continue
            f = self.parse_fn()
            if f is not None:
                fns.append(f)
        return Module(tuple(fns))

    def _skip_to_fn(self):
        self.advance()
        while self.tok.kind != "eof" and not self.at("fn", "kw"):
            self.advance()

    def _open_depth(self, since):
        """Brackets opened but not closed between token ``since`` and the cursor."""
        depth = 0
        for t in self.tokens[since:self.pos]:
            if t.kind == "op" and t.text in ("{", "(", "["):
                depth += 1
            elif t.kind == "op" and t.text in ("}", ")", "]"):
                depth = max(0, depth - 1)
        return depth

    def _skip_statement(self, depth):
        """Skip to the end of the current statement inside a function body.

        ``depth`` counts brackets still open inside the statement. Returns True
        when the function's closing brace was consumed.
        """
        while self.tok.kind != "eof":
            t = self.tok
            if t.kind == "op" and t.text in ("{", "(", "["):
                depth += 1
            elif t.kind == "op" and t.text in (")", "]"):
                depth = max(0, depth - 1)
            elif t.kind == "op" and t.text == "}":
                if depth == 0:
                    self.advance()
                    return True
                depth -= 1
            elif t.text == ";" and depth == 0:
                self.advance()
                return False
            elif self.at("fn", "kw") and depth == 0:
                return True
            self.advance()
        return True

    def parse_fn(self):
        start = self.advance()  # 'fn'
        try:
            name = self.expect_name("a function name").text
            self.expect("(")
            params = []
            if not self.at(")"):
                params.append(self.expect_name("a parameter name").text)
                while self.at(","):
                    self.advance()
                    params.append(self.expect_name("a parameter name").text)
            self.expect(")", "',' or ')'")
            self.expect("{")
        except _Abort as e:
            self.diagnostics.append(e.diagnostic)
            while self.tok.kind != "eof" and not self.at("fn", "kw"):
                self.advance()
            return None
        lets, body, ok = [], None, True
        while True:
            if self.tok.kind == "eof":
                self.diagnostics.append(Diagnostic(self.tok.span, f"unterminated body of function {name!r}"))
                return None
            if self.at("}"):
                close = self.advance()
                if body is None and ok:
                    self.diagnostics.append(Diagnostic(close.span, f"function {name!r} has no result expression"))
                    ok = False
                break
            if self.at("fn", "kw"):
                self.diagnostics.append(Diagnostic(self.tok.span, f"missing '}}' closing function {name!r}"))
                ok = False
                break
            if body is not None:
                self.diagnostics.append(Diagnostic(self.tok.span, f"expected '}}' after the result expression, found {_describe(self.tok)}"))
                ok = False
                if self._skip_statement(0):
                    break
                continue
            stmt_start = self.pos
            try:
                if self.at("let", "kw"):
                    lets.append(self.parse_let())
                else:
                    body = self.parse_expr()
            except _Abort as e:
                self.diagnostics.append(e.diagnostic)
                ok = False
                if self._skip_statement(self._open_depth(stmt_start)):
                    break
        if not ok:
            return None
        return FnDef(name, tuple(params), tuple(lets), body, start.span)

    def parse_let(self):
        start = self.advance()
        name = self.expect_name("a binding name").text
        self.expect("=")
        value = self.parse_expr()
        self.expect(";", "';' after let binding")
        return Let(name, value, start.span)

    # -- expressions

    def parse_expr(self):
        left = self.parse_term()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            op = self.advance()
            right = self._operand(op, self.parse_term)
            left = BinOp(op.text, left, right, op.span)
        return left

    def parse_term(self):
        left = self.parse_unary()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.advance()
            right = self._operand(op, self.parse_unary)
            left = BinOp(op.text, left, right, op.span)
        return left

    def _operand(self, op, parse):
        if self._starts_operand():
            return parse()
        self.fail(f"dangling operator {op.text!r}: expected an operand, found {_describe(self.tok)}", op)

    def _starts_operand(self):
        t = self.tok
        if t.kind in ("name", "number"):
            return True
        if t.kind == "kw":
            return t.text == "select"
        return t.kind == "op" and t.text in ("(", "-")

    def parse_unary(self):
        if self.at("-", "op"):
            op = self.advance()
            return Neg(self._operand(op, self.parse_unary), op.span)
        return self.parse_primary()

    def parse_primary(self):
        t = self.tok
        if t.kind == "number":
            self.advance()
            return Num(float(t.text), t.span)
        if t.kind == "name":
            self.advance()
            if t.text == "affine" and self.at("("):
                return self.parse_affine(t)
            if self.at("("):
                self.advance()
                args = []
                if not self.at(")"):
                    args.append(self.parse_expr())
                    while self.at(","):
                        self.advance()
                        args.append(self.parse_expr())
                self.expect(")", "',' or ')' in call")
                return Call(t.text, tuple(args), t.span)
            return Name(t.text, t.span)
        if t.kind == "kw" and t.text == "select":
            return self.parse_select()
        if self.at("("):
            self.advance()
            e = self.parse_expr()
            self.expect(")")
            return e
        self.fail(f"expected an expression, found {_describe(t)}")

    def _signed(self):
        neg = False
        if self.at("-", "op"):
            self.advance()
            neg = True
        t = self.tok
        if t.kind != "number":
            self.fail(f"expected a number, found {_describe(t)}")
        self.advance()
        v = float(t.text)
        return -v if neg else v

    def parse_affine(self, head):
        self.expect("(")
        self.expect("[", "'[' opening the coefficient list")
        coeffs = [self._signed()]
        while self.at(","):
            self.advance()
            coeffs.append(self._signed())
        self.expect("]", "',' or ']' in coefficient list")
        self.expect(",", "',' before the offset")
        offset = self._signed()
        args = []
        while self.at(","):
            self.advance()
            args.append(self.parse_expr())
        self.expect(")", "',' or ')' in affine call")
        return AffineCall(tuple(coeffs), offset, tuple(args), head.span)

    def parse_select(self):
        head = self.advance()
        self.expect("{", "'{' after select")
        arms = [self.parse_arm()]
        while self.at(","):
            self.advance()
            if self.at("}"):
                break
            arms.append(self.parse_arm())
        self.expect("}", "',' or '}' in select")
        return Select(tuple(arms), head.span)

    def parse_arm(self):
        start = self.tok
        if self.at("else", "kw"):
            self.advance()
            guard = None
        else:
            guard = self.parse_guard()
        self.expect("=>", "'=>' after guard")
        return Arm(guard, self.parse_expr(), start.span)

    # -- guards

    def parse_guard(self):
        start = self.tok
        terms = [self.parse_conj()]
        while self.at("or", "kw"):
            self.advance()
            terms.append(self.parse_conj())
        return terms[0] if len(terms) == 1 else BoolOp("or", tuple(terms), start.span)

    def parse_conj(self):
        start = self.tok
        terms = [self.parse_gatom()]
        while self.at("and", "kw"):
            self.advance()
            terms.append(self.parse_gatom())
        return terms[0] if len(terms) == 1 else BoolOp("and", tuple(terms), start.span)

    def parse_gatom(self):
        if self.at("true", "kw"):
            return TrueGuard(self.advance().span)
        if self.at("("):
            # a parenthesised guard, unless it turns out to be the left side of a comparison
            mark = self.pos
            try:
                self.advance()
                g = self.parse_guard()
                self.expect(")")
                if not (self.tok.kind == "op" and self.tok.text in COMPARISONS + ("+", "-", "*", "/")):
                    return g
            except _Abort:
                pass
            self.pos = mark
        start = self.tok
        left = self.parse_expr()
        if not (self.tok.kind == "op" and self.tok.text in COMPARISONS):
            self.fail(f"expected a comparison operator, found {_describe(self.tok)}")
        op = self.advance()
        right = self._operand(op, self.parse_expr)
        return Compare(op.text, left, right, start.span)


def parse(src: str) -> Module:
    """Parse ``src``; raises DslError carrying every diagnostic on failure."""
    module, diags = parse_with_diagnostics(src)
    if diags:
        raise DslError(diags)
    return module


def parse_with_diagnostics(src: str):
    p = Parser(src)
    module = p.parse_module()
    return module, sorted(p.diagnostics, key=lambda d: (d.span.line, d.span.col))
