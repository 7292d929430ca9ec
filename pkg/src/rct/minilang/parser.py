"""Recursive-descent parser producing arena programs with pre-order node ids."""

from __future__ import annotations

from .ast import Draft, Kind, Program, freeze
from .errors import MiniLangSyntaxError
from .lexer import Token, tokenize

# Binary operators from weakest to strongest; all levels are left-associative.
BINARY_LEVELS: tuple[tuple[str, ...], ...] = (
    ("||",),
    ("&&",),
    ("==", "!="),
    ("<", "<=", ">", ">="),
    ("<<", ">>"),
    ("+", "-"),
    ("*", "/", "%"),
)

OP_PRECEDENCE: dict[str, int] = {
    op: level for level, ops in enumerate(BINARY_LEVELS) for op in ops
}


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.type != "eof":
            self.pos += 1
        return tok

    def expect(self, ttype: str) -> Token:
        tok = self.peek()
        if tok.type != ttype:
            raise MiniLangSyntaxError(
                f"unexpected token {tok.text or '<eof>'!r}", tok.line, tok.col, (ttype,)
            )
        return self.advance()

    def error(self, expected: tuple[str, ...]) -> MiniLangSyntaxError:
        tok = self.peek()
        return MiniLangSyntaxError(
            f"unexpected token {tok.text or '<eof>'!r}", tok.line, tok.col, expected
        )

    # --- statements -------------------------------------------------------

    def program(self) -> Draft:
        start = self.peek().pos
        stmts: list[Draft] = []
        while self.peek().type != "eof":
            stmts.append(self.statement())
        return Draft(Kind.BLOCK, "", stmts, (start, self.peek().pos))

    def statement(self) -> Draft:
        tok = self.peek()
        if tok.type == "keyword" and tok.text == "return":
            self.advance()
            expr = self.expression()
            end = self.expect(";")
            return Draft(Kind.RETURN, "", [expr], (tok.pos, end.pos + 1))
        if tok.type == "ident" and self.peek(1).type == "=":
            name = self.advance()
            self.advance()  # "="
            lhs = Draft(Kind.IDENT, name.text, [], (name.pos, name.pos + len(name.text)))
            rhs = self.assign_rhs()
            end = self.expect(";")
            return Draft(Kind.ASSIGN, "=", [lhs, rhs], (tok.pos, end.pos + 1))
        expr = self.expression()
        end = self.expect(";")
        return Draft(expr.kind, expr.value, expr.children, (tok.pos, end.pos + 1), expr.origin)

    def assign_rhs(self) -> Draft:
        if self.peek().type == "(" and self.is_arrow_function():
            return self.function()
        if self.peek().type == "{":
            return self.object_literal()
        return self.expression()

    def is_arrow_function(self) -> bool:
        # Lookahead from "(": a parameter list is idents/commas up to ")" "=>".
        depth = 0
        k = 0
        while True:
            tok = self.peek(k)
            if tok.type == "eof":
                return False
            if tok.type == "(":
                depth += 1
            elif tok.type == ")":
                depth -= 1
                if depth == 0:
                    return self.peek(k + 1).type == "=>"
            elif depth == 1 and tok.type not in ("ident", ","):
                return False
            k += 1

    def function(self) -> Draft:
        start = self.expect("(")
        params: list[Draft] = []
        while self.peek().type != ")":
            name = self.expect("ident")
            params.append(Draft(Kind.PARAM, name.text, [], (name.pos, name.pos + len(name.text))))
            if self.peek().type == ",":
                self.advance()
            elif self.peek().type != ")":
                raise self.error((",", ")"))
        self.expect(")")
        self.expect("=>")
        body = self.block()
        return Draft(Kind.FUNCTION, "", params + [body], (start.pos, body.span[1]))

    def block(self) -> Draft:
        start = self.expect("{")
        stmts: list[Draft] = []
        while self.peek().type != "}":
            if self.peek().type == "eof":
                raise self.error(("}",))
            stmts.append(self.statement())
        end = self.expect("}")
        return Draft(Kind.BLOCK, "", stmts, (start.pos, end.pos + 1))

    def object_literal(self) -> Draft:
        start = self.expect("{")
        props: list[Draft] = []
        while self.peek().type != "}":
            key = self.expect("ident")
            self.expect(":")
            value = self.expression()
            props.append(Draft(Kind.PROPERTY, key.text, [value], (key.pos, value.span[1])))
            if self.peek().type == ",":
                self.advance()
            elif self.peek().type != "}":
                raise self.error((",", "}"))
        end = self.expect("}")
        return Draft(Kind.OBJECT, "", props, (start.pos, end.pos + 1))

    # --- expressions ------------------------------------------------------

    def expression(self) -> Draft:
        cond = self.binary(0)
        if self.peek().type == "?":
            self.advance()
            then = self.expression()
            self.expect(":")
            other = self.expression()
            return Draft(Kind.TERNARY, "", [cond, then, other], (cond.span[0], other.span[1]))
        return cond

    def binary(self, level: int) -> Draft:
        if level >= len(BINARY_LEVELS):
            return self.postfix()
        left = self.binary(level + 1)
        while self.peek().type in BINARY_LEVELS[level]:
            op = self.advance()
            right = self.binary(level + 1)
            left = Draft(Kind.BINARY, op.text, [left, right], (left.span[0], right.span[1]))
        return left

    def postfix(self) -> Draft:
        expr = self.primary()
        while True:
            tok = self.peek()
            if tok.type == "(":
                self.advance()
                args: list[Draft] = []
                while self.peek().type != ")":
                    args.append(self.expression())
                    if self.peek().type == ",":
                        self.advance()
                    elif self.peek().type != ")":
                        raise self.error((",", ")"))
                end = self.expect(")")
                expr = Draft(Kind.CALL, "", [expr] + args, (expr.span[0], end.pos + 1))
            elif tok.type == ".":
                self.advance()
                name = self.expect("ident")
                expr = Draft(Kind.MEMBER, name.text, [expr], (expr.span[0], name.pos + len(name.text)))
            else:
                return expr

    def primary(self) -> Draft:
        tok = self.peek()
        if tok.type == "number":
            self.advance()
            return Draft(Kind.NUMBER, tok.text, [], (tok.pos, tok.pos + len(tok.text)))
        if tok.type == "string":
            self.advance()
            return Draft(Kind.STRING, tok.text, [], (tok.pos, tok.pos + len(tok.text)))
        if tok.type == "keyword" and tok.text in ("true", "false"):
            self.advance()
            return Draft(Kind.BOOL, tok.text, [], (tok.pos, tok.pos + len(tok.text)))
        if tok.type == "ident":
            self.advance()
            return Draft(Kind.IDENT, tok.text, [], (tok.pos, tok.pos + len(tok.text)))
        if tok.type == "(":
            if self.is_arrow_function():
                return self.function()
            self.advance()
            expr = self.expression()
            self.expect(")")
            return expr
        if tok.type == "{":
            return self.object_literal()
        raise self.error(("number", "string", "ident", "(", "{"))


def parse(source: str) -> Program:
    """Parse source text into a program; node ids are assigned in pre-order."""
    parser = _Parser(tokenize(source))
    draft = parser.program()
    program, _ = freeze(draft, source)
    return program


def parse_expression(source: str) -> Draft:
    """Parse a single expression; used to materialize stored condition text."""
    parser = _Parser(tokenize(source))
    draft = parser.expression()
    tok = parser.peek()
    if tok.type != "eof":
        raise MiniLangSyntaxError(f"trailing input {tok.text!r}", tok.line, tok.col, ("eof",))
    return draft
