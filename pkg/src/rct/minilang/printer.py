"""Canonical pretty-printer; re-parsing the output reproduces the tree."""

from __future__ import annotations

from .ast import AstNode, Kind, Program
from .parser import OP_PRECEDENCE

_INDENT = "  "


def to_source(program: Program) -> str:
    lines: list[str] = []
    root = program.node(program.root)
    for stmt_id in root.children:
        _statement(program, stmt_id, 0, lines)
    return "\n".join(lines) + ("\n" if lines else "")


def _statement(p: Program, node_id: int, depth: int, lines: list[str]) -> None:
    node = p.node(node_id)
    pad = _INDENT * depth
    if node.kind == Kind.ASSIGN:
        lhs = p.node(node.children[0])
        rhs = p.node(node.children[1])
        if rhs.kind == Kind.FUNCTION:
            head = f"{pad}{lhs.value} = {_function_head(p, rhs)} {{"
            lines.append(head)
            body = p.node(rhs.children[-1])
            for s in body.children:
                _statement(p, s, depth + 1, lines)
            lines.append(f"{pad}}};")
        else:
            lines.append(f"{pad}{lhs.value} = {_expr(p, rhs)};")
    elif node.kind == Kind.RETURN:
        lines.append(f"{pad}return {_expr(p, p.node(node.children[0]))};")
    else:
        lines.append(f"{pad}{_expr(p, node)};")


def _function_head(p: Program, fn: AstNode) -> str:
    params = [p.node(c).value for c in fn.children[:-1]]
    return "(" + ", ".join(params) + ") =>"


def _expr(p: Program, node: AstNode) -> str:
    kind = node.kind
    if kind in (Kind.NUMBER, Kind.BOOL, Kind.STRING, Kind.IDENT):
        return node.value
    if kind == Kind.BINARY:
        left = p.node(node.children[0])
        right = p.node(node.children[1])
        prec = OP_PRECEDENCE[node.value]
        lhs = _wrap(p, left, prec, right_side=False)
        rhs = _wrap(p, right, prec, right_side=True)
        return f"{lhs} {node.value} {rhs}"
    if kind == Kind.TERNARY:
        cond, then, other = (p.node(c) for c in node.children)
        cond_s = _parens_if(p, cond, cond.kind == Kind.TERNARY)
        then_s = _parens_if(p, then, then.kind == Kind.TERNARY)
        return f"{cond_s} ? {then_s} : {_expr(p, other)}"
    if kind == Kind.CALL:
        callee = p.node(node.children[0])
        args = ", ".join(_expr(p, p.node(c)) for c in node.children[1:])
        callee_s = _parens_if(p, callee, callee.kind in (Kind.BINARY, Kind.TERNARY, Kind.FUNCTION))
        return f"{callee_s}({args})"
    if kind == Kind.MEMBER:
        recv = p.node(node.children[0])
        recv_s = _parens_if(p, recv, recv.kind in (Kind.BINARY, Kind.TERNARY, Kind.FUNCTION))
        return f"{recv_s}.{node.value}"
    if kind == Kind.OBJECT:
        props = []
        for c in node.children:
            prop = p.node(c)
            props.append(f"{prop.value}: {_expr(p, p.node(prop.children[0]))}")
        return "{" + ", ".join(props) + "}"
    if kind == Kind.FUNCTION:
        # Inline rendering; only reached in expression positions.
        body = p.node(node.children[-1])
        stmts: list[str] = []
        for s in body.children:
            sub: list[str] = []
            _statement(p, s, 0, sub)
            stmts.extend(sub)
        return f"{_function_head(p, node)} {{ " + " ".join(stmts) + " }"
    raise ValueError(f"cannot print node kind {kind}")


def _wrap(p: Program, child: AstNode, parent_prec: int, right_side: bool) -> str:
    if child.kind == Kind.TERNARY:
        return f"({_expr(p, child)})"
    if child.kind == Kind.BINARY:
        prec = OP_PRECEDENCE[child.value]
        if prec < parent_prec or (prec == parent_prec and right_side):
            return f"({_expr(p, child)})"
    return _expr(p, child)


def _parens_if(p: Program, node: AstNode, wrap: bool) -> str:
    s = _expr(p, node)
    return f"({s})" if wrap else s
