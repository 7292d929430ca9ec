"""Variable and object-field resolution.

Scoping is flat: the top level is one scope, and every function body is its
own scope seeing only its parameters and locals (no capture). Fields belong
to the object variable whose literal declared them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ast import AstNode, Kind, Program
from .errors import MiniLangError

TOP_SCOPE = -1

VAR_VARIABLE = "variable"
VAR_PARAMETER = "parameter"
VAR_FUNCTION = "function"
VAR_OBJECT = "object"


@dataclass
class Variable:
    var_id: int
    name: str
    kind: str
    scope: int  # TOP_SCOPE or the Function node id
    occurrences: list[int] = field(default_factory=list)  # node ids, source order


@dataclass
class FieldInfo:
    obj_var: int
    name: str
    property_nodes: list[int] = field(default_factory=list)
    member_nodes: list[int] = field(default_factory=list)


@dataclass
class ScopeInfo:
    variables: list[Variable]
    var_of_node: dict[int, int]  # Identifier/Param node id -> var_id
    fields: list[FieldInfo]
    field_of_node: dict[int, int]  # Property/Member node id -> field index
    returns_of: dict[int, list[int]]  # Function node id -> Return node ids
    function_var: dict[int, int]  # Function node id -> var_id bound to it

    def scope_names(self, scope: int) -> set[str]:
        return {v.name for v in self.variables if v.scope == scope}


class _Resolver:
    def __init__(self, program: Program, builtin_names: frozenset[str]):
        self.p = program
        self.builtin_names = builtin_names
        self.variables: list[Variable] = []
        self.var_of_node: dict[int, int] = {}
        self.fields: list[FieldInfo] = []
        self.field_of_node: dict[int, int] = {}
        self.returns_of: dict[int, list[int]] = {}
        self.function_var: dict[int, int] = {}

    def run(self) -> ScopeInfo:
        env: dict[str, int] = {}
        for stmt_id in self.p.node(self.p.root).children:
            self.statement(stmt_id, env, TOP_SCOPE, None)
        return ScopeInfo(
            self.variables,
            self.var_of_node,
            self.fields,
            self.field_of_node,
            self.returns_of,
            self.function_var,
        )

    def bind(self, name: str, kind: str, scope: int, node_id: int, env: dict[str, int]) -> int:
        if name in env:
            var = self.variables[env[name]]
            var.occurrences.append(node_id)
            self.var_of_node[node_id] = var.var_id
            return var.var_id
        var = Variable(len(self.variables), name, kind, scope, [node_id])
        self.variables.append(var)
        env[name] = var.var_id
        self.var_of_node[node_id] = var.var_id
        return var.var_id

    def statement(self, stmt_id: int, env: dict[str, int], scope: int, fn_id: int | None) -> None:
        node = self.p.node(stmt_id)
        if node.kind == Kind.ASSIGN:
            lhs, rhs = self.p.node(node.children[0]), self.p.node(node.children[1])
            if rhs.kind == Kind.FUNCTION:
                var_id = self.bind(lhs.value, VAR_FUNCTION, scope, lhs.id, env)
                self.function_var[rhs.id] = var_id
                self.function(rhs)
            elif rhs.kind == Kind.OBJECT:
                var_id = self.bind(lhs.value, VAR_OBJECT, scope, lhs.id, env)
                self.object_literal(rhs, var_id, env, scope)
            else:
                self.expr(rhs.id, env, scope)
                self.bind(lhs.value, VAR_VARIABLE, scope, lhs.id, env)
            return
        if node.kind == Kind.RETURN:
            if fn_id is None:
                raise MiniLangError(f"return outside function at node {stmt_id}")
            self.returns_of.setdefault(fn_id, []).append(stmt_id)
            self.expr(node.children[0], env, scope)
            return
        self.expr(stmt_id, env, scope)

    def function(self, fn: AstNode) -> None:
        env: dict[str, int] = {}
        self.returns_of.setdefault(fn.id, [])
        for param_id in fn.children[:-1]:
            param = self.p.node(param_id)
            self.bind(param.value, VAR_PARAMETER, fn.id, param_id, env)
        body = self.p.node(fn.children[-1])
        for stmt_id in body.children:
            self.statement(stmt_id, env, fn.id, fn.id)

    def object_literal(self, obj: AstNode, var_id: int, env: dict[str, int], scope: int) -> None:
        for prop_id in obj.children:
            prop = self.p.node(prop_id)
            idx = self.field_index(var_id, prop.value)
            self.fields[idx].property_nodes.append(prop_id)
            self.field_of_node[prop_id] = idx
            self.expr(prop.children[0], env, scope)

    def field_index(self, var_id: int, name: str) -> int:
        for i, f in enumerate(self.fields):
            if f.obj_var == var_id and f.name == name:
                return i
        self.fields.append(FieldInfo(var_id, name))
        return len(self.fields) - 1

    def expr(self, node_id: int, env: dict[str, int], scope: int) -> None:
        node = self.p.node(node_id)
        if node.kind == Kind.IDENT:
            if node.value in env:
                var = self.variables[env[node.value]]
                var.occurrences.append(node_id)
                self.var_of_node[node_id] = var.var_id
            elif node.value not in self.builtin_names:
                raise MiniLangError(f"undefined name {node.value!r} at node {node_id}")
            return
        if node.kind == Kind.MEMBER:
            recv = self.p.node(node.children[0])
            self.expr(recv.id, env, scope)
            if recv.kind == Kind.IDENT and recv.value in env:
                var = self.variables[env[recv.value]]
                if var.kind == VAR_OBJECT:
                    idx = self.field_index(var.var_id, node.value)
                    self.fields[idx].member_nodes.append(node_id)
                    self.field_of_node[node_id] = idx
            return
        if node.kind == Kind.OBJECT:
            # Unbound literal: property values still contain expressions.
            for prop_id in node.children:
                self.expr(self.p.node(prop_id).children[0], env, scope)
            return
        if node.kind == Kind.FUNCTION:
            raise MiniLangError(f"function expression outside assignment at node {node_id}")
        for child in node.children:
            self.expr(child, env, scope)


def resolve_scopes(program: Program, builtin_names: frozenset[str]) -> ScopeInfo:
    return _Resolver(program, builtin_names).run()
