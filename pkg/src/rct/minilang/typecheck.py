"""Ground-truth type oracle.

Assigns a label to every expression node, constant, variable occurrence,
parameter and function node. Parameter types are inputs (recorded by the
generator); everything else is derived deterministically. Any construct the
fragment cannot type raises TypeConflictError naming the offending node.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ast import FN_OF_RESULT, RESULT_OF_FN, AstNode, Kind, Program, TypeLabel
from .builtins import BuiltinTable
from .errors import TypeConflictError

_SCALARS = (TypeLabel.STRING, TypeLabel.NUMBER, TypeLabel.BOOLEAN)


@dataclass
class _Binding:
    label: TypeLabel
    fields: dict[str, TypeLabel] | None = None  # object variables
    param_types: tuple[TypeLabel, ...] | None = None  # function variables


class _Checker:
    def __init__(self, program: Program, builtins: BuiltinTable, param_env: dict[int, TypeLabel]):
        self.p = program
        self.builtins = builtins
        self.param_env = param_env
        self.types: dict[int, TypeLabel] = {}

    def fail(self, node_id: int, message: str) -> TypeConflictError:
        return TypeConflictError(node_id, message)

    def run(self) -> dict[int, TypeLabel]:
        env: dict[str, _Binding] = {}
        for stmt_id in self.p.node(self.p.root).children:
            self.statement(stmt_id, env, in_function=False)
        return self.types

    def statement(self, stmt_id: int, env: dict[str, _Binding], in_function: bool) -> None:
        node = self.p.node(stmt_id)
        if node.kind == Kind.ASSIGN:
            lhs, rhs = self.p.node(node.children[0]), self.p.node(node.children[1])
            if rhs.kind == Kind.FUNCTION:
                if in_function:
                    raise self.fail(rhs.id, "nested function definitions are not supported")
                binding = self.function(rhs)
            elif rhs.kind == Kind.OBJECT:
                fields = self.object_fields(rhs, env)
                binding = _Binding(TypeLabel.UNK, fields=fields)
            else:
                binding = _Binding(self.expr(rhs.id, env))
            prev = env.get(lhs.value)
            if prev is not None:
                if prev.fields is not None or binding.fields is not None:
                    raise self.fail(lhs.id, f"object variable {lhs.value!r} cannot be reassigned")
                if prev.label != binding.label:
                    raise self.fail(
                        lhs.id,
                        f"{lhs.value!r} reassigned from {prev.label.value} to {binding.label.value}",
                    )
            env[lhs.value] = binding
            self.types[lhs.id] = binding.label
            return
        if node.kind == Kind.RETURN:
            if not in_function:
                raise self.fail(stmt_id, "return outside function")
            self.expr(node.children[0], env)
            return
        self.expr(stmt_id, env)

    def function(self, fn: AstNode) -> _Binding:
        env: dict[str, _Binding] = {}
        param_types: list[TypeLabel] = []
        for param_id in fn.children[:-1]:
            param = self.p.node(param_id)
            if param_id not in self.param_env:
                raise self.fail(param_id, f"no declared type for parameter {param.value!r}")
            label = self.param_env[param_id]
            env[param.value] = _Binding(label)
            self.types[param_id] = label
            param_types.append(label)
        body = self.p.node(fn.children[-1])
        ret: TypeLabel | None = None
        ret_node = fn.id
        for stmt_id in body.children:
            self.statement(stmt_id, env, in_function=True)
            stmt = self.p.node(stmt_id)
            if stmt.kind == Kind.RETURN:
                t = self.types[stmt.children[0]]
                if ret is not None and t != ret:
                    raise self.fail(
                        stmt_id, f"return type {t.value} conflicts with earlier {ret.value}"
                    )
                ret = t
                ret_node = stmt_id
        if ret is None:
            ret = TypeLabel.VOID
        if ret not in FN_OF_RESULT:
            raise self.fail(ret_node, f"function cannot return {ret.value}")
        label = FN_OF_RESULT[ret]
        self.types[fn.id] = label
        return _Binding(label, param_types=tuple(param_types))

    def object_fields(self, obj: AstNode, env: dict[str, _Binding]) -> dict[str, TypeLabel]:
        fields: dict[str, TypeLabel] = {}
        for prop_id in obj.children:
            prop = self.p.node(prop_id)
            if prop.value in fields:
                raise self.fail(prop_id, f"duplicate field {prop.value!r}")
            fields[prop.value] = self.expr(prop.children[0], env)
        self.types[obj.id] = TypeLabel.UNK
        return fields

    def expr(self, node_id: int, env: dict[str, _Binding]) -> TypeLabel:
        node = self.p.node(node_id)
        label = self._expr(node, env)
        self.types[node_id] = label
        return label

    def _expr(self, node: AstNode, env: dict[str, _Binding]) -> TypeLabel:
        kind = node.kind
        if kind == Kind.NUMBER:
            return TypeLabel.NUMBER
        if kind == Kind.STRING:
            return TypeLabel.STRING
        if kind == Kind.BOOL:
            return TypeLabel.BOOLEAN
        if kind == Kind.IDENT:
            binding = env.get(node.value)
            if binding is not None:
                return binding.label
            sig = self.builtins.globals.get(node.value)
            if sig is not None:
                return FN_OF_RESULT[sig.ret]
            raise self.fail(node.id, f"undefined name {node.value!r}")
        if kind == Kind.BINARY:
            left = self.expr(node.children[0], env)
            right = self.expr(node.children[1], env)
            result = self.builtins.binary_result(node.value, left, right)
            if result is None:
                raise self.fail(
                    node.id, f"operator {node.value!r} undefined on {left.value}, {right.value}"
                )
            return result
        if kind == Kind.TERNARY:
            cond = self.expr(node.children[0], env)
            if cond != TypeLabel.BOOLEAN:
                raise self.fail(node.children[0], f"condition has type {cond.value}")
            then = self.expr(node.children[1], env)
            other = self.expr(node.children[2], env)
            if then != other:
                raise self.fail(node.id, f"branch types differ: {then.value} vs {other.value}")
            return then
        if kind == Kind.CALL:
            return self.call(node, env)
        if kind == Kind.MEMBER:
            return self.member(node, env)
        if kind == Kind.OBJECT:
            self.object_fields(node, env)
            return TypeLabel.UNK
        if kind == Kind.FUNCTION:
            raise self.fail(node.id, "function expression outside assignment")
        raise self.fail(node.id, f"cannot type node kind {kind.value}")

    def call(self, node: AstNode, env: dict[str, _Binding]) -> TypeLabel:
        callee = self.p.node(node.children[0])
        arg_ids = node.children[1:]
        if callee.kind == Kind.IDENT:
            binding = env.get(callee.value)
            if binding is not None:
                if binding.param_types is None:
                    raise self.fail(callee.id, f"{callee.value!r} is not a function")
                self.check_args(node, arg_ids, binding.param_types, len(binding.param_types), env)
                self.types[callee.id] = binding.label
                return RESULT_OF_FN[binding.label]
            sig = self.builtins.globals.get(callee.value)
            if sig is None:
                raise self.fail(callee.id, f"undefined function {callee.value!r}")
            self.check_args(node, arg_ids, sig.params, sig.required(), env)
            self.types[callee.id] = FN_OF_RESULT[sig.ret]
            return sig.ret
        if callee.kind == Kind.MEMBER:
            recv_type = self.expr(callee.children[0], env)
            if recv_type == TypeLabel.UNK:
                raise self.fail(callee.id, "object fields are not callable")
            sig = self.builtins.methods.get((recv_type, callee.value))
            if sig is None:
                raise self.fail(callee.id, f"no method {callee.value!r} on {recv_type.value}")
            self.check_args(node, arg_ids, sig.params, sig.required(), env)
            self.types[callee.id] = FN_OF_RESULT[sig.ret]
            return sig.ret
        raise self.fail(callee.id, "unsupported callee expression")

    def check_args(
        self,
        call: AstNode,
        arg_ids: tuple[int, ...],
        params: tuple[TypeLabel, ...],
        required: int,
        env: dict[str, _Binding],
    ) -> None:
        if not (required <= len(arg_ids) <= len(params)):
            raise self.fail(call.id, f"expected {required}..{len(params)} args, got {len(arg_ids)}")
        for arg_id, expected in zip(arg_ids, params):
            actual = self.expr(arg_id, env)
            if actual != expected:
                raise self.fail(arg_id, f"argument has type {actual.value}, expected {expected.value}")

    def member(self, node: AstNode, env: dict[str, _Binding]) -> TypeLabel:
        recv = self.p.node(node.children[0])
        recv_type = self.expr(recv.id, env)
        if recv_type == TypeLabel.UNK:
            if recv.kind == Kind.IDENT:
                binding = env.get(recv.value)
                if binding is not None and binding.fields is not None:
                    if node.value in binding.fields:
                        return binding.fields[node.value]
                    raise self.fail(node.id, f"object has no field {node.value!r}")
            raise self.fail(node.id, "member access on untracked object value")
        if recv_type in _SCALARS:
            prop = self.builtins.properties.get((recv_type, node.value))
            if prop is not None:
                return prop
        raise self.fail(node.id, f"no property {node.value!r} on {recv_type.value}")


def infer_types(
    program: Program, builtins: BuiltinTable, param_env: dict[int, TypeLabel]
) -> dict[int, TypeLabel]:
    """Type every expression, constant, variable occurrence and function node."""
    return _Checker(program, builtins, param_env).run()
