"""Typed-program generator.

Programs are sampled top-down from the typing rules, so every emitted program
type-checks by construction. The generator records the ground-truth label of
every typed node while building, which the oracle must reproduce exactly.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .ast import FN_OF_RESULT, RESULT_OF_FN, Draft, Kind, Program, TypeLabel, freeze
from .builtins import BuiltinTable, default_builtins
from .printer import to_source

S = TypeLabel.STRING
N = TypeLabel.NUMBER
B = TypeLabel.BOOLEAN
V = TypeLabel.VOID
SCALARS = (S, N, B)

IDENT_POOL: tuple[str, ...] = (
    "hex", "radix", "color", "width", "height", "count", "data", "size",
    "value", "flag", "index", "name", "text", "total", "item", "key",
    "temp", "left", "right", "res", "buf", "line", "word", "code",
    "mode", "rate", "step", "base", "mask", "bits", "label", "title",
    "path", "row", "col", "depth", "scale", "score", "delta", "limit",
    "start", "pos", "len", "acc", "cur", "prev", "seed", "span",
)

FIELD_POOL: tuple[str, ...] = (
    "width", "height", "label", "id", "kind", "x", "y", "size",
    "tag", "rate", "low", "high", "sum", "raw", "on", "hint",
)

NUM_POOL: tuple[str, ...] = (
    "0", "1", "2", "3", "4", "5", "7", "8", "10", "16", "32", "42",
    "64", "100", "255", "0.5", "2.5", "3.5",
)

STR_POOL: tuple[str, ...] = (
    '"a"', '"b"', '"x"', '"id"', '"GET"', '"POST"', '"data"', '"res"',
    '"key"', '"#fff"', '"0x"', '"item"', '"%s"', '"ok"', '"none"', '"raw"',
)


@dataclass
class GenConfig:
    stmt_min: int = 5
    stmt_max: int = 10
    max_expr_depth: int = 3
    fn_body_min: int = 1
    fn_body_max: int = 3
    max_params: int = 3
    max_fields: int = 4
    ident_pool: tuple[str, ...] = IDENT_POOL
    field_pool: tuple[str, ...] = FIELD_POOL

    def validate(self) -> None:
        if self.stmt_min < 0 or self.stmt_max < self.stmt_min:
            raise ValueError(f"bad statement range {self.stmt_min}..{self.stmt_max}")
        if self.max_expr_depth < 1:
            raise ValueError("max_expr_depth must be >= 1")
        if not self.ident_pool or not self.field_pool:
            raise ValueError("identifier pools must be non-empty")


@dataclass
class GeneratedProgram:
    program: Program
    types: dict[int, TypeLabel]
    param_env: dict[int, TypeLabel]


@dataclass
class _GVar:
    name: str
    label: TypeLabel
    fields: dict[str, TypeLabel] | None = None
    param_types: tuple[TypeLabel, ...] | None = None


@dataclass
class _Scope:
    vars: list[_GVar] = field(default_factory=list)

    def names(self) -> set[str]:
        return {v.name for v in self.vars}

    def scalars(self, label: TypeLabel) -> list[_GVar]:
        return [v for v in self.vars if v.label == label and v.fields is None and v.param_types is None]

    def objects_with(self, label: TypeLabel) -> list[tuple[_GVar, str]]:
        out = []
        for v in self.vars:
            if v.fields:
                out.extend((v, f) for f, t in v.fields.items() if t == label)
        return out

    def functions_returning(self, label: TypeLabel) -> list[_GVar]:
        want = FN_OF_RESULT[label]
        return [v for v in self.vars if v.param_types is not None and v.label == want]


class _Gen:
    def __init__(self, seed: int, config: GenConfig, builtins: BuiltinTable):
        config.validate()
        self.rng = random.Random(seed)
        self.cfg = config
        self.builtins = builtins
        self.origin = 0
        self.types: dict[int, TypeLabel] = {}
        self.param_origins: list[int] = []
        self.name_counter = 0

    # --- draft helpers ------------------------------------------------------

    def draft(self, kind: Kind, value: str = "", children: list[Draft] | None = None,
              label: TypeLabel | None = None) -> Draft:
        d = Draft(kind, value, children or [])
        if label is not None:
            d.origin = self.origin
            self.types[self.origin] = label
            self.origin += 1
        return d

    def ident(self, name: str, label: TypeLabel) -> Draft:
        return self.draft(Kind.IDENT, name, label=label)

    def fresh_name(self, taken: set[str]) -> str:
        pool = [w for w in self.cfg.ident_pool if w not in taken]
        if pool:
            return self.rng.choice(pool)
        self.name_counter += 1
        return f"{self.rng.choice(self.cfg.ident_pool)}{self.name_counter}"

    # --- entry --------------------------------------------------------------

    def run(self) -> GeneratedProgram:
        scope = _Scope()
        n_stmts = self.rng.randint(self.cfg.stmt_min, self.cfg.stmt_max)
        stmts: list[Draft] = []
        for _ in range(n_stmts):
            stmts.append(self.top_statement(scope))
        root = Draft(Kind.BLOCK, "", stmts)
        program, origin_map = freeze(root)
        program.source = to_source(program)
        types = {origin_map[o]: t for o, t in self.types.items()}
        param_env = {origin_map[o]: self.types[o] for o in self.param_origins}
        return GeneratedProgram(program, types, param_env)

    # --- statements ---------------------------------------------------------

    def top_statement(self, scope: _Scope) -> Draft:
        choices: list[tuple[str, float]] = [("assign", 5.0), ("object", 1.5), ("function", 2.0)]
        if scope.functions_returning(V) or True:  # log() is always available
            choices.append(("voidcall", 1.0))
        reassignable = [v for v in scope.vars if v.fields is None and v.param_types is None]
        if reassignable:
            choices.append(("reassign", 1.0))
        kind = self.pick(choices)
        if kind == "object":
            return self.object_decl(scope)
        if kind == "function":
            return self.function_decl(scope)
        if kind == "voidcall":
            return self.void_call(scope)
        if kind == "reassign":
            var = self.rng.choice(reassignable)
            rhs = self.expr(var.label, scope, self.cfg.max_expr_depth)
            return self.draft(Kind.ASSIGN, "=", [self.ident(var.name, var.label), rhs])
        label = self.rng.choice(SCALARS)
        name = self.fresh_name(scope.names() | self.builtins.names())
        rhs = self.expr(label, scope, self.cfg.max_expr_depth)
        stmt = self.draft(Kind.ASSIGN, "=", [self.ident(name, label), rhs])
        scope.vars.append(_GVar(name, label))
        return stmt

    def object_decl(self, scope: _Scope) -> Draft:
        name = self.fresh_name(scope.names() | self.builtins.names())
        n_fields = self.rng.randint(2, self.cfg.max_fields)
        field_names = self.rng.sample(self.cfg.field_pool, n_fields)
        fields: dict[str, TypeLabel] = {}
        props: list[Draft] = []
        for fname in field_names:
            flabel = self.rng.choice(SCALARS)
            value = self.expr(flabel, scope, 1)
            props.append(self.draft(Kind.PROPERTY, fname, [value]))
            fields[fname] = flabel
        obj = self.draft(Kind.OBJECT, "", props, label=TypeLabel.UNK)
        stmt = self.draft(Kind.ASSIGN, "=", [self.ident(name, TypeLabel.UNK), obj])
        scope.vars.append(_GVar(name, TypeLabel.UNK, fields=fields))
        return stmt

    def function_decl(self, scope: _Scope) -> Draft:
        name = self.fresh_name(scope.names() | self.builtins.names())
        n_params = self.rng.randint(0, self.cfg.max_params)
        inner = _Scope()
        params: list[Draft] = []
        param_types: list[TypeLabel] = []
        taken = set(self.builtins.names())
        for _ in range(n_params):
            pname = self.fresh_name(taken | inner.names())
            plabel = self.rng.choice(SCALARS)
            d = self.draft(Kind.PARAM, pname, label=plabel)
            self.param_origins.append(d.origin)
            params.append(d)
            param_types.append(plabel)
            inner.vars.append(_GVar(pname, plabel))
        body_stmts: list[Draft] = []
        for _ in range(self.rng.randint(self.cfg.fn_body_min, self.cfg.fn_body_max)):
            body_stmts.append(self.body_statement(inner))
        if self.rng.random() < 0.75:
            ret_label = self.rng.choice(SCALARS)
            ret_expr = self.expr(ret_label, inner, 2)
            body_stmts.append(self.draft(Kind.RETURN, "", [ret_expr]))
        else:
            ret_label = V
        fn_label = FN_OF_RESULT[ret_label]
        body = self.draft(Kind.BLOCK, "", body_stmts)
        fn = self.draft(Kind.FUNCTION, "", params + [body], label=fn_label)
        stmt = self.draft(Kind.ASSIGN, "=", [self.ident(name, fn_label), fn])
        scope.vars.append(_GVar(name, fn_label, param_types=tuple(param_types)))
        return stmt

    def body_statement(self, scope: _Scope) -> Draft:
        reassignable = [v for v in scope.vars if v.param_types is None and v.fields is None]
        if reassignable and self.rng.random() < 0.2:
            var = self.rng.choice(reassignable)
            rhs = self.expr(var.label, scope, 2)
            return self.draft(Kind.ASSIGN, "=", [self.ident(var.name, var.label), rhs])
        label = self.rng.choice(SCALARS)
        name = self.fresh_name(scope.names() | self.builtins.names())
        rhs = self.expr(label, scope, 2)
        stmt = self.draft(Kind.ASSIGN, "=", [self.ident(name, label), rhs])
        scope.vars.append(_GVar(name, label))
        return stmt

    def void_call(self, scope: _Scope) -> Draft:
        fns = scope.functions_returning(V)
        if fns and self.rng.random() < 0.5:
            return self.user_call(self.rng.choice(fns), scope, 2)
        arg = self.expr(S, scope, 2)
        callee = self.ident("log", TypeLabel.FN_VOID)
        return self.draft(Kind.CALL, "", [callee, arg], label=V)

    # --- expressions ---------------------------------------------------------

    def pick(self, weighted: list[tuple[str, float]]) -> str:
        names = [n for n, _ in weighted]
        weights = [w for _, w in weighted]
        return self.rng.choices(names, weights=weights, k=1)[0]

    def expr(self, label: TypeLabel, scope: _Scope, depth: int) -> Draft:
        if depth <= 0:
            return self.leaf(label, scope)
        options: list[tuple[str, float]] = [("leaf", 2.0), ("binary", 2.5), ("ternary", 0.7)]
        if label in (S, N, B):
            options.append(("builtin", 2.0))
        if scope.objects_with(label):
            options.append(("field", 1.2))
        if scope.functions_returning(label):
            options.append(("call", 1.5))
        kind = self.pick(options)
        if kind == "leaf":
            return self.leaf(label, scope)
        if kind == "binary":
            return self.binary(label, scope, depth)
        if kind == "ternary":
            cond = self.expr(B, scope, depth - 1)
            a = self.expr(label, scope, depth - 1)
            b = self.expr(label, scope, depth - 1)
            return self.draft(Kind.TERNARY, "", [cond, a, b], label=label)
        if kind == "field":
            var, fname = self.rng.choice(scope.objects_with(label))
            recv = self.ident(var.name, TypeLabel.UNK)
            return self.draft(Kind.MEMBER, fname, [recv], label=label)
        if kind == "call":
            return self.user_call(self.rng.choice(scope.functions_returning(label)), scope, depth)
        return self.builtin_expr(label, scope, depth)

    def leaf(self, label: TypeLabel, scope: _Scope) -> Draft:
        vars_ = scope.scalars(label)
        if vars_ and self.rng.random() < 0.55:
            var = self.rng.choice(vars_)
            return self.ident(var.name, label)
        if label == N:
            return self.draft(Kind.NUMBER, self.rng.choice(NUM_POOL), label=N)
        if label == S:
            return self.draft(Kind.STRING, self.rng.choice(STR_POOL), label=S)
        return self.draft(Kind.BOOL, self.rng.choice(("true", "false")), label=B)

    def binary(self, label: TypeLabel, scope: _Scope, depth: int) -> Draft:
        if label == N:
            op = self.rng.choice(("+", "-", "*", "/", "%", "<<", ">>"))
            left, right = self.expr(N, scope, depth - 1), self.expr(N, scope, depth - 1)
        elif label == S:
            op = "+"
            left, right = self.expr(S, scope, depth - 1), self.expr(S, scope, depth - 1)
        else:
            choice = self.pick([("cmp", 3.0), ("eq", 1.5), ("logic", 1.5)])
            if choice == "cmp":
                op = self.rng.choice(("<", "<=", ">", ">="))
                left, right = self.expr(N, scope, depth - 1), self.expr(N, scope, depth - 1)
            elif choice == "eq":
                op = self.rng.choice(("==", "!="))
                t = self.rng.choice(SCALARS)
                left, right = self.expr(t, scope, depth - 1), self.expr(t, scope, depth - 1)
            else:
                op = self.rng.choice(("&&", "||"))
                left, right = self.expr(B, scope, depth - 1), self.expr(B, scope, depth - 1)
        return self.draft(Kind.BINARY, op, [left, right], label=label)

    def user_call(self, fn: _GVar, scope: _Scope, depth: int) -> Draft:
        callee = self.ident(fn.name, fn.label)
        args = [self.expr(t, scope, max(depth - 1, 0)) for t in fn.param_types or ()]
        return self.draft(Kind.CALL, "", [callee] + args, label=RESULT_OF_FN[fn.label])

    def builtin_expr(self, label: TypeLabel, scope: _Scope, depth: int) -> Draft:
        d = depth - 1
        if label == N:
            choice = self.pick([("parseInt", 2.0), ("parseFloat", 1.0), ("length", 1.5), ("indexOf", 1.0)])
            if choice == "parseInt":
                args = [self.expr(S, scope, d)]
                if self.rng.random() < 0.5:
                    args.append(self.expr(N, scope, d))
                return self.call_global("parseInt", args, N)
            if choice == "parseFloat":
                return self.call_global("parseFloat", [self.expr(S, scope, d)], N)
            if choice == "length":
                return self.draft(Kind.MEMBER, "length", [self.expr(S, scope, d)], label=N)
            return self.method_call(self.expr(S, scope, d), "indexOf", [self.expr(S, scope, d)], N)
        if label == S:
            choice = self.pick(
                [("substring", 2.0), ("charAt", 1.0), ("concat", 1.0), ("repeat", 1.0),
                 ("toUpperCase", 0.7), ("toLowerCase", 0.7), ("trim", 0.5), ("toFixed", 1.0)]
            )
            if choice == "substring":
                args = [self.expr(N, scope, d)]
                if self.rng.random() < 0.5:
                    args.append(self.expr(N, scope, d))
                return self.method_call(self.expr(S, scope, d), "substring", args, S)
            if choice == "toFixed":
                return self.method_call(self.expr(N, scope, d), "toFixed", [self.expr(N, scope, d)], S)
            if choice in ("toUpperCase", "toLowerCase", "trim"):
                return self.method_call(self.expr(S, scope, d), choice, [], S)
            if choice == "charAt":
                return self.method_call(self.expr(S, scope, d), "charAt", [self.expr(N, scope, d)], S)
            if choice == "repeat":
                return self.method_call(self.expr(S, scope, d), "repeat", [self.expr(N, scope, d)], S)
            return self.method_call(self.expr(S, scope, d), "concat", [self.expr(S, scope, d)], S)
        choice = self.pick([("startsWith", 1.0), ("endsWith", 1.0), ("isNaN", 1.0)])
        if choice == "isNaN":
            return self.call_global("isNaN", [self.expr(N, scope, d)], B)
        return self.method_call(self.expr(S, scope, d), choice, [self.expr(S, scope, d)], B)

    def call_global(self, name: str, args: list[Draft], result: TypeLabel) -> Draft:
        callee = self.ident(name, FN_OF_RESULT[result])
        return self.draft(Kind.CALL, "", [callee] + args, label=result)

    def method_call(self, recv: Draft, name: str, args: list[Draft], result: TypeLabel) -> Draft:
        member = self.draft(Kind.MEMBER, name, [recv], label=FN_OF_RESULT[result])
        return self.draft(Kind.CALL, "", [member] + args, label=result)


def generate_program(
    seed: int, config: GenConfig | None = None, builtins: BuiltinTable | None = None
) -> GeneratedProgram:
    """Generate a well-typed program with its full ground-truth map."""
    return _Gen(seed, config or GenConfig(), builtins or default_builtins()).run()
