"""Fixed builtin signatures: global functions, methods, properties, operators."""

from __future__ import annotations

from dataclasses import dataclass, field

from .ast import TypeLabel

S = TypeLabel.STRING
N = TypeLabel.NUMBER
B = TypeLabel.BOOLEAN
V = TypeLabel.VOID


@dataclass(frozen=True)
class Signature:
    params: tuple[TypeLabel, ...]
    ret: TypeLabel
    min_args: int = -1  # -1 means all parameters are required

    def required(self) -> int:
        return len(self.params) if self.min_args < 0 else self.min_args


@dataclass(frozen=True)
class BuiltinTable:
    """Deterministic typing tables for everything the generator may emit."""

    globals: dict[str, Signature] = field(default_factory=dict)
    methods: dict[tuple[TypeLabel, str], Signature] = field(default_factory=dict)
    properties: dict[tuple[TypeLabel, str], TypeLabel] = field(default_factory=dict)

    def names(self) -> frozenset[str]:
        method_names = {name for _, name in self.methods}
        prop_names = {name for _, name in self.properties}
        return frozenset(self.globals) | method_names | prop_names

    def binary_result(self, op: str, left: TypeLabel, right: TypeLabel) -> TypeLabel | None:
        """Operator typing: arithmetic/shift on numbers, + also on strings,
        comparisons on numbers, equality on matching scalars, logic on booleans."""
        if op == "+":
            if left == N and right == N:
                return N
            if left == S and right == S:
                return S
            return None
        if op in ("-", "*", "/", "%", "<<", ">>"):
            return N if left == N and right == N else None
        if op in ("<", "<=", ">", ">="):
            return B if left == N and right == N else None
        if op in ("==", "!="):
            return B if left == right and left in (S, N, B) else None
        if op in ("&&", "||"):
            return B if left == B and right == B else None
        return None


def default_builtins() -> BuiltinTable:
    return BuiltinTable(
        globals={
            "parseInt": Signature((S, N), N, min_args=1),
            "parseFloat": Signature((S,), N),
            "isNaN": Signature((N,), B),
            "log": Signature((S,), V),
        },
        methods={
            (S, "substring"): Signature((N, N), S, min_args=1),
            (S, "charAt"): Signature((N,), S),
            (S, "concat"): Signature((S,), S),
            (S, "repeat"): Signature((N,), S),
            (S, "toUpperCase"): Signature((), S),
            (S, "toLowerCase"): Signature((), S),
            (S, "trim"): Signature((), S),
            (S, "indexOf"): Signature((S,), N),
            (S, "startsWith"): Signature((S,), B),
            (S, "endsWith"): Signature((S,), B),
            (N, "toFixed"): Signature((N,), S),
            (N, "toString"): Signature((), S),
            (B, "toString"): Signature((), S),
        },
        properties={
            (S, "length"): N,
        },
    )
