"""Mini dynamically-typed language: parser, printer, type oracle, generator."""

from .ast import AstNode, Draft, Kind, Program, TypeLabel, freeze, thaw
from .builtins import BuiltinTable, Signature, default_builtins
from .errors import MiniLangError, MiniLangSyntaxError, TypeConflictError
from .generator import GenConfig, GeneratedProgram, generate_program
from .parser import parse, parse_expression
from .printer import to_source
from .scopes import FieldInfo, ScopeInfo, Variable, resolve_scopes
from .typecheck import infer_types

__all__ = [
    "AstNode",
    "BuiltinTable",
    "Draft",
    "FieldInfo",
    "GenConfig",
    "GeneratedProgram",
    "Kind",
    "MiniLangError",
    "MiniLangSyntaxError",
    "Program",
    "ScopeInfo",
    "Signature",
    "TypeConflictError",
    "TypeLabel",
    "Variable",
    "default_builtins",
    "freeze",
    "generate_program",
    "infer_types",
    "parse",
    "parse_expression",
    "resolve_scopes",
    "thaw",
    "to_source",
]
