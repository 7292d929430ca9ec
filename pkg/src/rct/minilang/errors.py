"""Errors raised by the mini-language front end and type oracle."""

from __future__ import annotations


class MiniLangError(Exception):
    """Base class for all mini-language errors."""


class MiniLangSyntaxError(MiniLangError):
    """Syntax error with source position and the token set that was expected."""

    def __init__(self, message: str, line: int, col: int, expected: tuple[str, ...] = ()):
        self.line = line
        self.col = col
        self.expected = expected
        detail = f"{message} at {line}:{col}"
        if expected:
            detail += " (expected " + ", ".join(expected) + ")"
        super().__init__(detail)


class TypeConflictError(MiniLangError):
    """Type oracle found conflicting or unsupported typing at a node."""

    def __init__(self, node_id: int, message: str):
        self.node_id = node_id
        super().__init__(f"node {node_id}: {message}")
