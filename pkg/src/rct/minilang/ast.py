"""AST node types, the node arena, and the draft tree used to build programs.

Node ids are assigned in pre-order and always equal the node's index in the
arena, both for parsed programs and for programs frozen from drafts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Kind(str, Enum):
    """Syntactic category of an AST node."""

    FUNCTION = "Function"
    PARAM = "Param"
    ASSIGN = "Assign"
    BINARY = "BinaryExpr"
    TERNARY = "Ternary"
    CALL = "Call"
    MEMBER = "Member"
    IDENT = "Identifier"
    NUMBER = "NumberLit"
    STRING = "StringLit"
    BOOL = "BoolLit"
    OBJECT = "ObjectLit"
    PROPERTY = "Property"
    RETURN = "Return"
    BLOCK = "Block"


KIND_ORDER: tuple[Kind, ...] = tuple(Kind)
KIND_INDEX: dict[Kind, int] = {k: i for i, k in enumerate(KIND_ORDER)}


class TypeLabel(str, Enum):
    """The closed 9-label set predicted by the models."""

    STRING = "string"
    NUMBER = "number"
    BOOLEAN = "boolean"
    VOID = "void"
    FN_STRING = "()=>string"
    FN_NUMBER = "()=>number"
    FN_BOOLEAN = "()=>boolean"
    FN_VOID = "()=>void"
    UNK = "unk"

    @classmethod
    def from_str(cls, text: str) -> TypeLabel:
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown type label {text!r}") from None


LABEL_ORDER: tuple[TypeLabel, ...] = tuple(TypeLabel)
LABEL_INDEX: dict[TypeLabel, int] = {t: i for i, t in enumerate(LABEL_ORDER)}

FN_OF_RESULT: dict[TypeLabel, TypeLabel] = {
    TypeLabel.STRING: TypeLabel.FN_STRING,
    TypeLabel.NUMBER: TypeLabel.FN_NUMBER,
    TypeLabel.BOOLEAN: TypeLabel.FN_BOOLEAN,
    TypeLabel.VOID: TypeLabel.FN_VOID,
}
RESULT_OF_FN: dict[TypeLabel, TypeLabel] = {v: k for k, v in FN_OF_RESULT.items()}


@dataclass(frozen=True)
class AstNode:
    """One arena node; ``children`` holds ids of the child nodes in source order."""

    id: int
    kind: Kind
    value: str
    children: tuple[int, ...]
    span: tuple[int, int] = (0, 0)


@dataclass
class Program:
    """Parsed program: arena of nodes plus the id of the root Block."""

    root: int
    nodes: list[AstNode]
    source: str = ""

    def node(self, node_id: int) -> AstNode:
        return self.nodes[node_id]

    def children(self, node_id: int) -> tuple[AstNode, ...]:
        return tuple(self.nodes[c] for c in self.nodes[node_id].children)

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass
class Draft:
    """Mutable tree used by the parser, generator and program modifications.

    ``origin`` carries the node id of the program a draft was thawed from so
    that positions can be remapped after a modification.
    """

    kind: Kind
    value: str = ""
    children: list[Draft] = field(default_factory=list)
    span: tuple[int, int] = (0, 0)
    origin: int | None = None

    def clone(self) -> Draft:
        return Draft(
            self.kind,
            self.value,
            [c.clone() for c in self.children],
            self.span,
            self.origin,
        )


def thaw(program: Program) -> Draft:
    """Turn a program back into a draft tree, tagging each node with its origin id."""

    def build(node_id: int) -> Draft:
        node = program.nodes[node_id]
        return Draft(
            node.kind,
            node.value,
            [build(c) for c in node.children],
            node.span,
            origin=node_id,
        )

    return build(program.root)


def freeze(draft: Draft, source: str = "") -> tuple[Program, dict[int, int]]:
    """Assign pre-order ids to a draft tree and build the arena.

    Returns the program and the origin map (origin id -> new id) for drafts
    that carry origin tags.
    """
    nodes: list[AstNode] = []
    origin_map: dict[int, int] = {}

    def visit(d: Draft) -> int:
        node_id = len(nodes)
        nodes.append(AstNode(node_id, d.kind, d.value, (), d.span))  # placeholder
        if d.origin is not None:
            origin_map[d.origin] = node_id
        child_ids = tuple(visit(c) for c in d.children)
        nodes[node_id] = AstNode(node_id, d.kind, d.value, child_ids, d.span)
        return node_id

    root = visit(draft)
    return Program(root=root, nodes=nodes, source=source), origin_map


def iter_preorder(program: Program) -> list[AstNode]:
    """Arena order is pre-order by construction."""
    return program.nodes


def isomorphic(a: Program, b: Program) -> bool:
    """Tree isomorphism: same kinds, values and child structure, ids aside."""
    if len(a.nodes) != len(b.nodes):
        return False
    # Pre-order numbering makes isomorphism an index-aligned comparison.
    for na, nb in zip(a.nodes, b.nodes):
        if na.kind != nb.kind or na.value != nb.value:
            return False
        if len(na.children) != len(nb.children):
            return False
    return True
