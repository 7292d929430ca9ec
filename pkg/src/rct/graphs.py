"""Program graphs: AST edges, last-usage edges, returns-to edges; vocabulary.

Every edge is materialized in both directions with paired edge-type variants
so that refinement can keep or drop each direction independently.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .minilang import Program, resolve_scopes
from .minilang.ast import KIND_INDEX, KIND_ORDER, TypeLabel


class EdgeType(IntEnum):
    AST = 0
    AST_REV = 1
    LAST_USE = 2
    LAST_USE_REV = 3
    RETURNS_TO = 4
    RETURNS_TO_REV = 5


EDGE_TYPE_NAMES: tuple[str, ...] = (
    "ast",
    "ast_rev",
    "last_usage",
    "last_usage_rev",
    "returns_to",
    "returns_to_rev",
)
EDGE_TYPE_INDEX: dict[str, int] = {n: i for i, n in enumerate(EDGE_TYPE_NAMES)}

NUM_KINDS = len(KIND_ORDER)
NUM_EDGE_TYPES = len(EDGE_TYPE_NAMES)


@dataclass
class Graph:
    """Attributed directed graph over the AST nodes of one program.

    Node attributes are the AST kind (as an index into the fixed kind list)
    and the node's value word (raw string; the model resolves it against a
    vocabulary, falling back to the unknown index).
    """

    num_nodes: int
    kinds: np.ndarray  # (N,) int16, index into KIND_ORDER
    values: tuple[str, ...]  # (N,) raw value words, "" for none
    src: np.ndarray  # (E,) int32 node ids
    dst: np.ndarray  # (E,) int32 node ids
    etype: np.ndarray  # (E,) int16 EdgeType values

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def kind_name(self, node_id: int) -> str:
        return KIND_ORDER[self.kinds[node_id]].value

    def dump(self) -> str:
        """Line-delimited debug form: one `src dst edgetype` line per edge."""
        lines = [
            f"{s} {d} {EDGE_TYPE_NAMES[t]}"
            for s, d, t in zip(self.src.tolist(), self.dst.tolist(), self.etype.tolist())
        ]
        return "\n".join(lines) + ("\n" if lines else "")


def build_graph(program: Program, builtin_names: frozenset[str]) -> Graph:
    """One graph node per AST node; ast, last-usage and returns-to edges,
    each in both directions."""
    n = len(program.nodes)
    kinds = np.zeros(n, dtype=np.int16)
    values: list[str] = []
    for node in program.nodes:
        kinds[node.id] = KIND_INDEX[node.kind]
        values.append(node.value)

    fwd: list[tuple[int, int, int]] = []
    for node in program.nodes:
        for child in node.children:
            fwd.append((node.id, child, EdgeType.AST))

    info = resolve_scopes(program, builtin_names)
    for var in info.variables:
        occ = sorted(var.occurrences)
        for a, b in zip(occ, occ[1:]):
            fwd.append((a, b, EdgeType.LAST_USE))
    for fn_id, returns in sorted(info.returns_of.items()):
        for ret_id in returns:
            fwd.append((ret_id, fn_id, EdgeType.RETURNS_TO))

    src: list[int] = []
    dst: list[int] = []
    etype: list[int] = []
    for s, d, t in fwd:
        src.append(s)
        dst.append(d)
        etype.append(t)
    for s, d, t in fwd:
        src.append(d)
        dst.append(s)
        etype.append(t + 1)  # paired reverse variant

    return Graph(
        num_nodes=n,
        kinds=kinds,
        values=tuple(values),
        src=np.asarray(src, dtype=np.int32),
        dst=np.asarray(dst, dtype=np.int32),
        etype=np.asarray(etype, dtype=np.int16),
    )


UNK_WORD = "<unk>"
EMPTY_WORD = "<empty>"
ANNOTATION_WORDS: tuple[str, ...] = tuple(f"<type:{t.value}>" for t in TypeLabel)


def annotation_word(label: TypeLabel) -> str:
    return f"<type:{label.value}>"


class Vocabulary:
    """Word-to-index map with reserved unknown/empty/annotation entries.

    Built from the training split only; lookups of unseen words return the
    unknown index.
    """

    def __init__(self, words: list[str]):
        self.reserved: tuple[str, ...] = (UNK_WORD, EMPTY_WORD) + ANNOTATION_WORDS
        self.words = list(self.reserved) + words
        self.index_of = {w: i for i, w in enumerate(self.words)}
        if len(self.index_of) != len(self.words):
            raise ValueError("duplicate words in vocabulary")

    def index(self, word: str) -> int:
        if word == "":
            return 1
        return self.index_of.get(word, 0)

    def __len__(self) -> int:
        return len(self.words)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.words == other.words

    def encode_values(self, values: tuple[str, ...]) -> np.ndarray:
        return np.asarray([self.index(v) for v in values], dtype=np.int32)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# rct-vocab v1\n")
            for word in self.words[len(self.reserved):]:
                fh.write(word + "\n")

    @classmethod
    def load(cls, path: str) -> Vocabulary:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline()
            if not header.startswith("# rct-vocab"):
                raise ValueError(f"{path}: not a vocabulary file")
            words = [line.rstrip("\n") for line in fh]
        return cls(words)


def build_vocabulary(graphs: list[Graph], min_count: int = 2) -> Vocabulary:
    """Words with frequency >= min_count, ordered by frequency desc then lexicographic."""
    if not graphs:
        raise ValueError("cannot build a vocabulary from an empty training set")
    counts: Counter[str] = Counter()
    for g in graphs:
        counts.update(w for w in g.values if w != "")
    kept = [w for w, c in counts.items() if c >= min_count]
    kept.sort(key=lambda w: (-counts[w], w))
    return Vocabulary(kept)
