"""Label-preserving program modifications, counterexample search, adversarial
training and robustness evaluation.

Modifications are sampled step-by-step against the evolving program, so each
stored modification refers to node ids of the program state right before it;
replay re-applies them in order. Attempt i of an attack draws from a
counter-based stream keyed by (seed, program, position, attempt), so a larger
budget explores a superset of a smaller one.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dataset import Dataset, ProgramEntry, Sample
from .minilang import BuiltinTable, Program, parse_expression, resolve_scopes
from .minilang.ast import Draft, Kind, TypeLabel, freeze, thaw
from .minilang.scopes import ScopeInfo, Variable
from .model import (
    ABSTAIN,
    ABSTAIN_INDEX,
    BatchBuilder,
    GnnModel,
    GraphBatch,
    encode_graph,
    make_batch,
)
from .rng import stream, stream_hash

# Renaming pool: 64 words disjoint from the builtin names; mixing words the
# generator also uses (in-vocabulary) with words it never emits exercises both
# seen and unknown-word embeddings.
ATTACK_NAME_POOL: tuple[str, ...] = (
    "alpha", "beta", "gamma", "delta2", "omega", "probe", "token", "chunk",
    "slice", "entry", "node2", "edge2", "cache", "queue", "stack", "batch",
    "field2", "group", "level", "stage", "phase", "round2", "block2", "frame",
    "shape", "grid", "cell", "pixel", "glyph", "badge", "crumb", "panel",
    "widget", "handle", "cursor", "anchor", "margin", "offset", "stride",
    "window", "buffer", "stream2", "packet", "socket", "header", "footer",
    "digest", "nonce", "salt", "pepper", "magic", "lucky", "omega2", "vector",
    "matrix", "tensor2", "kernel", "lambda2", "mu", "sigma", "theta", "zeta",
    "color", "radix",
)

NUMBER_SUBST_POOL: tuple[str, ...] = (
    "0", "1", "2", "6", "9", "11", "13", "17", "21", "33", "48", "77",
    "99", "128", "512", "1024", "0.1", "1.5", "9.75",
)
STRING_SUBST_POOL: tuple[str, ...] = (
    '"q"', '"zz"', '"foo"', '"bar"', '"tmp"', '"PUT"', '"npc"', '"0b"',
    '"##"', '"yes"', '"no"', '"blob"', '"wip"', '"etc"',
)

_NUMBER_RE = re.compile(r"^[0-9]+(\.[0-9]+)?$")
_STRING_RE = re.compile(r'^"[^"\n]*"$')

MOD_WORD_SUBSTITUTION = "word_substitution"
MOD_WORD_RENAMING = "word_renaming"
MOD_TERNARY_WRAP = "ternary_wrap"


class StaleModificationError(Exception):
    """The modification no longer applies to the current program."""


@dataclass(frozen=True)
class WordSubstitution:
    position: int
    new_word: str


@dataclass(frozen=True)
class WordRenaming:
    old: str
    new: str
    kind: str  # "variable" | "parameter" | "field"
    anchor: int  # a node id carrying the renamed word in the pre-modification program


@dataclass(frozen=True)
class TernaryDeadCodeWrap:
    position: int
    condition: str  # source text of a boolean expression over constants


Modification = WordSubstitution | WordRenaming | TernaryDeadCodeWrap


def modification_to_dict(mod: Modification) -> dict:
    if isinstance(mod, WordSubstitution):
        return {"op": MOD_WORD_SUBSTITUTION, "position": mod.position, "new_word": mod.new_word}
    if isinstance(mod, WordRenaming):
        return {
            "op": MOD_WORD_RENAMING,
            "old": mod.old,
            "new": mod.new,
            "kind": mod.kind,
            "anchor": mod.anchor,
        }
    return {"op": MOD_TERNARY_WRAP, "position": mod.position, "condition": mod.condition}


def modification_from_dict(data: dict) -> Modification:
    op = data.get("op")
    if op == MOD_WORD_SUBSTITUTION:
        return WordSubstitution(int(data["position"]), data["new_word"])
    if op == MOD_WORD_RENAMING:
        return WordRenaming(data["old"], data["new"], data["kind"], int(data["anchor"]))
    if op == MOD_TERNARY_WRAP:
        return TernaryDeadCodeWrap(int(data["position"]), data["condition"])
    raise ValueError(f"unknown modification record {data!r}")


@dataclass
class DeltaSeq:
    """Ordered modification sequence plus the original-to-final position map."""

    mods: list[Modification]
    remap: dict[int, int]


@dataclass(frozen=True)
class AttackBudget:
    sequences: int
    max_len: int = 8

    def __post_init__(self) -> None:
        if self.sequences <= 0 or self.max_len <= 0:
            raise ValueError("attack budget must be positive")


# --- program state carried through modifications --------------------------------


@dataclass
class ProgramState:
    """A program with everything a modification or evaluation needs."""

    program: Program
    param_env: dict[int, TypeLabel]
    annotations: dict[int, TypeLabel]
    labels: dict[int, TypeLabel]  # oracle labels, maintained incrementally

    @classmethod
    def from_entry(cls, entry: ProgramEntry) -> ProgramState:
        return cls(entry.program, dict(entry.param_env), dict(entry.annotations), dict(entry.oracle))


def _condition_draft(rng: np.random.Generator, depth: int = 3) -> Draft:
    """Random boolean binary expression over number constants, depth <= 3."""

    def number(d: int) -> Draft:
        if d <= 1 or rng.random() < 0.4:
            return Draft(Kind.NUMBER, str(NUMBER_SUBST_POOL[rng.integers(len(NUMBER_SUBST_POOL))]))
        op = ("+", "-", "*")[rng.integers(3)]
        return Draft(Kind.BINARY, op, [number(d - 1), number(d - 1)])

    def boolean(d: int) -> Draft:
        if d <= 1 or rng.random() < 0.6:
            op = ("<", "<=", ">", ">=", "==", "!=")[rng.integers(6)]
            return Draft(Kind.BINARY, op, [number(d - 1), number(d - 1)])
        op = ("&&", "||")[rng.integers(2)]
        return Draft(Kind.BINARY, op, [boolean(d - 1), boolean(d - 1)])

    return boolean(depth)


def _condition_source(draft: Draft) -> str:
    # Fully parenthesized rendering keeps the stored text re-parseable in
    # isolation regardless of operator precedence.
    if draft.kind == Kind.NUMBER:
        return draft.value
    left, right = draft.children
    return f"({_condition_source(left)} {draft.value} {_condition_source(right)})"


def _condition_labels(program: Program, node_id: int, labels: dict[int, TypeLabel]) -> None:
    """Label a constants-only condition subtree in place."""
    node = program.nodes[node_id]
    if node.kind == Kind.NUMBER:
        labels[node_id] = TypeLabel.NUMBER
        return
    for child in node.children:
        _condition_labels(program, child, labels)
    if node.value in ("+", "-", "*"):
        labels[node_id] = TypeLabel.NUMBER
    else:
        labels[node_id] = TypeLabel.BOOLEAN


# --- applying modifications -------------------------------------------------------


def _draft_index(root: Draft) -> tuple[dict[int, Draft], dict[int, tuple[Draft, int]]]:
    by_origin: dict[int, Draft] = {}
    parent_of: dict[int, tuple[Draft, int]] = {}

    def walk(d: Draft) -> None:
        if d.origin is not None:
            by_origin[d.origin] = d
        for i, c in enumerate(d.children):
            if c.origin is not None:
                parent_of[c.origin] = (d, i)
            walk(c)

    walk(root)
    return by_origin, parent_of


def _strip_origins(d: Draft) -> Draft:
    d.origin = None
    for c in d.children:
        _strip_origins(c)
    return d


def _literal_matches(kind: Kind, word: str) -> bool:
    if kind == Kind.NUMBER:
        return bool(_NUMBER_RE.match(word))
    if kind == Kind.STRING:
        return bool(_STRING_RE.match(word))
    if kind == Kind.BOOL:
        return word in ("true", "false")
    return False


def apply_one(state: ProgramState, mod: Modification, builtins: BuiltinTable) -> tuple[ProgramState, dict[int, int]]:
    """Apply a single modification; returns the new state and the id remap."""
    program = state.program
    root = thaw(program)
    by_origin, parent_of = _draft_index(root)

    cloned_pairs: list[tuple[int, Draft]] = []  # (original subtree root id, clone draft)
    condition_roots: list[Draft] = []

    if isinstance(mod, WordSubstitution):
        target = by_origin.get(mod.position)
        if target is None or not _literal_matches(target.kind, mod.new_word):
            raise StaleModificationError(f"substitution target {mod.position} invalid")
        target.value = mod.new_word
    elif isinstance(mod, WordRenaming):
        _apply_rename(state, mod, by_origin, builtins)
    else:
        target = by_origin.get(mod.position)
        if target is None or mod.position not in parent_of:
            raise StaleModificationError(f"wrap target {mod.position} invalid")
        label = state.labels.get(mod.position)
        if label not in (TypeLabel.STRING, TypeLabel.NUMBER, TypeLabel.BOOLEAN):
            raise StaleModificationError(f"wrap target {mod.position} is not a scalar expression")
        parent, idx = parent_of[mod.position]
        try:
            cond = parse_expression(mod.condition)
        except Exception as exc:
            raise StaleModificationError(f"bad condition {mod.condition!r}: {exc}") from exc
        duplicate = _strip_origins(target.clone())
        ternary = Draft(Kind.TERNARY, "", [cond, target, duplicate])
        parent.children[idx] = ternary
        cloned_pairs.append((mod.position, duplicate))
        condition_roots.append(cond)

    new_program, origin_map = freeze(root)
    new_state = ProgramState(
        program=new_program,
        param_env={origin_map[k]: v for k, v in state.param_env.items()},
        annotations={origin_map[k]: v for k, v in state.annotations.items()},
        labels={origin_map[k]: v for k, v in state.labels.items()},
    )

    # Label the nodes a wrap introduced: the ternary, the condition subtree,
    # and the duplicated branch (isomorphic to the original branch).
    for orig_root_id, duplicate in cloned_pairs:
        new_root_id = origin_map[orig_root_id]
        ternary_id = _parent_id(new_program, new_root_id)
        new_state.labels[ternary_id] = new_state.labels[new_root_id]
        cond_id = new_program.nodes[ternary_id].children[0]
        _condition_labels(new_program, cond_id, new_state.labels)
        dup_id = new_program.nodes[ternary_id].children[2]
        _transfer_subtree_labels(new_program, new_root_id, dup_id, new_state.labels)
    return new_state, origin_map


def _parent_id(program: Program, node_id: int) -> int:
    for node in program.nodes:
        if node_id in node.children:
            return node.id
    raise ValueError(f"node {node_id} has no parent")


def _transfer_subtree_labels(program: Program, src_root: int, dst_root: int,
                             labels: dict[int, TypeLabel]) -> None:
    src_nodes: list[int] = []
    dst_nodes: list[int] = []

    def collect(node_id: int, out: list[int]) -> None:
        out.append(node_id)
        for c in program.nodes[node_id].children:
            collect(c, out)

    collect(src_root, src_nodes)
    collect(dst_root, dst_nodes)
    for s, d in zip(src_nodes, dst_nodes):
        if s in labels:
            labels[d] = labels[s]


def _apply_rename(state: ProgramState, mod: WordRenaming, by_origin: dict[int, Draft],
                  builtins: BuiltinTable) -> None:
    info = resolve_scopes(state.program, builtins.names())
    if mod.kind == "field":
        field_idx = info.field_of_node.get(mod.anchor)
        if field_idx is None or info.fields[field_idx].name != mod.old:
            raise StaleModificationError(f"field anchor {mod.anchor} invalid")
        fld = info.fields[field_idx]
        siblings = {f.name for f in info.fields if f.obj_var == fld.obj_var and f.name != fld.name}
        if mod.new in siblings:
            raise StaleModificationError(f"field name {mod.new!r} collides")
        for node_id in fld.property_nodes + fld.member_nodes:
            by_origin[node_id].value = mod.new
        return
    var_id = info.var_of_node.get(mod.anchor)
    if var_id is None:
        raise StaleModificationError(f"rename anchor {mod.anchor} invalid")
    var = info.variables[var_id]
    if var.name != mod.old:
        raise StaleModificationError(f"anchor {mod.anchor} holds {var.name!r}, not {mod.old!r}")
    taken = info.scope_names(var.scope) | builtins.names()
    if mod.new in taken:
        raise StaleModificationError(f"name {mod.new!r} collides in scope")
    for node_id in var.occurrences:
        by_origin[node_id].value = mod.new


def apply_delta(state: ProgramState, mods: list[Modification], builtins: BuiltinTable,
                strict: bool = False) -> tuple[ProgramState, DeltaSeq]:
    """Apply modifications in order; stale ones truncate the sequence."""
    remap = {node.id: node.id for node in state.program.nodes}
    applied: list[Modification] = []
    for mod in mods:
        try:
            state, step_map = apply_one(state, mod, builtins)
        except StaleModificationError:
            if strict:
                raise
            break
        remap = {orig: step_map[cur] for orig, cur in remap.items()}
        applied.append(mod)
    return state, DeltaSeq(applied, remap)


# --- the modification space --------------------------------------------------------


@dataclass
class _Unit:
    """One samplable modification slot."""

    kind: str  # "rename" | "subst" | "wrap"
    nodes: tuple[int, ...]  # program positions this unit touches (for guided search)
    variable: Variable | None = None
    rename_kind: str = ""
    field_index: int = -1
    literal_kind: Kind | None = None


class ModificationSpace:
    """Enumerable label-preserving modifications of one program state."""

    def __init__(self, state: ProgramState, builtins: BuiltinTable, name_pool: tuple[str, ...]):
        self.state = state
        self.builtins = builtins
        self.name_pool = name_pool
        self.info: ScopeInfo = resolve_scopes(state.program, builtins.names())
        self.units: list[_Unit] = []
        self._units_at: dict[int, list[int]] = {}
        self._collect()

    def _add(self, unit: _Unit) -> None:
        idx = len(self.units)
        self.units.append(unit)
        for node in unit.nodes:
            self._units_at.setdefault(node, []).append(idx)

    def _collect(self) -> None:
        program = self.state.program
        for var in self.info.variables:
            rename_kind = "parameter" if var.kind == "parameter" else "variable"
            self._add(_Unit("rename", tuple(var.occurrences), variable=var, rename_kind=rename_kind))
        for idx, fld in enumerate(self.info.fields):
            nodes = tuple(fld.property_nodes + fld.member_nodes)
            self._add(_Unit("rename", nodes, rename_kind="field", field_index=idx))
        excluded = self._excluded_roles()
        scalars = (TypeLabel.STRING, TypeLabel.NUMBER, TypeLabel.BOOLEAN)
        for node in program.nodes:
            if node.kind in (Kind.NUMBER, Kind.STRING, Kind.BOOL):
                self._add(_Unit("subst", (node.id,), literal_kind=node.kind))
            if (
                node.id not in excluded
                and node.kind != Kind.PARAM
                and self.state.labels.get(node.id) in scalars
            ):
                self._add(_Unit("wrap", (node.id,)))

    def _excluded_roles(self) -> set[int]:
        # Wraps only apply to value positions: assignment targets and callees
        # are structural.
        excluded: set[int] = set()
        for node in self.state.program.nodes:
            if node.kind == Kind.ASSIGN:
                excluded.add(node.children[0])
            elif node.kind == Kind.CALL:
                excluded.add(node.children[0])
        return excluded

    def __len__(self) -> int:
        return len(self.units)

    def units_at(self, node_id: int) -> list[int]:
        return self._units_at.get(node_id, [])

    def positions_with_units(self) -> list[int]:
        return sorted(self._units_at)

    def rename_candidates(self, unit: _Unit) -> list[str]:
        if unit.rename_kind == "field":
            fld = self.info.fields[unit.field_index]
            siblings = {f.name for f in self.info.fields if f.obj_var == fld.obj_var}
            return [w for w in self.name_pool if w not in siblings]
        var = unit.variable
        assert var is not None
        taken = self.info.scope_names(var.scope) | self.builtins.names()
        return [w for w in self.name_pool if w not in taken]

    def instantiate(self, unit_idx: int, rng: np.random.Generator) -> Modification | None:
        unit = self.units[unit_idx]
        if unit.kind == "rename":
            candidates = self.rename_candidates(unit)
            if not candidates:
                return None
            new = candidates[int(rng.integers(len(candidates)))]
            if unit.rename_kind == "field":
                fld = self.info.fields[unit.field_index]
                anchor = unit.nodes[0]
                return WordRenaming(fld.name, new, "field", anchor)
            var = unit.variable
            assert var is not None
            return WordRenaming(var.name, new, unit.rename_kind, var.occurrences[0])
        if unit.kind == "subst":
            node = self.state.program.nodes[unit.nodes[0]]
            if unit.literal_kind == Kind.BOOL:
                pool = [w for w in ("true", "false") if w != node.value]
            elif unit.literal_kind == Kind.NUMBER:
                pool = [w for w in NUMBER_SUBST_POOL if w != node.value]
            else:
                pool = [w for w in STRING_SUBST_POOL if w != node.value]
            if not pool:
                return None
            return WordSubstitution(node.id, pool[int(rng.integers(len(pool)))])
        cond = _condition_draft(rng)
        return TernaryDeadCodeWrap(unit.nodes[0], _condition_source(cond))

    def sample_uniform(self, rng: np.random.Generator) -> Modification | None:
        if not self.units:
            return None
        for _ in range(8):  # retries for units with empty candidate pools
            mod = self.instantiate(int(rng.integers(len(self.units))), rng)
            if mod is not None:
                return mod
        return None

    def sample_weighted(self, weights_at: dict[int, float], rng: np.random.Generator) -> Modification | None:
        positions = self.positions_with_units()
        if not positions:
            return None
        w = np.asarray([max(weights_at.get(p, 0.0), 0.0) for p in positions])
        total = w.sum()
        if total <= 0:
            return self.sample_uniform(rng)
        w /= total
        for _ in range(8):
            pos = positions[int(rng.choice(len(positions), p=w))]
            unit_ids = self.units_at(pos)
            mod = self.instantiate(unit_ids[int(rng.integers(len(unit_ids)))], rng)
            if mod is not None:
                return mod
        return self.sample_uniform(rng)


def valid_modifications(entry: ProgramEntry, builtins: BuiltinTable,
                        name_pool: tuple[str, ...] = ATTACK_NAME_POOL) -> ModificationSpace:
    """The enumerable modification space of an unmodified program."""
    return ModificationSpace(ProgramState.from_entry(entry), builtins, name_pool)


# --- attribution ----------------------------------------------------------------


def input_gradient_scores(model: GnnModel, batch: GraphBatch, targets: np.ndarray) -> np.ndarray:
    """Per-node L1 norms of the loss gradient w.r.t. the input embeddings.

    targets holds one output index per batch position (ABSTAIN_INDEX allowed);
    for real labels the differentiated loss is -log(p_y + p_abstain), for the
    abstain target it is -log(p_abstain).
    """
    targets = np.asarray(targets, dtype=np.int64)
    with T.Tape() as tape:
        probs, h0 = model.forward(batch, training=False, capture_inputs=True)
        p_t = T.take_along_rows(probs, targets)
        p_abs = T.take_along_rows(probs, np.full(len(targets), ABSTAIN_INDEX, dtype=np.int64))
        mask = (targets != ABSTAIN_INDEX).astype(np.float64)
        inner = T.add(p_t, T.mul(p_abs, T.Tensor(mask)))
        loss = T.reduce_sum(-T.safe_log(inner))
    tape.backward(loss)
    grad = tape.grad(h0)
    if grad is None:
        return np.zeros(batch.num_nodes)
    return np.abs(grad).sum(axis=1)


def normalize_attribution(raw: np.ndarray) -> np.ndarray:
    """a = g / ||g||_1; all-zero g falls back to uniform."""
    total = raw.sum()
    if total <= 0.0:
        return np.full(len(raw), 1.0 / len(raw)) if len(raw) else raw
    return raw / total


def attribution(model: GnnModel, enc, position: int, target: str) -> np.ndarray:
    """Attribution over all program positions for one sample."""
    target_idx = ABSTAIN_INDEX if target == ABSTAIN else _label_index(target)
    batch = make_batch([(enc, [position])])
    raw = input_gradient_scores(model, batch, np.asarray([target_idx]))
    return normalize_attribution(raw)


def _label_index(label: str) -> int:
    from .minilang.ast import LABEL_INDEX

    return LABEL_INDEX[TypeLabel.from_str(label)]


# --- proposing modification sequences ---------------------------------------------


@dataclass
class Variant:
    state: ProgramState
    delta: DeltaSeq
    position: int  # the tracked sample position after remapping


def propose_variant(
    base: ProgramState,
    position: int,
    rng: np.random.Generator,
    builtins: BuiltinTable,
    max_len: int,
    name_pool: tuple[str, ...] = ATTACK_NAME_POOL,
    guided_weights: dict[int, float] | None = None,
) -> Variant:
    """Sample one modification sequence step-by-step on the evolving program."""
    length = 1 + int(rng.integers(max_len))
    state = base
    remap = {node.id: node.id for node in base.program.nodes}
    mods: list[Modification] = []
    for _ in range(length):
        space = ModificationSpace(state, builtins, name_pool)
        if guided_weights is None:
            mod = space.sample_uniform(rng)
        else:
            weights_at = {remap[orig]: w for orig, w in guided_weights.items() if orig in remap}
            mod = space.sample_weighted(weights_at, rng)
        if mod is None:
            break
        state, step_map = apply_one(state, mod, builtins)
        remap = {orig: step_map[cur] for orig, cur in remap.items()}
        mods.append(mod)
    return Variant(state, DeltaSeq(mods, remap), remap[position])


def propose_attack_variants(
    entry: ProgramEntry,
    sample: Sample,
    budget: AttackBudget,
    seed: int,
    builtins: BuiltinTable,
    strategy: str = "greedy",
    guided_weights: dict[int, float] | None = None,
    name_pool: tuple[str, ...] = ATTACK_NAME_POOL,
    epoch: int | None = None,
) -> list[Variant]:
    """budget.sequences variants; attempt i draws from its own keyed stream."""
    base = ProgramState.from_entry(entry)
    pid = stream_hash(sample.program_id)
    variants = []
    for attempt in range(budget.sequences):
        context = (pid, sample.position, attempt) if epoch is None else (pid, sample.position, epoch, attempt)
        rng = stream(seed, "attack", *context)
        use_guided = guided_weights is not None and (
            strategy == "guided" or (strategy == "mixed" and attempt % 2 == 1)
        )
        variants.append(
            propose_variant(
                base, sample.position, rng, builtins, budget.max_len, name_pool,
                guided_weights if use_guided else None,
            )
        )
    return variants


def guided_weights_for(a: np.ndarray, eps: float) -> dict[int, float]:
    """Sampling weights a + eps over original program positions."""
    return {i: float(a[i]) + eps for i in range(len(a))}


# --- searches (single-sample API) ---------------------------------------------------


def greedy_search(predictor, entry: ProgramEntry, sample: Sample, budget: AttackBudget,
                  seed: int, builtins: BuiltinTable,
                  name_pool: tuple[str, ...] = ATTACK_NAME_POOL) -> DeltaSeq | None:
    """Randomly sampled sequences until one makes the model mis-predict."""
    base = ProgramState.from_entry(entry)
    pid = stream_hash(sample.program_id)
    for attempt in range(budget.sequences):
        rng = stream(seed, "attack", pid, sample.position, attempt)
        variant = propose_variant(base, sample.position, rng, builtins, budget.max_len, name_pool)
        pred = predictor.predict_many([variant.state], [variant.position])[0]
        if pred not in (sample.label.value, ABSTAIN):
            verified = replay_delta(entry, variant.delta.mods, builtins)
            check = predictor.predict_many([verified[0]], [verified[1].remap[sample.position]])[0]
            if check == pred:
                return variant.delta
    return None


def guided_search(predictor, model: GnnModel, enc, entry: ProgramEntry, sample: Sample,
                  budget: AttackBudget, seed: int, builtins: BuiltinTable, eps: float = 0.01,
                  name_pool: tuple[str, ...] = ATTACK_NAME_POOL) -> DeltaSeq | None:
    """Like greedy search, but positions are drawn proportionally to a + eps."""
    a = attribution(model, enc, sample.position, sample.label.value)
    weights = guided_weights_for(a, eps)
    base = ProgramState.from_entry(entry)
    pid = stream_hash(sample.program_id)
    for attempt in range(budget.sequences):
        rng = stream(seed, "attack", pid, sample.position, attempt)
        variant = propose_variant(
            base, sample.position, rng, builtins, budget.max_len, name_pool, weights
        )
        pred = predictor.predict_many([variant.state], [variant.position])[0]
        if pred not in (sample.label.value, ABSTAIN):
            verified = replay_delta(entry, variant.delta.mods, builtins)
            check = predictor.predict_many([verified[0]], [verified[1].remap[sample.position]])[0]
            if check == pred:
                return variant.delta
    return None


def replay_delta(entry: ProgramEntry, mods: list[Modification],
                 builtins: BuiltinTable) -> tuple[ProgramState, DeltaSeq]:
    """Re-apply a logged sequence from scratch."""
    return apply_delta(ProgramState.from_entry(entry), mods, builtins, strict=True)


# --- adversarial training -------------------------------------------------------------


@dataclass
class AdvEpochStats:
    counterexamples: int
    attacked_samples: int
    loss: float


def adversarial_train_epoch(
    model: GnnModel,
    dataset: Dataset,
    vocab,
    builtins: BuiltinTable,
    adam: T.AdamState,
    h: float,
    abstraction=None,
    budget: AttackBudget = AttackBudget(20),
    seed: int = 0,
    epoch: int = 0,
    batch_size: int = 32,
    dropout_rate: float = 0.1,
    name_pool: tuple[str, ...] = ATTACK_NAME_POOL,
    strategy: str = "greedy",
) -> AdvEpochStats:
    """One epoch over the dataset; every found counterexample joins its batch.

    Counterexamples are judged against the current model with threshold h and
    trained on with the abstain loss at o = 1.
    """
    from .model import abstain_cross_entropy, select

    builder = BatchBuilder(dataset, vocab, builtins, abstraction)
    samples = list(dataset.samples)
    order = stream(seed, "shuffle", 1_000_000 + epoch).permutation(len(samples))
    total_counter = 0
    total_loss = 0.0
    n_batches = 0
    params = model.param_list()
    for b, start in enumerate(range(0, len(samples), batch_size)):
        chunk = [samples[i] for i in order[start : start + batch_size]]
        # Propose and evaluate all variants for the batch in one forward pass.
        variant_items: list[tuple] = []
        per_sample: list[tuple[Sample, list[Variant]]] = []
        for s in chunk:
            entry = dataset.programs[s.program_id]
            variants = propose_attack_variants(
                entry, s, budget, seed, builtins, strategy=strategy,
                name_pool=name_pool, epoch=epoch,
            )
            per_sample.append((s, variants))
            for v in variants:
                enc = _encode_state(v.state, vocab, builtins, abstraction)
                variant_items.append((enc, [v.position]))
        counter_items: list[tuple] = []
        counter_labels: list[int] = []
        if variant_items:
            vbatch = make_batch(variant_items)
            probs = model.predict_probs(vbatch)
            row = 0
            for s, variants in per_sample:
                for v in variants:
                    pred, _ = select(probs[row], h)
                    if pred not in (s.label.value, ABSTAIN):
                        counter_items.append((variant_items[row][0], [v.position]))
                        counter_labels.append(_label_index(s.label.value))
                        total_counter += 1
                    row += 1
        # Train on originals plus all counterexamples.
        train_items: list[tuple] = []
        train_labels: list[int] = []
        by_program: dict[str, list[Sample]] = {}
        for s in chunk:
            by_program.setdefault(s.program_id, []).append(s)
        for program_id, group in by_program.items():
            train_items.append((builder.encoded(program_id), [s.position for s in group]))
            train_labels.extend(_label_index(s.label.value) for s in group)
        train_items.extend(counter_items)
        train_labels.extend(counter_labels)
        tbatch = make_batch(train_items)
        tlabels = np.asarray(train_labels, dtype=np.int64)
        drop_rng = stream(seed, "dropout", 1_000_000 + epoch, b)
        with T.Tape() as tape:
            probs_t, _ = model.forward(tbatch, training=True, drop_rng=drop_rng if dropout_rate > 0 else None)
            loss = abstain_cross_entropy(probs_t, tlabels, 1.0)
        tape.backward(loss)
        T.adam_step(params, [tape.grad(p) for p in params], adam)
        total_loss += loss.item()
        n_batches += 1
    return AdvEpochStats(total_counter, len(samples), total_loss / max(n_batches, 1))


def _encode_state(state: ProgramState, vocab, builtins: BuiltinTable, abstraction):
    from .graphs import build_graph

    graph = build_graph(state.program, builtins.names())
    return encode_graph(graph, vocab, state.annotations, abstraction)


# --- robustness evaluation ---------------------------------------------------------

FORALL_CORRECT = "forall_correct"
EXISTS_INCORRECT = "exists_incorrect"
ABSTAIN_MIXED = "abstain"


@dataclass
class SampleOutcome:
    sample: Sample
    original_prediction: str
    category: str  # FORALL_CORRECT | EXISTS_INCORRECT | ABSTAIN_MIXED
    counterexample: DeltaSeq | None = None
    counterexample_prediction: str = ""


@dataclass
class RobustnessResult:
    outcomes: list[SampleOutcome]
    budget: AttackBudget

    @property
    def robustness(self) -> float:
        if not self.outcomes:
            return 0.0
        bad = sum(1 for o in self.outcomes if o.category == EXISTS_INCORRECT)
        return 1.0 - bad / len(self.outcomes)

    def breakdown(self) -> dict[str, dict[str, float]]:
        """Per original-outcome partition: fraction of each robustness category."""
        partitions: dict[str, list[SampleOutcome]] = {"correct": [], "abstain": [], "incorrect": []}
        for o in self.outcomes:
            if o.original_prediction == ABSTAIN:
                partitions["abstain"].append(o)
            elif o.original_prediction == o.sample.label.value:
                partitions["correct"].append(o)
            else:
                partitions["incorrect"].append(o)
        table: dict[str, dict[str, float]] = {}
        total = len(self.outcomes)
        for name, members in partitions.items():
            n = len(members)
            row = {"size": n / total if total else 0.0, "count": float(n)}
            for cat in (FORALL_CORRECT, EXISTS_INCORRECT, ABSTAIN_MIXED):
                row[cat] = (sum(1 for o in members if o.category == cat) / n) if n else 0.0
            table[name] = row
        return table

    def log_records(self) -> list[dict]:
        records = []
        for o in self.outcomes:
            if o.category == EXISTS_INCORRECT and o.counterexample is not None:
                records.append(
                    {
                        "program": o.sample.program_id,
                        "position": o.sample.position,
                        "mods": [modification_to_dict(m) for m in o.counterexample.mods],
                        "predicted": o.counterexample_prediction,
                        "expected": o.sample.label.value,
                    }
                )
        return records


def evaluate_robustness(
    predictor,
    dataset: Dataset,
    budget: AttackBudget = AttackBudget(230),
    seed: int = 0,
    builtins: BuiltinTable | None = None,
    strategy: str = "mixed",
    eps: float = 0.01,
    name_pool: tuple[str, ...] = ATTACK_NAME_POOL,
    max_samples: int | None = None,
    chunk_nodes: int = 60_000,
) -> RobustnessResult:
    """Attack every sample with `budget` explored sequences and classify it.

    The predictor must expose predict_many(states, positions) -> labels and
    attribution_weights(entry, sample) -> per-node scores (or None) for the
    guided half of a mixed strategy.
    """
    if builtins is None:
        from .minilang import default_builtins

        builtins = default_builtins()
    samples = list(dataset.samples)
    if max_samples is not None and len(samples) > max_samples:
        pick = stream(seed, "evalpick").permutation(len(samples))[:max_samples]
        samples = [samples[i] for i in sorted(pick)]
    outcomes: list[SampleOutcome] = []
    for s in samples:
        entry = dataset.programs[s.program_id]
        base_state = ProgramState.from_entry(entry)
        original = predictor.predict_many([base_state], [s.position])[0]
        guided = None
        if strategy in ("guided", "mixed"):
            a = predictor.attribution_weights(entry, s)
            if a is not None:
                guided = guided_weights_for(a, eps)
        variants = propose_attack_variants(
            entry, s, budget, seed, builtins,
            strategy=strategy if guided is not None else "greedy",
            guided_weights=guided, name_pool=name_pool,
        )
        preds = _predict_variants(predictor, variants, chunk_nodes)
        category = FORALL_CORRECT
        counter: DeltaSeq | None = None
        counter_pred = ""
        saw_abstain = original == ABSTAIN
        if original not in (s.label.value, ABSTAIN):
            # A mis-prediction on the unmodified input is its own counterexample.
            category = EXISTS_INCORRECT
            counter = DeltaSeq([], {n.id: n.id for n in entry.program.nodes})
            counter_pred = original
        for v, pred in zip(variants, preds):
            if pred == ABSTAIN:
                saw_abstain = True
            elif pred != s.label.value:
                replayed_state, replayed = replay_delta(entry, v.delta.mods, builtins)
                confirm = predictor.predict_many(
                    [replayed_state], [replayed.remap[s.position]]
                )[0]
                if confirm == pred:
                    category = EXISTS_INCORRECT
                    counter = replayed
                    counter_pred = pred
                    break
        if category != EXISTS_INCORRECT and saw_abstain:
            category = ABSTAIN_MIXED
        outcomes.append(SampleOutcome(s, original, category, counter, counter_pred))
    return RobustnessResult(outcomes, budget)


def _predict_variants(predictor, variants: list[Variant], chunk_nodes: int) -> list[str]:
    preds: list[str] = []
    start = 0
    while start < len(variants):
        stop = start
        nodes = 0
        while stop < len(variants) and (nodes == 0 or nodes < chunk_nodes):
            nodes += len(variants[stop].state.program.nodes)
            stop += 1
        states = [v.state for v in variants[start:stop]]
        positions = [v.position for v in variants[start:stop]]
        preds.extend(predictor.predict_many(states, positions))
        start = stop
    return preds


# --- counterexample logs ----------------------------------------------------------


def save_attack_log(records: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_attack_log(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def replay_attack_log(predictor, dataset: Dataset, records: list[dict],
                      builtins: BuiltinTable) -> list[tuple[dict, bool, str]]:
    """Re-apply each logged counterexample; report whether the mis-prediction
    reproduces exactly."""
    results = []
    for record in records:
        entry = dataset.programs[record["program"]]
        mods = [modification_from_dict(m) for m in record["mods"]]
        state, delta = replay_delta(entry, mods, builtins)
        position = delta.remap[int(record["position"])]
        pred = predictor.predict_many([state], [position])[0]
        results.append((record, pred == record["predicted"], pred))
    return results


def check_label_preservation(entry: ProgramEntry, mods: list[Modification],
                             builtins: BuiltinTable) -> tuple[bool, str]:
    """Oracle re-check: labels at all tracked original positions must survive."""
    from .minilang import infer_types

    state, delta = replay_delta(entry, mods, builtins)
    oracle = infer_types(state.program, builtins, state.param_env)
    for orig, label in entry.oracle.items():
        new_id = delta.remap[orig]
        if oracle.get(new_id) != label:
            return False, (
                f"position {orig} -> {new_id}: {label.value} became "
                f"{oracle.get(new_id) and oracle[new_id].value}"
            )
    return True, ""
