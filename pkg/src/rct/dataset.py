"""Prediction samples, near-duplicate removal, splits, and serialization.

Disk layout: a corpus directory holds one `.ml0` source file plus one
`.params` sidecar (parameter node types) per program. A dataset directory
holds `manifest.tsv` (program file per split) and one `.ds` record file per
split with `programfile TAB nodeid TAB label` lines.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field

from .errors import DataError
from .graphs import Graph, build_graph
from .minilang import BuiltinTable, Program, infer_types, parse
from .minilang.ast import TypeLabel
from .minilang.errors import MiniLangError
from .minilang.lexer import token_words

DATASET_MAGIC = "# rct-dataset v1"
MANIFEST_MAGIC = "# rct-manifest v1"
PARAMS_MAGIC = "# rct-params v1"


@dataclass(frozen=True)
class Sample:
    program_id: str
    position: int  # node id within the program
    label: TypeLabel


@dataclass
class ProgramEntry:
    program_id: str
    program: Program
    param_env: dict[int, TypeLabel]
    oracle: dict[int, TypeLabel]
    graph: Graph | None = None
    annotations: dict[int, TypeLabel] = field(default_factory=dict)

    def ensure_graph(self, builtin_names: frozenset[str]) -> Graph:
        if self.graph is None:
            self.graph = build_graph(self.program, builtin_names)
        return self.graph


@dataclass
class Dataset:
    split: str
    programs: dict[str, ProgramEntry]
    samples: list[Sample]

    def __len__(self) -> int:
        return len(self.samples)


def extract_samples(program_id: str, oracle_output: dict[int, TypeLabel]) -> list[Sample]:
    """One sample per typed node, in node-id order."""
    return [Sample(program_id, pos, oracle_output[pos]) for pos in sorted(oracle_output)]


def _trigrams(tokens: list[str]) -> frozenset[tuple[str, str, str]]:
    return frozenset(zip(tokens, tokens[1:], tokens[2:]))


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def dedup(files: list[tuple[str, list[str]]], threshold: float = 0.7) -> list[str]:
    """Greedy near-duplicate removal over token 3-grams, in path-sorted order.

    A file is dropped when its Jaccard similarity with an already-retained
    file exceeds the threshold; exact token-level duplicates always drop.
    """
    ordered = sorted(files, key=lambda item: item[0])
    retained: list[str] = []
    kept: list[tuple[frozenset, tuple[str, ...]]] = []
    for name, tokens in ordered:
        grams = _trigrams(tokens)
        tok = tuple(tokens)
        duplicate = False
        for other_grams, other_tok in kept:
            if tok == other_tok or jaccard(grams, other_grams) > threshold:
                duplicate = True
                break
        if not duplicate:
            retained.append(name)
            kept.append((grams, tok))
    return retained


def filter_by_tokens(files: list[tuple[str, list[str]]], min_tokens: int, max_tokens: int) -> list[str]:
    return [name for name, toks in files if min_tokens <= len(toks) <= max_tokens]


def split_programs(
    program_ids: list[str], ratios: tuple[float, float, float], seed: int
) -> dict[str, list[str]]:
    """Program-level partition into train/valid/test; deterministic given seed."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise DataError(f"split ratios must be non-negative, got {ratios}")
    ids = sorted(program_ids)
    random.Random(seed).shuffle(ids)
    n = len(ids)
    c1 = round(ratios[0] * n)
    c2 = round((ratios[0] + ratios[1]) * n)
    return {"train": ids[:c1], "valid": ids[c1:c2], "test": ids[c2:]}


# --- corpus files ------------------------------------------------------------


def save_program(corpus_dir: str, program_id: str, source: str, param_env: dict[int, TypeLabel],
                 param_names: dict[int, str]) -> None:
    with open(os.path.join(corpus_dir, program_id), "w", encoding="utf-8") as fh:
        fh.write(source)
    sidecar = os.path.join(corpus_dir, _params_path(program_id))
    with open(sidecar, "w", encoding="utf-8") as fh:
        fh.write(PARAMS_MAGIC + "\n")
        for node_id in sorted(param_env):
            fh.write(f"{node_id}\t{param_names[node_id]}\t{param_env[node_id].value}\n")


def _params_path(program_id: str) -> str:
    stem = program_id[:-4] if program_id.endswith(".ml0") else program_id
    return stem + ".params"


def load_program(corpus_dir: str, program_id: str, builtins: BuiltinTable) -> ProgramEntry:
    path = os.path.join(corpus_dir, program_id)
    try:
        with open(path, encoding="utf-8") as fh:
            source = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read program {path}: {exc}") from exc
    try:
        program = parse(source)
    except MiniLangError as exc:
        raise DataError(f"{path}: {exc}") from exc
    param_env = _load_params(os.path.join(corpus_dir, _params_path(program_id)), program)
    try:
        oracle = infer_types(program, builtins, param_env)
    except MiniLangError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return ProgramEntry(program_id, program, param_env, oracle)


def _load_params(path: str, program: Program) -> dict[int, TypeLabel]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read sidecar {path}: {exc}") from exc
    if not lines or lines[0] != PARAMS_MAGIC:
        raise DataError(f"{path}:1: expected header {PARAMS_MAGIC!r}")
    env: dict[int, TypeLabel] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
        node_id, name, label = parts
        try:
            nid = int(node_id)
            env[nid] = TypeLabel.from_str(label)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if nid >= len(program.nodes) or program.nodes[nid].value != name:
            raise DataError(f"{path}:{lineno}: node {nid} is not parameter {name!r}")
    return env


# --- dataset files ------------------------------------------------------------


def save_dataset(dataset: Dataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(DATASET_MAGIC + "\n")
        for s in dataset.samples:
            fh.write(f"{s.program_id}\t{s.position}\t{s.label.value}\n")


def load_dataset(path: str, split: str, corpus_dir: str, builtins: BuiltinTable) -> Dataset:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    if not lines or lines[0] != DATASET_MAGIC:
        raise DataError(f"{path}:1: expected header {DATASET_MAGIC!r}")
    programs: dict[str, ProgramEntry] = {}
    samples: list[Sample] = []
    last_good = 1
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(
                f"{path}:{lineno}: malformed record (last good line {last_good})"
            )
        program_id, pos_text, label_text = parts
        try:
            position = int(pos_text)
            label = TypeLabel.from_str(label_text)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc} (last good line {last_good})") from exc
        if program_id not in programs:
            programs[program_id] = load_program(corpus_dir, program_id, builtins)
        if position >= len(programs[program_id].program.nodes):
            raise DataError(f"{path}:{lineno}: node {position} not in {program_id}")
        samples.append(Sample(program_id, position, label))
        last_good = lineno
    return Dataset(split, programs, samples)


def save_manifest(splits: dict[str, list[str]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MANIFEST_MAGIC + "\n")
        for split in ("train", "valid", "test"):
            for program_id in splits.get(split, []):
                fh.write(f"{split}\t{program_id}\n")


def load_manifest(path: str) -> dict[str, list[str]]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if not lines or lines[0] != MANIFEST_MAGIC:
        raise DataError(f"{path}:1: expected header {MANIFEST_MAGIC!r}")
    splits: dict[str, list[str]] = {"train": [], "valid": [], "test": []}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[0] not in splits:
            raise DataError(f"{path}:{lineno}: malformed manifest line")
        splits[parts[0]].append(parts[1])
    return splits


def build_splits(
    corpus_dir: str,
    builtins: BuiltinTable,
    ratios: tuple[float, float, float],
    seed: int,
    dedup_threshold: float = 0.7,
    min_tokens: int = 20,
    max_tokens: int = 600,
) -> tuple[dict[str, Dataset], dict[str, list[str]]]:
    """Dedup + size-filter + split a corpus directory and extract all samples."""
    names = sorted(f for f in os.listdir(corpus_dir) if f.endswith(".ml0"))
    if not names:
        raise DataError(f"no .ml0 files in {corpus_dir}")
    tokenized: list[tuple[str, list[str]]] = []
    for name in names:
        with open(os.path.join(corpus_dir, name), encoding="utf-8") as fh:
            tokenized.append((name, token_words(fh.read())))
    sized = set(filter_by_tokens(tokenized, min_tokens, max_tokens))
    retained = dedup([t for t in tokenized if t[0] in sized], dedup_threshold)
    splits = split_programs(retained, ratios, seed)
    datasets: dict[str, Dataset] = {}
    for split, ids in splits.items():
        programs: dict[str, ProgramEntry] = {}
        samples: list[Sample] = []
        for program_id in ids:
            entry = load_program(corpus_dir, program_id, builtins)
            programs[program_id] = entry
            samples.extend(extract_samples(program_id, entry.oracle))
        datasets[split] = Dataset(split, programs, samples)
    return datasets, splits
