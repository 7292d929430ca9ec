from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rct.dataset import Dataset, ProgramEntry, extract_samples
from rct.minilang import GenConfig, default_builtins, generate_program


@pytest.fixture(scope="session")
def builtins():
    return default_builtins()


def make_entry(seed: int, config: GenConfig | None = None, builtins=None) -> ProgramEntry:
    builtins = builtins or default_builtins()
    generated = generate_program(seed, config or GenConfig())
    return ProgramEntry(
        program_id=f"gen_{seed:05d}.ml0",
        program=generated.program,
        param_env=generated.param_env,
        oracle=generated.types,
    )


def make_dataset(seeds: list[int], split: str = "train", config: GenConfig | None = None) -> Dataset:
    programs = {}
    samples = []
    for seed in seeds:
        entry = make_entry(seed, config)
        programs[entry.program_id] = entry
        samples.extend(extract_samples(entry.program_id, entry.oracle))
    return Dataset(split, programs, samples)


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small dataset trio used by the slower integration tests."""
    train = make_dataset(list(range(0, 24)), "train", GenConfig(stmt_min=3, stmt_max=5))
    valid = make_dataset(list(range(100, 108)), "valid", GenConfig(stmt_min=3, stmt_max=5))
    test = make_dataset(list(range(200, 208)), "test", GenConfig(stmt_min=3, stmt_max=5))
    return train, valid, test
