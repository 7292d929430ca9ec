from __future__ import annotations

import pytest

from rct.dataset import (
    Dataset,
    build_splits,
    dedup,
    extract_samples,
    jaccard,
    load_dataset,
    load_manifest,
    load_program,
    save_dataset,
    save_manifest,
    save_program,
    split_programs,
    _trigrams,
)
from rct.errors import DataError
from rct.minilang import default_builtins, generate_program, infer_types, parse
from rct.minilang.ast import Kind, TypeLabel

BT = default_builtins()


class TestExtractSamples:
    def test_binary_expression_yields_three(self):
        p = parse("x = 1;\ny = 2;\nz = x + y;")
        types = infer_types(p, BT, {})
        samples = extract_samples("p.ml0", types)
        add = [n for n in p.nodes if n.kind == Kind.BINARY][0]
        operand_ids = set(add.children) | {add.id}
        hits = [s for s in samples if s.position in operand_ids]
        assert len(hits) == 3

    def test_empty_program(self):
        assert extract_samples("p.ml0", {}) == []

    @pytest.mark.parametrize("seed", range(0, 30, 3))
    def test_count_matches_typed_node_walk(self, seed):
        g = generate_program(seed)
        samples = extract_samples("p.ml0", g.types)
        typed_kinds = {
            Kind.IDENT, Kind.NUMBER, Kind.STRING, Kind.BOOL, Kind.BINARY,
            Kind.TERNARY, Kind.CALL, Kind.MEMBER, Kind.OBJECT, Kind.FUNCTION,
            Kind.PARAM,
        }
        expected = sum(1 for n in g.program.nodes if n.kind in typed_kinds)
        assert len(samples) == expected
        assert [s.position for s in samples] == sorted(s.position for s in samples)


class TestDedup:
    def test_exact_duplicates_collapse(self):
        toks = ["a", "b", "c", "d", "e"]
        retained = dedup([("x.ml0", toks), ("y.ml0", list(toks))])
        assert retained == ["x.ml0"]

    def test_disjoint_files_both_retained(self):
        retained = dedup([("a.ml0", ["a", "b", "c", "d"]), ("b.ml0", ["p", "q", "r", "s"])])
        assert retained == ["a.ml0", "b.ml0"]

    def test_engineered_pair_above_threshold_removed(self):
        # 12 tokens -> 10 trigrams; second file shares 9 of them and adds 2.
        base = [f"w{i}" for i in range(12)]
        other = base[:11] + ["v1", "v2"]
        a, b = _trigrams(base), _trigrams(other)
        sim = jaccard(a, b)
        assert sim == len(a & b) / len(a | b)
        assert 0.7 < sim < 0.8
        retained = dedup([("a.ml0", base), ("b.ml0", other)], threshold=0.7)
        assert retained == ["a.ml0"]

    def test_pair_below_threshold_retained(self):
        base = [f"w{i}" for i in range(12)]
        other = base[:8] + ["v1", "v2", "v3", "v4"]
        assert jaccard(_trigrams(base), _trigrams(other)) <= 0.7
        retained = dedup([("a.ml0", base), ("b.ml0", other)], threshold=0.7)
        assert len(retained) == 2

    def test_monotone_on_generated_corpus(self):
        files = []
        for seed in range(40):
            g = generate_program(seed)
            from rct.minilang.lexer import token_words

            files.append((f"p{seed:03d}.ml0", token_words(g.program.source)))
        sizes = [len(dedup(files, threshold=t)) for t in (0.5, 0.7, 0.9)]
        assert sizes == sorted(sizes)

    def test_path_sorted_processing(self):
        toks = ["a", "b", "c", "d", "e"]
        retained = dedup([("z.ml0", list(toks)), ("a.ml0", list(toks))])
        assert retained == ["a.ml0"]


class TestSplit:
    def test_three_programs_one_each(self):
        splits = split_programs(["a", "b", "c"], (1 / 3, 1 / 3, 1 / 3), seed=0)
        assert sorted(len(v) for v in splits.values()) == [1, 1, 1]

    def test_deterministic(self):
        ids = [f"p{i}" for i in range(20)]
        assert split_programs(ids, (0.6, 0.2, 0.2), 7) == split_programs(ids, (0.6, 0.2, 0.2), 7)

    def test_all_train(self):
        splits = split_programs(["a", "b", "c"], (1.0, 0.0, 0.0), seed=1)
        assert len(splits["train"]) == 3 and not splits["valid"] and not splits["test"]

    def test_disjoint_partition(self):
        ids = [f"p{i}" for i in range(37)]
        splits = split_programs(ids, (0.5, 0.25, 0.25), 3)
        combined = splits["train"] + splits["valid"] + splits["test"]
        assert sorted(combined) == sorted(ids)

    def test_bad_ratios(self):
        with pytest.raises(DataError):
            split_programs(["a"], (0.5, 0.2, 0.2), 0)


class TestSerialization:
    def write_corpus(self, tmp_path, seeds):
        for i, seed in enumerate(seeds):
            g = generate_program(seed)
            param_names = {
                n.id: n.value for n in g.program.nodes if n.kind == Kind.PARAM
            }
            save_program(str(tmp_path), f"prog_{i:05d}.ml0", g.program.source, g.param_env, param_names)

    def test_program_roundtrip(self, tmp_path):
        self.write_corpus(tmp_path, [3])
        entry = load_program(str(tmp_path), "prog_00000.ml0", BT)
        g = generate_program(3)
        assert entry.program.source == g.program.source
        assert entry.param_env == g.param_env
        assert entry.oracle == g.types

    def test_dataset_roundtrip(self, tmp_path):
        self.write_corpus(tmp_path, [1, 2])
        entries = {
            pid: load_program(str(tmp_path), pid, BT)
            for pid in ("prog_00000.ml0", "prog_00001.ml0")
        }
        samples = []
        for pid, entry in entries.items():
            samples.extend(extract_samples(pid, entry.oracle))
        ds = Dataset("train", entries, samples)
        path = tmp_path / "train.ds"
        save_dataset(ds, str(path))
        loaded = load_dataset(str(path), "train", str(tmp_path), BT)
        assert loaded.samples == ds.samples
        assert set(loaded.programs) == set(ds.programs)

    def test_empty_dataset_header_only(self, tmp_path):
        path = tmp_path / "empty.ds"
        save_dataset(Dataset("train", {}, []), str(path))
        assert path.read_text() == "# rct-dataset v1\n"
        loaded = load_dataset(str(path), "train", str(tmp_path), BT)
        assert loaded.samples == []

    def test_truncated_file_names_last_good_line(self, tmp_path):
        self.write_corpus(tmp_path, [1])
        entry = load_program(str(tmp_path), "prog_00000.ml0", BT)
        samples = extract_samples("prog_00000.ml0", entry.oracle)
        ds = Dataset("train", {"prog_00000.ml0": entry}, samples)
        path = tmp_path / "train.ds"
        save_dataset(ds, str(path))
        text = path.read_text().splitlines()
        broken = "\n".join(text[:4] + [text[4].split("\t")[0]]) + "\n"
        path.write_text(broken)
        with pytest.raises(DataError) as err:
            load_dataset(str(path), "train", str(tmp_path), BT)
        assert "last good line 4" in str(err.value)

    def test_manifest_roundtrip(self, tmp_path):
        splits = {"train": ["a.ml0"], "valid": ["b.ml0"], "test": []}
        path = tmp_path / "manifest.tsv"
        save_manifest(splits, str(path))
        assert load_manifest(str(path)) == splits

    def test_bad_header(self, tmp_path):
        path = tmp_path / "x.ds"
        path.write_text("junk\n")
        with pytest.raises(DataError):
            load_dataset(str(path), "train", str(tmp_path), BT)

    def test_build_splits_end_to_end(self, tmp_path):
        self.write_corpus(tmp_path, range(12))
        datasets, splits = build_splits(
            str(tmp_path), BT, (0.5, 0.25, 0.25), seed=0, min_tokens=1, max_tokens=10_000
        )
        all_ids = [pid for ids in splits.values() for pid in ids]
        assert len(all_ids) == len(set(all_ids))
        for split, ds in datasets.items():
            assert set(ds.programs) == set(splits[split])
            for s in ds.samples:
                assert s.program_id in ds.programs
                assert s.label in TypeLabel
