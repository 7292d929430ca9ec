from __future__ import annotations

import numpy as np
import pytest

from helpers import recount_expected_edges
from rct.graphs import (
    EdgeType,
    Vocabulary,
    annotation_word,
    build_graph,
    build_vocabulary,
)
from rct.minilang import default_builtins, generate_program, parse
from rct.minilang.ast import Kind

BT = default_builtins()


def graph_of(source: str):
    return build_graph(parse(source), BT.names())


class TestBuildGraph:
    def test_nodes_match_ast(self):
        p = parse("x = 1;\ny = x + 2;")
        g = build_graph(p, BT.names())
        assert g.num_nodes == len(p.nodes)

    def test_last_usage_between_consecutive_usages(self):
        g = graph_of("x = 1;\ny = x + 2;")
        fwd = (g.etype == EdgeType.LAST_USE).sum()
        rev = (g.etype == EdgeType.LAST_USE_REV).sum()
        assert fwd == 1 and rev == 1

    def test_three_usages_two_links(self):
        g = graph_of("x = 1;\ny = x + x;")
        assert (g.etype == EdgeType.LAST_USE).sum() == 2

    def test_single_literal_has_only_ast_edges(self):
        g = graph_of("1;")
        assert set(np.unique(g.etype)) == {EdgeType.AST, EdgeType.AST_REV}

    def test_returns_to_edge(self):
        p = parse("f = (a) => {\n  return a;\n};")
        g = build_graph(p, BT.names())
        ret = [n for n in p.nodes if n.kind == Kind.RETURN][0]
        fn = [n for n in p.nodes if n.kind == Kind.FUNCTION][0]
        idx = np.where(g.etype == EdgeType.RETURNS_TO)[0]
        assert len(idx) == 1
        assert g.src[idx[0]] == ret.id and g.dst[idx[0]] == fn.id

    def test_every_edge_has_paired_reverse(self):
        for seed in (0, 5, 9):
            g = build_graph(generate_program(seed).program, BT.names())
            edges = set(zip(g.src.tolist(), g.dst.tolist(), g.etype.tolist()))
            for s, d, t in list(edges):
                paired = t + 1 if t % 2 == 0 else t - 1
                assert (d, s, paired) in edges

    def test_no_duplicate_edges(self):
        for seed in range(10):
            g = build_graph(generate_program(seed).program, BT.names())
            triples = list(zip(g.src.tolist(), g.dst.tolist(), g.etype.tolist()))
            assert len(triples) == len(set(triples))

    @pytest.mark.parametrize("seed", range(0, 60, 3))
    def test_edge_count_matches_independent_recount(self, seed):
        program = generate_program(seed).program
        g = build_graph(program, BT.names())
        assert g.num_edges == recount_expected_edges(program, BT.names())

    def test_dump_format(self):
        g = graph_of("x = 1;")
        lines = g.dump().strip().split("\n")
        assert len(lines) == g.num_edges
        src, dst, et = lines[0].split()
        assert src.isdigit() and dst.isdigit()
        assert et in ("ast", "ast_rev", "last_usage", "last_usage_rev", "returns_to", "returns_to_rev")


class TestVocabulary:
    def test_contains_words_plus_reserved(self):
        g = graph_of("x = 1;")
        vocab = build_vocabulary([g], min_count=1)
        for word in ("x", "=", "1"):
            assert vocab.index(word) >= len(vocab.reserved)

    def test_unseen_word_maps_to_unknown(self):
        g = graph_of("x = 1;")
        vocab = build_vocabulary([g], min_count=1)
        assert vocab.index("zzz") == 0

    def test_empty_value_reserved_index(self):
        g = graph_of("x = 1;")
        vocab = build_vocabulary([g], min_count=1)
        assert vocab.index("") == 1

    def test_min_count_filter(self):
        g1 = graph_of("x = 1;")
        g2 = graph_of("x = 2;")
        vocab = build_vocabulary([g1, g2], min_count=2)
        assert vocab.index("x") != 0
        assert vocab.index("1") == 0  # appears once only

    def test_rebuild_identical(self):
        graphs = [build_graph(generate_program(s).program, BT.names()) for s in range(6)]
        v1 = build_vocabulary(graphs)
        v2 = build_vocabulary(graphs)
        assert v1 == v2 and v1.index_of == v2.index_of

    def test_annotation_tokens_reserved(self):
        g = graph_of("x = 1;")
        vocab = build_vocabulary([g], min_count=1)
        from rct.minilang.ast import TypeLabel

        for label in TypeLabel:
            idx = vocab.index(annotation_word(label))
            assert 2 <= idx < len(vocab.reserved)

    def test_save_load_roundtrip(self, tmp_path):
        graphs = [build_graph(generate_program(s).program, BT.names()) for s in range(4)]
        vocab = build_vocabulary(graphs)
        path = tmp_path / "vocab.txt"
        vocab.save(str(path))
        assert Vocabulary.load(str(path)) == vocab

    def test_empty_training_set_rejected(self):
        with pytest.raises(ValueError):
            build_vocabulary([])
