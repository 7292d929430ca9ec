from __future__ import annotations

import pytest

from rct.minilang import (
    GenConfig,
    MiniLangSyntaxError,
    TypeConflictError,
    default_builtins,
    generate_program,
    infer_types,
    parse,
    to_source,
)
from rct.minilang.ast import Kind, TypeLabel, isomorphic
from rct.minilang.lexer import token_words

BT = default_builtins()


def find_nodes(program, kind=None, value=None):
    out = []
    for node in program.nodes:
        if kind is not None and node.kind != kind:
            continue
        if value is not None and node.value != value:
            continue
        out.append(node)
    return out


class TestParse:
    def test_assignment_with_nested_calls(self):
        p = parse("v = parseInt(hex.substring(1), radix);")
        root = p.nodes[p.root]
        assert root.kind == Kind.BLOCK and len(root.children) == 1
        assign = p.nodes[root.children[0]]
        assert assign.kind == Kind.ASSIGN
        call = p.nodes[assign.children[1]]
        assert call.kind == Kind.CALL
        assert p.nodes[call.children[0]].value == "parseInt"
        inner = p.nodes[call.children[1]]
        assert inner.kind == Kind.CALL
        member = p.nodes[inner.children[0]]
        assert member.kind == Kind.MEMBER and member.value == "substring"

    def test_empty_input(self):
        p = parse("")
        assert p.nodes[p.root].kind == Kind.BLOCK
        assert p.nodes[p.root].children == ()

    def test_preorder_ids(self):
        p = parse("x = 1 + 2;\ny = x;")
        assert [n.id for n in p.nodes] == list(range(len(p.nodes)))

    def test_syntax_error_position_and_expected(self):
        with pytest.raises(MiniLangSyntaxError) as err:
            parse("x = ;")
        assert err.value.line == 1
        assert err.value.col == 5
        assert err.value.expected

    def test_unterminated_string(self):
        with pytest.raises(MiniLangSyntaxError):
            parse('x = "abc;')

    def test_function_and_object_forms(self):
        src = 'f = (a, b) => {\n  c = a + 1;\n  return c;\n};\ncfg = {width: 10, name: "x"};\nz = cfg.width;\n'
        p = parse(src)
        assert len(find_nodes(p, Kind.FUNCTION)) == 1
        assert len(find_nodes(p, Kind.PARAM)) == 2
        assert len(find_nodes(p, Kind.PROPERTY)) == 2
        assert to_source(parse(to_source(p))) == to_source(p)


class TestPrint:
    def test_single_literal(self):
        assert to_source(parse("1;")) == "1;\n"

    def test_call_printed_once_per_site(self):
        src = "v = parseInt(hex.substring(1), radix);"
        out = to_source(parse(src))
        assert out.count("parseInt") == 1

    def test_precedence_parens(self):
        p = parse("x = (1 + 2) * 3;")
        out = to_source(p)
        assert out == "x = (1 + 2) * 3;\n"
        assert isomorphic(parse(out), p)

    def test_ternary_roundtrip(self):
        src = "x = true ? 1 : 2;\ny = (x < 2 ? x : 1) + 4;\n"
        p = parse(src)
        assert isomorphic(parse(to_source(p)), p)


@pytest.mark.parametrize("seed", range(0, 1000, 7))
def test_roundtrip_sampled(seed):
    g = generate_program(seed)
    reparsed = parse(g.program.source)
    assert isomorphic(g.program, reparsed)
    assert to_source(reparsed) == g.program.source


def test_roundtrip_and_oracle_full_thousand():
    """Round trip plus oracle-vs-generator agreement over 1000 programs."""
    for seed in range(1000):
        g = generate_program(seed)
        reparsed = parse(g.program.source)
        assert isomorphic(g.program, reparsed), f"seed {seed}"
        got = infer_types(reparsed, BT, g.param_env)
        assert got == g.types, f"seed {seed}"


class TestInferTypes:
    def test_parse_int_snippet(self):
        src = "f = (hex, radix) => {\n  v = parseInt(hex.substring(1), radix);\n  return v;\n};\n"
        p = parse(src)
        params = find_nodes(p, Kind.PARAM)
        env = {
            params[0].id: TypeLabel.STRING,
            params[1].id: TypeLabel.NUMBER,
        }
        types = infer_types(p, BT, env)
        parse_int_call = [
            n for n in find_nodes(p, Kind.CALL)
            if p.nodes[n.children[0]].value == "parseInt"
        ][0]
        substring_call = [
            n for n in find_nodes(p, Kind.CALL)
            if p.nodes[n.children[0]].kind == Kind.MEMBER
        ][0]
        v_nodes = find_nodes(p, Kind.IDENT, "v")
        assert types[parse_int_call.id] == TypeLabel.NUMBER
        assert types[substring_call.id] == TypeLabel.STRING
        assert all(types[n.id] == TypeLabel.NUMBER for n in v_nodes)
        assert types[params[0].id] == TypeLabel.STRING

    def test_string_literal(self):
        p = parse('x = "a";')
        types = infer_types(p, BT, {})
        lit = find_nodes(p, Kind.STRING)[0]
        assert types[lit.id] == TypeLabel.STRING

    def test_ternary_branch_mismatch(self):
        p = parse('x = true ? 1 : "a";')
        with pytest.raises(TypeConflictError) as err:
            infer_types(p, BT, {})
        assert err.value.node_id >= 0

    def test_reassignment_type_conflict(self):
        p = parse('x = 1;\nx = "a";')
        with pytest.raises(TypeConflictError):
            infer_types(p, BT, {})

    def test_undefined_name(self):
        p = parse("x = y + 1;")
        with pytest.raises(TypeConflictError):
            infer_types(p, BT, {})

    def test_void_function_and_call(self):
        src = "g = (n) => {\n  m = n * 2;\n};\ng(5);\n"
        p = parse(src)
        param = find_nodes(p, Kind.PARAM)[0]
        types = infer_types(p, BT, {param.id: TypeLabel.NUMBER})
        fn = find_nodes(p, Kind.FUNCTION)[0]
        call = [n for n in find_nodes(p, Kind.CALL) if p.nodes[n.children[0]].value == "g"][0]
        assert types[fn.id] == TypeLabel.FN_VOID
        assert types[call.id] == TypeLabel.VOID

    def test_object_fields(self):
        p = parse('cfg = {width: 10, on: true};\nw = cfg.width;\nb = cfg.on;')
        types = infer_types(p, BT, {})
        obj = find_nodes(p, Kind.OBJECT)[0]
        members = find_nodes(p, Kind.MEMBER)
        assert types[obj.id] == TypeLabel.UNK
        assert {types[m.id] for m in members} == {TypeLabel.NUMBER, TypeLabel.BOOLEAN}

    def test_closed_label_set(self):
        for seed in range(50):
            g = generate_program(seed)
            for label in g.types.values():
                assert isinstance(label, TypeLabel)


class TestGenerator:
    def test_deterministic(self):
        a = generate_program(123)
        b = generate_program(123)
        assert a.program.source == b.program.source
        assert a.types == b.types

    def test_zero_statements(self):
        g = generate_program(0, GenConfig(stmt_min=0, stmt_max=0))
        assert len(g.program.nodes) == 1
        assert g.types == {}

    def test_distinct_seeds_differ(self):
        a = set(zip(*[token_words(generate_program(1).program.source)[i:] for i in range(3)]))
        b = set(zip(*[token_words(generate_program(2).program.source)[i:] for i in range(3)]))
        union = a | b
        assert union and len(a & b) / len(union) < 1.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            generate_program(0, GenConfig(stmt_min=5, stmt_max=2))

    def test_all_labels_reachable(self):
        seen = set()
        for seed in range(200):
            seen.update(generate_program(seed).types.values())
        assert seen == set(TypeLabel)
