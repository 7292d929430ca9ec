"""Independent oracles used by the tests.

Everything here is deliberately separate from the implementations it checks:
a simplified scope walker for edge recounts, an Edmonds-Karp max-flow for
flow feasibility, and a scipy.milp-based exact reference for the refinement
ILP built from its own constraint matrices.
"""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy import sparse
from scipy.optimize import LinearConstraint, milp

from rct.graphs import Graph
from rct.minilang import Program
from rct.minilang.ast import Kind


def relative_error(got: np.ndarray, want: np.ndarray) -> float:
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = max(float(np.max(np.abs(want))), 1e-10)
    return float(np.max(np.abs(got - want))) / denom


# --- independent graph recount ----------------------------------------------------


def recount_expected_edges(program: Program, builtin_names: frozenset[str]) -> int:
    """Expected directed edge count: (parent-child + consecutive-usage +
    return) pairs, each in both directions. Uses its own scope walk."""
    parent_child = sum(len(node.children) for node in program.nodes)
    returns = 0
    usage_seqs: dict[tuple, list[int]] = {}

    def walk_expr(node_id: int, scope: tuple, env: dict[str, tuple]) -> None:
        node = program.nodes[node_id]
        if node.kind == Kind.IDENT:
            key = env.get(node.value)
            if key is not None:
                usage_seqs.setdefault(key, []).append(node_id)
            return
        for child in node.children:
            walk_expr(child, scope, env)

    def walk_block(block_id: int, scope: tuple, env: dict[str, tuple]) -> None:
        nonlocal returns
        for stmt_id in program.nodes[block_id].children:
            stmt = program.nodes[stmt_id]
            if stmt.kind == Kind.ASSIGN:
                lhs, rhs = stmt.children
                rhs_node = program.nodes[rhs]
                if rhs_node.kind == Kind.FUNCTION:
                    fn_env: dict[str, tuple] = {}
                    for pid in rhs_node.children[:-1]:
                        pname = program.nodes[pid].value
                        fn_env[pname] = (rhs, pname)
                        usage_seqs.setdefault((rhs, pname), []).append(pid)
                    inner_returns_before = returns
                    walk_block(rhs_node.children[-1], (rhs,), fn_env)
                    del inner_returns_before
                else:
                    walk_expr(rhs, scope, env)
                name = program.nodes[lhs].value
                env.setdefault(name, (scope, name))
                usage_seqs.setdefault(env[name], []).append(lhs)
            elif stmt.kind == Kind.RETURN:
                returns += 1
                walk_expr(stmt.children[0], scope, env)
            else:
                walk_expr(stmt_id, scope, env)

    walk_block(program.root, ("top",), {})
    consecutive = sum(max(len(sorted(set(seq))) - 1, 0) for seq in usage_seqs.values())
    return 2 * (parent_child + consecutive + returns)


# --- independent max flow -----------------------------------------------------------


def max_flow_value(num_nodes: int, arcs: list[tuple[int, int, int]], source: int, sink: int) -> int:
    """Edmonds-Karp; arcs are (u, v, capacity)."""
    cap: dict[tuple[int, int], int] = {}
    adj: dict[int, set[int]] = {}
    for u, v, c in arcs:
        cap[(u, v)] = cap.get((u, v), 0) + c
        cap.setdefault((v, u), cap.get((v, u), 0))
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    flow = 0
    while True:
        parent = {source: source}
        queue = deque([source])
        while queue and sink not in parent:
            u = queue.popleft()
            for v in adj.get(u, ()):
                if v not in parent and cap.get((u, v), 0) > 0:
                    parent[v] = u
                    queue.append(v)
        if sink not in parent:
            return flow
        bottleneck = None
        v = sink
        while v != source:
            u = parent[v]
            c = cap[(u, v)]
            bottleneck = c if bottleneck is None else min(bottleneck, c)
            v = u
        v = sink
        while v != source:
            u = parent[v]
            cap[(u, v)] -= bottleneck
            cap[(v, u)] = cap.get((v, u), 0) + bottleneck
            v = u
        flow += bottleneck


def support_feasible(problem, support: frozenset) -> bool:
    """Per-sample max-flow feasibility when only `support` features carry
    capacity (set to the sample's total supply, i.e. effectively unbounded)."""
    for inst in problem.samples:
        total = inst.total_supply
        n = inst.num_nodes
        super_src = n
        arcs = []
        for e in range(len(inst.src)):
            feature = problem.features[inst.feature_idx[e]]
            if feature in support:
                arcs.append((int(inst.src[e]), int(inst.dst[e]), total))
        for v, supply in inst.supplies.items():
            arcs.append((super_src, v, supply))
        if max_flow_value(n + 1, arcs, super_src, inst.sink) < total:
            return False
    return True


# --- independent exact ILP reference ---------------------------------------------------


def milp_reference_objective(problem, support: frozenset | None = None) -> float:
    """Exact optimum via scipy's MILP solver on independently built matrices.

    With `support`, cost variables outside it are fixed to zero.
    """
    n_costs = len(problem.features)
    n_vars = n_costs
    offsets = []
    for inst in problem.samples:
        offsets.append(n_vars)
        n_vars += len(inst.src)
    if not problem.samples:
        return 0.0
    rows, cols, vals, lo, hi = [], [], [], [], []
    r = 0
    for inst, off in zip(problem.samples, offsets):
        for e in range(len(inst.src)):
            rows += [r, r]
            cols += [off + e, int(inst.feature_idx[e])]
            vals += [1.0, -1.0]
            lo.append(-np.inf)
            hi.append(0.0)
            r += 1
        for v in range(inst.num_nodes):
            entries = []
            for e in range(len(inst.src)):
                if int(inst.dst[e]) == v:
                    entries.append((off + e, 1.0))
                if int(inst.src[e]) == v:
                    entries.append((off + e, -1.0))
            if not entries and inst.r(v) == 0:
                continue
            for col, val in entries:
                rows.append(r)
                cols.append(col)
                vals.append(val)
            lo.append(-float(inst.r(v)))
            hi.append(-float(inst.r(v)))
            r += 1
    a = sparse.csc_matrix((vals, (rows, cols)), shape=(r, n_vars))
    c = np.zeros(n_vars)
    c[:n_costs] = 1.0
    max_supply = max(inst.total_supply for inst in problem.samples)
    upper = np.full(n_vars, float(max_supply))
    if support is not None:
        for i, feature in enumerate(problem.features):
            if feature not in support:
                upper[i] = 0.0
    from scipy.optimize import Bounds

    res = milp(
        c,
        constraints=LinearConstraint(a, lo, hi),
        integrality=np.ones(n_vars),
        bounds=Bounds(np.zeros(n_vars), upper),
    )
    if not res.success:
        return np.inf
    return float(round(res.fun))
