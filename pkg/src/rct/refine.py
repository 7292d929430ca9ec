"""Representation refinement: edge features, the shared min-cost max-flow ILP,
an exact branch-and-bound solver, and abstraction application.

One integer capacity variable per edge feature is shared across all samples;
per sample, integer flow variables must route every attribution source's
supply to the predicted node. Zero-cost features are dropped from the graphs.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .graphs import EDGE_TYPE_NAMES, Graph
from .minilang.ast import KIND_ORDER


@dataclass(frozen=True, order=True)
class EdgeFeature:
    """Local edge class: edge type plus the kind attributes of its endpoints."""

    etype: str
    src_kind: str
    dst_kind: str

    def __str__(self) -> str:
        return f"{self.etype} {self.src_kind} {self.dst_kind}"

    @classmethod
    def parse(cls, text: str) -> EdgeFeature:
        parts = text.split()
        if len(parts) != 3:
            raise ValueError(f"bad edge feature line {text!r}")
        return cls(*parts)


def edge_feature(graph: Graph, edge_index: int) -> EdgeFeature:
    """Feature of one edge; node value attributes are ignored."""
    return EdgeFeature(
        EDGE_TYPE_NAMES[graph.etype[edge_index]],
        KIND_ORDER[graph.kinds[graph.src[edge_index]]].value,
        KIND_ORDER[graph.kinds[graph.dst[edge_index]]].value,
    )


def graph_features(graph: Graph) -> list[EdgeFeature]:
    return [edge_feature(graph, i) for i in range(graph.num_edges)]


@dataclass(frozen=True)
class Abstraction:
    """Retained edge features; applying it deletes edges, never nodes."""

    features: frozenset[EdgeFeature]

    def __len__(self) -> int:
        return len(self.features)

    def __contains__(self, feature: EdgeFeature) -> bool:
        return feature in self.features

    def edge_mask(self, graph: Graph) -> np.ndarray:
        return np.asarray(
            [edge_feature(graph, i) in self.features for i in range(graph.num_edges)],
            dtype=bool,
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for feature in sorted(self.features):
                fh.write(str(feature) + "\n")

    @classmethod
    def load(cls, path: str) -> Abstraction:
        with open(path, encoding="utf-8") as fh:
            features = frozenset(EdgeFeature.parse(line) for line in fh if line.strip())
        return cls(features)


def apply_abstraction(alpha: Abstraction, graph: Graph) -> Graph:
    """Keep only edges whose features are in the abstraction."""
    keep = alpha.edge_mask(graph)
    return Graph(
        num_nodes=graph.num_nodes,
        kinds=graph.kinds,
        values=graph.values,
        src=graph.src[keep],
        dst=graph.dst[keep],
        etype=graph.etype[keep],
    )


# --- flow problem -------------------------------------------------------------------


@dataclass
class FlowSampleInstance:
    key: str
    src: np.ndarray
    dst: np.ndarray
    feature_idx: np.ndarray
    supplies: dict[int, int]  # source node -> positive integer supply
    sink: int
    num_nodes: int

    @property
    def total_supply(self) -> int:
        return sum(self.supplies.values())

    def r(self, node: int) -> int:
        if node == self.sink:
            return -self.total_supply
        return self.supplies.get(node, 0)


@dataclass
class FlowProblem:
    features: list[EdgeFeature]  # sorted; index is the cost-variable index
    samples: list[FlowSampleInstance]
    dropped: list[tuple[str, str]] = field(default_factory=list)
    threshold: float = 0.05
    scale: int = 100


def build_flow_problem(
    items: list[tuple[str, Graph, int, np.ndarray]], t: float = 0.05, scale: int = 100
) -> FlowProblem:
    """items: (key, graph, predicted node, attribution over nodes) per sample.

    Sources are nodes with attribution above t (integerized at the given
    scale); the sink's own attribution is left out. Samples whose sources
    cannot reach the sink are dropped with a warning entry.
    """
    feature_set: set[EdgeFeature] = set()
    per_graph_features: list[list[EdgeFeature]] = []
    for _, graph, _, _ in items:
        feats = graph_features(graph)
        per_graph_features.append(feats)
        feature_set.update(feats)
    features = sorted(feature_set)
    feature_index = {f: i for i, f in enumerate(features)}

    problem = FlowProblem(features=features, samples=[], threshold=t, scale=scale)
    for (key, graph, sink, attribution), feats in zip(items, per_graph_features):
        supplies: dict[int, int] = {}
        for v in range(graph.num_nodes):
            if v == sink or attribution[v] <= t:
                continue
            r = math.floor(scale * float(attribution[v]))
            if r > 0:
                supplies[v] = r
        if not supplies:
            continue  # trivially satisfied by zero flow
        reach = _reaches_sink(graph, sink)
        unreachable = [v for v in supplies if v not in reach]
        if unreachable:
            problem.dropped.append((key, f"sources {unreachable} cannot reach sink {sink}"))
            continue
        problem.samples.append(
            FlowSampleInstance(
                key=key,
                src=graph.src.astype(np.int64),
                dst=graph.dst.astype(np.int64),
                feature_idx=np.asarray([feature_index[f] for f in feats], dtype=np.int64),
                supplies=supplies,
                sink=sink,
                num_nodes=graph.num_nodes,
            )
        )
    return problem


def _reaches_sink(graph: Graph, sink: int) -> set[int]:
    """Nodes with a directed path to the sink."""
    incoming: dict[int, list[int]] = {}
    for s, d in zip(graph.src.tolist(), graph.dst.tolist()):
        incoming.setdefault(d, []).append(s)
    seen = {sink}
    queue = deque([sink])
    while queue:
        v = queue.popleft()
        for u in incoming.get(v, []):
            if u not in seen:
                seen.add(u)
                queue.append(u)
    return seen


# --- exact solver ---------------------------------------------------------------------


@dataclass
class SolveResult:
    costs: dict[EdgeFeature, int]
    objective: int
    optimal: bool
    flows: list[np.ndarray]  # per sample, integral flow per edge
    message: str = ""

    def nonzero_features(self) -> frozenset[EdgeFeature]:
        return frozenset(f for f, c in self.costs.items() if c > 0)


class InfeasibleProblemError(RuntimeError):
    def __init__(self, sample_keys: list[str]):
        self.sample_keys = sample_keys
        super().__init__(f"flow problem infeasible for samples {sample_keys}")


@dataclass
class SolverLimits:
    max_features_exact: int = 64
    max_supply_exact: int = 10_000
    max_bb_nodes: int = 20_000


def _lp_matrices(problem: FlowProblem):
    """Sparse LP: variables [costs | flows per sample]; min sum of costs."""
    n_costs = len(problem.features)
    n_vars = n_costs
    flow_offsets = []
    for inst in problem.samples:
        flow_offsets.append(n_vars)
        n_vars += len(inst.src)

    cap_rows, cap_cols, cap_vals = [], [], []
    eq_rows, eq_cols, eq_vals, eq_rhs = [], [], [], []
    row_ub = 0
    row_eq = 0
    for inst, offset in zip(problem.samples, flow_offsets):
        n_edges = len(inst.src)
        for e in range(n_edges):
            cap_rows.extend((row_ub, row_ub))
            cap_cols.extend((offset + e, int(inst.feature_idx[e])))
            cap_vals.extend((1.0, -1.0))
            row_ub += 1
        incident: dict[int, list[tuple[int, float]]] = {}
        for e in range(n_edges):
            incident.setdefault(int(inst.dst[e]), []).append((offset + e, 1.0))
            incident.setdefault(int(inst.src[e]), []).append((offset + e, -1.0))
        for v in range(inst.num_nodes):
            r = inst.r(v)
            entries = incident.get(v, [])
            if not entries and r == 0:
                continue
            for col, val in entries:
                eq_rows.append(row_eq)
                eq_cols.append(col)
                eq_vals.append(val)
            eq_rhs.append(-r)  # inflow - outflow = -r_v
            row_eq += 1

    a_ub = sparse.csr_matrix((cap_vals, (cap_rows, cap_cols)), shape=(row_ub, n_vars))
    b_ub = np.zeros(row_ub)
    a_eq = sparse.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(row_eq, n_vars))
    b_eq = np.asarray(eq_rhs, dtype=np.float64)
    c = np.zeros(n_vars)
    c[:n_costs] = 1.0
    return c, a_ub, b_ub, a_eq, b_eq, flow_offsets


def _max_flow_certificate(inst: FlowSampleInstance, caps: np.ndarray) -> np.ndarray | None:
    """Edmonds-Karp with a super source; returns per-edge flow or None."""
    n = inst.num_nodes
    super_src = n
    num_nodes = n + 1
    # Arc list with residuals: forward arcs for program edges and supply arcs.
    arc_to: list[int] = []
    arc_cap: list[int] = []
    arc_head: dict[int, list[int]] = {v: [] for v in range(num_nodes)}

    def add_arc(u: int, v: int, cap: int) -> int:
        idx = len(arc_to)
        arc_to.append(v)
        arc_cap.append(cap)
        arc_head[u].append(idx)
        arc_to.append(u)
        arc_cap.append(0)
        arc_head[v].append(idx + 1)
        return idx

    edge_arcs = []
    for e in range(len(inst.src)):
        cap = int(caps[inst.feature_idx[e]])
        edge_arcs.append(add_arc(int(inst.src[e]), int(inst.dst[e]), cap))
    for v, supply in inst.supplies.items():
        add_arc(super_src, v, supply)

    total = inst.total_supply
    flow_sent = 0
    while flow_sent < total:
        parent_arc = {super_src: -1}
        queue = deque([super_src])
        while queue and inst.sink not in parent_arc:
            u = queue.popleft()
            for arc in arc_head[u]:
                v = arc_to[arc]
                if arc_cap[arc] > 0 and v not in parent_arc:
                    parent_arc[v] = arc
                    queue.append(v)
        if inst.sink not in parent_arc:
            return None
        # Find bottleneck along the path.
        bottleneck = total - flow_sent
        v = inst.sink
        while v != super_src:
            arc = parent_arc[v]
            bottleneck = min(bottleneck, arc_cap[arc])
            v = arc_to[arc ^ 1]
        v = inst.sink
        while v != super_src:
            arc = parent_arc[v]
            arc_cap[arc] -= bottleneck
            arc_cap[arc ^ 1] += bottleneck
            v = arc_to[arc ^ 1]
        flow_sent += bottleneck
    flows = np.zeros(len(inst.src), dtype=np.int64)
    for e, arc in enumerate(edge_arcs):
        flows[e] = arc_cap[arc ^ 1]  # residual of the reverse arc equals the flow
    return flows


def verify_certificate(inst: FlowSampleInstance, caps_by_idx: np.ndarray, flows: np.ndarray) -> bool:
    """Direct evaluation of capacity and conservation constraints."""
    if np.any(flows < 0):
        return False
    if np.any(flows > caps_by_idx[inst.feature_idx]):
        return False
    balance = np.zeros(inst.num_nodes, dtype=np.int64)
    np.add.at(balance, inst.dst, flows)
    np.add.at(balance, inst.src, -flows)
    for v in range(inst.num_nodes):
        if balance[v] != -inst.r(v):
            return False
    return True


def solve(problem: FlowProblem, limits: SolverLimits | None = None) -> SolveResult:
    """Minimize the summed feature capacities subject to per-sample flows.

    Exact branch-and-bound over the LP relaxation, branching only on cost
    variables (integral costs admit integral flows by max-flow integrality).
    Past the exact-size limits, falls back to ceiling-rounding the relaxation
    and flags the result non-optimal.
    """
    limits = limits or SolverLimits()
    n_costs = len(problem.features)
    if not problem.samples:
        return SolveResult({f: 0 for f in problem.features}, 0, True, [], "no sources")

    c, a_ub, b_ub, a_eq, b_eq, _ = _lp_matrices(problem)
    max_supply = max(inst.total_supply for inst in problem.samples)
    base_bounds = [(0.0, float(max_supply))] * len(c)

    def lp(bound_overrides: dict[int, tuple[float, float]]):
        bounds = list(base_bounds)
        for idx, bb in bound_overrides.items():
            bounds[idx] = bb
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
        return res

    root = lp({})
    if not root.success:
        return _report_infeasible(problem)

    exact = n_costs <= limits.max_features_exact and max_supply <= limits.max_supply_exact

    def finish(costs_arr: np.ndarray, optimal: bool, message: str) -> SolveResult:
        flows = []
        for inst in problem.samples:
            flow = _max_flow_certificate(inst, costs_arr)
            if flow is None or not verify_certificate(inst, costs_arr, flow):
                raise RuntimeError(f"certificate failed for sample {inst.key}")
            flows.append(flow)
        costs = {f: int(costs_arr[i]) for i, f in enumerate(problem.features)}
        return SolveResult(costs, int(costs_arr.sum()), optimal, flows, message)

    if not exact:
        costs_arr = np.ceil(np.maximum(root.x[:n_costs], 0.0) - 1e-9)
        return finish(costs_arr, False, "size limits exceeded; LP relaxation with ceiling rounding")

    # Branch and bound, best-bound first.
    tol = 1e-6
    best_obj = math.inf
    best_costs: np.ndarray | None = None
    counter = 0
    heap: list[tuple[float, int, dict[int, tuple[float, float]]]] = []
    heapq.heappush(heap, (root.fun, counter, {}))
    nodes_explored = 0
    while heap and nodes_explored < limits.max_bb_nodes:
        bound, _, overrides = heapq.heappop(heap)
        if math.ceil(bound - tol) >= best_obj:
            continue
        res = lp(overrides)
        nodes_explored += 1
        if not res.success or math.ceil(res.fun - tol) >= best_obj:
            continue
        costs_part = res.x[:n_costs]
        frac = np.abs(costs_part - np.round(costs_part))
        most_frac = int(np.argmax(frac))
        if frac[most_frac] <= tol:
            candidate = np.round(costs_part)
            obj = float(candidate.sum())
            if obj < best_obj and all(
                _max_flow_certificate(inst, candidate) is not None for inst in problem.samples
            ):
                best_obj = obj
                best_costs = candidate
            continue
        value = costs_part[most_frac]
        lo, hi = (0.0, float(max_supply))
        if most_frac in overrides:
            lo, hi = overrides[most_frac]
        down = dict(overrides)
        down[most_frac] = (lo, math.floor(value))
        up = dict(overrides)
        up[most_frac] = (math.ceil(value), hi)
        for child in (down, up):
            counter += 1
            heapq.heappush(heap, (res.fun, counter, child))

    if best_costs is None:
        costs_arr = np.ceil(np.maximum(root.x[:n_costs], 0.0) - 1e-9)
        return finish(costs_arr, False, "branch-and-bound node limit hit; rounded relaxation")
    return finish(best_costs, True, f"optimal after {nodes_explored} nodes")


def _report_infeasible(problem: FlowProblem) -> SolveResult:
    bad = []
    for inst in problem.samples:
        caps = np.full(len(problem.features), inst.total_supply)
        if _max_flow_certificate(inst, caps) is None:
            bad.append(inst.key)
    raise InfeasibleProblemError(bad or [inst.key for inst in problem.samples])


def extract_abstraction(result: SolveResult) -> Abstraction:
    """Keep features with non-zero capacity."""
    return Abstraction(result.nonzero_features())


# --- LP export ---------------------------------------------------------------------


def export_lp(problem: FlowProblem, path: str) -> None:
    """Textual LP-format export for cross-checking with external solvers.

    Variables: cost_q{i} for problem.features[i]; f_s{j}_e{k} for edge k of
    sample j. Constraints: cap_s{j}_e{k} (capacity), con_s{j}_n{v} (flow
    conservation, written as inflow - outflow = -r_v).
    """
    lines: list[str] = ["\\ flow refinement ILP"]
    for i, feature in enumerate(problem.features):
        lines.append(f"\\ q{i} = {feature}")
    lines.append("Minimize")
    if problem.features:
        terms = " + ".join(f"cost_q{i}" for i in range(len(problem.features)))
        lines.append(f" obj: {terms}")
    else:
        lines.append(" obj:")
    lines.append("Subject To")
    for j, inst in enumerate(problem.samples):
        for e in range(len(inst.src)):
            q = int(inst.feature_idx[e])
            lines.append(f" cap_s{j}_e{e}: f_s{j}_e{e} - cost_q{q} <= 0")
        incident: dict[int, list[str]] = {}
        for e in range(len(inst.src)):
            incident.setdefault(int(inst.dst[e]), []).append(f"+ f_s{j}_e{e}")
            incident.setdefault(int(inst.src[e]), []).append(f"- f_s{j}_e{e}")
        for v in range(inst.num_nodes):
            r = inst.r(v)
            entries = incident.get(v, [])
            if not entries:
                continue
            expr = " ".join(entries).lstrip("+ ")
            lines.append(f" con_s{j}_n{v}: {expr} = {-r}")
    lines.append("Bounds")
    for i in range(len(problem.features)):
        lines.append(f" 0 <= cost_q{i}")
    for j, inst in enumerate(problem.samples):
        for e in range(len(inst.src)):
            lines.append(f" 0 <= f_s{j}_e{e}")
    names = [f"cost_q{i}" for i in range(len(problem.features))]
    for j, inst in enumerate(problem.samples):
        names.extend(f"f_s{j}_e{e}" for e in range(len(inst.src)))
    lines.append("Generals")
    for name in names:
        lines.append(f" {name}")
    lines.append("End")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# --- end-to-end refinement ------------------------------------------------------------


def refine_representation(
    dataset,
    model,
    vocab,
    builtins,
    h: float,
    abstraction: Abstraction | None = None,
    t: float = 0.05,
    sample_cap: int = 2000,
    seed: int = 0,
    limits: SolverLimits | None = None,
    chunk_nodes: int = 40_000,
) -> tuple[Abstraction, SolveResult, FlowProblem]:
    """Attribution-driven refinement over all samples of the dataset.

    Attribution targets the ground-truth label where the model predicts
    (selection score >= h) and the abstain label where it abstains. The flow
    problem is built on the graphs as the model currently sees them (current
    abstraction applied); one shared ILP covers every sample.
    """
    from .adversary import input_gradient_scores, normalize_attribution
    from .minilang.ast import LABEL_INDEX
    from .model import ABSTAIN_INDEX, encode_graph, make_batch, selection_score
    from .rng import stream

    samples = list(dataset.samples)
    if len(samples) > sample_cap:
        pick = stream(seed, "refinepick").permutation(len(samples))[:sample_cap]
        samples = [samples[i] for i in sorted(pick)]

    graphs: dict[str, Graph] = {}
    encoded: dict[str, object] = {}
    for s in samples:
        if s.program_id in graphs:
            continue
        entry = dataset.programs[s.program_id]
        base = entry.ensure_graph(builtins.names())
        graphs[s.program_id] = apply_abstraction(abstraction, base) if abstraction else base
        encoded[s.program_id] = encode_graph(base, vocab, entry.annotations, abstraction)

    # One eval pass per program decides predict-vs-abstain for its samples.
    targets: dict[tuple[str, int], int] = {}
    by_program: dict[str, list] = {}
    for s in samples:
        by_program.setdefault(s.program_id, []).append(s)
    for program_id, group in by_program.items():
        batch = make_batch([(encoded[program_id], [s.position for s in group])])
        probs = model.predict_probs(batch)
        for row, s in enumerate(group):
            if selection_score(probs[row]) >= h:
                targets[(program_id, s.position)] = LABEL_INDEX[s.label]
            else:
                targets[(program_id, s.position)] = ABSTAIN_INDEX

    # Batched attribution; every sample gets its own graph copy in the batch.
    items: list[tuple[str, Graph, int, np.ndarray]] = []
    start = 0
    while start < len(samples):
        stop = start
        nodes = 0
        while stop < len(samples) and (nodes == 0 or nodes < chunk_nodes):
            nodes += len(dataset.programs[samples[stop].program_id].program.nodes)
            stop += 1
        chunk = samples[start:stop]
        batch_items = [(encoded[s.program_id], [s.position]) for s in chunk]
        target_arr = np.asarray(
            [targets[(s.program_id, s.position)] for s in chunk], dtype=np.int64
        )
        raw = input_gradient_scores(model, make_batch(batch_items), target_arr)
        offset = 0
        for s in chunk:
            n = graphs[s.program_id].num_nodes
            a = normalize_attribution(raw[offset : offset + n])
            items.append((f"{s.program_id}:{s.position}", graphs[s.program_id], s.position, a))
            offset += n
        start = stop

    problem = build_flow_problem(items, t=t)
    result = solve(problem, limits)
    return extract_abstraction(result), result, problem


def full_feature_set(graphs: list[Graph]) -> Abstraction:
    """The abstraction that keeps everything seen in the given graphs."""
    features: set[EdgeFeature] = set()
    for g in graphs:
        features.update(graph_features(g))
    return Abstraction(frozenset(features))
