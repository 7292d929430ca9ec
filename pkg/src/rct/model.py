"""Graph attention network with an abstain output, losses, and training.

The network embeds node kind and value, runs T rounds of single-head
dot-product attention over in-edges (per-edge-type key/value transforms,
weights shared across rounds) with residual and feed-forward sublayers, and
projects every node to 10 logits: the 9 type labels plus abstain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dataset import Dataset, Sample
from .graphs import NUM_EDGE_TYPES, NUM_KINDS, Graph, Vocabulary, annotation_word
from .minilang.ast import LABEL_INDEX, LABEL_ORDER, TypeLabel
from .rng import stream

NUM_LABELS = 9
NUM_OUTPUTS = NUM_LABELS + 1
ABSTAIN_INDEX = NUM_LABELS
ABSTAIN = "abstain"


@dataclass
class ModelConfig:
    embed_size: int = 128
    hidden_size: int = 128
    steps: int = 4
    dropout: float = 0.1
    batch_size: int = 32
    epochs: int = 12
    anneal_start: int | None = None  # epochs before o starts to descend
    anneal_len: int | None = None  # epochs over which o descends to 1
    lr: float = 0.001

    def __post_init__(self) -> None:
        if min(self.embed_size, self.hidden_size, self.steps, self.batch_size, self.epochs) <= 0:
            raise ValueError("model dimensions, steps, batch size and epochs must be positive")

    @property
    def n_epochs_high(self) -> int:
        return self.anneal_start if self.anneal_start is not None else math.ceil(self.epochs / 4)

    @property
    def k_epochs_descent(self) -> int:
        return self.anneal_len if self.anneal_len is not None else math.ceil(self.epochs / 2)


# --- losses, annealing, selection ----------------------------------------------


def cross_entropy(probs: T.Tensor, labels: np.ndarray) -> T.Tensor:
    """Mean of -log p_y over rows; log clamped at 1e-12."""
    p_y = T.take_along_rows(probs, labels)
    return T.mean(-T.safe_log(p_y))


def abstain_cross_entropy(probs: T.Tensor, labels: np.ndarray, o: float) -> T.Tensor:
    """Mean of -log(p_y * o + p_abstain) over rows."""
    p_y = T.take_along_rows(probs, labels)
    p_abstain = T.take_along_rows(probs, np.full(len(labels), ABSTAIN_INDEX, dtype=np.int64))
    return T.mean(-T.safe_log(p_y * o + p_abstain))


def anneal(epoch: int, n: int, k: int) -> float:
    """o schedule: |Y| for the first n epochs, then linear descent to 1 over k."""
    high = float(NUM_LABELS)
    if epoch < n:
        return high
    if epoch < n + k:
        return high - (high - 1.0) * (epoch - n) / k
    return 1.0


def selection_score(probs_row: np.ndarray) -> float:
    """g_h input: probability of selecting any label other than abstain."""
    return float(1.0 - probs_row[ABSTAIN_INDEX])


def renormalize(probs_row: np.ndarray) -> np.ndarray:
    """The 9-label distribution with abstain mass removed."""
    body = probs_row[:NUM_LABELS]
    total = body.sum()
    if total <= 0.0:
        return np.full(NUM_LABELS, 1.0 / NUM_LABELS)
    return body / total


def best_label(probs_row: np.ndarray) -> str:
    return LABEL_ORDER[int(np.argmax(probs_row[:NUM_LABELS]))].value


def select(probs_row: np.ndarray, h: float) -> tuple[str, np.ndarray]:
    """Predict the renormalized argmax when confident enough, else abstain."""
    renorm = renormalize(probs_row)
    if selection_score(probs_row) >= h:
        return LABEL_ORDER[int(np.argmax(renorm))].value, renorm
    return ABSTAIN, renorm


# --- graph encoding and batching -------------------------------------------------


@dataclass
class EncodedGraph:
    kinds: np.ndarray  # (N,) int
    values: np.ndarray  # (N,) vocabulary indices
    src: np.ndarray
    dst: np.ndarray
    etype: np.ndarray
    num_nodes: int


def encode_graph(
    graph: Graph,
    vocab: Vocabulary,
    annotations: dict[int, TypeLabel] | None = None,
    abstraction=None,
) -> EncodedGraph:
    """Resolve value words against the vocabulary, overlay type annotations,
    and drop edges outside the abstraction."""
    values = vocab.encode_values(graph.values)
    if annotations:
        for node_id, label in annotations.items():
            values[node_id] = vocab.index(annotation_word(label))
    src, dst, etype = graph.src, graph.dst, graph.etype
    if abstraction is not None:
        keep = abstraction.edge_mask(graph)
        src, dst, etype = src[keep], dst[keep], etype[keep]
    return EncodedGraph(
        kinds=graph.kinds.astype(np.int64),
        values=values.astype(np.int64),
        src=src.astype(np.int64),
        dst=dst.astype(np.int64),
        etype=etype.astype(np.int64),
        num_nodes=graph.num_nodes,
    )


@dataclass
class GraphBatch:
    kinds: np.ndarray
    values: np.ndarray
    src: np.ndarray  # sorted by edge type
    dst: np.ndarray
    type_slices: list[tuple[int, int, int]]  # (etype, start, stop) into src/dst
    num_nodes: int
    positions: np.ndarray  # queried node indices, global


def make_batch(items: list[tuple[EncodedGraph, list[int]]]) -> GraphBatch:
    """Merge graphs into one disjoint batch graph with node offsets."""
    kinds, values, srcs, dsts, etypes, positions = [], [], [], [], [], []
    offset = 0
    for enc, pos in items:
        kinds.append(enc.kinds)
        values.append(enc.values)
        srcs.append(enc.src + offset)
        dsts.append(enc.dst + offset)
        etypes.append(enc.etype)
        positions.extend(p + offset for p in pos)
        offset += enc.num_nodes
    src = np.concatenate(srcs) if srcs else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dsts) if dsts else np.zeros(0, dtype=np.int64)
    etype = np.concatenate(etypes) if etypes else np.zeros(0, dtype=np.int64)
    order = np.argsort(etype, kind="stable")
    src, dst, etype = src[order], dst[order], etype[order]
    type_slices = []
    for t in range(NUM_EDGE_TYPES):
        start = int(np.searchsorted(etype, t, side="left"))
        stop = int(np.searchsorted(etype, t, side="right"))
        if stop > start:
            type_slices.append((t, start, stop))
    return GraphBatch(
        kinds=np.concatenate(kinds),
        values=np.concatenate(values),
        src=src,
        dst=dst,
        type_slices=type_slices,
        num_nodes=offset,
        positions=np.asarray(positions, dtype=np.int64),
    )


# --- the network ------------------------------------------------------------------


class GnnModel:
    """Message-passing network; parameters live in a named, ordered dict."""

    def __init__(self, config: ModelConfig, vocab_size: int, seed: int = 0):
        self.config = config
        self.vocab_size = vocab_size
        d, hidden = config.embed_size, config.hidden_size
        self.params: dict[str, T.Tensor] = {}
        init = stream(seed, "init")

        def glorot(name: str, rows: int, cols: int) -> None:
            scale = math.sqrt(6.0 / (rows + cols))
            self.params[name] = T.Tensor(init.uniform(-scale, scale, (rows, cols)), requires_grad=True)

        def zeros(name: str, *shape: int) -> None:
            self.params[name] = T.Tensor(np.zeros(shape), requires_grad=True)

        self.params["emb_kind"] = T.Tensor(
            init.normal(0.0, 1.0 / math.sqrt(d), (NUM_KINDS, d)), requires_grad=True
        )
        self.params["emb_value"] = T.Tensor(
            init.normal(0.0, 1.0 / math.sqrt(d), (vocab_size, d)), requires_grad=True
        )
        glorot("w_query", d, d)
        zeros("b_query", d)
        for t in range(NUM_EDGE_TYPES):
            glorot(f"w_key_{t}", d, d)
            glorot(f"w_val_{t}", d, d)
        glorot("w_msg", d, d)
        zeros("b_msg", d)
        glorot("ffn_w1", d, hidden)
        zeros("ffn_b1", hidden)
        glorot("ffn_w2", hidden, d)
        zeros("ffn_b2", d)
        glorot("head_w", d, NUM_OUTPUTS)
        zeros("head_b", NUM_OUTPUTS)

    # -- persistence --

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in state:
                raise ValueError(f"checkpoint missing tensor {name!r}")
            if state[name].shape != p.data.shape:
                raise ValueError(f"{name}: shape {state[name].shape} vs {p.data.shape}")
            p.data = state[name].copy()

    def param_list(self) -> list[T.Tensor]:
        return list(self.params.values())

    # -- forward --

    def forward(
        self,
        batch: GraphBatch,
        training: bool = False,
        drop_rng: np.random.Generator | None = None,
        capture_inputs: bool = False,
    ) -> tuple[T.Tensor, T.Tensor | None]:
        """Per-position probability rows over the 10 outputs.

        With capture_inputs the summed input embedding tensor is returned so
        callers can ask the tape for per-node input gradients.
        """
        cfg = self.config
        p = self.params
        scale = 1.0 / math.sqrt(cfg.embed_size)
        h0 = T.add(T.gather_rows(p["emb_kind"], batch.kinds), T.gather_rows(p["emb_value"], batch.values))
        h = h0
        n = batch.num_nodes
        for _ in range(cfg.steps):
            q = T.add(T.matmul(h, p["w_query"]), p["b_query"])
            key_parts, val_parts = [], []
            for t, start, stop in batch.type_slices:
                h_src = T.gather_rows(h, batch.src[start:stop])
                key_parts.append(T.matmul(h_src, p[f"w_key_{t}"]))
                val_parts.append(T.matmul(h_src, p[f"w_val_{t}"]))
            if key_parts:
                keys = T.concat(key_parts, axis=0)
                vals = T.concat(val_parts, axis=0)
                q_dst = T.gather_rows(q, batch.dst)
                scores = T.reduce_sum(T.mul(q_dst, keys), axis=-1) * scale
                # Per-destination max is a constant shift; softmax is invariant to it.
                seg_max = np.full(n, -np.inf)
                np.maximum.at(seg_max, batch.dst, scores.data)
                shifted = T.sub(scores, T.Tensor(seg_max[batch.dst]))
                weights = T.exp(shifted)
                denom = T.segment_sum(weights, batch.dst, n)
                att = T.div(weights, T.gather_rows(denom, batch.dst))
                weighted = T.mul(vals, T.reshape(att, (-1, 1)))
                msg = T.segment_sum(weighted, batch.dst, n)
            else:
                msg = T.Tensor(np.zeros_like(h.data))
            if training and cfg.dropout > 0 and drop_rng is not None:
                msg = T.dropout(msg, cfg.dropout, drop_rng)
            u = T.add(h, T.add(T.matmul(msg, p["w_msg"]), p["b_msg"]))
            f1 = T.relu(T.add(T.matmul(u, p["ffn_w1"]), p["ffn_b1"]))
            if training and cfg.dropout > 0 and drop_rng is not None:
                f1 = T.dropout(f1, cfg.dropout, drop_rng)
            h = T.add(u, T.add(T.matmul(f1, p["ffn_w2"]), p["ffn_b2"]))
        logits = T.add(T.matmul(h, p["head_w"]), p["head_b"])
        probs = T.softmax_rows(T.gather_rows(logits, batch.positions))
        return probs, (h0 if capture_inputs else None)

    def predict_probs(self, batch: GraphBatch) -> np.ndarray:
        """Eval-mode forward; plain numpy output."""
        probs, _ = self.forward(batch, training=False)
        return probs.data


# --- training ------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: GnnModel
    log: list[str]
    best_epoch: int
    best_valid_acc: float


class BatchBuilder:
    """Caches encoded graphs per program for one (vocab, abstraction) setting."""

    def __init__(self, dataset: Dataset, vocab: Vocabulary, builtins, abstraction=None):
        self.dataset = dataset
        self.vocab = vocab
        self.builtins = builtins
        self.abstraction = abstraction
        self._cache: dict[str, EncodedGraph] = {}

    def encoded(self, program_id: str) -> EncodedGraph:
        enc = self._cache.get(program_id)
        if enc is None:
            entry = self.dataset.programs[program_id]
            graph = entry.ensure_graph(self.builtins.names())
            enc = encode_graph(graph, self.vocab, entry.annotations, self.abstraction)
            self._cache[program_id] = enc
        return enc

    def batch(self, samples: list[Sample]) -> tuple[GraphBatch, np.ndarray]:
        batch, labels, _ = self.batch_with_order(samples)
        return batch, labels

    def batch_with_order(self, samples: list[Sample]) -> tuple[GraphBatch, np.ndarray, list[Sample]]:
        """Samples are grouped by program; the returned list gives the row order."""
        by_program: dict[str, list[Sample]] = {}
        for s in samples:
            by_program.setdefault(s.program_id, []).append(s)
        items: list[tuple[EncodedGraph, list[int]]] = []
        labels: list[int] = []
        ordered: list[Sample] = []
        for program_id, group in by_program.items():
            items.append((self.encoded(program_id), [s.position for s in group]))
            labels.extend(LABEL_INDEX[s.label] for s in group)
            ordered.extend(group)
        return make_batch(items), np.asarray(labels, dtype=np.int64), ordered


def batch_loss(
    model: GnnModel,
    batch: GraphBatch,
    labels: np.ndarray,
    loss_kind: str,
    o: float,
    training: bool,
    drop_rng: np.random.Generator | None,
) -> T.Tensor:
    probs, _ = model.forward(batch, training=training, drop_rng=drop_rng)
    if loss_kind == "ce":
        return cross_entropy(probs, labels)
    if loss_kind == "abstain":
        return abstain_cross_entropy(probs, labels, o)
    raise ValueError(f"unknown loss {loss_kind!r}")


def dataset_accuracy(model: GnnModel, builder: BatchBuilder, samples: list[Sample],
                     chunk: int = 256) -> float:
    """Fraction of samples whose renormalized argmax equals the ground truth."""
    if not samples:
        return 0.0
    correct = 0
    for i in range(0, len(samples), chunk):
        part = samples[i : i + chunk]
        batch, labels = builder.batch(part)
        probs = model.predict_probs(batch)
        pred = np.argmax(probs[:, :NUM_LABELS], axis=1)
        correct += int((pred == labels).sum())
    return correct / len(samples)


def train_model(
    train_ds: Dataset,
    valid_ds: Dataset | None,
    vocab: Vocabulary,
    config: ModelConfig,
    builtins,
    loss_kind: str = "abstain",
    abstraction=None,
    seed: int = 0,
    model: GnnModel | None = None,
    epochs: int | None = None,
    fixed_o: float | None = None,
) -> TrainResult:
    """Minibatch Adam training; returns the best-validation checkpoint."""
    if not train_ds.samples:
        raise ValueError("training dataset is empty")
    if model is None:
        model = GnnModel(config, len(vocab), seed=seed)
    n_epochs = config.epochs if epochs is None else epochs
    builder = BatchBuilder(train_ds, vocab, builtins, abstraction)
    valid_builder = BatchBuilder(valid_ds, vocab, builtins, abstraction) if valid_ds else None
    params = model.param_list()
    adam = T.AdamState(lr=config.lr)
    log: list[str] = []
    best_state = model.state()
    best_acc = -1.0
    best_epoch = -1
    samples = list(train_ds.samples)
    for epoch in range(n_epochs):
        o = fixed_o if fixed_o is not None else anneal(epoch, config.n_epochs_high, config.k_epochs_descent)
        order = stream(seed, "shuffle", epoch).permutation(len(samples))
        epoch_loss = 0.0
        for b, start in enumerate(range(0, len(samples), config.batch_size)):
            chunk = [samples[i] for i in order[start : start + config.batch_size]]
            batch, labels = builder.batch(chunk)
            drop_rng = stream(seed, "dropout", epoch, b)
            with T.Tape() as tape:
                loss = batch_loss(model, batch, labels, loss_kind, o, True, drop_rng)
            tape.backward(loss)
            grads = [tape.grad(p) for p in params]
            T.adam_step(params, grads, adam)
            epoch_loss += loss.item() * len(chunk)
        # Accuracy on a clean eval pass; the training pass is skewed by dropout.
        train_acc = dataset_accuracy(model, builder, samples)
        valid_acc = dataset_accuracy(model, valid_builder, valid_ds.samples) if valid_builder else train_acc
        epoch_loss /= len(samples)
        log.append(f"{epoch} {epoch_loss:.6f} {train_acc:.4f} {valid_acc:.4f} {o:.3f}")
        if valid_acc >= best_acc:
            best_acc = valid_acc
            best_epoch = epoch
            best_state = model.state()
    model.load_state(best_state)
    return TrainResult(model, log, best_epoch, best_acc)
