"""The two training algorithms: iterative robust training of one model, and
annotate-and-retrain across multiple models; threshold calibration; stacked
inference; exhaustive rename verification.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .adversary import (
    ATTACK_NAME_POOL,
    AttackBudget,
    DeltaSeq,
    ProgramState,
    WordRenaming,
    adversarial_train_epoch,
    apply_delta,
    attribution,
)
from .dataset import Dataset, ProgramEntry, Sample
from .errors import DataError
from .graphs import Vocabulary, build_graph
from .minilang import BuiltinTable, resolve_scopes
from .minilang.ast import TypeLabel
from .model import (
    ABSTAIN,
    BatchBuilder,
    GnnModel,
    ModelConfig,
    encode_graph,
    make_batch,
    renormalize,
    select,
    selection_score,
    train_model,
)
from .refine import Abstraction, SolverLimits, full_feature_set, refine_representation


@dataclass
class PipelineConfig:
    t_acc: float = 1.0
    eps_acc: float = 0.02
    train_budget: int = 20
    eval_budget: int = 230
    attack_max_len: int = 8
    attack_eps: float = 0.01
    adv_epochs: int = 5
    initial_epochs: int | None = None
    refine_t: float = 0.05
    refine_sample_cap: int = 2000
    max_rounds: int = 8
    max_models: int = 8
    verify_cap: int = 4096
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.t_acc <= 1.0:
            raise ValueError(f"t_acc must be in [0,1], got {self.t_acc}")
        if self.t_acc > 0 and not 0.0 < self.eps_acc < max(self.t_acc, 1e-9):
            # The slack must leave a positive working threshold.
            if self.eps_acc >= self.t_acc:
                raise ValueError(f"eps_acc {self.eps_acc} must be below t_acc {self.t_acc}")

    @property
    def working_t_acc(self) -> float:
        return max(self.t_acc - self.eps_acc, 0.0)


# --- threshold calibration --------------------------------------------------------


def calibrate_threshold(scores: np.ndarray, correct: np.ndarray, t_acc: float) -> float:
    """Smallest h whose selected-sample accuracy reaches t_acc (largest
    coverage); h = 0 when t_acc = 0; h = 1 (abstain everywhere) as last resort."""
    if t_acc <= 0.0:
        return 0.0
    scores = np.asarray(scores, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    candidates = [0.0] + sorted(set(scores.tolist()))
    for h in candidates:
        selected = scores >= h
        n = int(selected.sum())
        if n == 0:
            continue
        if correct[selected].sum() / n >= t_acc:
            return float(h)
    return 1.0


# --- model bundle and stacked inference ----------------------------------------------


IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_KEYWORDS = {"return", "true", "false"}


@dataclass
class ModelBundle:
    """One trained robust model: network, selection threshold, abstraction."""

    model: GnnModel
    vocab: Vocabulary
    h: float
    alpha: Abstraction
    builtins: BuiltinTable

    def encode_state(self, state: ProgramState):
        graph = build_graph(state.program, self.builtins.names())
        return encode_graph(graph, self.vocab, state.annotations, self.alpha)

    def probs_many(self, states: list[ProgramState], positions_per_state: list[list[int]]) -> list[np.ndarray]:
        items = [(self.encode_state(s), pos) for s, pos in zip(states, positions_per_state)]
        batch = make_batch(items)
        probs = self.model.predict_probs(batch)
        out = []
        row = 0
        for pos in positions_per_state:
            out.append(probs[row : row + len(pos)])
            row += len(pos)
        return out

    def predict_many(self, states: list[ProgramState], positions: list[int]) -> list[str]:
        rows = self.probs_many(states, [[p] for p in positions])
        return [select(r[0], self.h)[0] for r in rows]

    def attribution_weights(self, entry: ProgramEntry, sample: Sample) -> np.ndarray:
        enc = self.encode_state(ProgramState.from_entry(entry))
        return attribution(self.model, enc, sample.position, sample.label.value)

    # -- persistence --

    def save(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        T.save_checkpoint(os.path.join(out_dir, "model.ckpt"), self.model.state())
        self.vocab.save(os.path.join(out_dir, "vocab.txt"))
        self.alpha.save(os.path.join(out_dir, "alpha.txt"))
        cfg = self.model.config
        meta = {
            "h": self.h,
            "vocab_size": self.model.vocab_size,
            "config": {
                "embed_size": cfg.embed_size,
                "hidden_size": cfg.hidden_size,
                "steps": cfg.steps,
                "dropout": cfg.dropout,
                "batch_size": cfg.batch_size,
                "epochs": cfg.epochs,
                "anneal_start": cfg.anneal_start,
                "anneal_len": cfg.anneal_len,
                "lr": cfg.lr,
            },
        }
        with open(os.path.join(out_dir, "bundle.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, out_dir: str, builtins: BuiltinTable) -> ModelBundle:
        try:
            with open(os.path.join(out_dir, "bundle.json"), encoding="utf-8") as fh:
                meta = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read bundle {out_dir}: {exc}") from exc
        vocab = Vocabulary.load(os.path.join(out_dir, "vocab.txt"))
        alpha = Abstraction.load(os.path.join(out_dir, "alpha.txt"))
        config = ModelConfig(**meta["config"])
        model = GnnModel(config, meta["vocab_size"], seed=0)
        model.load_state(T.load_checkpoint(os.path.join(out_dir, "model.ckpt")))
        return cls(model, vocab, float(meta["h"]), alpha, builtins)


@dataclass
class Stack:
    """Ordered bundles applied fixed-point style: later models see the type
    annotations written by earlier ones; the first non-abstain claim wins."""

    bundles: list[ModelBundle]

    def predict_many(self, states: list[ProgramState], positions: list[int]) -> list[str]:
        results: list[str] = [ABSTAIN] * len(states)
        claimed: list[bool] = [False] * len(states)
        work = [ProgramState(s.program, s.param_env, dict(s.annotations), s.labels) for s in states]
        candidate_positions = [sorted(s.labels.keys()) for s in work]
        for bundle in self.bundles:
            rows = bundle.probs_many(work, candidate_positions)
            for i, probs in enumerate(rows):
                for row, pos in enumerate(candidate_positions[i]):
                    if selection_score(probs[row]) >= bundle.h and pos not in work[i].annotations:
                        label = TypeLabel.from_str(
                            select(probs[row], bundle.h)[0]
                        )
                        work[i].annotations[pos] = label
                        if pos == positions[i] and not claimed[i]:
                            results[i] = label.value
                            claimed[i] = True
        return results

    def attribution_weights(self, entry: ProgramEntry, sample: Sample) -> np.ndarray:
        """Guided-attack scores: the claiming bundle's attribution, or the
        last bundle's abstain-target attribution when every bundle abstains."""
        state = ProgramState.from_entry(entry)
        for bundle in self.bundles:
            pred = bundle.predict_many([state], [sample.position])[0]
            if pred != ABSTAIN:
                return bundle.attribution_weights(entry, sample)
        bundle = self.bundles[-1]
        enc = bundle.encode_state(state)
        return attribution(bundle.model, enc, sample.position, ABSTAIN)


def save_stack(stack: Stack, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i, bundle in enumerate(stack.bundles):
        sub = os.path.join(out_dir, f"bundle_{i:02d}")
        bundle.save(sub)
        lines.append(
            f"bundle_{i:02d}\tbundle_{i:02d}/model.ckpt\tbundle_{i:02d}/alpha.txt\t{bundle.h}"
        )
    with open(os.path.join(out_dir, "manifest.tsv"), "w", encoding="utf-8") as fh:
        fh.write("# rct-stack v1\n")
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def load_stack(out_dir: str, builtins: BuiltinTable) -> Stack:
    manifest = os.path.join(out_dir, "manifest.tsv")
    try:
        with open(manifest, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read stack manifest {manifest}: {exc}") from exc
    if not lines or not lines[0].startswith("# rct-stack"):
        raise DataError(f"{manifest}:1: not a stack manifest")
    bundles = []
    for line in lines[1:]:
        if not line:
            continue
        sub = line.split("\t")[0]
        bundles.append(ModelBundle.load(os.path.join(out_dir, sub), builtins))
    if not bundles:
        raise DataError(f"{manifest}: no bundles listed")
    return Stack(bundles)


# --- Algorithm 1: robust training of one model ------------------------------------------


@dataclass
class RobustTrainTrace:
    alpha_sizes: list[int] = field(default_factory=list)
    adv_counterexamples: list[int] = field(default_factory=list)
    train_log: list[str] = field(default_factory=list)
    rounds: int = 0
    solver_messages: list[str] = field(default_factory=list)


def _bundle_scores(model: GnnModel, dataset: Dataset, vocab: Vocabulary, builtins: BuiltinTable,
                   alpha: Abstraction | None) -> tuple[np.ndarray, np.ndarray]:
    builder = BatchBuilder(dataset, vocab, builtins, alpha)
    scores, correct = [], []
    samples = dataset.samples
    for start in range(0, len(samples), 512):
        chunk = samples[start : start + 512]
        batch, labels = builder.batch(chunk)
        probs = model.predict_probs(batch)
        for row, label in enumerate(labels):
            scores.append(selection_score(probs[row]))
            correct.append(int(np.argmax(renormalize(probs[row]))) == label)
    return np.asarray(scores), np.asarray(correct, dtype=bool)


def robust_train(
    train_ds: Dataset,
    valid_ds: Dataset,
    vocab: Vocabulary,
    builtins: BuiltinTable,
    mcfg: ModelConfig,
    pcfg: PipelineConfig,
    solver_limits: SolverLimits | None = None,
) -> tuple[ModelBundle, RobustTrainTrace]:
    """Abstain training, then alternating refinement and adversarial training
    until the abstraction stops shrinking; finally calibrate the threshold."""
    trace = RobustTrainTrace()
    seed = pcfg.seed
    train_graphs = [
        e.ensure_graph(builtins.names()) for e in train_ds.programs.values()
    ]
    alpha_last = full_feature_set(train_graphs)
    result = train_model(
        train_ds, valid_ds, vocab, mcfg, builtins,
        loss_kind="abstain", abstraction=alpha_last, seed=seed,
        epochs=pcfg.initial_epochs,
    )
    model = result.model
    trace.train_log.extend(result.log)
    scores, correct = _bundle_scores(model, valid_ds, vocab, builtins, alpha_last)
    h = calibrate_threshold(scores, correct, pcfg.working_t_acc)

    adam = T.AdamState(lr=mcfg.lr)
    rounds = 0
    while rounds < pcfg.max_rounds:
        rounds += 1
        alpha, solve_result, _ = refine_representation(
            train_ds, model, vocab, builtins, h,
            abstraction=alpha_last, t=pcfg.refine_t,
            sample_cap=pcfg.refine_sample_cap, seed=seed,
            limits=solver_limits,
        )
        trace.alpha_sizes.append(len(alpha))
        trace.solver_messages.append(solve_result.message)
        if len(alpha) >= len(alpha_last):
            break
        alpha_last = alpha
        budget = AttackBudget(pcfg.train_budget, pcfg.attack_max_len)
        for adv_epoch in range(pcfg.adv_epochs):
            stats = adversarial_train_epoch(
                model, train_ds, vocab, builtins, adam, h,
                abstraction=alpha_last, budget=budget, seed=seed,
                epoch=rounds * 100 + adv_epoch, batch_size=mcfg.batch_size,
                dropout_rate=mcfg.dropout,
            )
            trace.adv_counterexamples.append(stats.counterexamples)
        scores, correct = _bundle_scores(model, valid_ds, vocab, builtins, alpha_last)
        h = calibrate_threshold(scores, correct, pcfg.working_t_acc)
    trace.rounds = rounds

    scores, correct = _bundle_scores(model, valid_ds, vocab, builtins, alpha_last)
    h = calibrate_threshold(scores, correct, pcfg.t_acc)
    return ModelBundle(model, vocab, h, alpha_last, builtins), trace


# --- Algorithm 2: annotate and retrain ----------------------------------------------------


def apply_model(dataset: Dataset, bundle: ModelBundle) -> tuple[Dataset, int]:
    """Annotate positions the bundle claims and return the abstained remainder.

    Claimed positions get their value attribute replaced by the predicted
    label's annotation token; program entries are shared, so later models see
    the annotations.
    """
    builder = BatchBuilder(dataset, bundle.vocab, bundle.builtins, bundle.alpha)
    abstained: list[Sample] = []
    claimed = 0
    samples = dataset.samples
    for start in range(0, len(samples), 512):
        chunk = samples[start : start + 512]
        batch, _, ordered = builder.batch_with_order(chunk)
        probs = bundle.model.predict_probs(batch)
        for row, s in enumerate(ordered):
            label, _ = select(probs[row], bundle.h)
            if label == ABSTAIN:
                abstained.append(s)
            else:
                entry = dataset.programs[s.program_id]
                entry.annotations[s.position] = TypeLabel.from_str(label)
                claimed += 1
    remainder = Dataset(dataset.split, dataset.programs, abstained)
    return remainder, claimed


@dataclass
class PipelineRound:
    bundle_dir: str
    h: float
    alpha_size: int
    claimed_train: int
    remaining_train: int


def accurate_and_robust_train(
    train_ds: Dataset,
    valid_ds: Dataset,
    vocab: Vocabulary,
    builtins: BuiltinTable,
    mcfg: ModelConfig,
    pcfg: PipelineConfig,
    solver_limits: SolverLimits | None = None,
) -> tuple[Stack, list[RobustTrainTrace], list[PipelineRound]]:
    """Train bundles until a model claims nothing; each round trains on the
    samples every earlier model abstained on."""
    bundles: list[ModelBundle] = []
    traces: list[RobustTrainTrace] = []
    rounds: list[PipelineRound] = []
    current_train = train_ds
    current_valid = valid_ds
    for index in range(pcfg.max_models):
        bundle, trace = robust_train(
            current_train, current_valid, vocab, builtins, mcfg, pcfg, solver_limits
        )
        traces.append(trace)
        abstained_train, claimed = apply_model(current_train, bundle)
        if claimed == 0:
            break
        bundles.append(bundle)
        rounds.append(
            PipelineRound(
                bundle_dir=f"bundle_{index:02d}",
                h=bundle.h,
                alpha_size=len(bundle.alpha),
                claimed_train=claimed,
                remaining_train=len(abstained_train.samples),
            )
        )
        abstained_valid, _ = apply_model(current_valid, bundle)
        current_train = abstained_train
        current_valid = abstained_valid
        if not current_train.samples or not current_valid.samples:
            break
    return Stack(bundles), traces, rounds


# --- exhaustive rename verification ---------------------------------------------------------


VERIFIED = "verified"
COUNTEREXAMPLE = "counterexample"
UNVERIFIED_BUDGET = "unverified_budget"


@dataclass
class VerifyResult:
    status: str
    checked: int
    total: int
    cone_size: int
    variables: list[str]
    counterexample: DeltaSeq | None = None
    predicted: str = ""


def dependency_cone(enc, position: int, steps: int) -> set[int]:
    """Nodes whose attributes can reach the position within `steps` hops of
    message passing on the abstracted graph."""
    incoming: dict[int, list[int]] = {}
    for s, d in zip(enc.src.tolist(), enc.dst.tolist()):
        incoming.setdefault(d, []).append(s)
    frontier = {position}
    cone = {position}
    for _ in range(steps):
        new: set[int] = set()
        for v in frontier:
            for u in incoming.get(v, []):
                if u not in cone:
                    cone.add(u)
                    new.add(u)
        if not new:
            break
        frontier = new
    return cone


def rename_vocabulary(bundle: ModelBundle, extra: tuple[str, ...] = ATTACK_NAME_POOL) -> list[str]:
    """Identifier-shaped in-vocabulary words, the attack pool, plus one
    out-of-vocabulary representative (all unseen words share the unknown
    embedding, so one witness covers them)."""
    words = [
        w
        for w in bundle.vocab.words[len(bundle.vocab.reserved):]
        if IDENT_RE.match(w) and w not in _KEYWORDS
    ]
    pool = sorted(set(words) | set(extra))
    pool.append("oov_witness_zz")
    return pool


def exhaustive_verify_renamings(
    bundle: ModelBundle,
    entry: ProgramEntry,
    sample: Sample,
    name_pool: list[str] | None = None,
    cap: int = 4096,
) -> VerifyResult:
    """Enumerate all single renamings of variables inside the dependency cone.

    VERIFIED means every variant predicted the true label or abstained; the
    result is exact within single renamings (out-of-cone variables cannot
    change the prediction by the receptive-field bound).
    """
    pool = name_pool if name_pool is not None else rename_vocabulary(bundle)
    state = ProgramState.from_entry(entry)
    enc = bundle.encode_state(state)
    cone = dependency_cone(enc, sample.position, bundle.model.config.steps)
    info = resolve_scopes(entry.program, bundle.builtins.names())
    in_cone_vars = [
        var for var in info.variables if any(o in cone for o in var.occurrences)
    ]
    jobs: list[WordRenaming] = []
    for var in in_cone_vars:
        taken = info.scope_names(var.scope) | bundle.builtins.names()
        kind = "parameter" if var.kind == "parameter" else "variable"
        for name in pool:
            if name in taken:
                continue
            jobs.append(WordRenaming(var.name, name, kind, var.occurrences[0]))
    total = len(jobs)
    if total > cap:
        return VerifyResult(UNVERIFIED_BUDGET, 0, total, len(cone), [v.name for v in in_cone_vars])
    checked = 0
    chunk = 64
    for start in range(0, total, chunk):
        part = jobs[start : start + chunk]
        states, positions, deltas = [], [], []
        for mod in part:
            new_state, delta = apply_delta(state, [mod], bundle.builtins, strict=True)
            states.append(new_state)
            positions.append(delta.remap[sample.position])
            deltas.append(delta)
        preds = bundle.predict_many(states, positions)
        for mod, delta, pred in zip(part, deltas, preds):
            checked += 1
            if pred not in (sample.label.value, ABSTAIN):
                return VerifyResult(
                    COUNTEREXAMPLE, checked, total, len(cone),
                    [v.name for v in in_cone_vars], delta, pred,
                )
    return VerifyResult(VERIFIED, checked, total, len(cone), [v.name for v in in_cone_vars])
