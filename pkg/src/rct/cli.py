"""Command-line surface tying the modules into reproducible experiments."""

from __future__ import annotations

import argparse
import os
import shutil
import sys
import traceback

from .adversary import (
    AttackBudget,
    evaluate_robustness,
    load_attack_log,
    replay_attack_log,
    save_attack_log,
)
from .config import Config, load_config
from .dataset import (
    Dataset,
    build_splits,
    load_dataset,
    save_dataset,
    save_manifest,
)
from .errors import DataError, UsageError
from .graphs import build_vocabulary, Vocabulary
from .minilang import GenConfig, default_builtins, generate_program
from .minilang.ast import Kind
from .model import ModelConfig, train_model
from .pipeline import (
    ModelBundle,
    PipelineConfig,
    Stack,
    accurate_and_robust_train,
    exhaustive_verify_renamings,
    load_stack,
    robust_train,
    save_stack,
)
from .refine import SolverLimits, export_lp, full_feature_set, refine_representation
from .report import (
    accuracy_metrics,
    breakdown_table,
    metrics_records,
    pct,
    render_table,
    summary_table,
)
from .rng import stream


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would sys.exit(2); we use 1 for usage
        raise UsageError(message)


class _Outputs:
    """Tracks created artifacts so failures do not leave partial outputs."""

    def __init__(self) -> None:
        self.paths: list[str] = []

    def track(self, path: str) -> str:
        self.paths.append(path)
        return path

    def cleanup(self) -> None:
        for path in reversed(self.paths):
            if os.path.isdir(path):
                shutil.rmtree(path, ignore_errors=True)
            elif os.path.exists(path):
                os.remove(path)


def _write_run_config(cfg: Config, out_dir: str) -> None:
    with open(os.path.join(out_dir, "run-config.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(cfg.resolved_lines()) + "\n")


def _model_config(cfg: Config) -> ModelConfig:
    return ModelConfig(
        embed_size=cfg.get_int("model.embed_size"),
        hidden_size=cfg.get_int("model.hidden_size"),
        steps=cfg.get_int("model.steps"),
        dropout=cfg.get_float("model.dropout"),
        batch_size=cfg.get_int("model.batch_size"),
        epochs=cfg.get_int("model.epochs"),
        anneal_start=cfg.optional_int("model.anneal_start"),
        anneal_len=cfg.optional_int("model.anneal_len"),
        lr=cfg.get_float("model.lr"),
    )


def _pipeline_config(cfg: Config, t_acc: float | None = None) -> PipelineConfig:
    return PipelineConfig(
        t_acc=cfg.get_float("pipeline.t_acc") if t_acc is None else t_acc,
        eps_acc=cfg.get_float("pipeline.eps_acc"),
        train_budget=cfg.get_int("attack.train_budget"),
        eval_budget=cfg.get_int("attack.eval_budget"),
        attack_max_len=cfg.get_int("attack.max_len"),
        attack_eps=cfg.get_float("attack.eps"),
        adv_epochs=cfg.get_int("pipeline.adv_epochs"),
        initial_epochs=cfg.optional_int("pipeline.initial_epochs"),
        refine_t=cfg.get_float("refine.t"),
        refine_sample_cap=cfg.get_int("refine.sample_cap"),
        max_rounds=cfg.get_int("pipeline.max_rounds"),
        max_models=cfg.get_int("pipeline.max_models"),
        verify_cap=cfg.get_int("verify.cap"),
        seed=cfg.get_int("seed"),
    )


def _solver_limits(cfg: Config) -> SolverLimits:
    return SolverLimits(
        max_features_exact=cfg.get_int("solver.max_features_exact"),
        max_supply_exact=cfg.get_int("solver.max_supply_exact"),
        max_bb_nodes=cfg.get_int("solver.max_bb_nodes"),
    )


def _load_split(args, cfg: Config, split: str) -> Dataset:
    builtins = default_builtins()
    path = os.path.join(args.data, f"{split}.ds")
    return load_dataset(path, split, args.corpus, builtins)


def _load_all_splits(args, cfg: Config) -> dict[str, Dataset]:
    return {split: _load_split(args, cfg, split) for split in ("train", "valid", "test")}


def _vocab_for(train: Dataset, cfg: Config) -> Vocabulary:
    builtins = default_builtins()
    graphs = [e.ensure_graph(builtins.names()) for e in train.programs.values()]
    return build_vocabulary(graphs, min_count=cfg.get_int("vocab.min_count"))


# --- commands ------------------------------------------------------------------------


def cmd_gen_corpus(args, cfg: Config, outputs: _Outputs) -> int:
    os.makedirs(args.out, exist_ok=True)
    outputs.track(args.out)
    n = args.programs if args.programs is not None else cfg.get_int("corpus.programs")
    gen_cfg = GenConfig(
        stmt_min=cfg.get_int("corpus.stmt_min"),
        stmt_max=cfg.get_int("corpus.stmt_max"),
        max_expr_depth=cfg.get_int("corpus.max_depth"),
    )
    root_seed = cfg.get_int("seed")
    from .dataset import save_program

    for i in range(n):
        seed = int(stream(root_seed, "corpus", i).integers(2**62))
        generated = generate_program(seed, gen_cfg)
        program_id = f"prog_{i:05d}.ml0"
        param_names = {
            node.id: node.value
            for node in generated.program.nodes
            if node.kind == Kind.PARAM
        }
        save_program(args.out, program_id, generated.program.source, generated.param_env, param_names)
    _write_run_config(cfg, args.out)
    print(f"wrote {n} programs to {args.out}")
    return 0


def cmd_build_dataset(args, cfg: Config, outputs: _Outputs) -> int:
    os.makedirs(args.out, exist_ok=True)
    outputs.track(args.out)
    builtins = default_builtins()
    ratios = (
        cfg.get_float("dataset.ratio_train"),
        cfg.get_float("dataset.ratio_valid"),
        cfg.get_float("dataset.ratio_test"),
    )
    datasets, splits = build_splits(
        args.corpus,
        builtins,
        ratios,
        cfg.get_int("seed"),
        dedup_threshold=cfg.get_float("dataset.dedup_threshold"),
        min_tokens=cfg.get_int("dataset.min_tokens"),
        max_tokens=cfg.get_int("dataset.max_tokens"),
    )
    save_manifest(splits, os.path.join(args.out, "manifest.tsv"))
    for split, ds in datasets.items():
        save_dataset(ds, os.path.join(args.out, f"{split}.ds"))
        print(f"{split}: {len(ds.programs)} programs, {len(ds.samples)} samples")
    _write_run_config(cfg, args.out)
    return 0


def cmd_train_baseline(args, cfg: Config, outputs: _Outputs) -> int:
    datasets = _load_all_splits(args, cfg)
    vocab = _vocab_for(datasets["train"], cfg)
    builtins = default_builtins()
    mcfg = _model_config(cfg)
    result = train_model(
        datasets["train"], datasets["valid"], vocab, mcfg, builtins,
        loss_kind="ce", seed=cfg.get_int("seed"),
    )
    os.makedirs(args.out, exist_ok=True)
    outputs.track(args.out)
    graphs = [e.ensure_graph(builtins.names()) for e in datasets["train"].programs.values()]
    bundle = ModelBundle(result.model, vocab, 0.0, full_feature_set(graphs), builtins)
    save_stack(Stack([bundle]), args.out)
    with open(os.path.join(args.out, "train.log"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(result.log) + "\n")
    _write_run_config(cfg, args.out)
    print(f"baseline saved to {args.out}; best valid acc {result.best_valid_acc:.4f}")
    return 0


def cmd_train_robust(args, cfg: Config, outputs: _Outputs) -> int:
    datasets = _load_all_splits(args, cfg)
    vocab = _vocab_for(datasets["train"], cfg)
    builtins = default_builtins()
    mcfg = _model_config(cfg)
    pcfg = _pipeline_config(cfg, t_acc=args.t_acc)
    bundle, trace = robust_train(
        datasets["train"], datasets["valid"], vocab, builtins, mcfg, pcfg,
        solver_limits=_solver_limits(cfg),
    )
    os.makedirs(args.out, exist_ok=True)
    outputs.track(args.out)
    save_stack(Stack([bundle]), args.out)
    with open(os.path.join(args.out, "train.log"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(trace.train_log) + "\n")
        fh.write(f"alpha sizes per round: {trace.alpha_sizes}\n")
        fh.write(f"adversarial counterexamples per epoch: {trace.adv_counterexamples}\n")
    _write_run_config(cfg, args.out)
    print(f"robust bundle saved to {args.out}; h={bundle.h:.4f}, |alpha|={len(bundle.alpha)}")
    return 0


def cmd_pipeline(args, cfg: Config, outputs: _Outputs) -> int:
    datasets = _load_all_splits(args, cfg)
    vocab = _vocab_for(datasets["train"], cfg)
    builtins = default_builtins()
    mcfg = _model_config(cfg)
    pcfg = _pipeline_config(cfg, t_acc=args.t_acc)
    stack, traces, rounds = accurate_and_robust_train(
        datasets["train"], datasets["valid"], vocab, builtins, mcfg, pcfg,
        solver_limits=_solver_limits(cfg),
    )
    if not stack.bundles:
        raise DataError("pipeline produced no bundles (first model claimed nothing)")
    os.makedirs(args.out, exist_ok=True)
    outputs.track(args.out)
    save_stack(stack, args.out)
    # Fresh test entries so evaluation does not see training annotations.
    test = _load_split(args, cfg, "test")
    acc = accuracy_metrics(stack, test)
    budget = AttackBudget(args.budget or pcfg.eval_budget, pcfg.attack_max_len)
    rob = evaluate_robustness(
        stack, test, budget=budget, seed=pcfg.seed, builtins=builtins,
        eps=pcfg.attack_eps, max_samples=args.max_samples,
    )
    report_lines = [
        render_table(
            ["Round", "h", "|alpha|", "claimed", "remaining"],
            [
                [r.bundle_dir, f"{r.h:.4f}", str(r.alpha_size), str(r.claimed_train), str(r.remaining_train)]
                for r in rounds
            ],
            title="Pipeline rounds",
        ),
        "",
        summary_table(f"pipeline(t_acc={pcfg.t_acc})", acc, rob.robustness),
        "",
        breakdown_table(rob),
    ]
    report = "\n".join(report_lines)
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report + "\n")
    with open(os.path.join(args.out, "report.jsonl"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(metrics_records("pipeline", acc, rob)) + "\n")
    save_attack_log(rob.log_records(), os.path.join(args.out, "counterexamples.jsonl"))
    _write_run_config(cfg, args.out)
    print(report)
    print(f"{len(stack.bundles)} bundle(s) saved to {args.out}")
    return 0


def cmd_attack(args, cfg: Config, outputs: _Outputs) -> int:
    builtins = default_builtins()
    stack = load_stack(args.models, builtins)
    dataset = _load_split(args, cfg, args.split)
    if args.replay:
        records = load_attack_log(args.replay)
        results = replay_attack_log(stack, dataset, records, builtins)
        bad = [r for r, ok, _ in results if not ok]
        print(f"replayed {len(results)} counterexamples; {len(results) - len(bad)} reproduced")
        if bad:
            raise RuntimeError(f"{len(bad)} logged counterexamples did not reproduce")
        return 0
    budget = AttackBudget(args.budget or cfg.get_int("attack.eval_budget"), cfg.get_int("attack.max_len"))
    rob = evaluate_robustness(
        stack, dataset, budget=budget, seed=cfg.get_int("seed"), builtins=builtins,
        eps=cfg.get_float("attack.eps"), max_samples=args.max_samples,
    )
    if args.out:
        save_attack_log(rob.log_records(), outputs.track(args.out))
    print(breakdown_table(rob))
    print(f"robustness: {pct(rob.robustness)}; counterexamples logged: {len(rob.log_records())}")
    return 0


def cmd_refine(args, cfg: Config, outputs: _Outputs) -> int:
    builtins = default_builtins()
    stack = load_stack(args.models, builtins)
    bundle = stack.bundles[args.bundle_index]
    dataset = _load_split(args, cfg, args.split)
    alpha, result, problem = refine_representation(
        dataset, bundle.model, bundle.vocab, builtins, bundle.h,
        abstraction=bundle.alpha, t=cfg.get_float("refine.t"),
        sample_cap=cfg.get_int("refine.sample_cap"), seed=cfg.get_int("seed"),
        limits=_solver_limits(cfg),
    )
    alpha.save(outputs.track(args.out))
    if args.export_lp:
        export_lp(problem, outputs.track(args.export_lp))
    for key, reason in problem.dropped:
        print(f"warning: dropped {key}: {reason}")
    print(
        f"|alpha|={len(alpha)} of {len(problem.features)} features; objective={result.objective}; "
        f"optimal={result.optimal} ({result.message})"
    )
    return 0


def cmd_evaluate(args, cfg: Config, outputs: _Outputs) -> int:
    builtins = default_builtins()
    stack = load_stack(args.models, builtins)
    dataset = _load_split(args, cfg, args.split)
    acc = accuracy_metrics(stack, dataset)
    rob = None
    if not args.accuracy_only:
        budget = AttackBudget(args.budget or cfg.get_int("attack.eval_budget"), cfg.get_int("attack.max_len"))
        rob = evaluate_robustness(
            stack, dataset, budget=budget, seed=cfg.get_int("seed"), builtins=builtins,
            eps=cfg.get_float("attack.eps"), max_samples=args.max_samples,
        )
    print(summary_table(args.models, acc, rob.robustness if rob else None))
    if rob is not None:
        print()
        print(breakdown_table(rob))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        outputs.track(args.out)
        with open(os.path.join(args.out, "report.jsonl"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(metrics_records(args.models, acc, rob)) + "\n")
        if rob is not None:
            save_attack_log(rob.log_records(), os.path.join(args.out, "counterexamples.jsonl"))
        _write_run_config(cfg, args.out)
    return 0


def cmd_verify(args, cfg: Config, outputs: _Outputs) -> int:
    builtins = default_builtins()
    stack = load_stack(args.models, builtins)
    bundle = stack.bundles[args.bundle_index]
    dataset = _load_split(args, cfg, args.split)
    rows = []
    verified = 0
    count = 0
    for sample in dataset.samples:
        if count >= args.samples:
            break
        entry = dataset.programs[sample.program_id]
        result = exhaustive_verify_renamings(
            bundle, entry, sample, cap=cfg.get_int("verify.cap")
        )
        rows.append(
            [
                sample.program_id,
                str(sample.position),
                sample.label.value,
                result.status,
                str(result.checked),
                str(result.cone_size),
            ]
        )
        verified += result.status == "verified"
        count += 1
    print(render_table(["program", "position", "label", "status", "checked", "cone"], rows))
    print(f"{verified}/{count} verified")
    return 0


# --- argument wiring --------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="rct", description=__doc__)
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a typed mini-language corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--programs", type=int)

    p = sub.add_parser("build-dataset", help="dedup, split and extract samples")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    for name in ("train-baseline",):
        p = sub.add_parser(name, help="standard cross-entropy training")
        p.add_argument("--corpus", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)

    p = sub.add_parser("train-robust", help="single robust model (refine + adversarial)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t-acc", type=float, default=None)

    p = sub.add_parser("pipeline", help="multi-model annotate-and-retrain pipeline")
    p.add_argument("--corpus", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t-acc", type=float, default=None)
    p.add_argument("--budget", type=int, default=None, help="evaluation attack budget")
    p.add_argument("--max-samples", type=int, default=None)

    p = sub.add_parser("attack", help="search for counterexamples or replay a log")
    p.add_argument("--corpus", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--max-samples", type=int, default=None)
    p.add_argument("--out", help="counterexample log path")
    p.add_argument("--replay", help="replay a counterexample log")

    p = sub.add_parser("refine", help="recompute an abstraction for a saved bundle")
    p.add_argument("--corpus", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--bundle-index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--export-lp")

    p = sub.add_parser("evaluate", help="accuracy, robustness and breakdown tables")
    p.add_argument("--corpus", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--max-samples", type=int, default=None)
    p.add_argument("--accuracy-only", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("verify", help="exhaustive rename verification per sample")
    p.add_argument("--corpus", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--bundle-index", type=int, default=0)
    p.add_argument("--samples", type=int, default=5)

    return parser


_COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "build-dataset": cmd_build_dataset,
    "train-baseline": cmd_train_baseline,
    "train-robust": cmd_train_robust,
    "pipeline": cmd_pipeline,
    "attack": cmd_attack,
    "refine": cmd_refine,
    "evaluate": cmd_evaluate,
    "verify": cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    outputs = _Outputs()
    try:
        parser = _build_parser()
        args = parser.parse_args(argv)
        cfg = load_config(args.config, args.set)
        return _COMMANDS[args.command](args, cfg, outputs)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        outputs.cleanup()
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        outputs.cleanup()
        return 2
    except Exception:
        traceback.print_exc()
        outputs.cleanup()
        return 3


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
