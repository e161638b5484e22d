"""Command-line harness: suite generation, training, evaluation, reports.

Exit codes: 0 success, 1 usage error, 2 data/config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .entailment import ScorerConfig
from .errors import ConfigError, QuantLearnError
from .explanations import all_complexities
from .model import load_checkpoint, save_checkpoint
from .quantifiers import predefined_lexicon, random_lexicon
from .reports import (
    BASELINE_NAMES,
    attention_csv,
    attention_report,
    eval_complexities_csv,
    eval_tasks_csv,
    evaluate_zero_shot,
    history_csv,
    lexicon_csv,
    quantifier_recovery_report,
    recovery_csv,
    run_baseline,
    run_gradient_sweep,
)
from .suite_io import load_suite, save_suite, suite_hash
from .taskgen import ExampleCounts, generate_suite, split_seen_unseen
from .training import (
    CURRICULUM_NAMES,
    TrainConfig,
    build_curriculum,
    init_model,
    train_curriculum,
    train_multitask,
)

USAGE_EXIT = 1
DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _parse_complexities(spec: str):
    if spec == "all":
        return None
    tokens = [t.strip() for t in spec.split(",") if t.strip()]
    axes = {
        "classes": {"binary", "multiclass"},
        "negation": {"none", "clause", "label", "both"},
        "structure": {"simple", "single-junction", "nested"},
        "quantified": {"quantified", "unquantified"},
    }
    chosen: dict[str, set[str]] = {axis: set() for axis in axes}
    for token in tokens:
        for axis, values in axes.items():
            if token in values:
                chosen[axis].add(token)
                break
        else:
            raise ConfigError(f"unknown complexity token {token!r}")
    descriptors = []
    for d in all_complexities():
        if chosen["classes"] and d.classes not in chosen["classes"]:
            continue
        if chosen["negation"] and d.negation not in chosen["negation"]:
            continue
        if chosen["structure"] and d.structure not in chosen["structure"]:
            continue
        if chosen["quantified"]:
            want = {"quantified": True, "unquantified": False}
            if d.quantified not in {want[t] for t in chosen["quantified"]}:
                continue
        descriptors.append(d)
    if not descriptors:
        raise ConfigError(f"complexity filter {spec!r} matches no descriptors")
    return descriptors


def _cmd_gen(args) -> int:
    counts = ExampleCounts(train=args.n_train, validation=args.n_val, test=args.n_test)
    suite = generate_suite(
        args.per_complexity,
        args.seed,
        counts,
        predefined_lexicon(),
        complexities=_parse_complexities(args.complexities),
        multiclass_labels=args.multiclass_labels,
    )
    if args.unseen_fraction > 0:
        split_seed = args.split_seed if args.split_seed is not None else args.seed
        suite = split_seen_unseen(suite, args.unseen_fraction, split_seed)
    save_suite(suite, args.out)
    print(f"wrote {len(suite.tasks)} tasks to {args.out} "
          f"({len(suite.seen)} seen, {len(suite.unseen)} unseen)")
    return 0


def _load_config(path: str) -> TrainConfig:
    try:
        return TrainConfig.from_json(json.loads(Path(path).read_text()))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None


def _cmd_train(args) -> int:
    suite = load_suite(args.suite)
    config = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": config.to_json(),
        "config_hash": config.hash(),
        "suite_hash": suite_hash(suite),
        "mode": args.mode,
    }

    pretrained = None
    if args.freeze_quantifiers:
        frozen_model, _ = load_checkpoint(args.freeze_quantifiers)
        pretrained = frozen_model.lexicon

    if args.mode == "standard":
        if pretrained is not None:
            model = init_model(config)
            model.lexicon = pretrained.freeze()
            model, history = train_multitask(suite, config, model_init=model)
        else:
            model, history = train_multitask(suite, config)
    elif args.mode.startswith("curriculum:"):
        curriculum = build_curriculum(args.mode.split(":", 1)[1])
        model, history = train_curriculum(
            suite,
            curriculum,
            config,
            freeze_quantifiers=pretrained is not None,
            pretrained_lexicon=pretrained,
        )
        for record in history.stages:
            stage_meta = dict(meta, stage=record.stage, stage_filter=record.name)
            save_checkpoint(model, out / f"checkpoint_stage_{record.stage}.json", stage_meta)
    else:
        raise ConfigError(
            f"unknown mode {args.mode!r}; expected 'standard' or "
            f"'curriculum:<{'|'.join(CURRICULUM_NAMES)}>'"
        )

    save_checkpoint(model, out / "checkpoint.json", meta)
    history_csv(history, out / "history.csv")
    (out / "config_used.json").write_text(
        json.dumps(config.to_json(), sort_keys=True, indent=1) + "\n"
    )
    best = history.best_epoch
    print(f"training complete; best epoch {best}; wrote {out / 'checkpoint.json'}")
    return 0


def _checkpoint_scorer(meta: dict) -> ScorerConfig:
    return ScorerConfig.from_json(meta.get("config", {}).get("scorer", {}))


def _cmd_eval(args) -> int:
    suite = load_suite(args.suite)
    model, meta = load_checkpoint(args.checkpoint)
    expected = meta.get("suite_hash")
    if expected is not None and expected != suite_hash(suite):
        raise ConfigError(
            "checkpoint was trained on a different suite (manifest hash mismatch); "
            "re-run training or point --suite at the original directory"
        )
    report = evaluate_zero_shot(model, suite, _checkpoint_scorer(meta))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    eval_tasks_csv(report, out / "eval_tasks.csv")
    eval_complexities_csv(report, out / "eval_complexities.csv")
    summary = {
        "mean_accuracy": report.mean_accuracy,
        "mean_exent_accuracy": report.mean_exent_accuracy,
        "mean_majority_accuracy": report.mean_majority_accuracy,
        "n_tasks": len(report.tasks),
        "seeds": report.seeds,
    }
    (out / "eval_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    print(f"mean unseen accuracy {report.mean_accuracy:.4f} over {len(report.tasks)} tasks")
    return 0


def _cmd_baseline(args) -> int:
    suite = load_suite(args.suite)
    scorer = ScorerConfig(
        sharpness=args.epsilon, noise_rate=args.noise_rate, noise_seed=args.noise_seed
    )
    report = run_baseline(args.name, suite, scorer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    eval_tasks_csv(report, out / f"baseline_{args.name}_tasks.csv")
    eval_complexities_csv(report, out / f"baseline_{args.name}_complexities.csv")
    print(f"baseline {args.name}: mean accuracy {report.mean_accuracy:.4f}")
    return 0


def _cmd_report_attention(args) -> int:
    suite = load_suite(args.suite)
    model, meta = load_checkpoint(args.checkpoint)
    report = attention_report(model, suite, _checkpoint_scorer(meta))
    attention_csv(report, args.out)
    print(
        f"attention report: quantified mean {report.quantified.mean:.4f} "
        f"(n={report.quantified.count}), unquantified mean "
        f"{report.unquantified.mean:.4f} (n={report.unquantified.count})"
    )
    return 0


def _cmd_report_quantifiers(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    truth = None
    if args.truth_suite:
        truth = load_suite(args.truth_suite).truth_probabilities
    report = quantifier_recovery_report(model.lexicon, truth)
    recovery_csv(report, args.out)
    print(
        f"spearman {report.spearman:.4f}; relations satisfied "
        f"{report.relations_satisfied:.4f} of {report.n_relations}"
    )
    return 0


def _cmd_check_gradients(args) -> int:
    results = run_gradient_sweep(seed=args.seed, step=args.step, tolerance=args.tolerance)
    worst = 0.0
    ok = True
    for name, report in results:
        status = "pass" if report.passed else "FAIL"
        print(f"{status}  {name}: max relative error {report.max_relative_error:.3e}")
        worst = max(worst, report.max_relative_error)
        ok = ok and report.passed
    print(f"{len(results)} configurations; worst relative error {worst:.3e}")
    if not ok:
        raise ConfigError("analytic gradients disagree with finite differences")
    return 0


def _cmd_quantifiers(args) -> int:
    if args.action != "dump":
        raise ConfigError(f"unknown quantifiers action {args.action!r}")
    lexicon = predefined_lexicon() if args.init == "predefined" else random_lexicon(args.seed)
    text = lexicon_csv(lexicon, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="quantlearn",
        description="Learn zero-shot classifiers from quantified explanations "
                    "on generated structured tasks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a task suite directory")
    p.add_argument("--per-complexity", type=int, required=True,
                   help="tasks per complexity descriptor")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--complexities", default="all",
                   help="'all' or comma-separated axis values, e.g. "
                        "'binary,simple,quantified'")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-val", type=int, default=50)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--unseen-fraction", type=float, default=0.2,
                   help="0 disables splitting")
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--multiclass-labels", type=int, default=3)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train on a suite's seen tasks")
    p.add_argument("--suite", required=True)
    p.add_argument("--config", required=True, help="run-config JSON file")
    p.add_argument("--mode", default="standard",
                   help="'standard' or 'curriculum:<classes|negations|conjunctions>'")
    p.add_argument("--freeze-quantifiers", default=None, metavar="CKPT",
                   help="checkpoint whose lexicon is frozen throughout")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="zero-shot evaluation on unseen tasks")
    p.add_argument("--suite", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("baseline", help="evaluate a reference pipeline")
    p.add_argument("--name", required=True, choices=BASELINE_NAMES)
    p.add_argument("--suite", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--noise-rate", type=float, default=0.0)
    p.add_argument("--noise-seed", type=int, default=0)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("report-attention", help="attention-weight analysis CSV")
    p.add_argument("--suite", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report_attention)

    p = sub.add_parser("report-quantifiers", help="quantifier recovery CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-suite", default=None,
                   help="suite directory supplying the generating probabilities")
    p.set_defaults(func=_cmd_report_quantifiers)

    p = sub.add_parser("check-gradients", help="finite-difference gradient sweep")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_check_gradients)

    p = sub.add_parser("quantifiers", help="lexicon utilities")
    p.add_argument("action", choices=["dump"])
    p.add_argument("--init", default="predefined", choices=["predefined", "random"])
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_quantifiers)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except QuantLearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
