"""Command-line entry point: ingest, build, train, tune, eval, report.

Every subcommand is rerunnable: identical inputs and seeds produce identical
outputs (timestamps live only in metadata fields). Exit codes: 0 success,
1 usage error, 2 data contract violation, 3 internal numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import baseline as baseline_mod
from . import corpus as corpus_mod
from . import evaluation, training
from .errors import ConfigurationError, DataContractError, NumericalError, UsageError
from .features import load_embeddings
from .models import Checkpoint, InstanceTensorizer, ModelConfig, config_hash

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA_CONTRACT = 2
EXIT_NUMERICAL = 3

BASELINE_ARCHITECTURE = "svm_baseline"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we reserve that
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, required=True)


def build_parser() -> _Parser:
    parser = _Parser(prog="powerdyad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read a corpus directory, mask boilerplate, write a store")
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--ruleset", type=Path, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build", help="extract dyad instances and splits from a corpus store")
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--formulation", choices=("per-thread", "grouped"), required=True)
    p.add_argument("--split-manifest", type=Path, default=None)
    p.add_argument("--ratios", type=str, default="0.6,0.2,0.2")
    _add_common(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="train one model (neural or baseline) from a config file")
    p.add_argument("--data", type=Path, required=True, help="instance store from `build`")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--embeddings", type=Path, default=None)
    p.add_argument("--embedding-dim", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="random hyperparameter search over full training runs")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--embeddings", type=Path, required=True)
    p.add_argument("--embedding-dim", type=int, default=None)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="score a checkpoint or baseline model on one split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--baseline-model", type=Path, default=None)
    p.add_argument("--embeddings", type=Path, default=None)
    p.add_argument("--split", choices=corpus_mod.SPLIT_NAMES, required=True)
    p.add_argument("--model-name", type=str, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="merge eval reports into one summary")
    p.add_argument("reports", nargs="+", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_report)

    return parser


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    rules = (
        corpus_mod.MaskingRules.from_file(args.ruleset)
        if args.ruleset
        else corpus_mod.MaskingRules.default()
    )
    ruleset_text = (
        Path(args.ruleset).read_text(encoding="utf-8")
        if args.ruleset
        else corpus_mod.default_ruleset_text()
    )
    threads, dominance, report = corpus_mod.ingest_corpus(args.source)
    masked = [corpus_mod.mask_thread(t, rules) for t in threads]
    corpus_mod.write_corpus_store(args.out, masked, dominance, report, ruleset_text)
    if not masked:
        logger.warning("ingested zero threads from %s", args.source)
    print(
        f"ingested {report.messages_parsed} messages into {report.threads_built} threads; "
        f"skipped {sum(report.skipped.values())}"
    )
    return EXIT_OK


def cmd_build(args) -> int:
    formulation = args.formulation.replace("-", "_")
    threads, dominance = corpus_mod.read_corpus_store(args.store)
    instances, skipped = corpus_mod.extract_pairs(threads, dominance, formulation, args.seed)
    if not instances:
        raise DataContractError("no instances extracted; nothing to split")
    try:
        ratios = tuple(float(x) for x in args.ratios.split(","))
    except ValueError as exc:
        raise UsageError(f"bad --ratios value {args.ratios!r}") from exc
    if len(ratios) != 3:
        raise UsageError("--ratios needs exactly three comma-separated numbers")
    manifest = corpus_mod.make_splits(
        instances, ratios, args.seed, external_manifest=args.split_manifest
    )
    corpus_mod.write_instance_store(args.out, instances, manifest)
    build_report = {
        "formulation": formulation,
        "seed": args.seed,
        "instances": len(instances),
        "split_counts": manifest.counts(),
        "split_source": manifest.source,
        "pair_grouped_splits": manifest.source == "ratio",
        "skipped_pairs": skipped,
    }
    (Path(args.out) / "build_report.json").write_text(
        json.dumps(build_report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    counts = manifest.counts()
    print(
        f"built {len(instances)} {formulation} instances "
        f"(train {counts['train']} / dev {counts['dev']} / test {counts['test']})"
    )
    return EXIT_OK


def _load_config_file(path: Path) -> dict:
    try:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return config


def _load_split(data_dir: Path) -> dict:
    instances, manifest = corpus_mod.read_instance_store(data_dir)
    return corpus_mod.split_instances(instances, manifest)


def _load_table(args, model_config: ModelConfig):
    if args.embeddings is None:
        raise UsageError("--embeddings is required for neural models")
    dimension = args.embedding_dim or model_config.embedding_dim
    return load_embeddings(args.embeddings, dimension)


def cmd_train(args) -> int:
    config = _load_config_file(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = _load_split(args.data)

    if "baseline" in config:
        baseline_config = baseline_mod.BaselineConfig.from_dict(config["baseline"])
        model, dev_accuracy = baseline_mod.train_baseline(
            splits["train"], splits["dev"], baseline_config
        )
        model.save(out_dir / "baseline_model.txt")
        resolved = {"baseline": baseline_config.to_dict()}
        (out_dir / "resolved_config.json").write_text(
            json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        (out_dir / "train_record.json").write_text(
            json.dumps(
                {
                    "model": BASELINE_ARCHITECTURE,
                    "best_dev_accuracy": dev_accuracy,
                    "regularization_c": model.regularization_c,
                    "config": resolved,
                    "seed": baseline_config.seed,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
        print(f"baseline dev accuracy {dev_accuracy:.4f} (C={model.regularization_c})")
        return EXIT_OK

    if "model" not in config:
        raise ConfigurationError("config file needs a 'model' or 'baseline' section")
    model_config = ModelConfig.from_dict(config["model"])
    train_config = training.TrainConfig.from_dict(config.get("train", {}))
    table = _load_table(args, model_config)
    outcome = training.train(model_config, train_config, splits["train"], splits["dev"], table)
    outcome.checkpoint.save(out_dir / "checkpoint.bin")
    (out_dir / "train_record.json").write_text(outcome.record.to_json(), encoding="utf-8")
    (out_dir / "resolved_config.json").write_text(
        json.dumps(outcome.record.config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        f"{model_config.architecture}: best dev accuracy "
        f"{outcome.record.best_dev_accuracy:.4f} at epoch {outcome.record.best_epoch}"
    )
    return EXIT_OK


def cmd_tune(args) -> int:
    config = _load_config_file(args.config)
    if "model" not in config:
        raise ConfigurationError("tune config needs a 'model' section")
    base_model = ModelConfig.from_dict(config["model"])
    base_train = training.TrainConfig.from_dict(config.get("train", {}))
    space = training.SearchSpace.from_dict(config.get("search", {}))
    table = _load_table(args, base_model)
    splits = _load_split(args.data)
    results = training.tune(
        space,
        args.budget,
        base_model,
        base_train,
        splits["train"],
        splits["dev"],
        table,
        seed=args.seed,
        jobs=args.jobs,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "trials.jsonl").open("w", encoding="utf-8") as fh:
        for trial in results:
            fh.write(trial.log_line() + "\n")
    ranking = [
        {
            "rank": rank,
            "trial_id": t.trial_id,
            "dev_accuracy": t.dev_accuracy,
            "status": t.status,
            "config_hash": t.config_hash,
        }
        for rank, t in enumerate(results, start=1)
    ]
    (out_dir / "ranking.json").write_text(
        json.dumps(ranking, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    best = results[0]
    (out_dir / "best_config.json").write_text(
        json.dumps(
            {"model": best.model_config, "train": best.train_config},
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    ok = [t for t in results if t.status == "ok"]
    print(f"tuned {len(results)} trials ({len(results) - len(ok)} failed); "
          f"best dev accuracy {ok[0].dev_accuracy:.4f}" if ok else "all trials failed")
    return EXIT_OK


def cmd_eval(args) -> int:
    if (args.checkpoint is None) == (args.baseline_model is None):
        raise UsageError("exactly one of --checkpoint / --baseline-model is required")
    splits = _load_split(args.data)
    instances = splits[args.split]
    if not instances:
        raise DataContractError(f"split {args.split!r} is empty")

    if args.checkpoint is not None:
        checkpoint = Checkpoint.load(args.checkpoint)
        model = checkpoint.restore_model()
        dimension = args.embedding_dim or checkpoint.config.embedding_dim
        if args.embeddings is None:
            raise UsageError("--embeddings is required when evaluating a checkpoint")
        table = load_embeddings(args.embeddings, dimension)
        if table.fingerprint() != checkpoint.embedding_fingerprint:
            raise DataContractError(
                "embedding table fingerprint does not match the checkpoint; "
                "evaluate with the table the model trained on"
            )
        tensorizer = InstanceTensorizer(table, checkpoint.config, checkpoint.standardizer)
        name = args.model_name or checkpoint.config.architecture
        report = evaluation.evaluate_model(model, instances, tensorizer, name, args.split)
    else:
        model = baseline_mod.BaselineModel.load(args.baseline_model)
        probabilities = model.probabilities(instances)
        name = args.model_name or BASELINE_ARCHITECTURE
        report = evaluation.build_report(
            name, instances[0].formulation, args.split, instances, probabilities
        )

    jsonl, txt = report.save(Path(args.out))
    print(report.to_text(), end="")
    print(f"wrote {jsonl} and {txt}")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.reports:
        raise UsageError("at least one report file is required")
    reports = []
    for path in args.reports:
        if not Path(path).is_file():
            raise UsageError(f"report file not found: {path}")
        reports.append(evaluation.EvalReport.from_json_lines(Path(path).read_text("utf-8")))
    grid = evaluation.merge_reports(reports)
    text = evaluation.format_summary_table(grid) + "\n"
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".txt").write_text(text, encoding="utf-8")
    out.with_suffix(".jsonl").write_text(evaluation.summary_json_lines(grid), encoding="utf-8")
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataContractError, ConfigurationError) as exc:
        print(f"data contract violation: {exc}", file=sys.stderr)
        return EXIT_DATA_CONTRACT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def console_main() -> None:
    raise SystemExit(main())
