import argparse
import json
import logging
import os
import sys
from typing import List, Optional

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from src import __version__  # noqa: E402
from src.config_loader import REGIMES, load_config  # noqa: E402
from src.data.dataset import header_path, read_dataset, write_dataset  # noqa: E402
from src.data.synthgen import (  # noqa: E402
    DEFAULT_FEATURE_DIM,
    DEFAULT_HIER_CORR,
    DEFAULT_NOISE_SCALE,
    DEFAULT_PER_LEAF,
    DEFAULT_TEXT_DIM,
    attach_synthetic_text,
    generate,
)
from src.errors import InputError, NumericError  # noqa: E402
from src.eval.metrics import (  # noqa: E402
    PredictionMatrix,
    classwise_report,
    evaluate,
    evaluate_with_stopping,
    read_predictions,
    stopping_infer,
    write_predictions,
    write_report,
)
from src.manifest import RunManifest, manifest_path  # noqa: E402
from src.model.hier_classifier import load_checkpoint, predict, save_checkpoint  # noqa: E402
from src.pruning.label_pruning import (  # noqa: E402
    flags_from_scores,
    granularity_histogram,
    parse_prune_spec,
    random_prune,
    read_flags,
    read_scores,
    semantic_prune,
    supervision_table,
)
from src.taxonomy.tree import load_taxonomy, parse_sizes, random_taxonomy, save_taxonomy, validate  # noqa: E402
from src.trainer.experiments import alpha_sweep, paired_differences, paired_seed_comparison  # noqa: E402
from src.trainer.trainer import heldout_ids, train  # noqa: E402

logger = logging.getLogger("freegrain")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors become InputError so they share the input-error exit code"""

    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def _taxonomy_for(data_path: str, explicit: Optional[str]) -> Optional[str]:
    """The taxonomy file a dataset refers to: the explicit flag, else its header's path"""
    if explicit:
        return explicit
    try:
        with open(header_path(data_path), "r") as f:
            relative = json.load(f).get("taxonomy")
    except (OSError, json.JSONDecodeError):
        return None
    return os.path.join(os.path.dirname(os.path.abspath(data_path)), relative) if relative else None


def _load_data(path: str, taxonomy_path: Optional[str]):
    taxonomy = load_taxonomy(taxonomy_path) if taxonomy_path else None
    return read_dataset(path, taxonomy)


def _write_json(path: str, data: dict):
    with open(path, "w") as f:
        f.write(json.dumps(data, sort_keys=True, indent=2) + "\n")


def _finish(manifest: RunManifest, output: str):
    manifest.add_output(output)
    manifest.save(manifest_path(output))
    print(f"Wrote {output}")


def cmd_gen_taxonomy(args) -> int:
    t = random_taxonomy(parse_sizes(args.sizes), args.seed)
    save_taxonomy(t, args.out)
    manifest = RunManifest("gen-taxonomy", args.seed, config={"sizes": args.sizes})
    _finish(manifest, args.out)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    t = load_taxonomy(args.taxonomy)
    violations = validate(t)
    if violations:
        raise InputError(f"{violations[0].kind} at level {violations[0].level}", path=args.taxonomy)
    d = generate(t, args.per_leaf, args.feature_dim, args.noise, args.hier_corr, args.seed)
    write_dataset(d, args.out, taxonomy_path=args.taxonomy)
    manifest = RunManifest("gen-data", args.seed, config={
        "per_leaf": args.per_leaf, "feature_dim": args.feature_dim,
        "noise_scale": args.noise, "hier_corr": args.hier_corr,
    })
    manifest.add_input("taxonomy", args.taxonomy)
    manifest.add_output(header_path(args.out))
    _finish(manifest, args.out)
    return EXIT_OK


def cmd_attach_text(args) -> int:
    taxonomy_path = _taxonomy_for(args.data, args.taxonomy)
    d = _load_data(args.data, taxonomy_path)
    d = attach_synthetic_text(d, args.text_dim, args.informativeness, args.seed)
    write_dataset(d, args.out, taxonomy_path=taxonomy_path)
    manifest = RunManifest("attach-text", args.seed, config={
        "text_dim": args.text_dim, "informativeness": args.informativeness,
    })
    manifest.add_input("data", args.data)
    manifest.add_output(header_path(args.out))
    _finish(manifest, args.out)
    return EXIT_OK


def cmd_prune(args) -> int:
    taxonomy_path = _taxonomy_for(args.data, args.taxonomy)
    d = _load_data(args.data, taxonomy_path)
    manifest = RunManifest("prune", args.seed, config={"mode": args.mode})
    manifest.add_input("data", args.data)
    if args.mode == "random":
        if not args.spec:
            raise InputError("random pruning needs --spec")
        spec = parse_prune_spec(args.spec)
        stratify = args.stratify == "on"
        pruned = random_prune(d, spec, args.seed, stratify=stratify)
        manifest.config.update({"spec": str(spec), "stratify": stratify})
    else:
        if bool(args.flags) == bool(args.scores):
            raise InputError("semantic pruning needs exactly one of --flags or --scores")
        if args.flags:
            flags = read_flags(args.flags)
            manifest.add_input("flags", args.flags)
        else:
            flags = flags_from_scores(d, read_scores(args.scores))
            manifest.add_input("scores", args.scores)
        pruned = semantic_prune(d, flags, seed=args.seed)
    write_dataset(pruned, args.out, taxonomy_path=taxonomy_path)
    manifest.add_output(header_path(args.out))
    _finish(manifest, args.out)
    return EXIT_OK


def _train_overrides(args) -> dict:
    return {
        "regime": args.regime,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "alpha": args.alpha,
        "lambda_pl": args.lambda_pl,
        "lambda_tacl": args.lambda_tacl,
        "hidden_dims": _int_list(args.hidden_dims, "--hidden-dims") if args.hidden_dims else None,
        "head_layers": _int_list(args.head_layers, "--head-layers") if args.head_layers else None,
        "seed": args.seed,
    }


def cmd_train(args) -> int:
    taxonomy_path = _taxonomy_for(args.data, args.taxonomy)
    d = _load_data(args.data, taxonomy_path)
    reference = _load_data(args.reference, taxonomy_path) if args.reference else None
    cfg = load_config(args.config, overrides=_train_overrides(args))
    params, history = train(d, d.taxonomy, cfg, reference=reference, step_log_path=args.step_log)
    save_checkpoint(params, args.out, config_hash=cfg.config_hash(), extra={
        "regime": cfg.regime, "seed": cfg.seed, "holdout_fraction": cfg.holdout_fraction,
        "heldout_ids": heldout_ids(d, cfg, reference),
    })
    manifest = RunManifest("train", cfg.seed, config=cfg.to_dict())
    manifest.add_input("data", args.data)
    manifest.add_input("taxonomy", taxonomy_path)
    manifest.add_input("config", args.config)
    manifest.add_input("reference", args.reference)
    if args.step_log:
        manifest.add_output(args.step_log)
    last = history[-1].heldout
    if last is not None:
        print(f"Final held-out FPA {last['fpa']:.4f}, TICE {last['tice']:.4f}")
    _finish(manifest, args.out)
    return EXIT_OK


def _predict_dataset(checkpoint: str, d):
    params, header = load_checkpoint(checkpoint)
    if tuple(params.level_sizes) != tuple(d.taxonomy.level_sizes) or params.feature_dim != d.feature_dim:
        raise InputError("checkpoint does not match the dataset's taxonomy or feature width", path=checkpoint)
    return PredictionMatrix.from_logits(predict(params, d.features())), header


def cmd_eval(args) -> int:
    taxonomy_path = _taxonomy_for(args.data, args.taxonomy)
    d = _load_data(args.data, taxonomy_path)
    t = d.taxonomy
    manifest = RunManifest("eval", None, config={"split": args.split, "stop": args.stop})
    manifest.add_input("data", args.data)
    if args.predictions:
        ids, preds = read_predictions(args.predictions)
        by_id = d.by_id()
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise InputError(f"prediction for unknown sample id {missing[0]}", path=args.predictions)
        truths = [by_id[i].label for i in ids]
        manifest.add_input("predictions", args.predictions)
    else:
        if not args.checkpoint:
            raise InputError("eval needs --checkpoint or --predictions")
        preds, header = _predict_dataset(args.checkpoint, d)
        truths = [s.label for s in d.samples]
        manifest.add_input("checkpoint", args.checkpoint)
        if args.split == "heldout":
            extra = header.get("extra") or {}
            if "heldout_ids" not in extra:
                raise InputError("checkpoint records no held-out sample ids", path=args.checkpoint)
            position = {s.id: i for i, s in enumerate(d.samples)}
            absent = [i for i in extra["heldout_ids"] if i not in position]
            if absent:
                raise InputError(f"held-out sample id {absent[0]} is not in the dataset", path=args.data)
            held = np.asarray([position[i] for i in extra["heldout_ids"]], dtype=np.int64)
            preds = PredictionMatrix(labels=preds.labels[held])
            truths = [truths[i] for i in held]
            manifest.seed = extra.get("seed")

    report = evaluate_with_stopping(preds, truths, t) if args.stop else evaluate(preds, truths, t)
    write_report(args.out, report.to_dict())
    if args.classwise:
        counts = None
        if args.train_data:
            counts = supervision_table(_load_data(args.train_data, taxonomy_path), reference=d)["fine_labels"]
            manifest.add_input("train_data", args.train_data)
        classwise_report(preds, truths, t, counts).to_csv(args.classwise)
        manifest.add_output(args.classwise)
    print(f"FPA {report.fpa:.4f}  TICE {report.tice:.4f}  n={report.n}")
    _finish(manifest, args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    taxonomy_path = _taxonomy_for(args.data, args.taxonomy)
    d = _load_data(args.data, taxonomy_path)
    preds, _ = _predict_dataset(args.checkpoint, d)
    stopped = stopping_infer(preds, d.taxonomy) if args.stop else None
    write_predictions(args.out, d.ids, preds, stopped=stopped, with_logits=args.with_logits)
    manifest = RunManifest("infer", None, config={"stop": args.stop, "with_logits": args.with_logits})
    manifest.add_input("data", args.data)
    manifest.add_input("checkpoint", args.checkpoint)
    _finish(manifest, args.out)
    return EXIT_OK


def _step_log_summary(path: str) -> dict:
    if not os.path.exists(path):
        raise InputError("file not found", path=path)
    try:
        frame = pd.read_json(path, lines=True)
    except (ValueError, FileNotFoundError) as e:
        raise InputError(f"cannot read step log: {e}", path=path)
    if frame.empty:
        raise InputError("step log is empty", path=path)
    losses = pd.json_normalize(frame["losses"].tolist())
    summary = {
        "epochs": int(len(frame)),
        "identity_ok": bool(frame["identity_ok"].all()),
        "final_losses": losses.iloc[-1].to_dict(),
        "terms_by_epoch": [list(terms) for terms in frame["active_terms"]],
    }
    heldout = [h for h in frame["heldout"] if isinstance(h, dict)]
    if heldout:
        summary["final_heldout"] = heldout[-1]
        summary["best_heldout_fpa"] = max(h["fpa"] for h in heldout)
    return summary


def cmd_report(args) -> int:
    manifest = RunManifest("report", None)
    report = {}
    if args.data:
        taxonomy_path = _taxonomy_for(args.data, args.taxonomy)
        d = _load_data(args.data, taxonomy_path)
        reference = _load_data(args.reference, taxonomy_path) if args.reference else None
        histogram = granularity_histogram(d)
        report["num_samples"] = len(d)
        report["granularity"] = {str(level): count for level, count in histogram.items()}
        if reference is not None or d.is_fully_labeled():
            table = supervision_table(d, reference=reference)
            report["supervision"] = {str(k): {c: int(v) for c, v in row.items()} for k, row in table.iterrows()}
        manifest.add_input("data", args.data)
        manifest.add_input("reference", args.reference)
    if args.step_log:
        report["training"] = _step_log_summary(args.step_log)
        manifest.add_input("step_log", args.step_log)
    if not report:
        raise InputError("report needs --data and/or --step-log")
    _write_json(args.out, report)
    for level, count in report.get("granularity", {}).items():
        print(f"level {level}: {count}")
    _finish(manifest, args.out)
    return EXIT_OK


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise InputError(f"cannot parse number list '{text}'")


def _int_list(text: str, flag: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"{flag} needs comma-separated integers, got '{text}'")


def cmd_sweep(args) -> int:
    taxonomy_path = _taxonomy_for(args.data, args.taxonomy)
    d = _load_data(args.data, taxonomy_path)
    reference = _load_data(args.reference, taxonomy_path) if args.reference else None
    seeds = [int(s) for s in _float_list(args.seeds)]
    overrides = {"epochs": args.epochs, "batch_size": args.batch_size}
    manifest = RunManifest("sweep", None, config={"mode": args.mode, "seeds": seeds})
    manifest.add_input("data", args.data)
    manifest.add_input("reference", args.reference)
    manifest.add_input("config", args.config)

    if args.mode == "alpha":
        base = load_config(args.config, regime="textattr", overrides=overrides)
        alphas = _float_list(args.alphas)
        table = alpha_sweep(d, d.taxonomy, base, alphas, seeds, reference=reference)
        result = {"alpha_curve": table.to_dict(orient="records"), "base_config": base.to_dict()}
        manifest.config["alphas"] = alphas
    else:
        regimes = [r for r in args.regimes.split(",") if r]
        unknown = [r for r in regimes if r not in REGIMES]
        if unknown:
            raise InputError(f"unknown regime '{unknown[0]}'")
        configs = {r: load_config(args.config, overrides=dict(overrides, regime=r)) for r in regimes}
        frame = paired_seed_comparison(d, d.taxonomy, configs, seeds, reference=reference)
        result = {"runs": frame.to_dict(orient="records")}
        if args.baseline in configs:
            summary = paired_differences(frame, args.baseline)
            result["summary"] = {k: {c: float(v) for c, v in row.items()} for k, row in summary.iterrows()}
        manifest.config["regimes"] = regimes
    _write_json(args.out, result)
    _finish(manifest, args.out)
    return EXIT_OK


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="freegrain", description="Free-grain hierarchical classification toolkit")
    parser.add_argument("--version", action="version", version=f"freegrain {__version__}")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logging verbosity")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-taxonomy", help="Generate a random valid taxonomy")
    p.add_argument("--sizes", default="4-12-48", help="Classes per level, e.g. 4-12-48")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_taxonomy)

    p = sub.add_parser("gen-data", help="Generate a fully labeled synthetic dataset")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--per-leaf", type=int, default=DEFAULT_PER_LEAF)
    p.add_argument("--feature-dim", type=int, default=DEFAULT_FEATURE_DIM)
    p.add_argument("--noise", type=float, default=DEFAULT_NOISE_SCALE, help="Noise norm; per-coordinate deviation is noise / sqrt(feature-dim)")
    p.add_argument("--hier-corr", type=float, default=DEFAULT_HIER_CORR)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("attach-text", help="Attach synthetic text embeddings per finest class")
    p.add_argument("--data", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--text-dim", type=int, default=DEFAULT_TEXT_DIM)
    p.add_argument("--informativeness", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attach_text)

    p = sub.add_parser("prune", help="Remove fine labels semantically or at random")
    p.add_argument("--data", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--mode", choices=["random", "semantic"], required=True)
    p.add_argument("--spec", help="Retention percentages per level, e.g. 100-50-10")
    p.add_argument("--stratify", choices=["on", "off"], default="on",
                   help="off: random pruning by one global shuffle instead of per-class quotas")
    p.add_argument("--flags", help="Correctness flags JSON Lines for semantic pruning")
    p.add_argument("--scores", help="Per-sample class scores JSON Lines for semantic pruning")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("train", help="Train a hierarchical classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--reference", help="Fully labeled dataset with the same ids, for held-out truths")
    p.add_argument("--regime", choices=list(REGIMES))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda-pl", type=float)
    p.add_argument("--lambda-tacl", type=float)
    p.add_argument("--hidden-dims", help="Trunk widths, e.g. 128,128")
    p.add_argument("--head-layers", help="1-based trunk layer each level's head reads, e.g. 1,2,2")
    p.add_argument("--seed", type=int)
    p.add_argument("--step-log", help="Per-epoch JSON Lines log")
    p.add_argument("--out", required=True, help="Checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a checkpoint or a predictions file")
    p.add_argument("--data", required=True, help="Fully labeled dataset")
    p.add_argument("--taxonomy")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions")
    p.add_argument("--split", choices=["all", "heldout"], default="all",
                   help="heldout: the samples the training run held out, as recorded in the checkpoint")
    p.add_argument("--stop", action="store_true", help="Add the stopping-inference breakdown")
    p.add_argument("--classwise", help="CSV path for per finest class accuracy")
    p.add_argument("--train-data", help="Training dataset, for fine label counts in --classwise")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="Write predictions for a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stop", action="store_true", help="Emit only the longest consistent prefix")
    p.add_argument("--with-logits", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("report", help="Summarize a dataset's label granularity and/or a step log")
    p.add_argument("--data")
    p.add_argument("--taxonomy")
    p.add_argument("--reference")
    p.add_argument("--step-log")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="Alpha sweep or paired-seed regime comparison")
    p.add_argument("--data", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--reference")
    p.add_argument("--config")
    p.add_argument("--mode", choices=["alpha", "compare"], default="compare")
    p.add_argument("--alphas", default="0,0.5,1,2")
    p.add_argument("--regimes", default="hier-only,textattr,taxonssl")
    p.add_argument("--baseline", default="hier-only")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as e:
        logger.error("%s", e)
        return EXIT_INPUT
    except NumericError as e:
        logger.error("%s", e)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
