"""Command-line entry point.

Commands:

* ``synth``     generate a synthetic dataset (blobs or an OOD shift of one);
* ``train``     fit a single head or a deep ensemble for one action;
* ``predict``   per-record predictions with uncertainty decomposition;
* ``decompose`` alias of ``predict`` with the full covariance matrices;
* ``metrics``   calibration report, reliability CSV, and reliability figure.

Every command accepts ``--config FILE`` (JSON whose keys are flag names);
explicit command-line flags override file values, which override built-in
defaults.  Relative paths are resolved under ``$AFFUQ_DATA_DIR`` when that
variable is set.  All randomness flows from ``--seed`` through derived
streams, so reruns with the same inputs write identical files (timestamps
appear only in the ``created_at`` field of synth metadata).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from .bayes import (
    EnsembleModel,
    decompose,
    ensemble_sample,
    ensemble_train,
    mc_dropout_sample,
)
from .data import (
    Action,
    BlobSpec,
    load_dataset,
    save_dataset,
    synth_blobs,
    synth_ood,
)
from .errors import AffuqError, FormatError, InvalidInputError, ShapeError
from .metrics import evaluate_predictions, reliability_csv
from .model import HeadConfig, load_model, save_model
from .numeric import RngStream
from .plots import save_reliability_diagram
from .train import TrainConfig, train, write_training_log

DATA_DIR_ENV = "AFFUQ_DATA_DIR"

MANIFEST_KIND = "affordance-ensemble"
MANIFEST_FORMAT_VERSION = 1


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    return Path(os.environ.get(DATA_DIR_ENV, ".")) / p


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, indent=2) + "\n")


def _write_jsonl(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, metavar="FILE",
                        help="JSON file of flag values (flags given on the "
                             "command line take precedence)")
    parser.add_argument("--seed", type=int, default=0,
                        help="master seed; every random stream derives from it")


def _add_predict_args(parser: argparse.ArgumentParser, with_full: bool) -> None:
    _add_common(parser)
    parser.add_argument("--model", required=True,
                        help="model file, or ensemble manifest file")
    parser.add_argument("--data", required=True, help="dataset file to predict on")
    parser.add_argument("--method", choices=["mc_dropout", "ensemble"], default=None,
                        help="sampling method (default: inferred from the model file)")
    parser.add_argument("--M", type=int, default=50, dest="num_samples",
                        help="number of MC-dropout passes")
    parser.add_argument("--dropout-rate", type=float, default=0.3,
                        help="dropout rate for MC-dropout sampling")
    parser.add_argument("--out", required=True, help="predictions file (JSON lines)")
    if with_full:
        parser.add_argument("--full", action="store_true",
                            help="include the full covariance matrices per record")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="affuq",
        description="Affordance classifier head with Bayesian uncertainty "
                    "decomposition and calibration metrics.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter
    subs: dict[str, argparse.ArgumentParser] = {}

    p = subparsers.add_parser("synth", formatter_class=fmt,
                              help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--kind", choices=["blobs", "ood"], default="blobs",
                   help="labeled blobs, or an out-of-distribution shift of them")
    p.add_argument("--count", type=int, default=200, help="number of records")
    p.add_argument("--classes", type=int, default=3, help="number of label classes")
    p.add_argument("--obj-dim", type=int, default=6,
                   help="object feature dimensionality")
    p.add_argument("--glob-dim", type=int, default=6,
                   help="global feature dimensionality")
    p.add_argument("--center-scale", type=float, default=3.0,
                   help="spread of the class centers")
    p.add_argument("--cluster-scale", type=float, default=0.7,
                   help="within-class standard deviation")
    p.add_argument("--noise-rate", type=float, default=0.0,
                   help="label-noise rate (blobs only)")
    p.add_argument("--object-classes", type=int, default=4,
                   help="size of the nuisance object-class vocabulary")
    p.add_argument("--shift", type=float, default=10.0,
                   help="OOD shift in cluster-scale units (ood only)")
    p.add_argument("--out", required=True, help="dataset file to write")
    subs["synth"] = p

    p = subparsers.add_parser("train", formatter_class=fmt,
                              help="train a head or an ensemble for one action")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--action", choices=[a.value for a in Action], required=True,
                   help="action whose labels to fit")
    p.add_argument("--epochs", type=int, required=True,
                   help="number of training epochs")
    p.add_argument("--batch-size", type=int, default=128, help="minibatch size")
    p.add_argument("--lr", type=float, default=1e-4, help="initial learning rate")
    p.add_argument("--decay-every", type=int, default=5,
                   help="epochs between learning-rate decays")
    p.add_argument("--decay-factor", type=float, default=0.85,
                   help="multiplicative learning-rate decay")
    p.add_argument("--dropout-rate", type=float, default=0.3,
                   help="dropout rate used during training")
    p.add_argument("--hidden-dim", type=int, default=128,
                   help="width of the fused hidden representation")
    p.add_argument("--fc-hidden-dim", type=int, default=64,
                   help="width of the penultimate FC layer")
    p.add_argument("--num-categories", type=int, default=7,
                   help="size of the category space")
    p.add_argument("--method", choices=["single", "ensemble"], default="single",
                   help="train one head or an ensemble")
    p.add_argument("--M", type=int, default=5, dest="num_members",
                   help="ensemble size (ensemble method only)")
    p.add_argument("--out", required=True,
                   help="output prefix; writes PREFIX.model.json or member "
                        "files plus PREFIX.manifest.json")
    subs["train"] = p

    p = subparsers.add_parser("predict", formatter_class=fmt,
                              help="predict with uncertainty decomposition")
    _add_predict_args(p, with_full=True)
    subs["predict"] = p

    p = subparsers.add_parser("decompose", formatter_class=fmt,
                              help="predict with full covariance matrices "
                                   "(same as predict --full)")
    _add_predict_args(p, with_full=False)
    subs["decompose"] = p

    p = subparsers.add_parser("metrics", formatter_class=fmt,
                              help="calibration report and reliability diagram")
    _add_common(p)
    p.add_argument("--pred", required=True, help="predictions file from predict")
    p.add_argument("--data", required=True, help="dataset file holding the labels")
    p.add_argument("--action", choices=[a.value for a in Action], required=True,
                   help="action whose labels to score against")
    p.add_argument("--bins", type=int, default=10, help="calibration bin count")
    p.add_argument("--out", required=True,
                   help="output prefix; writes PREFIX.report.json, "
                        "PREFIX.reliability.csv, PREFIX.reliability.svg")
    subs["metrics"] = p

    return parser, subs


def _apply_config_file(args_list: list[str], parser: argparse.ArgumentParser,
                       subs: dict[str, argparse.ArgumentParser]) -> argparse.Namespace:
    args = parser.parse_args(args_list)
    if not getattr(args, "config", None):
        return args
    sub = subs[args.command]
    with open(_resolve(args.config), "r", encoding="utf-8") as fh:
        try:
            values = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(values, dict):
        raise FormatError("config file must hold a JSON object")
    known = {a.dest for a in sub._actions} - {"help", "config"}
    mapped = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise InvalidInputError(
                f"config key {key!r} is not a flag of the {args.command!r} command"
            )
        mapped[dest] = value
    sub.set_defaults(**mapped)
    return parser.parse_args(args_list)


def _cmd_synth(args) -> int:
    spec = BlobSpec(
        num_classes=args.classes,
        obj_dim=args.obj_dim,
        glob_dim=args.glob_dim,
        count=args.count,
        center_scale=args.center_scale,
        cluster_scale=args.cluster_scale,
        label_noise_rate=args.noise_rate,
        num_object_classes=args.object_classes,
    )
    rng = RngStream(args.seed)
    if args.kind == "blobs":
        dataset, meta = synth_blobs(spec, rng)
    else:
        dataset, meta = synth_ood(spec, args.shift, args.count, rng)
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    meta["created_at"] = datetime.now(timezone.utc).isoformat()
    _write_json(Path(str(out) + ".meta.json"), meta)
    print(f"wrote {len(dataset)} records to {out}")
    return 0


def _head_config_from(args, header) -> HeadConfig:
    return HeadConfig(
        num_object_classes=header.num_object_classes,
        obj_feature_dim=header.obj_feature_dim,
        global_feature_dim=header.global_feature_dim,
        hidden_dim=args.hidden_dim,
        fc_hidden_dim=args.fc_hidden_dim,
        num_categories=args.num_categories,
        dropout_rate=args.dropout_rate,
    )


def _cmd_train(args) -> int:
    dataset = load_dataset(_resolve(args.data))
    action = Action(args.action)
    head_config = _head_config_from(args, dataset.header)
    train_config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr0=args.lr,
        decay_every_epochs=args.decay_every,
        decay_factor=args.decay_factor,
        dropout_rate=args.dropout_rate,
        seed=args.seed,
    )
    prefix = _resolve(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)

    if args.method == "single":
        params, log = train(dataset, action, head_config, train_config,
                            RngStream(args.seed))
        model_path = Path(str(prefix) + ".model.json")
        save_model(model_path, params, head_config)
        write_training_log(Path(str(prefix) + ".log.jsonl"), log)
        final = log[-1] if log else None
        summary = (f" (final accuracy {final['train_accuracy']:.3f})"
                   if final else "")
        print(f"wrote {model_path}{summary}")
        return 0

    ensemble, logs = ensemble_train(dataset, action, head_config, train_config,
                                    args.num_members)
    members = []
    for index, (params, log) in enumerate(zip(ensemble.members, logs)):
        member_path = Path(f"{prefix}.member{index:02d}.model.json")
        save_model(member_path, params, head_config)
        write_training_log(Path(f"{prefix}.member{index:02d}.log.jsonl"), log)
        seed, stream_id = ensemble.member_streams[index]
        members.append({
            "index": index,
            "model": member_path.name,
            "stream": {"seed": seed, "stream_id": stream_id},
        })
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "kind": MANIFEST_KIND,
        "seed": args.seed,
        "num_members": args.num_members,
        "members": members,
    }
    manifest_path = Path(str(prefix) + ".manifest.json")
    _write_json(manifest_path, manifest)
    print(f"wrote {args.num_members} member models and {manifest_path}")
    return 0


def _load_manifest(path: Path) -> EnsembleModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: manifest is not valid JSON: {exc}") from exc
    if doc.get("kind") != MANIFEST_KIND:
        raise FormatError(f"{path}: not an ensemble manifest")
    if doc.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported manifest format_version")
    members, streams, config = [], [], None
    for entry in doc.get("members", []):
        member_path = path.parent / entry["model"]
        params, member_config = load_model(member_path)
        if config is None:
            config = member_config
        elif member_config != config:
            raise FormatError(f"{path}: member configs disagree")
        members.append(params)
        streams.append((entry["stream"]["seed"], entry["stream"]["stream_id"]))
    if not members:
        raise FormatError(f"{path}: manifest lists no members")
    return EnsembleModel(members=tuple(members), config=config,
                         member_streams=tuple(streams))


def _check_dims(config: HeadConfig, header) -> None:
    if (config.obj_feature_dim != header.obj_feature_dim
            or config.global_feature_dim != header.global_feature_dim
            or config.num_object_classes != header.num_object_classes):
        raise ShapeError(
            "model and dataset disagree: model expects "
            f"({config.num_object_classes} classes, {config.obj_feature_dim}/"
            f"{config.global_feature_dim} feature dims), dataset header has "
            f"({header.num_object_classes}, {header.obj_feature_dim}/"
            f"{header.global_feature_dim})"
        )


def _cmd_predict(args, force_full: bool = False) -> int:
    model_path = _resolve(args.model)
    with open(model_path, "r", encoding="utf-8") as fh:
        try:
            kind = json.load(fh).get("kind")
        except json.JSONDecodeError as exc:
            raise FormatError(f"{model_path}: not valid JSON: {exc}") from exc
    inferred = "ensemble" if kind == MANIFEST_KIND else "mc_dropout"
    method = args.method or inferred
    if method == "ensemble" and kind != MANIFEST_KIND:
        raise InvalidInputError("--method ensemble needs an ensemble manifest file")
    if method == "mc_dropout" and kind == MANIFEST_KIND:
        raise InvalidInputError("--method mc_dropout needs a single model file")

    dataset = load_dataset(_resolve(args.data))
    full = force_full or getattr(args, "full", False)
    rows = []

    if method == "ensemble":
        ensemble = _load_manifest(model_path)
        _check_dims(ensemble.config, dataset.header)
        for record in dataset.records:
            report = decompose(ensemble_sample(ensemble, record))
            rows.append({"record_id": record.record_id, **report.to_json_dict(full)})
    else:
        params, config = load_model(model_path)
        config = replace(config, dropout_rate=args.dropout_rate)
        _check_dims(config, dataset.header)
        base = RngStream(args.seed)
        for index, record in enumerate(dataset.records):
            sample_set = mc_dropout_sample(
                params, config, record, args.num_samples,
                base.derive("predict", index),
            )
            report = decompose(sample_set)
            rows.append({"record_id": record.record_id, **report.to_json_dict(full)})

    out = _resolve(args.out)
    _write_jsonl(out, rows)
    print(f"wrote {len(rows)} predictions to {out}")
    return 0


def _cmd_metrics(args) -> int:
    pred_path = _resolve(args.pred)
    predictions = []
    with open(pred_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                predictions.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(
                    f"{pred_path}: line {lineno}: invalid JSON: {exc}"
                ) from exc
    if not predictions:
        raise InvalidInputError(f"{pred_path}: no predictions found")

    dataset = load_dataset(_resolve(args.data))
    action = Action(args.action)
    labels_by_id = {
        rec.record_id: rec.labels[action]
        for rec in dataset.records if action in rec.labels
    }
    mean_probs, labels = [], []
    for row in predictions:
        rid = row.get("record_id")
        if rid not in labels_by_id:
            raise InvalidInputError(
                f"record {rid!r} has no {action.value!r} label in {args.data}"
            )
        mean_probs.append(row["mean_p"])
        labels.append(labels_by_id[rid])

    report = evaluate_predictions(mean_probs, labels, num_bins=args.bins)
    prefix = _resolve(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    doc = {"action": action.value, **report.to_json_dict()}
    _write_json(Path(str(prefix) + ".report.json"), doc)
    with open(Path(str(prefix) + ".reliability.csv"), "w", encoding="utf-8") as fh:
        fh.write(reliability_csv(report.bins))
    save_reliability_diagram(
        report.bins, Path(str(prefix) + ".reliability.svg"),
        title=f"Reliability ({action.value}, n={report.sample_count})",
    )
    print(
        f"acc(seven/three/binary) = {report.macro_acc_seven:.4f}/"
        f"{report.macro_acc_three:.4f}/{report.macro_acc_binary:.4f}  "
        f"ECE = {report.ece:.4f}  Brier = {report.brier:.4f}"
    )
    return 0


def _run(argv) -> int:
    parser, subs = build_parser()
    args = _apply_config_file(list(argv), parser, subs)
    if args.command == "synth":
        return _cmd_synth(args)
    if args.command == "train":
        return _cmd_train(args)
    if args.command == "predict":
        return _cmd_predict(args)
    if args.command == "decompose":
        return _cmd_predict(args, force_full=True)
    if args.command == "metrics":
        return _cmd_metrics(args)
    raise InvalidInputError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return _run(argv)
    except (AffuqError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
