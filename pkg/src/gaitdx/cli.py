"""Command line entry point: ``gaitdx <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .classifier import (
    EnsembleModel,
    TrainConfig,
    build_default_cnn,
    majority,
    predict,
    train_model,
    train_svm,
)
from .features import FEATURE_NAMES, compute_features, feature_vector
from .harness import (
    ConfigError,
    ExperimentError,
    assemble_case,
    default_config,
    dumps_stable,
    load_config,
    read_case_dir,
    read_case_images,
    run_experiment,
    write_case_dir,
)
from .neuralnet import load_weights, save_weights
from .preprocess import DEFAULT_CRITICAL_FRACTION, DEFAULT_SIDE, ImageKind
from .recording import Foot, load_manifest_pairs, load_recording, write_synthetic_dataset

log = logging.getLogger("gaitdx")


def _cmd_synth(args) -> int:
    manifest = write_synthetic_dataset(args.out, args.subjects, args.positive_fraction, args.walks, args.seed)
    print(f"wrote {len(manifest['recordings'])} recordings to {args.out}")
    return 0


def _cmd_preprocess(args) -> int:
    cases = []
    for left, right, case_id in load_manifest_pairs(args.indir):
        cases.append(
            assemble_case(left, right, case_id, args.side, args.critical_fraction, not args.no_fpa)
        )
        log.info("preprocessed %s/%s", left.subject_id, case_id)
    meta = {
        "critical_fraction": args.critical_fraction,
        "normalize_orientation": not args.no_fpa,
        "feature_names": FEATURE_NAMES,
    }
    write_case_dir(cases, args.out, meta)
    print(f"wrote {len(cases)} cases to {args.out}")
    return 0


def _cmd_features(args) -> int:
    recs = [load_recording(p) for p in args.infiles]
    out: dict = {}
    if len(recs) == 1:
        out = compute_features(recs[0], args.critical_fraction).to_dict()
        out.update({"subject_id": recs[0].subject_id, "foot": recs[0].foot.value})
    else:
        by_foot = {r.foot: r for r in recs}
        if set(by_foot) != {Foot.LEFT, Foot.RIGHT}:
            raise ValueError("a pair needs one left and one right recording")
        left, right = by_foot[Foot.LEFT], by_foot[Foot.RIGHT]
        out = {
            "subject_id": left.subject_id,
            "left": compute_features(left, args.critical_fraction).to_dict(),
            "right": compute_features(right, args.critical_fraction).to_dict(),
            "names": FEATURE_NAMES,
            "vector": feature_vector(left, right, args.critical_fraction).tolist(),
        }
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_train(args) -> int:
    cases = read_case_dir(args.data)
    kind = ImageKind(args.kind)
    cfg = TrainConfig(args.epochs, args.batch, args.lr, args.momentum, args.seed)
    net = build_default_cnn(cases[0].side, seed=args.seed)
    net, curve = train_model(kind, cases, cfg, net)
    save_weights(net, args.out)
    if args.loss_csv:
        with open(args.loss_csv, "w", encoding="utf-8") as fh:
            fh.write("epoch,mean_loss\n")
            fh.writelines(f"{i},{v:.10f}\n" for i, v in enumerate(curve, start=1))
    final = f"{curve[-1]:.6f}" if curve else "n/a"
    print(f"trained {kind.value} model on {len(cases)} cases; final loss {final}")
    return 0


def _cmd_diagnose(args) -> int:
    case = read_case_images(args.case)
    arch = build_default_cnn(case.side)
    ensemble = EnsembleModel(
        load_weights(args.max, arch), load_weights(args.sum, arch), load_weights(args.avg, arch)
    )
    votes, probs, labels = {}, {}, []
    for kind in ImageKind:
        label, p = predict(ensemble.model(kind), case, kind)
        labels.append(label)
        votes[kind.value] = label.value
        probs[kind.value] = {"negative": float(p[0]), "positive": float(p[1])}
    final = majority(labels)
    print(dumps_stable({"votes": votes, "probabilities": probs, "final": final.value}))
    return 0


def _cmd_baseline(args) -> int:
    cases = read_case_dir(args.data)
    if any(c.features is None for c in cases):
        raise ValueError(f"{args.data}/cases.json lacks feature vectors")
    model = train_svm(np.array([c.features for c in cases]), [c.label for c in cases], args.lam, args.epochs, args.seed)
    model.save(args.out)
    acc = np.mean([(model.decision(c.features)[0] > 0) == (c.label.value == "positive") for c in cases])
    print(f"trained SVM on {len(cases)} cases; training accuracy {acc:.4f}")
    return 0


def _cmd_run(args) -> int:
    config = load_config(args.config) if args.config else default_config()
    report = run_experiment(config, args.out)
    out = args.out or config.get("output_dir")
    print(dumps_stable(report.to_dict()["accuracy"]))
    print(f"report written to {os.path.join(out, 'report.json')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaitdx", description="Plantar-pressure gait diagnosis toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    s.add_argument("--subjects", type=int, default=100)
    s.add_argument("--positive-fraction", type=float, default=0.5)
    s.add_argument("--walks", type=int, default=5)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("preprocess", help="turn a recording directory into grayscale cases")
    s.add_argument("--in", dest="indir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--side", type=int, default=DEFAULT_SIDE)
    s.add_argument("--critical-fraction", type=float, default=DEFAULT_CRITICAL_FRACTION)
    s.add_argument("--no-fpa", action="store_true", help="skip orientation normalization")
    s.set_defaults(func=_cmd_preprocess)

    s = sub.add_parser("features", help="hand-crafted gait features of one recording or a pair")
    s.add_argument("--in", dest="infiles", required=True, nargs="+", metavar="FILE.ppr")
    s.add_argument("--critical-fraction", type=float, default=DEFAULT_CRITICAL_FRACTION)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_features)

    s = sub.add_parser("train", help="train one per-kind CNN on a preprocessed directory")
    s.add_argument("--data", required=True)
    s.add_argument("--kind", required=True, choices=[k.value for k in ImageKind])
    s.add_argument("--epochs", type=int, default=60)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--batch", type=int, default=16)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--out", required=True)
    s.add_argument("--loss-csv")
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("diagnose", help="vote on one case with three trained models")
    s.add_argument("--max", required=True)
    s.add_argument("--sum", required=True)
    s.add_argument("--avg", required=True)
    s.add_argument("--case", required=True, help="directory with the six *_<kind>_<foot>.pgm images")
    s.set_defaults(func=_cmd_diagnose)

    s = sub.add_parser("baseline", help="train the linear SVM on case feature vectors")
    s.add_argument("--data", required=True)
    s.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_baseline)

    s = sub.add_parser("run", help="run a full experiment from a config file")
    s.add_argument("--config", help="experiment JSON; defaults to the shipped config")
    s.add_argument("--out", help="override the config's output_dir")
    s.set_defaults(func=_cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ExperimentError, ValueError, OSError) as exc:
        print(f"gaitdx {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
