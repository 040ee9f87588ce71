"""Command-line front end: prepare a dataset, train and export the model."""

from __future__ import annotations

import argparse
import sys

from .prepare import PrepareError, prepare
from .train import ExportError, TrainSpec, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gbtrainer",
        description="Train a gradient-boosted alert classifier and export "
                    "the canonical model JSON for gbexplain.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_prep = sub.add_parser("prepare", help="split + encode a labeled CSV")
    p_prep.add_argument("--dataset", required=True)
    p_prep.add_argument("--label-col", default="label")
    p_prep.add_argument("--class-col", default="attack_class")
    p_prep.add_argument("--split", type=float, default=0.8)
    p_prep.add_argument("--seed", type=int, default=0)
    p_prep.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", help="fit the booster and export")
    p_train.add_argument("--train", required=True, help="prepared train.csv")
    p_train.add_argument("--label-col", default="label")
    p_train.add_argument("--class-col", default="attack_class")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--scale-pos-weight", type=float, default=2.2)
    p_train.add_argument("--n-estimators", type=int, default=100)
    p_train.add_argument("--max-depth", type=int, default=10)
    p_train.add_argument("--learning-rate", type=float, default=0.35)
    p_train.add_argument("--engine-cmd",
                         default=sys.executable + " -m gbexplain.cli",
                         help="command used to verify exported margins")
    p_train.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "prepare":
            result = prepare(args.dataset, args.out, label_col=args.label_col,
                             class_col=args.class_col, split_ratio=args.split,
                             seed=args.seed)
            print("train: %s (%d rows)" % (result.train_path, result.n_train))
            print("test:  %s (%d rows)" % (result.test_path, result.n_test))
            print("encoding: %s" % result.encoding_path)
        else:
            spec = TrainSpec(
                train_path=args.train,
                label_col=args.label_col,
                class_col=args.class_col,
                seed=args.seed,
                scale_pos_weight=args.scale_pos_weight,
                n_estimators=args.n_estimators,
                max_depth=args.max_depth,
                learning_rate=args.learning_rate,
                engine_cmd=args.engine_cmd,
            )
            summary = train(spec, args.out)
            print("model: %s" % summary["model_path"])
            print("train accuracy: %.4f" % summary["train_accuracy"])
            print("export verified: max margin gap %.3g"
                  % summary["verification_gap"])
        return 0
    except (PrepareError, FileNotFoundError) as exc:
        print("gbtrainer: %s" % exc, file=sys.stderr)
        return 2
    except ExportError as exc:
        print("gbtrainer: %s" % exc, file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
