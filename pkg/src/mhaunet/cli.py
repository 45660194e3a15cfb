"""Command-line entry point.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .config import RunConfig, dump_config, load_config
from .eica import EicaConfig, batch_classify, write_report_csv
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .evaluation import evaluate, explain_export, predict_export, write_per_image_csv
from .network import MHAUNet, load_checkpoint, predict
from .training import load_batch, load_mask, read_manifest, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mhaunet", description="MHA-UNet segmentation and EICA classification")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train on the manifest's train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="pooled DSC/ACC/SE/SP over a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--per-image-csv")

    for name, help_ in (("predict", "write mask.png and probs.png"),
                        ("explain", "write order{k}.png heatmaps and overlay.png")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--image", required=True)
        p.add_argument("--out", required=True)

    p = sub.add_parser("classify", help="EICA lesion present/absent over a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", required=True, choices=("positive", "negative"))
    p.add_argument("--config")
    p.add_argument("--report", help="CSV path for per-image decisions")
    return parser


def _run_config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def cmd_train(args):
    cfg = _run_config(args.config)
    manifest = read_manifest(args.manifest, cfg.resize_to, cfg.mask_threshold)
    torch.manual_seed(cfg.train.seed)
    model = MHAUNet(cfg.network)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    result = train(model, manifest, cfg.train, out, cfg.loss)
    print(json.dumps({"best_checkpoint": str(result.best_checkpoint),
                      "best_val_dsc": result.best_dsc, "epochs_run": len(result.history)}))


def cmd_eval(args):
    model, _ = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest, model.config.input_size)
    report = evaluate(args.checkpoint, manifest, args.split)
    if args.per_image_csv:
        write_per_image_csv(args.per_image_csv, report)
    print(json.dumps(report.as_dict()))


def cmd_predict(args):
    model, _ = load_checkpoint(args.checkpoint)
    for path in predict_export(model, args.image, args.out):
        print(path)


def cmd_explain(args):
    model, _ = load_checkpoint(args.checkpoint)
    for path in explain_export(model, args.image, args.out):
        print(path)


def _check_labels(manifest, labels):
    for e in manifest.entries:
        if e.mask is None:
            continue
        positive = bool(load_mask(e.mask, manifest.resize_to, manifest.mask_threshold).any())
        if positive != (labels == "positive"):
            raise DataError(f"{e.image}: mask disagrees with --labels {labels}; "
                            "mixed-label manifests are not supported")


def cmd_classify(args):
    model, _ = load_checkpoint(args.checkpoint)
    eica_cfg = load_config(args.config).eica if args.config else EicaConfig()
    manifest = read_manifest(args.manifest, model.config.input_size)
    _check_labels(manifest, args.labels)
    bundles, names = [], []
    for split in ("train", "val", "test"):
        entries = manifest.split(split)
        for i, e in enumerate(entries):
            images, _ = load_batch(manifest, [i], split=split)
            bundles.extend(predict(model, images)[2])
            names.append(str(e.image))
    result = batch_classify(bundles, args.labels, eica_cfg, names)
    if args.report:
        write_report_csv(args.report, result)
    print(json.dumps({result.metric_name: result.rate, "images": len(bundles)}))


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "explain": cmd_explain, "classify": cmd_classify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
