"""``capcompress`` command line: train, compress, generate, sweep.

Exit codes: 0 success, 1 partial sweep failure, 2 usage or input error,
3 numerical failure (training diverged).
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import caption, pipeline
from .errors import DivergenceError, FormatError
from .metrics import format_table, to_kv

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class _UsageError(Exception):
    pass


def _config(args):
    return pipeline.Config.load(args.config)


def _seed(args, cfg):
    return cfg.int("train", "seed") if args.seed is None else args.seed


def cmd_train(args):
    cfg = _config(args)
    data = pipeline.load_dataset(cfg)
    seed = _seed(args, cfg)

    def report(epoch, loss):
        print(f"epoch {epoch + 1} loss {loss:.6f}")

    model, _, _ = pipeline.train_baseline(cfg, data, seed, log_fn=report)
    size = pipeline.save_bundle(model, data.vocab, args.out)
    print(f"wrote model to {args.out} ({size} bytes of weights)")
    return EXIT_OK


def cmd_compress(args):
    try:
        scheme = pipeline.CompressionConfig.parse(args.scheme, args.sparsity if args.sparsity is not None else 0.5)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    cfg = _config(args)
    if args.sparsity is None:
        scheme = pipeline.CompressionConfig(scheme.encoder, scheme.decoder, cfg.float("compress", "sparsity"))
    else:
        cfg.parser.set("compress", "sparsity", str(args.sparsity))
    baseline, vocab = pipeline.load_bundle(args.model)
    data = pipeline.load_dataset(cfg)
    if vocab.tokens != data.vocab.tokens:
        raise _UsageError("model vocabulary does not match the configured captions")
    model = pipeline.compress(baseline, data, scheme, cfg, _seed(args, cfg))
    size = pipeline.save_bundle(model, vocab, args.out)
    print(f"wrote {scheme.label} model to {args.out} ({size} bytes of weights)")
    return EXIT_OK


def _raw_feature(args):
    if args.feature_file:
        if not os.path.exists(args.feature_file):
            raise FileNotFoundError(f"feature file not found: {args.feature_file}")
        if args.feature_file.endswith(".npy"):
            return np.load(args.feature_file).astype(np.float32)
        store = caption.FeatureStore.load(args.feature_file)
        if args.image_id is None:
            if len(store) != 1:
                raise _UsageError("feature store holds several images; pass an image id")
            return store[store.ids()[0]]
    else:
        if args.image_id is None:
            raise _UsageError("pass an image id or --feature-file")
        path = _config(args).path("data", "features")
        if path is None or not os.path.exists(path):
            raise FileNotFoundError(f"features file not found: {path}")
        store = caption.FeatureStore.load(path)
    if args.image_id not in store:
        raise _UsageError(f"unknown image id {args.image_id!r}")
    return store[args.image_id]


def cmd_generate(args):
    model, vocab = pipeline.load_bundle(args.model)
    raw = _raw_feature(args)
    print(caption.caption_image(model, raw, vocab, args.max_len))
    return EXIT_OK


def cmd_sweep(args):
    cfg = _config(args)
    data = pipeline.load_dataset(cfg)
    baseline = pipeline.load_bundle(args.model)[0] if args.model else None
    result = pipeline.run_sweep(cfg, args.out, _seed(args, cfg), baseline=baseline, data=data)
    table = format_table(result.reports)
    if result.supplementary:
        extra = format_table(result.supplementary, baseline_label=result.reports[0].label)
        table += "\n\nPost-training quantization (supplementary, deltas vs. row 1)\n" + extra
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    with open(os.path.join(args.out, "report.kv"), "w", encoding="utf-8") as fh:
        fh.write(to_kv(result.reports + result.supplementary))
    print(table)
    return EXIT_PARTIAL if result.failed else EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (default: bundled toy config)")
    common.add_argument("--seed", type=int, help="override [train] seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="capcompress", description="Train, compress, caption and benchmark a small image captioner.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train the baseline model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", parents=[common], help="compress a trained model")
    p.add_argument("--model", required=True, help="directory written by 'train'")
    p.add_argument("--scheme", required=True, help="ENCODER-DECODER, e.g. quantized-quantized")
    p.add_argument("--sparsity", type=float, help="final sparsity for prune schemes")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("generate", parents=[common], help="caption one image")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("image_id", nargs="?", help="image id in the feature store")
    p.add_argument("--feature-file", help="CKF1 feature store or .npy raw feature vector")
    p.add_argument("--max-len", type=int, default=caption.DEFAULT_MAX_LEN)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sweep", parents=[common], help="run every compression configuration")
    p.add_argument("--model", help="reuse a trained baseline instead of training one")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.config is None:
        from .toydata import bundled_config_path
        args.config = bundled_config_path()
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (_UsageError, FileNotFoundError, FormatError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
