"""Command line interface.

Subcommands: ``synth``, ``learn``, ``encode-pool``, ``kernel``,
``train-eval``, ``grid``, ``size-sweep``, ``bench-learn``, ``bench-encode``.
Configuration comes from an optional flat key=value file (``--config``);
explicit CLI flags always win over file values.

Exit codes: 0 success, 1 config error, 2 I/O error, 3 numeric failure.
"""

import os
import sys

# Timing subcommands pin BLAS pools before numpy loads; threadpoolctl
# covers the timed regions as well, this keeps stray pools quiet.
if any(cmd in sys.argv for cmd in ("bench-learn", "bench-encode")):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(_var, "1")

import argparse
import pathlib

import numpy as np

from . import bench, classify, data
from .aggregation import build_histograms, load_histograms, save_histograms
from .dictionary import load_dictionary, normalized_copy, save_dictionary
from .errors import ConfigInvalid, FileFormatError, NumericError


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as config errors (exit 1)."""

    def error(self, message):
        raise ConfigInvalid(message)


def _add_common(parser):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="base seed")
    parser.add_argument("--out", help="output directory or file")
    parser.add_argument("--paper-scale", action="store_true",
                        help="use K=4000 and 100k learning samples")


def _build_config(args, overrides=None):
    mapping = bench.load_config_file(args.config) if args.config else {}
    if args.seed is not None:
        mapping["seed"] = str(args.seed)
    if args.out is not None:
        mapping["out"] = args.out
    if args.paper_scale:
        mapping["paper_scale"] = "true"
    if overrides:
        mapping.update(overrides)
    return bench.config_from_mapping(mapping)


def _out_dir(config):
    path = pathlib.Path(config.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cmd_synth(args):
    config = _build_config(args)
    if config.synth is None:
        raise ConfigInvalid("synth subcommand needs data=synth")
    sets, split = data.generate_synthetic(config.synth)
    out = _out_dir(config)
    for dset in sets:
        path = out / f"descriptors_{dset.channel}.bwds"
        data.save_descriptors(dset, path)
        print(path)
    split_path = out / "split.bwsp"
    data.save_split(split, split_path)
    print(split_path)
    return 0


def _cmd_learn(args):
    config = _build_config(args)
    dset = data.load_descriptors(args.descriptors)
    split = data.load_split(args.split) if args.split else None
    dictionary = bench.learn_one(args.method, dset, split, config)
    out = pathlib.Path(args.out_file or
                       _out_dir(config) / f"dictionary_{dset.channel}.bwdc")
    save_dictionary(dictionary, out)
    print(out)
    return 0


def _cmd_encode_pool(args):
    config = _build_config(args)
    dset = data.load_descriptors(args.descriptors)
    dictionary = load_dictionary(args.dictionary)
    params = bench.encoder_params(args.encoder, config)
    if params.method == "omp":
        dictionary = normalized_copy(dictionary)
    hists = build_histograms(dset, dictionary, params, config.alpha)
    out = pathlib.Path(args.out_file or
                       _out_dir(config) / f"histograms_{dset.channel}.bwhs")
    save_histograms(hists, out)
    print(out)
    return 0


def _cmd_kernel(args):
    config = _build_config(args)
    split = data.load_split(args.split)
    train_kernels = []
    test_kernels = []
    for path in args.histograms:
        hists = load_histograms(path)
        by_id = {h.video_id: h for h in hists}
        missing = [v for v in split.train_video_ids + split.test_video_ids
                   if v not in by_id]
        if missing:
            raise ConfigInvalid(f"{path}: histograms missing for videos {missing}")
        train_h = [by_id[v] for v in split.train_video_ids]
        test_h = [by_id[v] for v in split.test_video_ids]
        normalizer = classify.mean_pairwise_chi2(train_h)
        train_kernels.append(classify.rbf_chi2_kernel(train_h, train_h, normalizer))
        test_kernels.append(classify.rbf_chi2_kernel(test_h, train_h, normalizer))
    out = _out_dir(config)
    train_path = out / "train_kernel.csv"
    test_path = out / "test_kernel.csv"
    classify.save_kernel_csv(classify.average_kernels(train_kernels), train_path)
    classify.save_kernel_csv(classify.average_kernels(test_kernels), test_path)
    print(train_path)
    print(test_path)
    return 0


def _cmd_train_eval(args):
    config = _build_config(args)
    k_train = classify.load_kernel_csv(args.train_kernel)
    k_test = classify.load_kernel_csv(args.test_kernel)
    labels_by_id = {h.video_id: h.class_id
                    for h in load_histograms(args.labels)}
    try:
        train_labels = np.asarray([labels_by_id[v] for v in k_train.row_ids])
        test_labels = np.asarray([labels_by_id[v] for v in k_test.row_ids])
    except KeyError as exc:
        raise ConfigInvalid(f"label source misses video {exc}") from None
    model = classify.svm_train(k_train, train_labels, config.C)
    if args.model_out:
        classify.save_svm_model(model, args.model_out)
    predicted, _ = classify.svm_predict(model, k_test)
    accuracy = 100.0 * float(np.mean(predicted == test_labels))
    print(f"accuracy {accuracy:.2f}")
    return 0


def _emit(table, config, stem):
    out = _out_dir(config)
    csv_path = out / f"{stem}.csv"
    md_path = out / f"{stem}.md"
    bench.emit_report(table, "csv", csv_path)
    bench.emit_report(table, "markdown", md_path)
    print(csv_path)
    print(md_path)


def _cmd_grid(args):
    config = _build_config(args)
    table = bench.run_grid(config)
    _emit(table, config, "grid")
    return 0


def _cmd_size_sweep(args):
    overrides = {"sizes": args.sizes} if args.sizes else None
    config = _build_config(args, overrides)
    table = bench.run_size_sweep(config)
    _emit(table, config, "size_sweep")
    return 0


def _cmd_bench_learn(args):
    config = _build_config(args)
    table = bench.bench_learning_cost(config)
    _emit(table, config, "learning_cost")
    return 0


def _cmd_bench_encode(args):
    config = _build_config(args)
    table = bench.bench_encoding_cost(config)
    _emit(table, config, "encoding_cost")
    return 0


def _make_parser():
    parser = _Parser(prog="bowbench",
                     description="bag-of-words pipeline benchmark toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic BWDS/BWSP files")
    _add_common(p)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("learn", help="learn a dictionary from a BWDS file")
    _add_common(p)
    p.add_argument("--descriptors", required=True)
    p.add_argument("--method", required=True,
                   help="rw | re | kmeans | omp-<k> | sc")
    p.add_argument("--split", help="BWSP file; sample only train videos")
    p.add_argument("--out-file", help="output BWDC path")
    p.set_defaults(fn=_cmd_learn)

    p = sub.add_parser("encode-pool",
                       help="encode descriptors and pool per-video histograms")
    _add_common(p)
    p.add_argument("--descriptors", required=True)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--encoder", required=True,
                   help="vq | sa-<k> | omp-<k> | sc | llc-<k> | llc-full")
    p.add_argument("--out-file", help="output BWHS path")
    p.set_defaults(fn=_cmd_encode_pool)

    p = sub.add_parser("kernel",
                       help="chi-square RBF kernels from BWHS histograms")
    _add_common(p)
    p.add_argument("--histograms", nargs="+", required=True,
                   help="one BWHS file per channel; kernels are averaged")
    p.add_argument("--split", required=True)
    p.set_defaults(fn=_cmd_kernel)

    p = sub.add_parser("train-eval",
                       help="train the SVM on kernel CSVs and report accuracy")
    _add_common(p)
    p.add_argument("--train-kernel", required=True)
    p.add_argument("--test-kernel", required=True)
    p.add_argument("--labels", required=True,
                   help="BWHS file supplying video class labels")
    p.add_argument("--model-out", help="optional BWSM model output path")
    p.set_defaults(fn=_cmd_train_eval)

    p = sub.add_parser("grid", help="dictionary x encoder accuracy grid")
    _add_common(p)
    p.set_defaults(fn=_cmd_grid)

    p = sub.add_parser("size-sweep", help="accuracy across dictionary sizes")
    _add_common(p)
    p.add_argument("--sizes", help="comma list, ascending, e.g. 16,64,256")
    p.set_defaults(fn=_cmd_size_sweep)

    p = sub.add_parser("bench-learn", help="dictionary learning cost table")
    _add_common(p)
    p.set_defaults(fn=_cmd_bench_learn)

    p = sub.add_parser("bench-encode", help="per-descriptor encoding cost table")
    _add_common(p)
    p.set_defaults(fn=_cmd_bench_encode)

    return parser


def main(argv=None):
    parser = _make_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileFormatError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
