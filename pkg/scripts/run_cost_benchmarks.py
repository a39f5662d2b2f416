#!/usr/bin/env python3
"""Time the dictionary learners and encoders at the standard cost sizes.

Learning costs run at K=512 atoms on a 20k-descriptor sample; encoding
costs reuse a K-means dictionary and average over 10k single encodes.
Usage: python scripts/run_cost_benchmarks.py [outdir] [seed]
"""

import os
import pathlib
import sys

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

import dataclasses

from bowbench import bench
from bowbench.data import SynthSpec
from bowbench.numerics import derive_seed


def main():
    out = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else pathlib.Path("results")
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 7
    out.mkdir(parents=True, exist_ok=True)
    config = dataclasses.replace(
        bench.GridConfig(),
        synth=SynthSpec(classes=5, videos_per_class=40,
                        descriptors_per_video=100, dim=32,
                        clusters_per_class=4, channels=1,
                        seed=derive_seed(seed, "synth")),
        dictionaries=("rw", "re", "kmeans", "omp-2", "omp-5", "omp-10", "sc"),
        encoders=("vq", "sa-2", "sa-5", "sa-10", "llc-2", "llc-5", "llc-10",
                  "omp-2", "omp-5", "omp-10", "sc"),
        size=512,
        sample=20_000,
        bench_iterations=2,
        encode_count=10_000,
        seed=seed,
        out_dir=str(out),
    )
    learn_table = bench.bench_learning_cost(config)
    bench.emit_report(learn_table, "csv", out / "learning_cost.csv")
    bench.emit_report(learn_table, "markdown", out / "learning_cost.md")
    encode_config = dataclasses.replace(config, size=256)
    encode_table = bench.bench_encoding_cost(encode_config)
    bench.emit_report(encode_table, "csv", out / "encoding_cost.csv")
    bench.emit_report(encode_table, "markdown", out / "encoding_cost.md")
    for path in ("learning_cost.csv", "learning_cost.md",
                 "encoding_cost.csv", "encoding_cost.md"):
        print(out / path)


if __name__ == "__main__":
    main()
