#!/usr/bin/env python3
"""Run the desk-scale dictionary x encoder grid and write CSV/markdown reports.

Usage: python scripts/run_desk_grid.py [outdir] [seed]
"""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

import dataclasses

from bowbench import bench


def main():
    out = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else pathlib.Path("results")
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 7
    out.mkdir(parents=True, exist_ok=True)
    config = dataclasses.replace(
        bench.desk_config(seed=seed),
        dictionaries=("re", "kmeans", "omp-2", "sc"),
        encoders=("vq", "sa-5", "omp-5", "llc-5", "sc"),
        out_dir=str(out),
    )
    table = bench.run_grid(config)
    bench.emit_report(table, "csv", out / "grid.csv")
    bench.emit_report(table, "markdown", out / "grid.md")
    print(out / "grid.csv")
    print(out / "grid.md")


if __name__ == "__main__":
    main()
