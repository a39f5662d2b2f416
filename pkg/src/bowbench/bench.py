"""Experiment harness: dictionary x encoder grids, size sweeps, cost tables.

All runs are deterministic functions of their GridConfig (including every
seed), so re-running a grid writes byte-identical reports.  Timing tables
are the one exception: their values move run to run, only the method
ordering is stable.  Cells never share mutable state, so removing one
encoder or dictionary from a config leaves every other cell unchanged.
"""

from __future__ import annotations

import dataclasses
import datetime
import platform
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as data_mod
from .aggregation import build_histograms
from .classify import (
    average_kernels,
    kkt_report,
    mean_pairwise_chi2,
    rbf_chi2_kernel,
    svm_predict,
    svm_train,
)
from .dictionary import (
    LearnParams,
    learn_kmeans,
    learn_ksvd,
    learn_random_exemplars,
    learn_random_weights,
    learn_sc,
    normalized_copy,
)
from .encoding import EncodeParams, encode_one
from .errors import BowError, ConfigInvalid, IoFailure
from .numerics import Rng, derive_seed

_PAPER_SIZE = 4000
_PAPER_SAMPLE = 100_000


def parse_dictionary_tag(tag):
    """-> (kind, sparsity or None); raises ConfigInvalid on unknown tags."""
    t = tag.strip().lower()
    if t in ("rw", "re", "kmeans", "sc"):
        return t, None
    if t.startswith("omp-"):
        try:
            k = int(t[4:])
        except ValueError:
            raise ConfigInvalid(f"bad dictionary tag {tag!r}") from None
        if k < 1:
            raise ConfigInvalid(f"bad dictionary tag {tag!r}")
        return "omp", k
    raise ConfigInvalid(f"unknown dictionary tag {tag!r}")


def parse_encoder_tag(tag):
    """-> (method, neighbors or None); raises ConfigInvalid on unknown tags."""
    t = tag.strip().lower()
    if t == "vq":
        return "vq", None
    if t == "sc":
        return "sc", None
    if t == "llc-full":
        return "llc_full", None
    for prefix, method in (("sa-", "sa"), ("omp-", "omp"), ("llc-", "llc")):
        if t.startswith(prefix):
            try:
                k = int(t[len(prefix):])
            except ValueError:
                raise ConfigInvalid(f"bad encoder tag {tag!r}") from None
            if k < 1:
                raise ConfigInvalid(f"bad encoder tag {tag!r}")
            return method, k
    raise ConfigInvalid(f"unknown encoder tag {tag!r}")


def dictionary_label(tag):
    kind, k = parse_dictionary_tag(tag)
    return {"rw": "RW", "re": "RE", "kmeans": "K-means",
            "sc": "SC", "omp": f"OMP-{k}"}[kind]


def encoder_label(tag):
    method, k = parse_encoder_tag(tag)
    return {"vq": "VQ", "sc": "SC", "llc_full": "LLC-full",
            "sa": f"SA-{k}", "omp": f"OMP-{k}", "llc": f"LLC-{k}"}[method]


@dataclass(frozen=True)
class GridConfig:
    """Everything a harness run depends on, seeds included.

    Desk-scale defaults keep a full grid in the minutes range; pass
    ``paper_scale=True`` (or ``--paper-scale``) for the 4000-atom /
    100k-sample setup.
    """

    synth: data_mod.SynthSpec | None = None
    descriptor_paths: tuple = ()
    split_path: str | None = None
    dictionaries: tuple = ("re", "kmeans")
    encoders: tuple = ("vq",)
    size: int = 64
    sample: int = 10_000
    iterations: int = 50
    penalty: float = 0.15
    smoothing: float = 1.0
    locality_sigma: float = 1.0
    alpha: float = 0.5
    C: float = 100.0
    seed: int = 7
    out_dir: str = "."
    sizes: tuple = ()
    bench_iterations: int = 2
    encode_count: int = 10_000

    def validate(self):
        if not self.dictionaries:
            raise ConfigInvalid("dictionary list is empty")
        if not self.encoders:
            raise ConfigInvalid("encoder list is empty")
        for tag in self.dictionaries:
            parse_dictionary_tag(tag)
        for tag in self.encoders:
            parse_encoder_tag(tag)
        if self.size < 1 or self.sample < 1:
            raise ConfigInvalid("size and sample must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigInvalid("alpha must lie in (0, 1]")
        if self.C <= 0:
            raise ConfigInvalid("C must be positive")
        if self.bench_iterations < 1 or self.encode_count < 1:
            raise ConfigInvalid("bench_iterations and encode_count must be >= 1")
        if self.synth is None and not self.descriptor_paths:
            raise ConfigInvalid("either synthetic spec or descriptor files required")
        if self.descriptor_paths and self.split_path is None:
            raise ConfigInvalid("descriptor files need a split file")

    def dataset_description(self):
        if self.descriptor_paths:
            return "files:" + ",".join(self.descriptor_paths)
        s = self.synth
        return ("synth(classes={0.classes},videos_per_class={0.videos_per_class},"
                "descriptors_per_video={0.descriptors_per_video},dim={0.dim},"
                "clusters_per_class={0.clusters_per_class},"
                "cluster_spread={0.cluster_spread},noise_sigma={0.noise_sigma},"
                "channels={0.channels},seed={0.seed})").format(s)


def desk_config(seed=7, **overrides):
    """Desk-scale default configuration with the standard synthetic spec.

    Learning runs 12 alternations at desk scale (the paper-scale 50 makes
    a full grid hours-long in pure Python); ``--paper-scale`` restores 50.
    """
    synth = data_mod.SynthSpec(seed=derive_seed(seed, "synth"))
    base = GridConfig(synth=synth, seed=seed, iterations=12)
    return dataclasses.replace(base, **overrides) if overrides else base


_CONFIG_KEYS = {
    "data", "descriptors", "split",
    "classes", "videos_per_class", "descriptors_per_video", "dim",
    "clusters_per_class", "cluster_spread", "noise_sigma", "channels",
    "dictionaries", "encoders", "size", "sample", "iterations",
    "penalty", "smoothing", "locality_sigma", "alpha", "C", "seed", "out",
    "sizes", "bench_iterations", "encode_count", "paper_scale",
}


def load_config_file(path):
    """Flat UTF-8 key=value file; '#' starts a comment line."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    mapping = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigInvalid(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigInvalid(f"{path}:{lineno}: unknown key {key!r}")
        mapping[key] = value.strip()
    return mapping


def _to_int(mapping, key, default):
    if key not in mapping:
        return default
    try:
        return int(mapping[key])
    except ValueError:
        raise ConfigInvalid(f"{key} must be an integer") from None


def _to_float(mapping, key, default):
    if key not in mapping:
        return default
    try:
        return float(mapping[key])
    except ValueError:
        raise ConfigInvalid(f"{key} must be a number") from None


def config_from_mapping(mapping):
    """Build a GridConfig from a flat key=value mapping."""
    unknown = set(mapping) - _CONFIG_KEYS
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    seed = _to_int(mapping, "seed", 7)
    paper = mapping.get("paper_scale", "false").lower() in ("1", "true", "yes")

    source = mapping.get("data", "synth")
    if source == "files":
        paths = tuple(p for p in mapping.get("descriptors", "").split(",") if p)
        if not paths:
            raise ConfigInvalid("data=files requires descriptors=<paths>")
        synth = None
        split_path = mapping.get("split")
    elif source == "synth":
        try:
            synth = data_mod.SynthSpec(
                classes=_to_int(mapping, "classes", 5),
                videos_per_class=_to_int(mapping, "videos_per_class", 40),
                descriptors_per_video=_to_int(mapping, "descriptors_per_video", 100),
                dim=_to_int(mapping, "dim", 32),
                clusters_per_class=_to_int(mapping, "clusters_per_class", 4),
                cluster_spread=_to_float(mapping, "cluster_spread", 0.05),
                noise_sigma=_to_float(mapping, "noise_sigma", 0.05),
                channels=_to_int(mapping, "channels", 2),
                seed=derive_seed(seed, "synth"),
            )
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from None
        paths = ()
        split_path = None
    else:
        raise ConfigInvalid(f"data must be 'synth' or 'files', got {source!r}")

    def split_list(key, default):
        if key not in mapping:
            return default
        return tuple(t.strip() for t in mapping[key].split(",") if t.strip())

    sizes = ()
    if "sizes" in mapping:
        try:
            sizes = tuple(int(s) for s in mapping["sizes"].split(",") if s.strip())
        except ValueError:
            raise ConfigInvalid("sizes must be a comma list of integers") from None

    config = GridConfig(
        synth=synth,
        descriptor_paths=paths,
        split_path=split_path,
        dictionaries=split_list("dictionaries", ("re", "kmeans")),
        encoders=split_list("encoders", ("vq",)),
        size=_to_int(mapping, "size", _PAPER_SIZE if paper else 64),
        sample=_to_int(mapping, "sample", _PAPER_SAMPLE if paper else 10_000),
        iterations=_to_int(mapping, "iterations", 50 if paper else 12),
        penalty=_to_float(mapping, "penalty", 0.15),
        smoothing=_to_float(mapping, "smoothing", 1.0),
        locality_sigma=_to_float(mapping, "locality_sigma", 1.0),
        alpha=_to_float(mapping, "alpha", 0.5),
        C=_to_float(mapping, "C", 100.0),
        seed=seed,
        out_dir=mapping.get("out", "."),
        sizes=sizes,
        bench_iterations=_to_int(mapping, "bench_iterations", 2),
        encode_count=_to_int(mapping, "encode_count", 10_000),
    )
    config.validate()
    return config


@dataclass
class Cell:
    value: float | None
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class ResultTable:
    """Rectangular grid of cells with row/column labels and metadata."""

    corner: str
    row_labels: tuple
    col_labels: tuple
    cells: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def cell(self, row, col):
        return self.cells[(row, col)]

    def is_complete(self):
        return all((r, c) in self.cells
                   for r in self.row_labels for c in self.col_labels)


def _load_dataset(config: GridConfig):
    if config.descriptor_paths:
        sets = [data_mod.load_descriptors(p) for p in config.descriptor_paths]
        split = data_mod.load_split(config.split_path)
        reference = sets[0].video_class_map()
        for other in sets[1:]:
            if other.video_class_map() != reference:
                raise ConfigInvalid("channel files disagree on video labels")
        missing = [v for v in split.train_video_ids + split.test_video_ids
                   if v not in reference]
        if missing:
            raise ConfigInvalid(f"split references unknown videos {missing[:8]}")
        return sets, split
    return data_mod.generate_synthetic(config.synth)


def _learn_params(tag, dset, config: GridConfig, iterations=None, tol=None):
    _, sparsity = parse_dictionary_tag(tag)
    seed = derive_seed(config.seed, "learn", dset.channel, tag)
    return LearnParams(
        size=config.size,
        iterations=iterations if iterations is not None else config.iterations,
        sparsity=sparsity,
        l1_penalty=config.penalty,
        tol=tol if tol is not None else 1e-6,
        seed=seed,
    )


def _sampled_pool(dset, split, config: GridConfig):
    """The per-channel learning sample, shared by every dictionary method."""
    if split is not None:
        pool = data_mod.subset_by_videos(dset, split.train_video_ids)
    else:
        pool = dset
    sample_rng = Rng(derive_seed(config.seed, "sample", dset.channel))
    return data_mod.sample_features(pool, config.sample, sample_rng)


def _fit_dictionary(tag, sample, dim, params):
    kind, _ = parse_dictionary_tag(tag)
    rng = Rng(params.seed)
    if kind == "rw":
        return learn_random_weights(dim, params, rng)
    if kind == "re":
        return learn_random_exemplars(sample, params, rng)
    if kind == "kmeans":
        return learn_kmeans(sample, params, rng)
    if kind == "omp":
        return learn_ksvd(sample, params, rng)
    return learn_sc(sample, params, rng)


def learn_one(tag, dset, split, config: GridConfig, iterations=None, tol=None):
    """Learn one dictionary for one channel, seeded by (seed, channel, tag)."""
    params = _learn_params(tag, dset, config, iterations, tol)
    kind, _ = parse_dictionary_tag(tag)
    sample = None if kind == "rw" else _sampled_pool(dset, split, config)
    return _fit_dictionary(tag, sample, dset.dim, params)


def encoder_params(tag, config: GridConfig):
    method, neighbors = parse_encoder_tag(tag)
    return EncodeParams(
        method=method,
        neighbors=neighbors if neighbors is not None else 5,
        smoothing=config.smoothing,
        penalty=config.penalty,
        locality_sigma=config.locality_sigma,
    )


def _update_hist_diag(diag, histograms):
    for hist in histograms:
        if hist.all_zero:
            diag["zero_histograms"] += 1
        else:
            dev = abs(float(np.linalg.norm(hist.values)) - 1.0)
            diag["hist_norm_dev"] = max(diag["hist_norm_dev"], dev)


def _evaluate_cell(dictionaries, encoder_tag, sets, split, config, diag):
    """One grid cell: histograms, kernels, SVM, percent test accuracy."""
    params = encoder_params(encoder_tag, config)
    train_kernels = []
    test_kernels = []
    train_labels = test_labels = None
    for dset, dictionary in zip(sets, dictionaries):
        enc_dict = normalized_copy(dictionary) if params.method == "omp" \
            else dictionary
        hists = build_histograms(dset, enc_dict, params, config.alpha)
        _update_hist_diag(diag, hists)
        by_id = {h.video_id: h for h in hists}
        train_h = [by_id[v] for v in split.train_video_ids]
        test_h = [by_id[v] for v in split.test_video_ids]
        normalizer = mean_pairwise_chi2(train_h)
        train_kernels.append(rbf_chi2_kernel(train_h, train_h, normalizer))
        test_kernels.append(rbf_chi2_kernel(test_h, train_h, normalizer))
        train_labels = np.asarray([h.class_id for h in train_h])
        test_labels = np.asarray([h.class_id for h in test_h])

    k_train = average_kernels(train_kernels)
    k_test = average_kernels(test_kernels)
    model = svm_train(k_train, train_labels, config.C)
    report = kkt_report(model, k_train, train_labels)
    diag["svm_box_violation"] = max(diag["svm_box_violation"], report["box_violation"])
    diag["svm_balance"] = max(diag["svm_balance"], report["balance"])
    diag["svm_pair_gap"] = max(diag["svm_pair_gap"], report["pair_gap"])
    predicted, _ = svm_predict(model, k_test)
    return 100.0 * float(np.mean(predicted == test_labels))


def _base_metadata(config: GridConfig):
    return {
        "dataset": config.dataset_description(),
        "size": str(config.size),
        "sample": str(config.sample),
        "alpha": repr(config.alpha),
        "C": repr(config.C),
        "seed": str(config.seed),
    }


def run_grid(config: GridConfig) -> ResultTable:
    """The dictionary x encoder accuracy grid.

    Learns each dictionary once per channel, then evaluates every encoder
    against it.  Failed cells carry their error string; the sweep never
    aborts.  Output is byte-deterministic under the config's seeds.
    """
    config.validate()
    sets, split = _load_dataset(config)
    row_labels = tuple(encoder_label(t) for t in config.encoders)
    col_labels = tuple(dictionary_label(t) for t in config.dictionaries)
    diag = {"svm_box_violation": 0.0, "svm_balance": 0.0, "svm_pair_gap": 0.0,
            "hist_norm_dev": 0.0, "zero_histograms": 0}
    cells = {}
    for d_tag in config.dictionaries:
        col = dictionary_label(d_tag)
        try:
            dictionaries = [learn_one(d_tag, ds, split, config) for ds in sets]
        except BowError as exc:
            for e_tag in config.encoders:
                cells[(encoder_label(e_tag), col)] = Cell(
                    None, f"{type(exc).__name__}: {exc}")
            continue
        for e_tag in config.encoders:
            row = encoder_label(e_tag)
            try:
                accuracy = _evaluate_cell(dictionaries, e_tag, sets, split,
                                          config, diag)
                cells[(row, col)] = Cell(accuracy)
            except BowError as exc:
                cells[(row, col)] = Cell(None, f"{type(exc).__name__}: {exc}")

    metadata = _base_metadata(config)
    metadata.update({
        "svm_box_violation": repr(diag["svm_box_violation"]),
        "svm_balance": repr(diag["svm_balance"]),
        "svm_pair_gap": repr(diag["svm_pair_gap"]),
        "hist_norm_dev": repr(diag["hist_norm_dev"]),
        "zero_histograms": str(diag["zero_histograms"]),
    })
    return ResultTable("encoder", row_labels, col_labels, cells, metadata)


def run_size_sweep(config: GridConfig, sizes=None) -> ResultTable:
    """Accuracy of (encoder, dictionary) pairs across dictionary sizes.

    Rows are "ENCODER/DICTIONARY" pairs, columns the ascending sizes.
    """
    config.validate()
    sizes = tuple(sizes) if sizes is not None else tuple(config.sizes)
    if not sizes:
        raise ConfigInvalid("size sweep needs a non-empty sizes list")
    if len(set(sizes)) != len(sizes):
        raise ConfigInvalid("duplicate entries in sizes list")
    if list(sizes) != sorted(sizes):
        raise ConfigInvalid("sizes must be ascending")
    if any(s < 1 for s in sizes):
        raise ConfigInvalid("sizes must be >= 1")

    sets, split = _load_dataset(config)
    pairs = [(e_tag, d_tag) for e_tag in config.encoders
             for d_tag in config.dictionaries]
    row_labels = tuple(f"{encoder_label(e)}/{dictionary_label(d)}"
                       for e, d in pairs)
    col_labels = tuple(str(s) for s in sizes)
    diag = {"svm_box_violation": 0.0, "svm_balance": 0.0, "svm_pair_gap": 0.0,
            "hist_norm_dev": 0.0, "zero_histograms": 0}
    cells = {}
    for size in sizes:
        scaled = dataclasses.replace(config, size=size)
        learned = {}
        for e_tag, d_tag in pairs:
            row = f"{encoder_label(e_tag)}/{dictionary_label(d_tag)}"
            try:
                if d_tag not in learned:
                    learned[d_tag] = [learn_one(d_tag, ds, split, scaled)
                                      for ds in sets]
                accuracy = _evaluate_cell(learned[d_tag], e_tag, sets, split,
                                          scaled, diag)
                cells[(row, str(size))] = Cell(accuracy)
            except BowError as exc:
                cells[(row, str(size))] = Cell(
                    None, f"{type(exc).__name__}: {exc}")

    metadata = _base_metadata(config)
    metadata["sizes"] = ",".join(str(s) for s in sizes)
    return ResultTable("pair", row_labels, col_labels, cells, metadata)


def _host_description():
    return (f"{platform.platform()};python={platform.python_version()};"
            f"machine={platform.machine()}")


def bench_learning_cost(config: GridConfig) -> ResultTable:
    """Wall-clock seconds to learn each dictionary, per channel.

    Every iterative learner runs exactly ``bench_iterations`` sweeps
    (tol=0) on the same per-channel sample so per-iteration costs are
    comparable; the sample is drawn once per channel outside the timed
    region (the timer wraps the learner only), and BLAS pools are pinned
    to one thread while timing.  Sampling ignores the split: this harness
    measures cost, not accuracy.
    """
    config.validate()
    sets, _ = _load_dataset(config)
    col_labels = tuple(dictionary_label(t) for t in config.dictionaries)
    row_labels = tuple(ds.channel for ds in sets)
    cells = {}
    for dset in sets:
        sample = _sampled_pool(dset, None, config)
        for d_tag in config.dictionaries:
            col = dictionary_label(d_tag)
            params = _learn_params(d_tag, dset, config,
                                   iterations=config.bench_iterations, tol=0.0)
            try:
                with threadpool_limits(limits=1):
                    start = time.perf_counter()
                    _fit_dictionary(d_tag, sample, dset.dim, params)
                    elapsed = time.perf_counter() - start
                cells[(dset.channel, col)] = Cell(elapsed)
            except BowError as exc:
                cells[(dset.channel, col)] = Cell(
                    None, f"{type(exc).__name__}: {exc}")

    metadata = _base_metadata(config)
    metadata.update({
        "host": _host_description(),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "bench_iterations": str(config.bench_iterations),
        "threads": "1",
    })
    return ResultTable("channel", row_labels, col_labels, cells, metadata)


def bench_encoding_cost(config: GridConfig) -> ResultTable:
    """Mean per-descriptor encode time over ``encode_count`` single calls.

    The dictionary is fixed K-means (learned once per channel with
    ``bench_iterations`` sweeps).  OMP gets a unit-normalized copy and the
    SC Gram matrix is precomputed outside the timed region, mirroring the
    amortized batch path.  Single-threaded.
    """
    config.validate()
    sets, _ = _load_dataset(config)
    col_labels = tuple(encoder_label(t) for t in config.encoders)
    row_labels = tuple(ds.channel for ds in sets)
    cells = {}
    for dset in sets:
        dictionary = learn_one("kmeans", dset, None, config,
                                iterations=config.bench_iterations, tol=0.0)
        pool_rng = Rng(derive_seed(config.seed, "encode-pool", dset.channel))
        pool = data_mod.sample_features(dset, config.encode_count, pool_rng)
        n = pool.shape[1]
        for e_tag in config.encoders:
            col = encoder_label(e_tag)
            params = encoder_params(e_tag, config)
            enc_dict = normalized_copy(dictionary) if params.method == "omp" \
                else dictionary
            atoms = enc_dict.atoms
            gram = atoms.T @ atoms if params.method in ("sc", "omp") else None
            try:
                with threadpool_limits(limits=1):
                    start = time.perf_counter()
                    for i in range(n):
                        encode_one(pool[:, i], atoms, params, gram)
                    elapsed = time.perf_counter() - start
                cells[(dset.channel, col)] = Cell(elapsed / n)
            except BowError as exc:
                cells[(dset.channel, col)] = Cell(
                    None, f"{type(exc).__name__}: {exc}")

    metadata = _base_metadata(config)
    metadata.update({
        "host": _host_description(),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "encode_count": str(config.encode_count),
        "dictionary": "kmeans",
        "threads": "1",
    })
    return ResultTable("channel", row_labels, col_labels, cells, metadata)


_ERR_TOKEN = "ERR"


def _cell_text(cell: Cell):
    return _ERR_TOKEN if not cell.ok else repr(float(cell.value))


def emit_report(table: ResultTable, fmt, path):
    """Write a table as ``csv`` (bare grid) or ``markdown`` (with metadata).

    Bytes are deterministic for equal tables; failed cells render as ERR.
    """
    if not table.is_complete():
        raise ValueError("table has missing cells")
    if fmt == "csv":
        lines = [table.corner + "," + ",".join(table.col_labels)]
        for row in table.row_labels:
            cells = [_cell_text(table.cell(row, col)) for col in table.col_labels]
            lines.append(row + "," + ",".join(cells))
        text = "\n".join(lines) + "\n"
    elif fmt == "markdown":
        lines = []
        for key in sorted(table.metadata):
            lines.append(f"- {key}: {table.metadata[key]}")
        if lines:
            lines.append("")
        lines.append("| " + " | ".join((table.corner,) + table.col_labels) + " |")
        lines.append("|" + "|".join(" --- " for _ in
                                    range(len(table.col_labels) + 1)) + "|")
        for row in table.row_labels:
            cells = [_cell_text(table.cell(row, col)) for col in table.col_labels]
            lines.append("| " + " | ".join((row,) + tuple(cells)) + " |")
        text = "\n".join(lines) + "\n"
    else:
        raise ConfigInvalid(f"unknown report format {fmt!r}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def parse_markdown_report(text) -> ResultTable:
    """Parse a markdown report back into a ResultTable (values and ERRs)."""
    metadata = {}
    rows = []
    header = None
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("- ") and ": " in line:
            key, value = line[2:].split(": ", 1)
            metadata[key] = value
            continue
        if not line.startswith("|"):
            continue
        cells = [c.strip() for c in line.strip("|").split("|")]
        if all(set(c) <= {"-"} and c for c in cells):
            continue
        if header is None:
            header = cells
        else:
            rows.append(cells)
    if header is None:
        raise ValueError("no table found in markdown text")
    corner = header[0]
    col_labels = tuple(header[1:])
    row_labels = tuple(r[0] for r in rows)
    cells = {}
    for r in rows:
        for col, cell_text in zip(col_labels, r[1:]):
            if cell_text == _ERR_TOKEN:
                cells[(r[0], col)] = Cell(None, _ERR_TOKEN)
            else:
                cells[(r[0], col)] = Cell(float(cell_text))
    return ResultTable(corner, row_labels, col_labels, cells, metadata)
