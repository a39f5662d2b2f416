"""Descriptor ingestion, binary formats, splits, and synthetic data.

File formats (all little-endian):

* BWDS descriptor file: magic ``BWDS``, u32 version=1, u32 d, u64 N,
  u8 tag length + UTF-8 channel tag, then N records of
  ``{u32 video_id, u16 class_id (0xFFFF = unlabeled), d x f32}``.
* BWSP split file: magic ``BWSP``, u32 version=1, u32 n_train, u32 n_test,
  then the train video ids followed by the test video ids as u32.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    EmptySet,
    IoFailure,
    NonFiniteValue,
    TruncatedFile,
    VersionUnsupported,
)
from .numerics import Rng

UNLABELED = -1
UNLABELED_ON_DISK = 0xFFFF

_BWDS_MAGIC = b"BWDS"
_BWSP_MAGIC = b"BWSP"
_VERSION = 1


@dataclass
class DescriptorSet:
    """A d x N matrix of local descriptors with per-descriptor video labels.

    ``class_ids`` holds one label per descriptor; every video must carry a
    single class (UNLABELED for test-time data without ground truth).
    Instances are treated as immutable once constructed.
    """

    descriptors: np.ndarray          # (d, N) float64
    video_ids: np.ndarray            # (N,) int64
    class_ids: np.ndarray            # (N,) int64, UNLABELED allowed
    channel: str = ""

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        self.video_ids = np.asarray(self.video_ids, dtype=np.int64)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        if self.descriptors.ndim != 2:
            raise ValueError("descriptors must be a d x N matrix")
        d, n = self.descriptors.shape
        if n < 1 or d < 1:
            raise ValueError("descriptor set must be non-empty")
        if self.video_ids.shape != (n,) or self.class_ids.shape != (n,):
            raise ValueError("label arrays must have one entry per descriptor")
        if not np.all(np.isfinite(self.descriptors)):
            raise NonFiniteValue("descriptor matrix contains non-finite values")
        # one class per video
        mapping = {}
        for vid, cls in zip(self.video_ids.tolist(), self.class_ids.tolist()):
            if mapping.setdefault(vid, cls) != cls:
                raise ValueError(f"video {vid} carries more than one class label")

    @property
    def dim(self):
        return self.descriptors.shape[0]

    @property
    def count(self):
        return self.descriptors.shape[1]

    def videos(self):
        """Sorted unique video ids."""
        return np.unique(self.video_ids)

    def video_class_map(self):
        """Dict video_id -> class_id."""
        out = {}
        for vid, cls in zip(self.video_ids.tolist(), self.class_ids.tolist()):
            out.setdefault(vid, cls)
        return out


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/test video id sets."""

    train_video_ids: tuple
    test_video_ids: tuple

    def __post_init__(self):
        train = tuple(int(v) for v in self.train_video_ids)
        test = tuple(int(v) for v in self.test_video_ids)
        object.__setattr__(self, "train_video_ids", train)
        object.__setattr__(self, "test_video_ids", test)
        if set(train) & set(test):
            raise ValueError("train and test video sets overlap")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic multi-class descriptor generator."""

    classes: int = 5
    videos_per_class: int = 40
    descriptors_per_video: int = 100
    dim: int = 32
    clusters_per_class: int = 4
    cluster_spread: float = 0.05
    noise_sigma: float = 0.05
    channels: int = 2
    seed: int = 0

    def __post_init__(self):
        counts = (self.classes, self.videos_per_class,
                  self.descriptors_per_video, self.dim,
                  self.clusters_per_class, self.channels)
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be >= 1")
        if self.cluster_spread <= 0 or self.noise_sigma <= 0:
            raise ValueError("spread and noise must be positive")


def _record_dtype(dim):
    return np.dtype([("video", "<u4"), ("cls", "<u2"), ("vals", "<f4", (dim,))])


def save_descriptors(dset: DescriptorSet, path):
    """Write a BWDS file; bytes are deterministic for equal inputs."""
    tag = dset.channel.encode("utf-8")
    if len(tag) > 255:
        raise ValueError("channel tag longer than 255 bytes")
    d, n = dset.descriptors.shape
    records = np.zeros(n, dtype=_record_dtype(d))
    records["video"] = dset.video_ids.astype(np.uint32)
    cls = dset.class_ids.copy()
    cls[cls == UNLABELED] = UNLABELED_ON_DISK
    records["cls"] = cls.astype(np.uint16)
    records["vals"] = dset.descriptors.T.astype(np.float32)
    header = (_BWDS_MAGIC + struct.pack("<IIQ", _VERSION, d, n)
              + struct.pack("<B", len(tag)) + tag)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(records.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_descriptors(path) -> DescriptorSet:
    """Read a BWDS file written by :func:`save_descriptors`."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 4 or blob[:4] != _BWDS_MAGIC:
        raise BadMagic(f"{path}: not a BWDS file")
    if len(blob) < 21:
        raise TruncatedFile(f"{path}: header incomplete")
    version, d, n = struct.unpack_from("<IIQ", blob, 4)
    if version != _VERSION:
        raise VersionUnsupported(f"{path}: BWDS version {version}")
    tag_len = blob[20]
    offset = 21 + tag_len
    if len(blob) < offset:
        raise TruncatedFile(f"{path}: channel tag incomplete")
    channel = blob[21:offset].decode("utf-8")
    if n == 0:
        raise TruncatedFile(f"{path}: empty payload (N=0)")
    dtype = _record_dtype(d)
    expected = offset + n * dtype.itemsize
    if len(blob) != expected:
        raise TruncatedFile(
            f"{path}: expected {expected} bytes, found {len(blob)}"
        )
    records = np.frombuffer(blob, dtype=dtype, count=n, offset=offset)
    vals = records["vals"].astype(np.float64).T
    if not np.all(np.isfinite(vals)):
        raise NonFiniteValue(f"{path}: non-finite descriptor values")
    cls = records["cls"].astype(np.int64)
    cls[cls == UNLABELED_ON_DISK] = UNLABELED
    return DescriptorSet(
        descriptors=vals,
        video_ids=records["video"].astype(np.int64),
        class_ids=cls,
        channel=channel,
    )


def save_split(split: SplitSpec, path):
    """Write a BWSP split file."""
    train = split.train_video_ids
    test = split.test_video_ids
    body = (_BWSP_MAGIC + struct.pack("<III", _VERSION, len(train), len(test))
            + np.asarray(train + test, dtype="<u4").tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(body)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_split(path) -> SplitSpec:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 4 or blob[:4] != _BWSP_MAGIC:
        raise BadMagic(f"{path}: not a BWSP file")
    if len(blob) < 16:
        raise TruncatedFile(f"{path}: header incomplete")
    version, n_train, n_test = struct.unpack_from("<III", blob, 4)
    if version != _VERSION:
        raise VersionUnsupported(f"{path}: BWSP version {version}")
    expected = 16 + 4 * (n_train + n_test)
    if len(blob) != expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {len(blob)}")
    ids = np.frombuffer(blob, dtype="<u4", count=n_train + n_test, offset=16)
    return SplitSpec(
        train_video_ids=tuple(int(v) for v in ids[:n_train]),
        test_video_ids=tuple(int(v) for v in ids[n_train:]),
    )


def sample_features(dset: DescriptorSet, count, rng: Rng):
    """Draw ``count`` descriptor columns for dictionary learning.

    Without replacement when count <= N (count == N gives a permutation of
    all columns), with replacement otherwise.  Columns are copied verbatim,
    never recombined.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    n = dset.count
    if n == 0:
        raise EmptySet("descriptor set is empty")
    idx = rng.choice(n, count, replace=count > n)
    return dset.descriptors[:, idx].copy()


def subset_by_videos(dset: DescriptorSet, video_ids) -> DescriptorSet:
    """Restrict a descriptor set to the given video ids."""
    wanted = set(int(v) for v in video_ids)
    mask = np.fromiter((int(v) in wanted for v in dset.video_ids),
                       dtype=bool, count=dset.count)
    if not mask.any():
        raise EmptySet("no descriptors for the requested videos")
    return DescriptorSet(
        descriptors=dset.descriptors[:, mask].copy(),
        video_ids=dset.video_ids[mask].copy(),
        class_ids=dset.class_ids[mask].copy(),
        channel=dset.channel,
    )


def _unit(vec):
    norm = float(np.linalg.norm(vec))
    return vec / norm if norm > 0 else vec


def generate_synthetic(spec: SynthSpec):
    """Seeded multi-channel synthetic dataset plus a 60/40 split.

    Per class: an anchor direction is drawn uniformly-by-normalization on
    the unit sphere, then ``clusters_per_class`` centers are placed at
    ``normalize(anchor + cluster_spread * gaussian)``.  Each descriptor picks
    one of its class's centers uniformly and adds isotropic
    ``noise_sigma`` gaussian noise.  Channels are drawn independently; the
    split shuffles each class's videos and takes the first 60% (at least one
    video on each side) for training.

    Returns ``(sets, split)`` with one DescriptorSet per channel.
    """
    root = Rng(spec.seed)
    n_videos = spec.classes * spec.videos_per_class
    per_class = spec.videos_per_class * spec.descriptors_per_video

    video_ids = np.repeat(np.arange(n_videos, dtype=np.int64),
                          spec.descriptors_per_video)
    class_ids = np.repeat(np.arange(spec.classes, dtype=np.int64),
                          spec.videos_per_class * spec.descriptors_per_video)

    sets = []
    for ch in range(spec.channels):
        rng = root.spawn("channel", ch)
        blocks = []
        for cls in range(spec.classes):
            anchor = _unit(rng.normal(spec.dim))
            centers = np.empty((spec.dim, spec.clusters_per_class))
            for j in range(spec.clusters_per_class):
                centers[:, j] = _unit(
                    anchor + spec.cluster_spread * rng.normal(spec.dim)
                )
            picks = rng.integers(spec.clusters_per_class, size=per_class)
            noise = rng.normal(spec.dim * per_class).reshape(spec.dim, per_class)
            blocks.append(centers[:, picks] + spec.noise_sigma * noise)
        sets.append(DescriptorSet(
            descriptors=np.concatenate(blocks, axis=1),
            video_ids=video_ids.copy(),
            class_ids=class_ids.copy(),
            channel=f"ch{ch}",
        ))

    split_rng = root.spawn("split")
    train, test = [], []
    for cls in range(spec.classes):
        base = cls * spec.videos_per_class
        order = split_rng.permutation(spec.videos_per_class)
        n_train = int(math.floor(0.6 * spec.videos_per_class))
        if spec.videos_per_class >= 2:
            n_train = min(max(n_train, 1), spec.videos_per_class - 1)
        else:
            n_train = 1
        train.extend(int(base + v) for v in order[:n_train])
        test.extend(int(base + v) for v in order[n_train:])
    return sets, SplitSpec(tuple(sorted(train)), tuple(sorted(test)))
