"""Per-video pooling of codes and histogram post-processing.

Sum pooling accumulates absolute code values; Power+L2 applies the signed
power transform and then L2-normalizes.  BWHS histogram file
(little-endian): magic ``BWHS``, u32 version=1, u32 K, u32 n_videos,
u8 tag length + UTF-8 channel tag, then per video
``{u32 video_id, u16 class_id (0xFFFF = unlabeled), K x f32}``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import UNLABELED, DescriptorSet, UNLABELED_ON_DISK
from .dictionary import Dictionary
from .encoding import EncodeParams, encode_batch
from .errors import (
    BadMagic,
    IoFailure,
    LengthMismatch,
    NonFiniteValue,
    TruncatedFile,
    VersionUnsupported,
)

_BWHS_MAGIC = b"BWHS"
_VERSION = 1


@dataclass
class VideoHistogram:
    """Pooled, normalized length-K representation of one video."""

    video_id: int
    class_id: int
    channel: str
    values: np.ndarray
    normalization: str = "none"
    all_zero: bool = False


def pool_sum(codes, length):
    """Sum of absolute code values, accumulated in code order.

    An empty code list yields the zero vector (callers flag it).
    """
    out = np.zeros(length)
    for code in codes:
        if code.length != length:
            raise LengthMismatch(
                f"code length {code.length} does not match histogram {length}"
            )
        if code.support.size:
            np.add.at(out, code.support, np.abs(code.values))
    return out


def normalize_power_l2(values, alpha=0.5):
    """Signed power transform then L2 normalization.

    For alpha = 0.5 and non-negative input this equals
    h_i**0.5 / sqrt(sum(h)).  The all-zero vector is returned unchanged;
    callers keep the zero flag.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    values = np.asarray(values, dtype=np.float64)
    powered = np.sign(values) * np.abs(values) ** alpha
    norm = float(np.linalg.norm(powered))
    if norm == 0.0:
        return powered
    return powered / norm


def build_histograms(dset: DescriptorSet, dictionary: Dictionary,
                     params: EncodeParams, alpha=0.5, parallel=False):
    """Encode, pool, and normalize one histogram per video.

    Videos come back sorted by ascending id; a video whose pooled vector is
    all zero keeps the zero vector and is flagged.
    """
    codes = encode_batch(dset.descriptors, dictionary.atoms, params, parallel)
    length = dictionary.size
    class_of = dset.video_class_map()
    out = []
    for vid in dset.videos().tolist():
        member_codes = [codes[i] for i in
                        np.flatnonzero(dset.video_ids == vid)]
        pooled = pool_sum(member_codes, length)
        zero = not np.any(pooled)
        values = pooled if zero else normalize_power_l2(pooled, alpha)
        out.append(VideoHistogram(
            video_id=int(vid),
            class_id=int(class_of[vid]),
            channel=dset.channel,
            values=values,
            normalization=f"power_l2;alpha={alpha}",
            all_zero=zero,
        ))
    return out


def save_histograms(histograms, path):
    """Write a BWHS file; histogram order is preserved."""
    if not histograms:
        raise ValueError("no histograms to save")
    length = histograms[0].values.shape[0]
    channel = histograms[0].channel.encode("utf-8")
    if len(channel) > 255:
        raise ValueError("channel tag longer than 255 bytes")
    header = (_BWHS_MAGIC
              + struct.pack("<III", _VERSION, length, len(histograms))
              + struct.pack("<B", len(channel)) + channel)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            for hist in histograms:
                if hist.values.shape[0] != length:
                    raise ValueError("histogram lengths differ")
                cls = (UNLABELED_ON_DISK if hist.class_id == UNLABELED
                       else hist.class_id)
                fh.write(struct.pack("<IH", hist.video_id, cls))
                fh.write(hist.values.astype("<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_histograms(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 4 or blob[:4] != _BWHS_MAGIC:
        raise BadMagic(f"{path}: not a BWHS file")
    if len(blob) < 17:
        raise TruncatedFile(f"{path}: header incomplete")
    version, length, count = struct.unpack_from("<III", blob, 4)
    if version != _VERSION:
        raise VersionUnsupported(f"{path}: BWHS version {version}")
    tag_len = blob[16]
    offset = 17 + tag_len
    if len(blob) < offset:
        raise TruncatedFile(f"{path}: channel tag incomplete")
    channel = blob[17:offset].decode("utf-8")
    record = 6 + 4 * length
    expected = offset + count * record
    if len(blob) != expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {len(blob)}")
    out = []
    for _ in range(count):
        vid, cls = struct.unpack_from("<IH", blob, offset)
        offset += 6
        values = np.frombuffer(blob, dtype="<f4", count=length,
                               offset=offset).astype(np.float64)
        offset += 4 * length
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue(f"{path}: non-finite histogram values")
        out.append(VideoHistogram(
            video_id=int(vid),
            class_id=UNLABELED if cls == UNLABELED_ON_DISK else int(cls),
            channel=channel,
            values=values,
            normalization="loaded",
            all_zero=not np.any(values),
        ))
    return out
