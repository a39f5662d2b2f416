"""Chi-square RBF kernels, channel averaging, and a precomputed-kernel SVM.

The SVM solves each one-against-rest binary subproblem with SMO using
maximal-violating-pair working set selection and the standard m(alpha) -
M(alpha) <= tol stopping rule (tol 1e-3); multi-class prediction takes the
argmax score with ties to the lowest class index.

Kernel files are plain CSV with video ids in the header row and first
column.  Model files (``BWSM``, little-endian): magic, u32 version=1,
f64 C, f64 kernel normalizer, u32 n_classes, u32 n_train, train video ids
as u32, class labels as u32, then per class f64 bias followed by n_train
f64 dual coefficients (alpha_i * y_i).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    DegenerateLabels,
    IdMismatch,
    IoFailure,
    MaxIterations,
    NegativeEntry,
    NotSymmetric,
    ShapeMismatch,
    TruncatedFile,
    VersionUnsupported,
)

_BWSM_MAGIC = b"BWSM"
_VERSION = 1
_ZERO_BIN = 1e-15
_SMO_TOL = 1e-3


@dataclass
class KernelMatrix:
    """Gram matrix over videos with channel/normalizer provenance."""

    values: np.ndarray        # (m, n) float64
    row_ids: tuple
    col_ids: tuple
    channels: tuple = ()
    normalizer: float = float("nan")

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.row_ids = tuple(int(v) for v in self.row_ids)
        self.col_ids = tuple(int(v) for v in self.col_ids)
        if self.values.shape != (len(self.row_ids), len(self.col_ids)):
            raise ShapeMismatch("kernel shape does not match id lists")
        self.channels = tuple(self.channels)


@dataclass
class SvmModel:
    """One-against-rest dual solution on a precomputed kernel."""

    class_labels: tuple
    train_ids: tuple
    dual_coef: np.ndarray     # (n_classes, n_train): alpha_i * y_i per class
    biases: np.ndarray        # (n_classes,)
    C: float
    normalizer: float = float("nan")


def chi2_distance(h, g):
    """0.5 * sum (h_i - g_i)^2 / (h_i + g_i); empty bins contribute zero."""
    h = np.asarray(h, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    if h.shape != g.shape:
        raise ShapeMismatch("histogram lengths differ")
    if np.any(h < 0) or np.any(g < 0):
        raise NegativeEntry("chi-square distance needs non-negative entries")
    total = h + g
    mask = total > _ZERO_BIN
    diff = h - g
    return 0.5 * float(np.sum(diff[mask] ** 2 / total[mask]))


def chi2_distance_matrix(rows, cols):
    """All-pairs chi-square distances between histogram stacks.

    ``rows`` is (m, K), ``cols`` is (n, K); matches :func:`chi2_distance`
    entrywise (same empty-bin rule).
    """
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    if rows.shape[1] != cols.shape[1]:
        raise ShapeMismatch("histogram lengths differ")
    if np.any(rows < 0) or np.any(cols < 0):
        raise NegativeEntry("chi-square distance needs non-negative entries")
    out = np.empty((rows.shape[0], cols.shape[0]))
    for i in range(rows.shape[0]):
        total = rows[i][None, :] + cols
        diff = rows[i][None, :] - cols
        ratio = np.where(total > _ZERO_BIN, diff * diff / np.where(
            total > _ZERO_BIN, total, 1.0), 0.0)
        out[i] = 0.5 * ratio.sum(axis=1)
    return out


def mean_pairwise_chi2(histograms):
    """Mean chi-square distance over unordered distinct pairs.

    This is the kernel normalizer convention: computed once on the training
    set, reused for test kernels.  Falls back to 1.0 when all pairs
    coincide (degenerate but must not produce a zero normalizer).
    """
    stack = np.stack([h.values for h in histograms])
    n = stack.shape[0]
    if n < 2:
        return 1.0
    dist = chi2_distance_matrix(stack, stack)
    total = float(np.sum(np.triu(dist, k=1)))
    pairs = n * (n - 1) / 2
    mean = total / pairs
    return mean if mean > _ZERO_BIN else 1.0


def rbf_chi2_kernel(rows, cols, normalizer):
    """exp(-chi2 / normalizer) between two histogram lists."""
    if normalizer <= 0:
        raise ValueError("normalizer must be positive")
    row_stack = np.stack([h.values for h in rows])
    col_stack = np.stack([h.values for h in cols])
    dist = chi2_distance_matrix(row_stack, col_stack)
    channels = tuple(sorted({h.channel for h in rows} | {h.channel for h in cols}))
    return KernelMatrix(
        values=np.exp(-dist / normalizer),
        row_ids=tuple(h.video_id for h in rows),
        col_ids=tuple(h.video_id for h in cols),
        channels=channels,
        normalizer=float(normalizer),
    )


def average_kernels(kernels):
    """Entrywise mean of kernels sharing shape and id lists."""
    if not kernels:
        raise ValueError("no kernels to average")
    first = kernels[0]
    for k in kernels[1:]:
        if k.values.shape != first.values.shape:
            raise ShapeMismatch("kernel shapes differ")
        if k.row_ids != first.row_ids or k.col_ids != first.col_ids:
            raise IdMismatch("kernel id lists differ")
    values = np.mean([k.values for k in kernels], axis=0)
    channels = tuple(sorted({c for k in kernels for c in k.channels}))
    return KernelMatrix(
        values=values,
        row_ids=first.row_ids,
        col_ids=first.col_ids,
        channels=channels,
        normalizer=first.normalizer,
    )


def _smo_binary(kernel, y, C, tol=_SMO_TOL, max_iter=None):
    """Maximal-violating-pair SMO on a precomputed kernel.

    Minimizes 0.5 a'Qa - 1'a with Q_ij = y_i y_j K_ij subject to
    0 <= a <= C and y'a = 0 (the usual soft-margin dual).  Stops when the
    gap between the most violating up/down pair drops to ``tol``.
    Returns (alpha, bias, iterations).
    """
    n = kernel.shape[0]
    if max_iter is None:
        max_iter = max(200_000, 200 * n)
    alpha = np.zeros(n)
    grad = -np.ones(n)          # gradient of the objective at alpha = 0
    pos = y > 0

    for iteration in range(max_iter):
        score = -y * grad
        at_upper = alpha >= C - 1e-12
        at_lower = alpha <= 1e-12
        up_mask = (pos & ~at_upper) | (~pos & ~at_lower)
        low_mask = (~pos & ~at_upper) | (pos & ~at_lower)
        up_vals = np.where(up_mask, score, -np.inf)
        low_vals = np.where(low_mask, score, np.inf)
        i = int(np.argmax(up_vals))
        j = int(np.argmin(low_vals))
        m_up = float(up_vals[i])
        m_low = float(low_vals[j])
        if m_up - m_low <= tol:
            return alpha, _terminal_bias(m_up, m_low, score, alpha, C), iteration
        # curvature along the feasible pair direction, same in both cases
        quad = max(kernel[i, i] + kernel[j, j] - 2.0 * kernel[i, j], 1e-12)

        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = old_i - old_j
            new_i = old_i + delta
            new_j = old_j + delta
            if diff > 0:
                if new_j < 0:
                    new_j, new_i = 0.0, diff
            else:
                if new_i < 0:
                    new_i, new_j = 0.0, -diff
            if diff > 0:
                if new_i > C:
                    new_i, new_j = C, C - diff
            else:
                if new_j > C:
                    new_j, new_i = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = old_i + old_j
            new_i = old_i - delta
            new_j = old_j + delta
            if total > C:
                if new_i > C:
                    new_i, new_j = C, total - C
            else:
                if new_j < 0:
                    new_j, new_i = 0.0, total
            if total > C:
                if new_j > C:
                    new_j, new_i = C, total - C
            else:
                if new_i < 0:
                    new_i, new_j = 0.0, total

        d_i = new_i - old_i
        d_j = new_j - old_j
        alpha[i] = new_i
        alpha[j] = new_j
        # grad_s += Q_si d_i + Q_sj d_j with Q_st = y_s y_t K_st
        grad += y * (kernel[:, i] * (y[i] * d_i) + kernel[:, j] * (y[j] * d_j))

    raise MaxIterations("SMO hit its iteration cap before the KKT gap closed")


def _terminal_bias(m_up, m_low, score, alpha, C):
    """Bias at SMO termination.

    At the optimum every free support vector has score_i = -y_i grad_i
    exactly equal to the bias, and the up/low extremes bracket it, so the
    midpoint of the bracket (or the free-vector mean when one side is
    empty) recovers b.
    """
    if np.isfinite(m_up) and np.isfinite(m_low):
        return 0.5 * (m_up + m_low)
    free = (alpha > 1e-12) & (alpha < C - 1e-12)
    if free.any():
        return float(np.mean(score[free]))
    finite = [v for v in (m_up, m_low) if np.isfinite(v)]
    return float(np.mean(finite)) if finite else 0.0


def svm_train(k_train: KernelMatrix, labels, C=100.0):
    """One-against-rest SVM on a precomputed train kernel.

    ``labels`` aligns with ``k_train.row_ids``.  Each class's binary dual is
    solved by SMO to KKT tolerance 1e-3.
    """
    kernel = k_train.values
    labels = np.asarray(labels, dtype=np.int64)
    if kernel.shape[0] != kernel.shape[1]:
        raise ShapeMismatch("train kernel must be square")
    if labels.shape[0] != kernel.shape[0]:
        raise ShapeMismatch("one label per training video required")
    if np.max(np.abs(kernel - kernel.T)) > 1e-10:
        raise NotSymmetric("train kernel is not symmetric within 1e-10")
    classes = np.unique(labels)
    if classes.size < 2:
        raise DegenerateLabels("need at least two classes")

    dual = np.zeros((classes.size, kernel.shape[0]))
    biases = np.zeros(classes.size)
    for c_idx, cls in enumerate(classes.tolist()):
        y = np.where(labels == cls, 1.0, -1.0)
        if not (np.any(y > 0) and np.any(y < 0)):
            raise DegenerateLabels(f"class {cls} has no counterexamples")
        alpha, bias, _ = _smo_binary(kernel, y, float(C))
        dual[c_idx] = alpha * y
        biases[c_idx] = bias
    return SvmModel(
        class_labels=tuple(int(c) for c in classes),
        train_ids=k_train.row_ids,
        dual_coef=dual,
        biases=biases,
        C=float(C),
        normalizer=k_train.normalizer,
    )


def svm_predict(model: SvmModel, k_test: KernelMatrix):
    """Labels and per-class scores for test-vs-train kernel rows.

    score_c(v) = sum_i dual_c[i] * K(v, i) + bias_c; the argmax breaks ties
    toward the lowest class index.
    """
    if k_test.col_ids != model.train_ids:
        raise IdMismatch("test kernel columns do not match training ids")
    scores = k_test.values @ model.dual_coef.T + model.biases[None, :]
    winners = np.argmax(scores, axis=1)
    labels = np.asarray(model.class_labels, dtype=np.int64)[winners]
    return labels, scores


def kkt_report(model: SvmModel, k_train: KernelMatrix, labels):
    """Worst-case dual feasibility / KKT numbers for a trained model.

    Returns a dict with the max bound violation, the max |sum alpha_i y_i|,
    and the max violating-pair gap across classes (should be <= 1e-3).
    """
    labels = np.asarray(labels, dtype=np.int64)
    kernel = k_train.values
    box = 0.0
    balance = 0.0
    gap = 0.0
    for c_idx, cls in enumerate(model.class_labels):
        y = np.where(labels == cls, 1.0, -1.0)
        alpha = model.dual_coef[c_idx] * y
        box = max(box, float(np.max(np.maximum(-alpha, alpha - model.C))))
        balance = max(balance, abs(float(np.sum(alpha * y))))
        grad = y * (kernel @ (alpha * y)) - 1.0
        score = -y * grad
        up = ((y > 0) & (alpha < model.C - 1e-12)) | ((y < 0) & (alpha > 1e-12))
        low = ((y < 0) & (alpha < model.C - 1e-12)) | ((y > 0) & (alpha > 1e-12))
        if up.any() and low.any():
            gap = max(gap, float(np.max(score[up]) - np.min(score[low])))
    return {"box_violation": box, "balance": balance, "pair_gap": gap}


def save_kernel_csv(kernel: KernelMatrix, path):
    """CSV with the column ids in the header and row ids leading each row."""
    lines = ["video_id," + ",".join(str(c) for c in kernel.col_ids)]
    for rid, row in zip(kernel.row_ids, kernel.values):
        lines.append(str(rid) + "," + ",".join(repr(float(v)) for v in row))
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_kernel_csv(path) -> KernelMatrix:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise TruncatedFile(f"{path}: empty kernel file")
    header = lines[0].split(",")
    col_ids = tuple(int(c) for c in header[1:])
    row_ids = []
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        row_ids.append(int(cells[0]))
        rows.append([float(c) for c in cells[1:]])
    return KernelMatrix(
        values=np.asarray(rows, dtype=np.float64),
        row_ids=tuple(row_ids),
        col_ids=col_ids,
    )


def save_svm_model(model: SvmModel, path):
    """Write a BWSM model file."""
    n_classes = len(model.class_labels)
    n_train = len(model.train_ids)
    try:
        with open(path, "wb") as fh:
            fh.write(_BWSM_MAGIC)
            fh.write(struct.pack("<Idd", _VERSION, model.C, model.normalizer))
            fh.write(struct.pack("<II", n_classes, n_train))
            fh.write(np.asarray(model.train_ids, dtype="<u4").tobytes())
            fh.write(np.asarray(model.class_labels, dtype="<u4").tobytes())
            for c_idx in range(n_classes):
                fh.write(struct.pack("<d", float(model.biases[c_idx])))
                fh.write(model.dual_coef[c_idx].astype("<f8").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_svm_model(path) -> SvmModel:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 4 or blob[:4] != _BWSM_MAGIC:
        raise BadMagic(f"{path}: not a BWSM file")
    if len(blob) < 32:
        raise TruncatedFile(f"{path}: header incomplete")
    version, C, normalizer = struct.unpack_from("<Idd", blob, 4)
    if version != _VERSION:
        raise VersionUnsupported(f"{path}: BWSM version {version}")
    n_classes, n_train = struct.unpack_from("<II", blob, 24)
    offset = 32
    expected = offset + 4 * n_train + 4 * n_classes \
        + n_classes * (8 + 8 * n_train)
    if len(blob) != expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {len(blob)}")
    train_ids = np.frombuffer(blob, dtype="<u4", count=n_train, offset=offset)
    offset += 4 * n_train
    class_labels = np.frombuffer(blob, dtype="<u4", count=n_classes,
                                 offset=offset)
    offset += 4 * n_classes
    dual = np.empty((n_classes, n_train))
    biases = np.empty(n_classes)
    for c_idx in range(n_classes):
        (biases[c_idx],) = struct.unpack_from("<d", blob, offset)
        offset += 8
        dual[c_idx] = np.frombuffer(blob, dtype="<f8", count=n_train,
                                    offset=offset)
        offset += 8 * n_train
    return SvmModel(
        class_labels=tuple(int(c) for c in class_labels),
        train_ids=tuple(int(v) for v in train_ids),
        dual_coef=dual,
        biases=biases,
        C=float(C),
        normalizer=float(normalizer),
    )
