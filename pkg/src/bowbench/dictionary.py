"""Unsupervised dictionary learners over descriptor matrices.

Five methods: random weights (``rw``), random exemplars (``re``), Lloyd
K-means (``kmeans``), K-SVD driven by OMP coding (``omp-k``), and l1
sparse coding with feature-sign encoding (``sc``).  All are deterministic
functions of (descriptors, params, seed).

RW/RE/K-SVD/SC dictionaries carry unit-norm columns; K-means centroids are
left raw (recorded in the method tag).  BWDC file format (little-endian):
magic ``BWDC``, u32 version=1, u32 d, u32 K, u8 tag length + UTF-8 method
tag, u64 seed, then d*K f32 column-major.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .encoding import Code, EncodeParams, encode_batch
from .errors import (
    BadMagic,
    DegenerateAtom,
    InsufficientData,
    IoFailure,
    NonFiniteValue,
    TruncatedFile,
    VersionUnsupported,
    ZeroMatrix,
)
from .numerics import Rng, rank1_svd

_BWDC_MAGIC = b"BWDC"
_VERSION = 1


@dataclass(frozen=True)
class LearnParams:
    """Shared learner hyperparameters.

    ``size`` is the number of atoms K, ``sparsity`` the OMP-k non-zero cap
    (K-SVD only), ``l1_penalty`` the sparse-coding lambda.  Learning stops
    at ``iterations`` sweeps or when the relative objective change drops
    below ``tol``, whichever comes first.
    """

    size: int
    iterations: int = 50
    sparsity: int | None = None
    l1_penalty: float = 0.15
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("size must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.sparsity is not None and self.sparsity < 1:
            raise ValueError("sparsity must be >= 1")
        if self.l1_penalty <= 0:
            raise ValueError("l1_penalty must be positive")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")


@dataclass
class Dictionary:
    """Learned atom matrix with provenance; treated as immutable."""

    atoms: np.ndarray            # (d, K) float64
    method: str
    seed: int
    iterations_run: int = 0
    objective_trace: tuple = ()

    @property
    def dim(self):
        return self.atoms.shape[0]

    @property
    def size(self):
        return self.atoms.shape[1]


def _tag(name, params: LearnParams, **extra):
    parts = [name, f"K={params.size}"]
    for key, val in extra.items():
        parts.append(f"{key}={val}")
    parts.append(f"seed={params.seed}")
    return ";".join(parts)


def _normalize_columns(mat):
    norms = np.sqrt(np.einsum("ij,ij->j", mat, mat))
    if np.any(norms < 1e-14):
        raise DegenerateAtom("cannot normalize a zero column into an atom")
    return mat / norms


def _as_descriptors(descriptors):
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("descriptors must be a d x N matrix")
    return x


def _exemplar_init(descriptors, size, rng):
    n = descriptors.shape[1]
    if n < size:
        raise InsufficientData(f"need at least K={size} descriptors, have {n}")
    picks = rng.choice(n, size, replace=False)
    return _normalize_columns(descriptors[:, picks].copy())


def learn_random_weights(dim, params: LearnParams, rng: Rng | None = None):
    """Unit-normalized standard-normal columns."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = rng if rng is not None else Rng(params.seed)
    atoms = rng.normal(dim * params.size).reshape(dim, params.size)
    return Dictionary(
        atoms=_normalize_columns(atoms),
        method=_tag("rw", params),
        seed=params.seed,
        iterations_run=0,
        objective_trace=(),
    )


def learn_random_exemplars(descriptors, params: LearnParams,
                           rng: Rng | None = None):
    """Distinct training descriptors, sampled without replacement and
    normalized to unit length."""
    descriptors = _as_descriptors(descriptors)
    rng = rng if rng is not None else Rng(params.seed)
    return Dictionary(
        atoms=_exemplar_init(descriptors, params.size, rng),
        method=_tag("re", params),
        seed=params.seed,
        iterations_run=0,
        objective_trace=(),
    )


def _assign_nearest(descriptors, centroids, block=4096):
    """Index of the nearest centroid per descriptor plus squared distances.

    Blocked so the score matrix stays cache-resident; ties go to the lowest
    centroid index.
    """
    n = descriptors.shape[1]
    cent_sq = np.einsum("ij,ij->j", centroids, centroids)
    idx = np.empty(n, dtype=np.int64)
    best = np.empty(n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        scores = descriptors[:, start:stop].T @ centroids
        scores *= -2.0
        scores += cent_sq
        local = np.argmin(scores, axis=1)
        idx[start:stop] = local
        best[start:stop] = scores[np.arange(stop - start), local]
    best += np.einsum("ij,ij->j", descriptors, descriptors)
    np.maximum(best, 0.0, out=best)
    return idx, best


def kmeans_lloyd(descriptors, init_centroids, iterations, tol):
    """Lloyd iterations from explicit initial centroids.

    Returns (centroids, objective_trace, iterations_run, assignment).  The
    trace holds the clustering cost at the initial centroids and after each
    update; it is non-increasing.  Empty clusters are re-seeded with the
    descriptor farthest from their current centroid.
    """
    descriptors = _as_descriptors(descriptors)
    centroids = np.array(init_centroids, dtype=np.float64, copy=True)
    size = centroids.shape[1]
    idx, best = _assign_nearest(descriptors, centroids)
    trace = [float(best.sum())]
    iterations_run = 0
    for _ in range(iterations):
        counts = np.bincount(idx, minlength=size)
        sums = np.empty_like(centroids)
        for dim in range(descriptors.shape[0]):
            sums[dim] = np.bincount(idx, weights=descriptors[dim],
                                    minlength=size)
        new_centroids = centroids.copy()
        filled = counts > 0
        new_centroids[:, filled] = sums[:, filled] / counts[filled]
        for j in np.flatnonzero(~filled):
            gap = np.einsum("ij,ij->j",
                            descriptors - centroids[:, j:j + 1],
                            descriptors - centroids[:, j:j + 1])
            new_centroids[:, j] = descriptors[:, int(np.argmax(gap))]
        shift = float(np.sqrt(np.max(np.einsum(
            "ij,ij->j", new_centroids - centroids, new_centroids - centroids))))
        centroids = new_centroids
        idx, best = _assign_nearest(descriptors, centroids)
        trace.append(float(best.sum()))
        iterations_run += 1
        if shift < tol:
            break
    return centroids, trace, iterations_run, idx


def learn_kmeans(descriptors, params: LearnParams, rng: Rng | None = None,
                 init_atoms=None):
    """Lloyd K-means from normalized-exemplar initialization.

    Stops when the largest centroid shift falls below ``tol`` or the sweep
    budget runs out.  Centroids are raw cluster means (no norm constraint).
    """
    descriptors = _as_descriptors(descriptors)
    rng = rng if rng is not None else Rng(params.seed)
    if init_atoms is None:
        init = _exemplar_init(descriptors, params.size, rng)
    else:
        init = np.asarray(init_atoms, dtype=np.float64)
    centroids, trace, n_iter, _ = kmeans_lloyd(
        descriptors, init, params.iterations, params.tol)
    return Dictionary(
        atoms=centroids,
        method=_tag("kmeans", params, norm="raw"),
        seed=params.seed,
        iterations_run=n_iter,
        objective_trace=tuple(trace),
    )


def _flatten_codes(codes):
    """Sparse triplets grouped by atom: (starts, descriptor_idx, values)."""
    rows, cols, vals = [], [], []
    for i, code in enumerate(codes):
        if code.support.size:
            rows.append(code.support)
            cols.append(np.full(code.support.size, i, dtype=np.int64))
            vals.append(code.values)
    if not rows:
        return None
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    order = np.argsort(rows, kind="stable")
    return rows[order], cols[order], vals[order]


def learn_ksvd(descriptors, params: LearnParams, rng: Rng | None = None,
               init_atoms=None):
    """K-SVD: alternate OMP-k coding with sequential rank-1 atom updates.

    For each atom, the residual restricted to the descriptors using it
    (with that atom's contribution added back) is decomposed by the leading
    singular triplet; the atom becomes u (sign fixed so its largest-
    magnitude entry is positive) and the coefficients sigma * v.  Atoms
    used by no descriptor are replaced by the worst-reconstructed
    descriptor, normalized (ties to the lowest descriptor index).

    Greedy OMP can occasionally re-code a descriptor worse than the sweep
    before; such codes are kept from the previous sweep, which is what
    guarantees the non-increasing objective trace.
    """
    descriptors = _as_descriptors(descriptors)
    rng = rng if rng is not None else Rng(params.seed)
    if params.sparsity is None:
        raise ValueError("ksvd requires params.sparsity")
    if params.sparsity > min(descriptors.shape[0], params.size):
        raise ValueError("sparsity exceeds min(d, K)")
    if init_atoms is None:
        atoms = _exemplar_init(descriptors, params.size, rng)
    else:
        atoms = np.array(init_atoms, dtype=np.float64, copy=True)
    enc = EncodeParams(method="omp", neighbors=params.sparsity)

    trace = []
    iterations_run = 0
    prev = None
    prev_codes = None
    prev_errors = None
    for _ in range(params.iterations):
        codes = encode_batch(descriptors, atoms, enc)
        if prev_codes is not None:
            # keep last sweep's (updated) code when fresh OMP reconstructs
            # worse; both satisfy the sparsity cap, and this is what makes
            # the objective trace non-increasing across sweeps
            for i, code in enumerate(codes):
                recon = descriptors[:, i] - atoms[:, code.support] @ code.values
                if float(recon @ recon) > prev_errors[i]:
                    codes[i] = prev_codes[i]
        flat = _flatten_codes(codes)
        residual = descriptors.copy()
        if flat is None:
            atom_rows = np.zeros(0, dtype=np.int64)
            starts = np.zeros(params.size + 1, dtype=np.int64)
            desc_idx = np.zeros(0, dtype=np.int64)
            coef = np.zeros(0)
        else:
            atom_rows, desc_idx, coef = flat
            starts = np.searchsorted(atom_rows,
                                     np.arange(params.size + 1))
            for j in range(params.size):
                seg = slice(starts[j], starts[j + 1])
                if starts[j + 1] > starts[j]:
                    residual[:, desc_idx[seg]] -= np.outer(atoms[:, j],
                                                           coef[seg])

        for j in range(params.size):
            seg = slice(starts[j], starts[j + 1])
            users = desc_idx[seg]
            if users.size == 0:
                col_err = np.einsum("ij,ij->j", residual, residual)
                worst = int(np.argmax(col_err))
                atoms[:, j] = _normalize_columns(
                    descriptors[:, worst:worst + 1])[:, 0]
                continue
            patch = residual[:, users] + np.outer(atoms[:, j], coef[seg])
            try:
                u, sigma, v = rank1_svd(patch)
            except ZeroMatrix:
                # atom contributes nothing recoverable; re-seed like a dead atom
                col_err = np.einsum("ij,ij->j", residual, residual)
                worst = int(np.argmax(col_err))
                atoms[:, j] = _normalize_columns(
                    descriptors[:, worst:worst + 1])[:, 0]
                residual[:, users] = patch
                coef[seg] = 0.0
                continue
            if u[int(np.argmax(np.abs(u)))] < 0:
                u = -u
                v = -v
            atoms[:, j] = u
            coef[seg] = sigma * v
            residual[:, users] = patch - np.outer(u, coef[seg])

        objective = float(np.einsum("ij,ij->", residual, residual))
        trace.append(objective)
        iterations_run += 1
        prev_errors = np.einsum("ij,ij->j", residual, residual)
        order = np.argsort(desc_idx, kind="stable")
        prev_codes = [Code(params.size, np.zeros(0, dtype=np.int64),
                           np.zeros(0))] * descriptors.shape[1]
        bounds = np.searchsorted(desc_idx[order],
                                 np.arange(descriptors.shape[1] + 1))
        for i in range(descriptors.shape[1]):
            seg = order[bounds[i]:bounds[i + 1]]
            if seg.size:
                sup_order = np.argsort(atom_rows[seg])
                prev_codes[i] = Code(params.size,
                                     atom_rows[seg][sup_order],
                                     coef[seg][sup_order])
        if prev is not None and abs(prev - objective) <= params.tol * max(prev, 1e-30):
            break
        prev = objective

    return Dictionary(
        atoms=atoms,
        method=_tag("omp", params, k=params.sparsity),
        seed=params.seed,
        iterations_run=iterations_run,
        objective_trace=tuple(trace),
    )


def learn_sc(descriptors, params: LearnParams, rng: Rng | None = None,
             init_atoms=None):
    """l1 sparse-coding dictionary: feature-sign codes, ball-constrained
    column updates.

    The dictionary step minimizes the reconstruction error subject to
    ||d_j|| <= 1 by projected block coordinate descent (the per-column
    quadratic is isotropic, so ball projection is exact).  Used columns
    that end strictly inside the ball are renormalized to unit length with
    a compensating rescale of their code row, which preserves the product
    and shrinks the l1 term, keeping the objective trace non-increasing.
    """
    descriptors = _as_descriptors(descriptors)
    rng = rng if rng is not None else Rng(params.seed)
    if descriptors.shape[1] < params.size:
        raise InsufficientData(
            f"need at least K={params.size} descriptors, "
            f"have {descriptors.shape[1]}")
    if init_atoms is None:
        atoms = _exemplar_init(descriptors, params.size, rng)
    else:
        atoms = np.array(init_atoms, dtype=np.float64, copy=True)
    size = params.size
    penalty = params.l1_penalty
    enc = EncodeParams(method="sc", penalty=penalty)

    trace = []
    iterations_run = 0
    prev = None
    for _ in range(params.iterations):
        codes = encode_batch(descriptors, atoms, enc)
        coef = np.zeros((size, descriptors.shape[1]))
        for i, code in enumerate(codes):
            if code.support.size:
                coef[code.support, i] = code.values

        if not np.any(coef):
            warnings.warn("all codes are zero; dictionary unchanged this sweep")
            objective = float(np.einsum("ij,ij->", descriptors, descriptors))
        else:
            gram = coef @ coef.T
            target = descriptors @ coef.T
            used = np.flatnonzero(np.diag(gram) > 1e-12)
            for _ in range(30):
                max_shift = 0.0
                for j in used:
                    step = (target[:, j] - atoms @ gram[:, j]) / gram[j, j]
                    candidate = atoms[:, j] + step
                    norm = float(np.linalg.norm(candidate))
                    if norm > 1.0:
                        candidate = candidate / norm
                    max_shift = max(max_shift,
                                    float(np.linalg.norm(candidate - atoms[:, j])))
                    atoms[:, j] = candidate
                if max_shift < 1e-10:
                    break
            for j in used:
                norm = float(np.linalg.norm(atoms[:, j]))
                if 1e-8 < norm < 1.0 - 1e-12:
                    atoms[:, j] /= norm
                    coef[j, :] *= norm
            residual = descriptors - atoms @ coef
            objective = (float(np.einsum("ij,ij->", residual, residual))
                         + penalty * float(np.abs(coef).sum()))

        trace.append(objective)
        iterations_run += 1
        if prev is not None and abs(prev - objective) <= params.tol * max(prev, 1e-30):
            break
        prev = objective

    return Dictionary(
        atoms=atoms,
        method=_tag("sc", params, **{"lambda": penalty}),
        seed=params.seed,
        iterations_run=iterations_run,
        objective_trace=tuple(trace),
    )


def normalized_copy(dictionary: Dictionary) -> Dictionary:
    """Unit-norm copy of a dictionary (for encoders that require it)."""
    return Dictionary(
        atoms=_normalize_columns(dictionary.atoms.copy()),
        method=dictionary.method + ";renormalized",
        seed=dictionary.seed,
        iterations_run=dictionary.iterations_run,
        objective_trace=dictionary.objective_trace,
    )


def save_dictionary(dictionary: Dictionary, path):
    """Write a BWDC file."""
    tag = dictionary.method.encode("utf-8")
    if len(tag) > 255:
        raise ValueError("method tag longer than 255 bytes")
    d, k = dictionary.atoms.shape
    header = (_BWDC_MAGIC + struct.pack("<III", _VERSION, d, k)
              + struct.pack("<B", len(tag)) + tag
              + struct.pack("<Q", dictionary.seed & (2**64 - 1)))
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(dictionary.atoms.T.astype("<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_dictionary(path) -> Dictionary:
    """Read a BWDC file; the objective trace is not persisted."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 4 or blob[:4] != _BWDC_MAGIC:
        raise BadMagic(f"{path}: not a BWDC file")
    if len(blob) < 17:
        raise TruncatedFile(f"{path}: header incomplete")
    version, d, k = struct.unpack_from("<III", blob, 4)
    if version != _VERSION:
        raise VersionUnsupported(f"{path}: BWDC version {version}")
    tag_len = blob[16]
    offset = 17 + tag_len
    if len(blob) < offset + 8:
        raise TruncatedFile(f"{path}: header incomplete")
    method = blob[17:offset].decode("utf-8")
    (seed,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    expected = offset + 4 * d * k
    if len(blob) != expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {len(blob)}")
    atoms = np.frombuffer(blob, dtype="<f4", count=d * k, offset=offset)
    atoms = atoms.astype(np.float64).reshape(k, d).T
    if not np.all(np.isfinite(atoms)):
        raise NonFiniteValue(f"{path}: non-finite atom values")
    return Dictionary(atoms=atoms.copy(), method=method, seed=int(seed))
