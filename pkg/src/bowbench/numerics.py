"""Dense linear-algebra kernels and the seeded random stream used everywhere.

Matrices are plain float64 ``numpy.ndarray`` values in row-major order; a
"vector" is a 1-D array.  Every routine here is a pure function of its
inputs, so concurrent callers are safe as long as each ``Rng`` instance
stays single-owner.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    DimensionMismatch,
    NotPositiveDefinite,
    NotSymmetric,
    ZeroMatrix,
)

MASK64 = (1 << 64) - 1

# SplitMix64 constants (Steele, Lea & Flood; Vigna's reference code).
_GAMMA = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

# FNV-1a 64-bit, used only to fold labels into child seeds.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_SYMMETRY_TOL = 1e-10
_PIVOT_TOL = 1e-12
_ZERO_FROBENIUS = 1e-14


def mix64(value):
    """SplitMix64 finalizer on a Python int, masked to 64 bits."""
    z = value & MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & MASK64
    return z ^ (z >> 31)


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def derive_seed(base, *labels):
    """Stable child seed from a base seed and a sequence of labels.

    Labels may be strings or integers; the derivation is independent of any
    stream state so the same (base, labels) always yields the same seed.
    """
    h = _fnv1a(repr(tuple(str(x) for x in labels)).encode("utf-8"))
    return mix64((int(base) & MASK64) ^ h)


class Rng:
    """Deterministic counter-based SplitMix64 stream.

    Output ``k`` of a stream with seed ``s`` is ``mix64(s + k * GAMMA)``
    with the published SplitMix64 constants, so equal seeds give
    byte-identical draw sequences on any platform and the whole stream can
    be generated vectorized (uint64 arithmetic wraps mod 2**64).

    Instances are single-owner: never share one across concurrent tasks.
    Integer draws use modulo reduction; the bias is below 2**-50 for every
    bound used in this package.
    """

    def __init__(self, seed):
        self.seed = int(seed) & MASK64
        self._count = 0

    def u64(self, size=None):
        """Next raw 64-bit output(s); scalar int when ``size`` is None."""
        if size is None:
            self._count += 1
            return mix64((self.seed + self._count * _GAMMA) & MASK64)
        n = int(size)
        counters = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        z = np.uint64(self.seed) + counters * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
        return z ^ (z >> np.uint64(31))

    def uniform(self, size=None):
        """Doubles in [0, 1) with 53-bit resolution."""
        if size is None:
            return (self.u64() >> 11) * 2.0**-53
        raw = self.u64(size)
        return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, size=None):
        """Standard normals via Box-Muller on consecutive draw pairs."""
        if size is None:
            return float(self.normal(1)[0])
        n = int(size)
        pairs = (n + 1) // 2
        raw = self.u64(2 * pairs)
        # u1 in (0, 1] keeps the log finite.
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def integers(self, bound, size=None):
        """Ints in [0, bound) by modulo reduction."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        if size is None:
            return self.u64() % bound
        raw = self.u64(size)
        return (raw % np.uint64(bound)).astype(np.int64)

    def permutation(self, n):
        """Fisher-Yates permutation of range(n)."""
        idx = np.arange(n, dtype=np.int64)
        if n < 2:
            return idx
        raw = self.u64(n - 1)
        for i in range(n - 1):
            j = i + int(raw[i] % np.uint64(n - i))
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def choice(self, n, k, replace=False):
        """k indices from range(n); partial Fisher-Yates when not replacing."""
        if replace:
            return self.integers(n, size=k)
        if k > n:
            raise ValueError("cannot draw %d of %d without replacement" % (k, n))
        idx = np.arange(n, dtype=np.int64)
        if k == 0 or n < 2:
            return idx[:k]
        raw = self.u64(min(k, n - 1))
        for i in range(len(raw)):
            j = i + int(raw[i] % np.uint64(n - i))
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]

    def spawn(self, *labels):
        """Independent child stream; depends on seed and labels only."""
        return Rng(derive_seed(self.seed, *labels))


def _as_matrix(a, name="matrix"):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def solve_spd(a, b):
    """Solve A x = b for symmetric positive-definite A.

    Plain Cholesky (no pivoting) with forward/backward substitution; raises
    NotPositiveDefinite as soon as a pivot drops to 1e-12 or below.  The
    contract is residual-based: ``||Ax - b|| <= 1e-8 * (1 + ||b||)``.
    """
    a = _as_matrix(a, "A")
    b = np.asarray(b, dtype=np.float64).ravel()
    n = a.shape[0]
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"A must be square, got {a.shape}")
    if b.shape[0] != n:
        raise DimensionMismatch(f"b has length {b.shape[0]}, A is {n}x{n}")
    if n == 0:
        return np.zeros(0)
    if np.max(np.abs(a - a.T)) > _SYMMETRY_TOL:
        raise NotSymmetric("matrix is not symmetric within 1e-10")

    lower = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot <= _PIVOT_TOL:
            raise NotPositiveDefinite(f"pivot {pivot:.3e} at column {j}")
        ljj = math.sqrt(pivot)
        lower[j, j] = ljj
        if j + 1 < n:
            lower[j + 1:, j] = (a[j + 1:, j] - lower[j + 1:, :j] @ lower[j, :j]) / ljj

    y = np.zeros(n)
    for i in range(n):
        y[i] = (b[i] - lower[i, :i] @ y[:i]) / lower[i, i]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - lower[i + 1:, i] @ x[i + 1:]) / lower[i, i]
    return x


def rank1_svd(residual, max_iter=500, tol=1e-10):
    """Leading singular triplet (u, sigma, v) of a matrix.

    Power iteration on R R^T, which is all the K-SVD atom update needs.
    The start vector is a fixed-seed pseudo-random probe (falling back to
    the largest-norm column), so results are reproducible.
    """
    r = _as_matrix(residual, "residual")
    frobenius = float(np.sqrt(np.sum(r * r)))
    if frobenius < _ZERO_FROBENIUS:
        raise ZeroMatrix("residual is numerically zero")

    probe = Rng(0xB0B1_5EED).normal(r.shape[1])
    u = r @ probe
    norm_u = float(np.linalg.norm(u))
    if norm_u < 1e-12 * frobenius:
        # Probe landed in the null space; any nonzero column is in range(R).
        col = int(np.argmax(np.einsum("ij,ij->j", r, r)))
        u = r[:, col].copy()
        norm_u = float(np.linalg.norm(u))
    u /= norm_u

    sigma = 0.0
    for _ in range(max_iter):
        w = r @ (r.T @ u)
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            break
        u = w / norm_w
        new_sigma = math.sqrt(norm_w)
        if abs(new_sigma - sigma) <= tol * max(new_sigma, 1e-30):
            sigma = new_sigma
            break
        sigma = new_sigma

    v = r.T @ u
    sigma = float(np.linalg.norm(v))
    if sigma == 0.0:
        raise ZeroMatrix("power iteration collapsed to the null space")
    v = v / sigma
    return u, sigma, v


def pairwise_sqdist(a, b):
    """Squared euclidean distances between the columns of two matrices.

    a is d x m, b is d x n; entry (i, j) is ||a_i - b_j||^2 with tiny
    negative round-off clamped to zero.
    """
    a = _as_matrix(a, "A")
    b = _as_matrix(b, "B")
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatch(
            f"row counts differ: {a.shape[0]} vs {b.shape[0]}"
        )
    a_sq = np.einsum("ij,ij->j", a, a)
    b_sq = np.einsum("ij,ij->j", b, b)
    out = a_sq[:, None] + b_sq[None, :] - 2.0 * (a.T @ b)
    np.maximum(out, 0.0, out=out)
    return out
