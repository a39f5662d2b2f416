"""Feature encoders: one descriptor in, one length-K coefficient vector out.

Five schemes: vector quantization (``vq``), localized soft-assignment
(``sa``), orthogonal matching pursuit (``omp``), l1 sparse coding by
feature-sign search (``sc``), and locality-constrained linear coding in its
k-NN (``llc``) and dense (``llc_full``) forms.

Encoders take the raw atom matrix (d x K float64) rather than a Dictionary
value, so they stay decoupled from the learning side.  All are pure
functions of (x, atoms, params).
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass

import numpy as np

from .errors import (
    BatchEncodeError,
    BowError,
    DimensionMismatch,
    MaxIterations,
    NotUnitNorm,
    SingularSupport,
)
from .numerics import pairwise_sqdist, solve_spd

_UNIT_TOL = 1e-6


@dataclass(frozen=True)
class Code:
    """Sparse coefficient vector: values at sorted support indices."""

    length: int
    support: np.ndarray     # (nnz,) int64, strictly increasing
    values: np.ndarray      # (nnz,) float64

    def __post_init__(self):
        object.__setattr__(self, "support",
                           np.asarray(self.support, dtype=np.int64))
        object.__setattr__(self, "values",
                           np.asarray(self.values, dtype=np.float64))
        if self.support.shape != self.values.shape:
            raise ValueError("support and values must align")
        if self.support.size:
            if self.support[0] < 0 or self.support[-1] >= self.length:
                raise ValueError("support index out of range")
            if np.any(np.diff(self.support) <= 0):
                raise ValueError("support must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("code values must be finite")

    def dense(self):
        out = np.zeros(self.length)
        out[self.support] = self.values
        return out


@dataclass(frozen=True)
class EncodeParams:
    """Encoder choice plus its hyperparameters.

    ``neighbors`` is the k of SA-k / OMP-k / LLC-k, ``smoothing`` the SA
    softness beta, ``penalty`` the l1 weight of SC and the ridge weight of
    LLC, ``locality_sigma`` the distance scaling of dense LLC.  When
    ``sa_normalize_local`` is set, SA normalizes over the k nearest atoms
    instead of all K (the non-default reading of the softmax denominator).
    ``basis_change_cap`` overrides the feature-sign step cap (default 10*K).
    """

    method: str = "vq"
    neighbors: int = 5
    smoothing: float = 1.0
    penalty: float = 0.15
    locality_sigma: float = 1.0
    tol: float = 1e-9
    sa_normalize_local: bool = False
    basis_change_cap: int | None = None

    def __post_init__(self):
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")
        if self.smoothing <= 0 or self.locality_sigma <= 0:
            raise ValueError("smoothing and locality_sigma must be positive")
        if self.penalty < 0:
            raise ValueError("penalty must be non-negative")


def _check_dims(x, atoms):
    x = np.asarray(x, dtype=np.float64).ravel()
    atoms = np.asarray(atoms, dtype=np.float64)
    if atoms.ndim != 2:
        raise DimensionMismatch("atoms must be a d x K matrix")
    if x.shape[0] != atoms.shape[0]:
        raise DimensionMismatch(
            f"descriptor has dim {x.shape[0]}, atoms have dim {atoms.shape[0]}"
        )
    return x, atoms


def _sqdist_to_atoms(x, atoms):
    return pairwise_sqdist(x[:, None], atoms)[0]


def encode_vq(x, atoms):
    """One-hot code at the nearest atom (ties to the lowest index)."""
    x, atoms = _check_dims(x, atoms)
    nearest = int(np.argmin(_sqdist_to_atoms(x, atoms)))
    return Code(atoms.shape[1], np.array([nearest]), np.array([1.0]))


def encode_sa(x, atoms, params: EncodeParams):
    """Localized soft-assignment over the k nearest atoms.

    Weights are exp(-beta * ||x - d_j||^2); by default the denominator sums
    over all K atoms, so the k retained weights sum to at most one.
    """
    x, atoms = _check_dims(x, atoms)
    k_total = atoms.shape[1]
    k = params.neighbors
    if k > k_total:
        raise DimensionMismatch(f"k={k} exceeds dictionary size {k_total}")
    d2 = _sqdist_to_atoms(x, atoms)
    weights = np.exp(-params.smoothing * d2)
    nearest = np.argsort(d2, kind="stable")[:k]
    denom = weights[nearest].sum() if params.sa_normalize_local else weights.sum()
    support = np.sort(nearest)
    return Code(k_total, support, weights[support] / denom)


def _solve_support(gram_ss, rhs):
    """Least-squares coefficients on the selected atoms.

    Cholesky supplies the SPD-within-tolerance check demanded of the
    support Gram: a pivot (squared factor diagonal) at or below 1e-12
    raises SingularSupport.
    """
    try:
        factor = np.linalg.cholesky(gram_ss)
    except np.linalg.LinAlgError as exc:
        raise SingularSupport("support Gram matrix is not SPD") from exc
    if float(np.min(np.diagonal(factor))) ** 2 <= 1e-12:
        raise SingularSupport("support Gram pivot below 1e-12")
    return np.linalg.solve(gram_ss, rhs)


def encode_omp(x, atoms, params: EncodeParams, gram=None):
    """Orthogonal matching pursuit with k greedy selections.

    Atoms must be unit-norm.  Each step picks the unselected atom with the
    largest absolute residual correlation (ties to the lowest index) and
    refits all selected coefficients by least squares, so the final residual
    is orthogonal to the selected atoms.  Stops early once the residual or
    every remaining correlation is numerically zero.

    Residual correlations flow through the Gram matrix (the batch-OMP
    update alpha_0 - G[:, S] c), so ``gram`` may carry a precomputed
    atoms.T @ atoms to amortize batch encoding.
    """
    x, atoms = _check_dims(x, atoms)
    k_total = atoms.shape[1]
    k = params.neighbors
    if k > min(atoms.shape):
        raise DimensionMismatch(
            f"k={k} exceeds min(d, K) = {min(atoms.shape)}"
        )
    if gram is None:
        gram = atoms.T @ atoms
    if np.max(np.abs(np.diagonal(gram) - 1.0)) > 2.0 * _UNIT_TOL:
        raise NotUnitNorm("OMP requires unit-norm atoms")

    alpha0 = atoms.T @ x
    x_sq = float(x @ x)
    corr = alpha0
    resid_sq = x_sq
    selected = []
    coeffs = np.zeros(0)
    tol_sq = params.tol * params.tol
    for _ in range(k):
        if resid_sq <= tol_sq:
            break
        score = np.abs(corr)
        if selected:
            score[selected] = -1.0
        pick = int(np.argmax(score))
        if score[pick] < 1e-12:
            break
        selected.append(pick)
        sel = np.asarray(selected, dtype=np.int64)
        rhs = alpha0[sel]
        coeffs = _solve_support(gram[sel[:, None], sel], rhs)
        corr = alpha0 - gram[:, sel] @ coeffs
        # at the least-squares optimum ||r||^2 = ||x||^2 - c . alpha_0[S]
        resid_sq = max(x_sq - float(coeffs @ rhs), 0.0)

    order = np.argsort(selected)
    support = np.asarray(selected, dtype=np.int64)[order]
    return Code(k_total, support, coeffs[order] if selected else np.zeros(0))


def _objective(s_active, gram_aa, corr_a, penalty):
    # quadratic part of ||x - Ds||^2 (constant ||x||^2 dropped) + l1 term
    return (s_active @ (gram_aa @ s_active)
            - 2.0 * (corr_a @ s_active)
            + penalty * np.abs(s_active).sum())


def _theta_step(gram_aa, rhs, current):
    """Minimize the sign-linearized quadratic over the active set.

    Regular Grams go through an exact solve.  Singular ones (the active set
    can transiently exceed the descriptor dimension) follow the original
    feature-sign prescription: a consistent system takes the min-norm
    solution, an inconsistent one returns a descent ray in the null space
    instead, which the caller rides to the first zero crossing.

    Returns ``(target, ray)`` with exactly one of the two set.
    """
    try:
        cand = np.linalg.solve(gram_aa, rhs)
        gap = gram_aa @ cand
        gap -= rhs
        if np.max(np.abs(gap)) <= 1e-8 * (1.0 + np.max(np.abs(rhs))):
            return cand, None
    except np.linalg.LinAlgError:
        pass
    eigvals, eigvecs = np.linalg.eigh(gram_aa)
    cut = 1e-10 * max(float(eigvals[-1]), 1e-30)
    null = eigvals <= cut
    coeff = eigvecs.T @ rhs
    if null.any():
        null_coeff = coeff.copy()
        null_coeff[~null] = 0.0
        if np.linalg.norm(null_coeff) > 1e-10 * (1.0 + np.linalg.norm(rhs)):
            pick = int(np.argmax(np.where(null, np.abs(coeff), -np.inf)))
            ray = eigvecs[:, pick]
            if coeff[pick] < 0:
                ray = -ray
            # ride only if some nonzero coordinate heads toward zero
            if np.any((current != 0.0) & (current * ray < 0.0)):
                return None, ray
    safe = ~null
    target = eigvecs[:, safe] @ (coeff[safe] / eigvals[safe])
    return target, None


def encode_sc(x, atoms, params: EncodeParams, gram=None):
    """l1 sparse coding (lasso) by feature-sign search.

    Minimizes ||x - D s||^2 + penalty * ||s||_1.  On return the KKT
    certificate holds: active coordinates satisfy
    |2 d_i'(x - Ds) - penalty * sign(s_i)| <= 1e-6 and inactive ones
    |2 d_i'(x - Ds)| <= penalty + 1e-6.  ``gram`` may carry a precomputed
    D'D to amortize batch encoding; it must equal atoms.T @ atoms.

    Raises MaxIterations when the active set churns more than the basis
    change cap (default 10 * K) without certifying.
    """
    x, atoms = _check_dims(x, atoms)
    penalty = params.penalty
    if penalty <= 0:
        raise ValueError("sc encoding requires penalty > 0")
    k_total = atoms.shape[1]
    corr = atoms.T @ x
    if gram is None:
        gram = atoms.T @ atoms
    cap = params.basis_change_cap or 10 * k_total
    # optimality slack well inside the 1e-6 certificate
    slack = max(params.tol, 1e-12)

    s = np.zeros(k_total)
    signs = np.zeros(k_total)
    active = []
    steps = 0

    def full_gradient():
        if active:
            return 2.0 * (gram[:, active] @ s[active] - corr)
        return -2.0 * corr

    while True:
        grad = full_gradient()
        inactive = signs == 0.0
        activated = False
        if inactive.any():
            masked = np.where(inactive, np.abs(grad), -np.inf)
            cand = int(np.argmax(masked))
            if masked[cand] > penalty + slack:
                signs[cand] = -np.sign(grad[cand])
                active.append(cand)
                active.sort()
                activated = True
        if not activated:
            # zero-set optimal; nonzero set was certified before arriving here
            break

        while True:
            steps += 1
            if steps > cap:
                raise MaxIterations(
                    f"feature-sign exceeded {cap} basis changes"
                )
            act = np.asarray(active, dtype=np.int64)
            cols = act[:, None]
            gram_aa = gram[cols, act]
            corr_a = corr[act]
            current = s[act]
            target, ray = _theta_step(
                gram_aa, corr_a - 0.5 * penalty * signs[act], current)

            if ray is not None:
                # linear descent direction: step to the first zero crossing
                heads_to_zero = (current != 0.0) & (current * ray < 0.0)
                steps_to_zero = np.where(heads_to_zero, -current / ray, np.inf)
                pos = int(np.argmin(steps_to_zero))
                best = current + steps_to_zero[pos] * ray
                best[pos] = 0.0
            else:
                best = target
                flipped = np.sign(target) != signs[act]
                if flipped.any():
                    candidates = []
                    for pos in np.flatnonzero(flipped):
                        denom = current[pos] - target[pos]
                        if denom == 0.0:
                            continue
                        step = current[pos] / denom
                        if 0.0 < step <= 1.0:
                            candidates.append((step, int(pos)))
                    candidates.sort()
                    best_obj = _objective(target, gram_aa, corr_a, penalty)
                    for step, pos in candidates:
                        trial = current + step * (target - current)
                        trial[pos] = 0.0
                        obj = _objective(trial, gram_aa, corr_a, penalty)
                        if obj < best_obj:
                            best_obj = obj
                            best = trial
            s[act] = best
            kept = np.abs(best) >= 1e-14
            if not kept.all():
                drop = act[~kept]
                s[drop] = 0.0
                signs[drop] = 0.0
                active = [a for a in act[kept].tolist()]
                if not active:
                    break
                act = np.asarray(active, dtype=np.int64)
                cols = act[:, None]
                gram_aa = gram[cols, act]
                corr_a = corr[act]
            signs[act] = np.sign(s[act])
            # optimality of the active coordinates, on the active slice only
            grad_act = 2.0 * (gram_aa @ s[act] - corr_a)
            if np.max(np.abs(grad_act + penalty * signs[act])) <= slack:
                break

    support = np.asarray(active, dtype=np.int64)
    return Code(k_total, support, s[support].copy())


def _affine_constrained_solve(quad, rhs):
    """Minimize u'Qu - 2 rhs'u subject to sum(u) = 1, Q SPD."""
    ones = np.ones(quad.shape[0])
    z_rhs = solve_spd(quad, rhs)
    z_one = solve_spd(quad, ones)
    mult = (ones @ z_rhs - 1.0) / (ones @ z_one)
    return z_rhs - mult * z_one


def encode_llc_knn(x, atoms, params: EncodeParams):
    """Locality-constrained linear coding restricted to the k nearest atoms.

    Solves min ||x - D_nn u||^2 + penalty * ||u||^2 with sum(u) = 1 through
    the KKT system, then scatters u back to full length.
    """
    x, atoms = _check_dims(x, atoms)
    k_total = atoms.shape[1]
    k = params.neighbors
    if k > k_total:
        raise DimensionMismatch(f"k={k} exceeds dictionary size {k_total}")
    d2 = _sqdist_to_atoms(x, atoms)
    nearest = np.sort(np.argsort(d2, kind="stable")[:k])
    sub = atoms[:, nearest]
    quad = sub.T @ sub + params.penalty * np.eye(k)
    u = _affine_constrained_solve(quad, sub.T @ x)
    return Code(k_total, nearest, u)


def encode_llc_full(x, atoms, params: EncodeParams):
    """Dense LLC over all K atoms with the exponential locality adaptor.

    The adaptor is e_j = exp(||x - d_j|| / locality_sigma) (unsquared
    distances), penalizing far atoms through penalty * ||e * s||^2 under
    the sum-to-one constraint.
    """
    x, atoms = _check_dims(x, atoms)
    k_total = atoms.shape[1]
    dist = np.sqrt(_sqdist_to_atoms(x, atoms))
    adaptor = np.exp(dist / params.locality_sigma)
    quad = atoms.T @ atoms + params.penalty * np.diag(adaptor * adaptor)
    u = _affine_constrained_solve(quad, atoms.T @ x)
    return Code(k_total, np.arange(k_total, dtype=np.int64), u)


_SINGLE = {
    "vq": lambda x, atoms, params, gram: encode_vq(x, atoms),
    "sa": lambda x, atoms, params, gram: encode_sa(x, atoms, params),
    "omp": lambda x, atoms, params, gram: encode_omp(x, atoms, params, gram),
    "sc": encode_sc,
    "llc": lambda x, atoms, params, gram: encode_llc_knn(x, atoms, params),
    "llc_full": lambda x, atoms, params, gram: encode_llc_full(x, atoms, params),
}

_GRAM_METHODS = ("sc", "omp")


def encode_one(x, atoms, params: EncodeParams, gram=None):
    """Dispatch a single descriptor to the encoder named by params.method."""
    try:
        fn = _SINGLE[params.method]
    except KeyError:
        raise ValueError(f"unknown encoder method {params.method!r}") from None
    if params.method == "sc":
        return fn(x, atoms, params, gram=gram)
    return fn(x, atoms, params, gram)


def encode_batch(descriptors, atoms, params: EncodeParams, parallel=False):
    """Encode every column of a d x N matrix; order always preserved.

    Element i equals the single-descriptor encoder applied to column i, and
    the parallel path produces bit-identical results to the sequential one.
    Per-descriptor failures surface as BatchEncodeError with the lowest
    failing descriptor index.
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2:
        raise DimensionMismatch("descriptors must be a d x N matrix")
    atoms = np.asarray(atoms, dtype=np.float64)
    n = descriptors.shape[1]
    gram = atoms.T @ atoms if params.method in _GRAM_METHODS else None

    if not parallel:
        out = []
        for i in range(n):
            try:
                out.append(encode_one(descriptors[:, i], atoms, params, gram))
            except BowError as exc:
                raise BatchEncodeError(i, str(exc)) from exc
        return out

    results = [None] * n
    failures = {}

    def work(i):
        try:
            results[i] = encode_one(descriptors[:, i], atoms, params, gram)
        except BowError as exc:
            failures[i] = exc

    with concurrent.futures.ThreadPoolExecutor() as pool:
        list(pool.map(work, range(n)))
    if failures:
        first = min(failures)
        raise BatchEncodeError(first, str(failures[first])) from failures[first]
    return results


def dump_codes_csv(codes, path):
    """Debug dump: one ``descriptor_index,atom_index,value`` row per entry."""
    lines = ["descriptor_index,atom_index,value"]
    for i, code in enumerate(codes):
        for j, v in zip(code.support.tolist(), code.values.tolist()):
            lines.append(f"{i},{j},{v!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
