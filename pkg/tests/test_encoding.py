import math

import numpy as np
import pytest

from bowbench.encoding import (
    EncodeParams,
    encode_batch,
    encode_llc_full,
    encode_llc_knn,
    encode_omp,
    encode_sa,
    encode_sc,
    encode_vq,
)
from bowbench.errors import BatchEncodeError, DimensionMismatch, NotUnitNorm, SingularSupport
from bowbench.numerics import Rng


def unit_atoms(rng, dim, size):
    atoms = rng.normal(dim * size).reshape(dim, size)
    return atoms / np.linalg.norm(atoms, axis=0)


def orthonormal_atoms(rng, dim):
    q, _ = np.linalg.qr(rng.normal(dim * dim).reshape(dim, dim))
    return q


def sc_objective(x, atoms, s, penalty):
    return float(np.sum((x - atoms @ s) ** 2) + penalty * np.abs(s).sum())


def lasso_cd_oracle(x, atoms, penalty, sweeps=20000, tol=1e-10):
    """Coordinate-descent lasso, independent of feature-sign search."""
    gram = atoms.T @ atoms
    corr = atoms.T @ x
    k = atoms.shape[1]
    s = np.zeros(k)
    for _ in range(sweeps):
        biggest = 0.0
        for i in range(k):
            rho = corr[i] - gram[i] @ s + gram[i, i] * s[i]
            new = math.copysign(max(abs(rho) - penalty / 2.0, 0.0), rho) / gram[i, i]
            biggest = max(biggest, abs(new - s[i]))
            s[i] = new
        if biggest < tol:
            break
    return s


def omp_greedy_oracle(x, atoms, k, tol=1e-9):
    """Step-by-step greedy pursuit with lstsq refits."""
    selected = []
    residual = x.copy()
    coeffs = np.zeros(0)
    for _ in range(k):
        if np.linalg.norm(residual) <= tol:
            break
        best, best_val = -1, -1.0
        for j in range(atoms.shape[1]):
            if j in selected:
                continue
            val = abs(float(np.dot(atoms[:, j], residual)))
            if val > best_val + 1e-15:
                best, best_val = j, val
        if best_val < 1e-12:
            break
        selected.append(best)
        sub = atoms[:, selected]
        coeffs = np.linalg.lstsq(sub, x, rcond=None)[0]
        residual = x - sub @ coeffs
    return selected, coeffs


# --- VQ ----------------------------------------------------------------------

def test_vq_picks_nearest():
    code = encode_vq(np.array([0.9, 0.1]), np.eye(2))
    assert code.support.tolist() == [0]
    assert code.values.tolist() == [1.0]


def test_vq_tie_breaks_low_index():
    atoms = np.array([[1.0, -1.0], [0.0, 0.0]])
    code = encode_vq(np.zeros(2), atoms)
    assert code.support.tolist() == [0]


def test_vq_matches_exhaustive_scan():
    rng = Rng(21)
    for _ in range(25):
        atoms = rng.normal(4 * 32).reshape(4, 32)
        x = rng.normal(4)
        code = encode_vq(x, atoms)
        dists = [float(np.sum((x - atoms[:, j]) ** 2)) for j in range(32)]
        assert code.support[0] == int(np.argmin(dists))


def test_vq_zero_descriptor_picks_shortest_atom():
    atoms = np.array([[2.0, 0.5, 1.0], [0.0, 0.0, 0.0]])
    code = encode_vq(np.zeros(2), atoms)
    assert code.support.tolist() == [1]


# --- SA ----------------------------------------------------------------------

def test_sa_two_atom_value():
    # direct evaluation: distances 0 and 2, beta=1
    params = EncodeParams(method="sa", neighbors=2, smoothing=1.0)
    code = encode_sa(np.array([1.0, 0.0]), np.eye(2), params)
    denom = 1.0 + math.exp(-2.0)
    assert np.allclose(code.dense(), [1.0 / denom, math.exp(-2.0) / denom],
                       atol=1e-12)
    assert abs(code.values[0] - 0.8808) < 1e-4
    assert abs(code.values[1] - 0.1192) < 1e-4


def test_sa_full_k_sums_to_one():
    rng = Rng(3)
    atoms = unit_atoms(rng, 5, 8)
    params = EncodeParams(method="sa", neighbors=8)
    code = encode_sa(rng.normal(5), atoms, params)
    assert abs(code.values.sum() - 1.0) <= 1e-12
    assert code.support.size == 8


def test_sa_partial_k_sums_below_one():
    rng = Rng(4)
    atoms = unit_atoms(rng, 5, 8)
    params = EncodeParams(method="sa", neighbors=3)
    code = encode_sa(rng.normal(5), atoms, params)
    assert 0.0 < code.values.sum() <= 1.0
    assert code.support.size == 3
    assert np.all(code.values > 0.0)


def test_sa_local_normalization_option():
    rng = Rng(5)
    atoms = unit_atoms(rng, 5, 8)
    params = EncodeParams(method="sa", neighbors=3, sa_normalize_local=True)
    code = encode_sa(rng.normal(5), atoms, params)
    assert abs(code.values.sum() - 1.0) <= 1e-12


def test_sa_monotone_in_distance():
    rng = Rng(6)
    x = rng.normal(6)
    atoms = unit_atoms(rng, 6, 12)
    params = EncodeParams(method="sa", neighbors=5)
    code = encode_sa(x, atoms, params)
    d2 = np.sum((x[:, None] - atoms[:, code.support]) ** 2, axis=0)
    order = np.argsort(d2)
    vals = code.values[order]
    assert np.all(np.diff(vals) <= 1e-15)


# --- OMP ---------------------------------------------------------------------

def test_omp_orthonormal_single():
    params = EncodeParams(method="omp", neighbors=1)
    code = encode_omp(np.array([0.9, 0.1]), np.eye(2), params)
    assert code.support.tolist() == [0]
    assert np.allclose(code.values, [0.9], atol=1e-12)


def test_omp_orthonormal_exact():
    params = EncodeParams(method="omp", neighbors=2)
    x = np.array([0.9, 0.1])
    code = encode_omp(x, np.eye(2), params)
    assert np.allclose(code.dense(), x, atol=1e-12)


def test_omp_requires_unit_norm():
    params = EncodeParams(method="omp", neighbors=1)
    with pytest.raises(NotUnitNorm):
        encode_omp(np.ones(2), 2.0 * np.eye(2), params)


def test_omp_near_duplicate_atoms_singular_support():
    v = np.array([1.0, 0.0])
    w = np.array([1.0, 1e-7])
    w /= np.linalg.norm(w)
    atoms = np.stack([v, w], axis=1)
    params = EncodeParams(method="omp", neighbors=2)
    with pytest.raises(SingularSupport):
        encode_omp(np.array([1.0, 0.5]), atoms, params)


def test_omp_matches_greedy_oracle():
    rng = Rng(31)
    params = EncodeParams(method="omp", neighbors=3)
    for _ in range(30):
        atoms = unit_atoms(rng, 6, 10)
        x = rng.normal(6)
        code = encode_omp(x, atoms, params)
        oracle_sel, oracle_coeffs = omp_greedy_oracle(x, atoms, 3)
        assert sorted(oracle_sel) == code.support.tolist()
        dense = code.dense()
        for j, c in zip(oracle_sel, oracle_coeffs):
            assert abs(dense[j] - c) <= 1e-8
        residual = x - atoms @ dense
        assert np.max(np.abs(atoms[:, code.support].T @ residual)) <= 1e-8


def test_omp_error_non_increasing_in_k():
    rng = Rng(32)
    atoms = unit_atoms(rng, 8, 16)
    x = rng.normal(8)
    errors = []
    for k in range(1, 7):
        params = EncodeParams(method="omp", neighbors=k)
        code = encode_omp(x, atoms, params)
        errors.append(float(np.sum((x - atoms @ code.dense()) ** 2)))
    assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))


def test_omp_k_exceeding_dims_rejected():
    params = EncodeParams(method="omp", neighbors=5)
    with pytest.raises(DimensionMismatch):
        encode_omp(np.ones(3) / math.sqrt(3.0), np.eye(3), params)


# --- SC ----------------------------------------------------------------------

def kkt_holds(x, atoms, s, penalty, tol=1e-6):
    grad_like = 2.0 * (atoms.T @ (x - atoms @ s))
    ok = True
    for i in range(atoms.shape[1]):
        if s[i] != 0.0:
            ok &= abs(grad_like[i] - penalty * np.sign(s[i])) <= tol
        else:
            ok &= abs(grad_like[i]) <= penalty + tol
    return bool(ok)


def test_sc_orthonormal_soft_threshold():
    params = EncodeParams(method="sc", penalty=0.15)
    code = encode_sc(np.array([0.9, 0.1]), np.eye(2), params)
    assert np.allclose(code.dense(), [0.825, 0.025], atol=1e-10)


def test_sc_zero_when_penalty_dominates():
    rng = Rng(41)
    atoms = unit_atoms(rng, 4, 6)
    x = rng.normal(4)
    penalty = 2.0 * float(np.max(np.abs(atoms.T @ x))) + 0.1
    params = EncodeParams(method="sc", penalty=penalty)
    code = encode_sc(x, atoms, params)
    assert code.support.size == 0


def test_sc_matches_cd_oracle_and_kkt():
    rng = Rng(42)
    params = EncodeParams(method="sc", penalty=0.15)
    for _ in range(25):
        atoms = unit_atoms(rng, 6, 12)
        x = rng.normal(6)
        code = encode_sc(x, atoms, params)
        s = code.dense()
        assert kkt_holds(x, atoms, s, 0.15)
        oracle = lasso_cd_oracle(x, atoms, 0.15)
        mine = sc_objective(x, atoms, s, 0.15)
        ref = sc_objective(x, atoms, oracle, 0.15)
        assert mine <= ref + 1e-6


def test_sc_objective_beats_trivial_codes():
    rng = Rng(43)
    params = EncodeParams(method="sc", penalty=0.15)
    atoms = unit_atoms(rng, 5, 9)
    x = rng.normal(5)
    s = encode_sc(x, atoms, params).dense()
    obj = sc_objective(x, atoms, s, 0.15)
    assert obj <= sc_objective(x, atoms, np.zeros(9), 0.15) + 1e-12
    vq = encode_vq(x, atoms)
    j = int(vq.support[0])
    scaled = np.zeros(9)
    scaled[j] = float(atoms[:, j] @ x) / float(atoms[:, j] @ atoms[:, j])
    assert obj <= sc_objective(x, atoms, scaled, 0.15) + 1e-12


def test_sc_zero_descriptor_returns_zero():
    params = EncodeParams(method="sc", penalty=0.15)
    code = encode_sc(np.zeros(3), orthonormal_atoms(Rng(1), 3), params)
    assert code.support.size == 0


def test_sc_step_cap_raises():
    from bowbench.errors import MaxIterations
    rng = Rng(44)
    atoms = unit_atoms(rng, 6, 12)
    x = rng.normal(6)
    params = EncodeParams(method="sc", penalty=0.01, basis_change_cap=1)
    with pytest.raises(MaxIterations):
        encode_sc(x, atoms, params)


# --- LLC ---------------------------------------------------------------------

def llc_knn_kkt_residual(x, atoms, code, penalty):
    support = code.support
    sub = atoms[:, support]
    u = code.values
    quad = sub.T @ sub + penalty * np.eye(support.size)
    # recover the multiplier by least squares on the stationarity condition
    stationarity = 2.0 * (quad @ u - sub.T @ x)
    mult = -float(np.mean(stationarity))
    return float(np.max(np.abs(stationarity + mult))), abs(u.sum() - 1.0)


def test_llc_knn_hand_case():
    params = EncodeParams(method="llc", neighbors=2, penalty=0.0)
    code = encode_llc_knn(np.array([1.0, 0.0]), np.eye(2), params)
    assert np.allclose(code.dense(), [1.0, 0.0], atol=1e-10)


def test_llc_knn_single_neighbor():
    rng = Rng(51)
    atoms = unit_atoms(rng, 4, 7)
    params = EncodeParams(method="llc", neighbors=1)
    x = rng.normal(4)
    code = encode_llc_knn(x, atoms, params)
    assert code.support.size == 1
    assert abs(code.values[0] - 1.0) <= 1e-12
    d2 = np.sum((x[:, None] - atoms) ** 2, axis=0)
    assert code.support[0] == int(np.argmin(d2))


def test_llc_knn_kkt_and_sum():
    rng = Rng(52)
    params = EncodeParams(method="llc", neighbors=4, penalty=0.15)
    for _ in range(25):
        atoms = unit_atoms(rng, 6, 11)
        x = rng.normal(6)
        code = encode_llc_knn(x, atoms, params)
        resid, sum_gap = llc_knn_kkt_residual(x, atoms, code, 0.15)
        assert resid <= 1e-8
        assert sum_gap <= 1e-8
        assert code.support.size <= 4


def test_llc_full_single_atom():
    params = EncodeParams(method="llc_full", penalty=5.0, locality_sigma=2.0)
    code = encode_llc_full(np.array([3.0]), np.array([[0.5]]), params)
    assert np.allclose(code.dense(), [1.0], atol=1e-12)


def test_llc_full_exact_affine_solution():
    rng = Rng(53)
    atoms = orthonormal_atoms(rng, 4) * 1.0
    params = EncodeParams(method="llc_full", penalty=0.0)
    # x inside the affine hull of the atoms
    weights = np.array([0.4, 0.3, 0.2, 0.1])
    x = atoms @ weights
    code = encode_llc_full(x, atoms, params)
    assert abs(code.values.sum() - 1.0) <= 1e-8
    assert np.allclose(code.dense(), weights, atol=1e-8)
    assert np.linalg.norm(x - atoms @ code.dense()) <= 1e-8


def test_llc_full_locality_concentrates_mass():
    rng = Rng(54)
    atoms = unit_atoms(rng, 5, 6)
    x = atoms[:, 2] + 0.01 * rng.normal(5)
    params = EncodeParams(method="llc_full", penalty=1e3, locality_sigma=1.0)
    code = encode_llc_full(x, atoms, params)
    vals = code.dense()
    assert int(np.argmax(np.abs(vals))) == 2
    assert abs(vals.sum() - 1.0) <= 1e-8


# --- batch -------------------------------------------------------------------

def code_bytes(codes):
    return b"".join(
        c.support.astype(np.int64).tobytes() + c.values.tobytes()
        for c in codes
    )


def test_batch_singleton_matches_single():
    rng = Rng(61)
    atoms = unit_atoms(rng, 4, 6)
    x = rng.normal(4)
    params = EncodeParams(method="sc", penalty=0.15)
    batch = encode_batch(x[:, None], atoms, params)
    single = encode_sc(x, atoms, params)
    assert len(batch) == 1
    assert batch[0].support.tolist() == single.support.tolist()
    assert batch[0].values.tolist() == single.values.tolist()


def test_batch_respects_column_order():
    rng = Rng(62)
    atoms = unit_atoms(rng, 4, 6)
    xs = rng.normal(4 * 5).reshape(4, 5)
    params = EncodeParams(method="vq")
    codes = encode_batch(xs, atoms, params)
    shuffled = encode_batch(xs[:, ::-1], atoms, params)
    assert code_bytes(codes[::-1]) == code_bytes(shuffled)


def test_batch_parallel_identical_bytes():
    rng = Rng(63)
    atoms = unit_atoms(rng, 5, 12)
    xs = rng.normal(5 * 40).reshape(5, 40)
    for method in ("vq", "sa", "omp", "sc", "llc", "llc_full"):
        params = EncodeParams(method=method, neighbors=3, penalty=0.15)
        seq = encode_batch(xs, atoms, params, parallel=False)
        par = encode_batch(xs, atoms, params, parallel=True)
        assert code_bytes(seq) == code_bytes(par), method


def test_batch_attaches_descriptor_index():
    atoms = np.eye(2) * 2.0     # not unit norm: omp fails
    xs = np.ones((2, 3))
    params = EncodeParams(method="omp", neighbors=1)
    with pytest.raises(BatchEncodeError) as exc_info:
        encode_batch(xs, atoms, params)
    assert exc_info.value.descriptor_index == 0


def test_dump_codes_csv(tmp_path):
    from bowbench.encoding import dump_codes_csv
    rng = Rng(70)
    atoms = unit_atoms(rng, 4, 6)
    xs = rng.normal(4 * 3).reshape(4, 3)
    codes = encode_batch(xs, atoms, EncodeParams(method="vq"))
    path = tmp_path / "codes.csv"
    dump_codes_csv(codes, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "descriptor_index,atom_index,value"
    assert len(lines) == 4
    first = lines[1].split(",")
    assert first[0] == "0" and float(first[2]) == 1.0
