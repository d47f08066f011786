"""Pursuit, reconstruction, and error-measure contracts.

The exact-recovery check is verified against a brute-force enumeration of
all candidate supports, which is independent of the greedy path.
"""

import itertools

import numpy as np
import pytest

from eegsrc.dataset import EpochMatrix
from eegsrc.kernels import _omp_numpy, backend
from eegsrc.sparse_coding import (
    CodingConfig,
    CodingError,
    Dictionary,
    SparseCode,
    batch_code,
    load_dictionary,
    normalized_error,
    omp,
    reconstruct,
    reconstruction_error,
    save_dictionary,
)
from helpers import sparse_signal, unit_dictionary


def make_dict(seed, signal_len, n_atoms):
    return Dictionary(atoms=unit_dictionary(np.random.default_rng(seed), signal_len, n_atoms))


def brute_force_best(atoms, y, k):
    """Independent oracle: exhaustive least squares over all C(M, k) supports."""
    best_support, best_coef, best_err = None, None, np.inf
    for support in itertools.combinations(range(atoms.shape[1]), k):
        sub = atoms[:, support]
        coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
        err = float(np.sum((y - sub @ coef) ** 2))
        if err < best_err:
            best_support, best_coef, best_err = np.asarray(support), coef, err
    return best_support, best_coef, best_err


class TestOmp:
    def test_zero_signal_empty_support(self):
        d = make_dict(0, 8, 12)
        code = omp(d, np.zeros(8), CodingConfig(max_sparsity=10))
        assert code.sparsity == 0
        assert not code.degenerate

    def test_single_atom_signal(self):
        d = make_dict(1, 8, 12)
        code = omp(d, 3.0 * d.atoms[:, 7], CodingConfig(max_sparsity=1))
        assert list(code.support) == [7]
        assert code.values[0] == pytest.approx(3.0, abs=1e-9)

    def test_two_sparse_recovery_vs_enumeration(self):
        # seeded 8x12 dictionary, y exactly 2-sparse: OMP must match the
        # exhaustive-search support and coefficients (greedy recovery is
        # not universal at this coherence, hence the frozen seed)
        rng = np.random.default_rng(2)
        atoms = unit_dictionary(rng, 8, 12)
        d = Dictionary(atoms=atoms)
        for trial in range(20):
            y, support, values = sparse_signal(rng, atoms, 2)
            code = omp(d, y, CodingConfig(max_sparsity=2))
            oracle_support, oracle_coef, oracle_err = brute_force_best(atoms, y, 2)
            assert sorted(code.support) == sorted(oracle_support)
            order = np.argsort(code.support)
            np.testing.assert_allclose(
                code.values[order], oracle_coef[np.argsort(oracle_support)], atol=1e-8
            )
            assert oracle_err < 1e-16

    def test_dimension_mismatch(self):
        d = make_dict(2, 8, 12)
        with pytest.raises(CodingError):
            omp(d, np.zeros(9), CodingConfig(max_sparsity=2))

    def test_sparsity_exceeding_atoms(self):
        d = make_dict(3, 8, 4)
        with pytest.raises(CodingError):
            omp(d, np.ones(8), CodingConfig(max_sparsity=5))

    def test_duplicate_atom_degenerate_flag(self):
        rng = np.random.default_rng(5)
        atoms = unit_dictionary(rng, 8, 6)
        atoms[:, 3] = atoms[:, 0]
        d = Dictionary(atoms=atoms)
        # steer the residual so the duplicate is the best second choice
        y = atoms[:, 0] + 1e-9 * atoms[:, 1]
        code = omp(d, y, CodingConfig(max_sparsity=3))
        assert 3 not in code.support

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(7)
        cfg = CodingConfig(max_sparsity=6)
        for trial in range(50):
            atoms = unit_dictionary(rng, 32, 64)
            d = Dictionary(atoms=atoms)
            y = rng.normal(size=32)
            code = omp(d, y, cfg)
            r = y - reconstruct(d, code)
            rnorm = np.linalg.norm(r)
            if rnorm > 1e-12:
                corr = np.abs(atoms[:, code.support].T @ r) / rnorm
                assert corr.max() <= 1e-6

    def test_error_monotone_in_sparsity(self):
        rng = np.random.default_rng(11)
        atoms = unit_dictionary(rng, 16, 40)
        d = Dictionary(atoms=atoms)
        for trial in range(20):
            y = rng.normal(size=16)
            errs = [
                reconstruction_error(y, d, omp(d, y, CodingConfig(max_sparsity=k)))
                for k in range(1, 8)
            ]
            for lo, hi in zip(errs[1:], errs[:-1]):
                assert lo <= hi + 1e-10 * max(hi, 1.0)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(13)
        atoms = unit_dictionary(rng, 24, 48)
        d = Dictionary(atoms=atoms)
        cfg = CodingConfig(max_sparsity=5)
        for c in (0.25, 2.5, 1337.0):
            y = rng.normal(size=24)
            base = omp(d, y, cfg)
            scaled = omp(d, c * y, cfg)
            assert list(base.support) == list(scaled.support)
            np.testing.assert_allclose(scaled.values, c * base.values, rtol=1e-9)

    def test_residual_or_k_stops_early(self):
        rng = np.random.default_rng(17)
        atoms = unit_dictionary(rng, 32, 64)
        d = Dictionary(atoms=atoms)
        y, *_ = sparse_signal(rng, atoms, 3)
        noisy = y + 1e-3 * rng.normal(size=32)
        cfg = CodingConfig(max_sparsity=20, residual_tol=0.5, stop_rule="residual_or_k")
        code = omp(d, noisy, cfg)
        assert code.sparsity < 20
        assert np.linalg.norm(noisy - reconstruct(d, code)) <= 0.5 + 1e-12

    def test_exact_recovery_rate(self):
        # module-level version of the planted-support recovery property
        rng = np.random.default_rng(19)
        hits = 0
        for trial in range(200):
            atoms = unit_dictionary(rng, 64, 128)
            d = Dictionary(atoms=atoms)
            y, support, values = sparse_signal(rng, atoms, 3)
            code = omp(d, y, CodingConfig(max_sparsity=3))
            hits += sorted(code.support) == list(support)
        assert hits >= 198

    def test_backends_agree(self):
        rng = np.random.default_rng(23)
        atoms = unit_dictionary(rng, 32, 80)
        d = Dictionary(atoms=atoms)
        cfg = CodingConfig(max_sparsity=8)
        for trial in range(20):
            y = rng.normal(size=32)
            code = omp(d, y, cfg)
            sup, val, n, degen = _omp_numpy(d.atoms_transposed(), y, 8, 0.0)
            if backend() == "numpy":
                continue
            assert list(code.support) == list(sup)
            np.testing.assert_allclose(code.values, val, atol=1e-10)


class TestReconstruct:
    def test_empty_code_zero_vector(self):
        d = make_dict(29, 8, 12)
        code = SparseCode(np.array([], dtype=np.int64), np.array([]), 12)
        np.testing.assert_array_equal(reconstruct(d, code), np.zeros(8))

    def test_single_term(self):
        d = make_dict(31, 8, 12)
        code = SparseCode(np.array([7]), np.array([3.0]), 12)
        np.testing.assert_allclose(reconstruct(d, code), 3.0 * d.atoms[:, 7])

    def test_round_trip_exact_sparse(self):
        rng = np.random.default_rng(37)
        atoms = unit_dictionary(rng, 32, 64)
        d = Dictionary(atoms=atoms)
        y, *_ = sparse_signal(rng, atoms, 5)
        code = omp(d, y, CodingConfig(max_sparsity=5))
        np.testing.assert_allclose(reconstruct(d, code), y, atol=1e-8)

    def test_wrong_width_rejected(self):
        d = make_dict(41, 8, 12)
        code = SparseCode(np.array([0]), np.array([1.0]), 13)
        with pytest.raises(CodingError):
            reconstruct(d, code)


class TestErrors:
    def test_exact_code_zero_error(self):
        rng = np.random.default_rng(43)
        atoms = unit_dictionary(rng, 16, 32)
        d = Dictionary(atoms=atoms)
        y, *_ = sparse_signal(rng, atoms, 4)
        code = omp(d, y, CodingConfig(max_sparsity=4))
        assert reconstruction_error(y, d, code) <= 1e-16

    def test_empty_code_squared_norm(self):
        d = make_dict(47, 8, 12)
        y = np.arange(8.0)
        code = SparseCode(np.array([], dtype=np.int64), np.array([]), 12)
        assert reconstruction_error(y, d, code) == pytest.approx(float(y @ y))

    def test_orthogonal_unit_signal(self):
        # a unit vector orthogonal to every atom keeps its full energy
        rng = np.random.default_rng(53)
        atoms = unit_dictionary(rng, 8, 4)
        q, _ = np.linalg.qr(np.hstack([atoms, rng.normal(size=(8, 4))]))
        y = q[:, 7]
        atoms_orth = q[:, :4]
        d = Dictionary(atoms=atoms_orth / np.linalg.norm(atoms_orth, axis=0))
        code = omp(d, y, CodingConfig(max_sparsity=2))
        assert code.sparsity == 0
        assert reconstruction_error(y, d, code) == pytest.approx(1.0)

    def test_normalized_error_basics(self):
        y = np.array([3.0, 4.0])
        assert normalized_error(y, y) == 0.0
        assert normalized_error(y, np.zeros(2)) == pytest.approx(1.0)
        assert normalized_error(y, y / 2) == pytest.approx(0.5)
        with pytest.raises(CodingError):
            normalized_error(np.zeros(2), y)

    def test_squared_error_matches_normalized(self):
        rng = np.random.default_rng(59)
        atoms = unit_dictionary(rng, 16, 32)
        d = Dictionary(atoms=atoms)
        for trial in range(20):
            y = rng.normal(size=16)
            code = omp(d, y, CodingConfig(max_sparsity=3))
            approx = reconstruct(d, code)
            lhs = reconstruction_error(y, d, code)
            rhs = normalized_error(y, approx) ** 2 * float(y @ y)
            assert lhs == pytest.approx(rhs, rel=1e-10)


class TestBatchCode:
    def test_empty_matrix(self):
        d = make_dict(61, 8, 12)
        em = EpochMatrix(data=np.empty((0, 8)))
        assert batch_code(d, em, CodingConfig(max_sparsity=2)) == []

    def test_elementwise_contract(self):
        rng = np.random.default_rng(67)
        atoms = unit_dictionary(rng, 16, 32)
        d = Dictionary(atoms=atoms)
        cfg = CodingConfig(max_sparsity=4)
        data = rng.normal(size=(3, 16))
        em = EpochMatrix(data=data)
        codes = batch_code(d, em, cfg)
        assert len(codes) == 3
        for row, code in zip(data, codes):
            single = omp(d, row, cfg)
            assert list(code.support) == list(single.support)
            np.testing.assert_array_equal(code.values, single.values)

    def test_exact_sparse_batch(self):
        rng = np.random.default_rng(71)
        atoms = unit_dictionary(rng, 64, 128)
        d = Dictionary(atoms=atoms)
        data = np.stack([sparse_signal(rng, atoms, 10)[0] for _ in range(12)])
        codes = batch_code(d, EpochMatrix(data=data), CodingConfig(max_sparsity=10))
        for row, code in zip(data, codes):
            assert normalized_error(row, reconstruct(d, code)) < 1e-8


class TestDictionaryType:
    def test_rejects_non_unit_atoms(self):
        atoms = np.eye(4)
        atoms[0, 0] = 2.0
        with pytest.raises(CodingError):
            Dictionary(atoms=atoms)

    def test_rejects_zero_atom(self):
        atoms = np.eye(4)
        atoms[:, 2] = 0.0
        with pytest.raises(CodingError):
            Dictionary(atoms=atoms)

    def test_serialization_round_trip(self, tmp_path):
        rng = np.random.default_rng(73)
        d = Dictionary(
            atoms=unit_dictionary(rng, 16, 24),
            class_tag=1,
            learn_meta={"algorithm": "test", "passes": 2},
        )
        save_dictionary(d, tmp_path / "dict1")
        loaded = load_dictionary(tmp_path / "dict1")
        np.testing.assert_array_equal(loaded.atoms, d.atoms)
        assert loaded.class_tag == 1
        assert loaded.learn_meta["passes"] == 2

    def test_corrupted_binary_detected(self, tmp_path):
        rng = np.random.default_rng(79)
        d = Dictionary(atoms=unit_dictionary(rng, 8, 6))
        save_dictionary(d, tmp_path / "dict2")
        blob = bytearray((tmp_path / "dict2.bin").read_bytes())
        blob[0] ^= 0xFF
        (tmp_path / "dict2.bin").write_bytes(bytes(blob))
        with pytest.raises(CodingError):
            load_dictionary(tmp_path / "dict2")


class TestSparseCodeType:
    def test_duplicate_support_rejected(self):
        with pytest.raises(CodingError):
            SparseCode(np.array([1, 1]), np.array([1.0, 2.0]), 4)

    def test_out_of_range_rejected(self):
        with pytest.raises(CodingError):
            SparseCode(np.array([4]), np.array([1.0]), 4)

    def test_dense_round_trip(self):
        code = SparseCode(np.array([2, 0]), np.array([1.5, -2.0]), 4)
        np.testing.assert_array_equal(code.dense(), [-2.0, 0.0, 1.5, 0.0])
