#!/usr/bin/env python3
# Tests for the Gaussian and subsampled Hadamard design operators

import numpy as np
import pytest
from scipy.linalg import hadamard

from base_matrix import build_omega_lambda, flat_base_matrix
from core_params import derive_dimensions
from design_matrix import (GaussianOperator, HadamardOperator, fwht,
                           sample_operator)
from utils import ConfigError


def small_code(backend='hadamard', seed=3):
    base = build_omega_lambda(2, 4, 1.0)
    params = derive_dimensions(8, 4, 0.5, base.L_R, base.L_C)
    return params, base, sample_operator(backend, params, base, seed)


def relative_error(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


class TestFwht:
    def test_matches_sylvester_matrix(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(16)
        np.testing.assert_allclose(fwht(x), hadamard(16) @ x, atol=1e-12)

    def test_batched_last_axis(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 8))
        np.testing.assert_allclose(fwht(x), x @ hadamard(8).T, atol=1e-12)

    def test_input_unchanged(self):
        x = np.arange(4.0)
        fwht(x)
        np.testing.assert_array_equal(x, [0, 1, 2, 3])

    def test_length_power_of_two(self):
        with pytest.raises(ConfigError):
            fwht(np.ones(6))


@pytest.mark.parametrize('backend', ['gaussian', 'hadamard'])
class TestOperatorAgainstDense:
    def test_forward(self, backend):
        params, base, op = small_code(backend)
        A = op.to_dense()
        beta = np.random.default_rng(2).standard_normal(A.shape[1])
        assert relative_error(op.forward(beta), A @ beta) < 1e-10

    def test_adjoint(self, backend):
        params, base, op = small_code(backend)
        A = op.to_dense()
        z = np.random.default_rng(3).standard_normal(A.shape[0])
        assert relative_error(op.adjoint(z), A.T @ z) < 1e-10

    def test_scaled_adjoint(self, backend):
        params, base, op = small_code(backend)
        A = op.to_dense()
        z = np.random.default_rng(4).standard_normal(A.shape[0])
        profile = np.arange(1.0, params.L_R + 1)
        expected = A.T @ (z * np.repeat(profile, params.M_R))
        assert relative_error(op.scaled_adjoint(z, profile), expected) < 1e-10

    def test_zero_blocks(self, backend):
        params, base, op = small_code(backend)
        A = op.to_dense()
        for r in range(params.L_R):
            for c in range(params.L_C):
                block = A[r * params.M_R:(r + 1) * params.M_R, c * params.M_C:(c + 1) * params.M_C]
                assert np.any(block != 0) == (base.entries[r, c] > 0)

    def test_same_seed_same_matrix(self, backend):
        _, _, first = small_code(backend, seed=11)
        _, _, second = small_code(backend, seed=11)
        _, _, other = small_code(backend, seed=12)
        np.testing.assert_array_equal(first.to_dense(), second.to_dense())
        assert not np.array_equal(first.to_dense(), other.to_dense())


class TestHadamard:
    def test_entries_are_signed_scales(self):
        params, base, op = small_code('hadamard')
        A = op.to_dense()
        for r, c in base.nonzero_blocks():
            block = A[r * params.M_R:(r + 1) * params.M_R, c * params.M_C:(c + 1) * params.M_C]
            np.testing.assert_allclose(np.abs(block), np.sqrt(base.entries[r, c] / params.L))

    def test_order_rows_and_columns(self):
        params, base, op = small_code('hadamard')
        # M_C = 8 needs 2^4 so that 8 columns besides the first exist
        assert op.order == 16
        assert set(op.rows) == set(op.cols) == set(base.nonzero_blocks())
        for rows in op.rows.values():
            assert len(set(rows.tolist())) == params.M_R
            assert rows.min() >= 1 and rows.max() < op.order
        for cols in op.cols.values():
            assert len(set(cols.tolist())) == params.M_C
            assert cols.min() >= 1 and cols.max() < op.order

    def test_columns_differ_between_blocks(self):
        _, _, op = small_code('hadamard')
        assert len({tuple(cols.tolist()) for cols in op.cols.values()}) > 1

    def test_rows_are_not_near_duplicates(self):
        """With M_C = order/2, fixed leading columns would make rows i and i + order/2 agree almost everywhere."""
        M, L, n = 16, 4, 100
        base = flat_base_matrix(1.0)
        params = derive_dimensions(L, M, L * np.log(M) / n, 1, 1)
        assert (params.M_R, params.M_C) == (100, 64)
        op = HadamardOperator(params, base, 0)
        assert op.order == 128
        block = op.to_dense() / np.sqrt(1.0 / L)
        gram = block @ block.T / params.M_C
        np.fill_diagonal(gram, 0.0)
        assert np.max(np.abs(gram)) < 0.9

    def test_batched_transforms_match_single_batch(self, monkeypatch):
        import design_matrix
        params, base, whole = small_code('hadamard', seed=13)
        monkeypatch.setattr(design_matrix, 'FWHT_BATCH_ENTRIES', 1)
        split = HadamardOperator(params, base, 13)
        assert len(split._batches) == len(base.nonzero_blocks())
        rng = np.random.default_rng(14)
        beta = rng.standard_normal(whole.shape[1])
        z = rng.standard_normal(whole.shape[0])
        np.testing.assert_allclose(split.forward(beta), whole.forward(beta), rtol=1e-12)
        np.testing.assert_allclose(split.adjoint(z), whole.adjoint(z), rtol=1e-12)

    def test_wrong_vector_length(self):
        _, _, op = small_code('hadamard')
        with pytest.raises(ConfigError):
            op.forward(np.ones(5))
        with pytest.raises(ConfigError):
            op.adjoint(np.ones(5))


class TestGaussian:
    def test_regenerated_blocks_match_stored(self):
        params, base, stored = small_code('gaussian', seed=5)
        regenerated = GaussianOperator(params, base, 5, dense_limit=0)
        assert regenerated.regenerate and not stored.regenerate
        beta = np.random.default_rng(6).standard_normal(stored.shape[1])
        np.testing.assert_allclose(regenerated.forward(beta), stored.forward(beta), rtol=1e-12)

    def test_entry_variance(self):
        base = flat_base_matrix(4.0)
        params = derive_dimensions(64, 16, 0.5, 1, 1, P=4.0)
        A = GaussianOperator(params, base, 0).to_dense()
        assert A.var() == pytest.approx(4.0 / 64, rel=0.05)


class TestCodewordPower:
    def test_average_power(self):
        """E||A beta||^2 / n is within 5% of P over 100 draws."""
        P = 2.0
        base = build_omega_lambda(2, 4, P)
        params = derive_dimensions(64, 16, 0.5, base.L_R, base.L_C, P=P)
        rng = np.random.default_rng(7)
        powers = []
        for draw in range(100):
            op = GaussianOperator(params, base, draw)
            beta = np.zeros(params.M * params.L)
            beta[np.arange(params.L) * params.M + rng.integers(0, params.M, params.L)] = 1.0
            powers.append(np.sum(op.forward(beta) ** 2) / params.n)
        assert np.mean(powers) == pytest.approx(P, rel=0.05)


class TestValidation:
    def test_unknown_backend(self):
        params, base, _ = small_code()
        with pytest.raises(ConfigError):
            sample_operator('sparse', params, base, 0)

    def test_base_shape_mismatch(self):
        params, _, _ = small_code()
        with pytest.raises(ConfigError):
            HadamardOperator(params, build_omega_lambda(2, 3, 1.0), 0)

    def test_profile_must_be_positive(self):
        params, _, op = small_code()
        z = np.ones(params.n)
        with pytest.raises(ConfigError):
            op.scaled_adjoint(z, np.zeros(params.L_R))
        with pytest.raises(ConfigError):
            op.scaled_adjoint(z, np.ones(params.L_R + 1))

    def test_scalar_profile(self):
        params, _, op = small_code()
        z = np.random.default_rng(8).standard_normal(params.n)
        np.testing.assert_allclose(op.scaled_adjoint(z, 0.5), 0.5 * op.adjoint(z), rtol=1e-12)
