#!/usr/bin/env python3
# Tests for base matrix construction, validation and CSV files

import numpy as np
import pytest

from base_matrix import (BaseMatrix, build_omega_lambda, flat_base_matrix,
                         from_entries, load_csv, rate_relation,
                         row_nonzero_counts, save_csv, single_row_base_matrix,
                         validate_power)
from utils import ConfigError


class TestOmegaLambda:
    def test_shape_and_values(self):
        W = build_omega_lambda(6, 32, 1.0)
        assert W.shape == (37, 32)
        assert (W.omega, W.Lambda) == (6, 32)
        nonzero = W.entries[W.entries > 0]
        assert np.allclose(nonzero, 37 / 6)
        assert W.kappa == pytest.approx(37 / 32)

    def test_band_structure(self):
        W = build_omega_lambda(3, 5, 2.0)
        for c in range(5):
            column = W.entries[:, c]
            assert np.flatnonzero(column).tolist() == [c, c + 1, c + 2]

    def test_power_constraint(self):
        for omega, Lambda, P in [(6, 32, 1.0), (2, 3, 15.0), (1, 1, 4.0), (8, 32, 0.5)]:
            W = build_omega_lambda(omega, Lambda, P)
            assert W.P == pytest.approx(P, rel=1e-12)
            assert validate_power(W, P)

    def test_row_counts_ramp(self):
        counts = row_nonzero_counts(build_omega_lambda(6, 32, 1.0))
        expected = [1, 2, 3, 4, 5] + [6] * 27 + [5, 4, 3, 2, 1]
        assert counts.tolist() == expected

    def test_minimum_length(self):
        build_omega_lambda(4, 7, 1.0)
        with pytest.raises(ConfigError):
            build_omega_lambda(4, 6, 1.0)

    def test_invalid_parameters(self):
        with pytest.raises(ConfigError):
            build_omega_lambda(0, 4, 1.0)
        with pytest.raises(ConfigError):
            build_omega_lambda(2, 4, -1.0)
        with pytest.raises(ConfigError):
            build_omega_lambda(2.5, 4, 1.0)

    def test_entries_read_only(self):
        W = build_omega_lambda(2, 3, 1.0)
        with pytest.raises(ValueError):
            W.entries[0, 0] = 5.0

    def test_nonzero_blocks_row_major(self):
        W = build_omega_lambda(2, 3, 1.0)
        assert W.nonzero_blocks() == [(0, 0), (1, 0), (1, 1), (2, 1), (2, 2), (3, 2)]

    def test_label(self):
        assert build_omega_lambda(2, 3, 1.0).label() == "omega=2,Lambda=3"
        assert BaseMatrix(np.ones((2, 3))).label() == "2x3"


class TestOtherConstructions:
    def test_flat(self):
        W = flat_base_matrix(15.0)
        assert W.shape == (1, 1)
        assert W.entries[0, 0] == 15.0
        assert W.is_omega_lambda

    def test_single_row_equal_allocation(self):
        W = single_row_base_matrix(2.0, 8)
        assert W.shape == (1, 8)
        assert np.allclose(W.entries, 2.0)

    def test_single_row_rescales_powers(self):
        W = single_row_base_matrix(1.0, 4, powers=[4, 3, 2, 1])
        assert W.P == pytest.approx(1.0)
        assert W.entries[0, 0] == pytest.approx(1.6)

    def test_single_row_wrong_length(self):
        with pytest.raises(ConfigError):
            single_row_base_matrix(1.0, 4, powers=[1, 1, 1])

    def test_from_entries_checks_power(self):
        from_entries([[1.0, 3.0]], P=2.0)
        with pytest.raises(ConfigError):
            from_entries([[1.0, 2.0]], P=2.0)

    def test_from_entries_rejects_zero_column(self):
        with pytest.raises(ConfigError):
            from_entries([[2.0, 0.0], [2.0, 0.0]])

    def test_negative_entries(self):
        with pytest.raises(ConfigError):
            BaseMatrix(np.array([[1.0, -1.0]]))

    def test_rate_relation(self):
        assert rate_relation(1.5, 6, 32) == pytest.approx(1.5 * 37 / 32)
        with pytest.raises(ConfigError):
            rate_relation(1.5, 6, 10)


class TestCsv:
    def test_round_trip(self, tmp_path):
        W = build_omega_lambda(3, 7, 15.0)
        path = tmp_path / "w.csv"
        save_csv(W, str(path))
        loaded = load_csv(str(path), P=15.0)
        np.testing.assert_array_equal(loaded.entries, W.entries)

    def test_single_row_file(self, tmp_path):
        path = tmp_path / "row.csv"
        path.write_text("1,2,3\n")
        assert load_csv(str(path)).shape == (1, 3)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_csv(str(tmp_path / "missing.csv"))

    def test_unparseable_file(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,a\n2,3\n")
        with pytest.raises(ConfigError):
            load_csv(str(path))
