"""Tests for the dense linear algebra kernel."""

import numpy as np
import pytest

from ratekit.core import (
    NotPositiveDefiniteError,
    center_columns,
    chol_spd,
    gram,
    spd_inverse,
)


class TestCenterColumns:
    def test_constant_column_becomes_zero(self):
        m = np.full((5, 1), 3.7)
        np.testing.assert_array_equal(center_columns(m), np.zeros((5, 1)))

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((20, 4))
        once = center_columns(m)
        np.testing.assert_allclose(center_columns(once), once, atol=1e-12)

    def test_hand_example(self):
        # subtract the mean 2 by hand
        m = np.array([[1.0], [2.0], [3.0]])
        np.testing.assert_allclose(center_columns(m), [[-1.0], [0.0], [1.0]])

    def test_zero_rows_rejected(self):
        with pytest.raises(ValueError):
            center_columns(np.empty((0, 3)))

    def test_column_means_vanish(self):
        rng = np.random.default_rng(1)
        m = rng.uniform(-5, 5, size=(31, 7))
        means = center_columns(m).mean(axis=0)
        np.testing.assert_allclose(means, 0.0, atol=1e-13)


class TestCholSpd:
    def test_identity(self):
        f = chol_spd(np.eye(2))
        np.testing.assert_array_equal(f.lower, np.eye(2))
        assert f.log_det == 0.0
        assert f.jitter_used == 0.0

    def test_diagonal(self):
        f = chol_spd(np.diag([4.0, 4.0]))
        np.testing.assert_allclose(f.lower, np.diag([2.0, 2.0]))
        np.testing.assert_allclose(f.log_det, 2 * np.log(4.0))

    def test_reconstruction_random_spd(self):
        rng = np.random.default_rng(7)
        b = rng.standard_normal((10, 10))
        a = b @ b.T + np.eye(10)
        f = chol_spd(a)
        recon = f.lower @ f.lower.T
        target = a + f.jitter_used * np.eye(10)
        err = np.linalg.norm(recon - target) / np.linalg.norm(a)
        assert err < 1e-8

    def test_log_det_matches_slogdet(self):
        rng = np.random.default_rng(8)
        b = rng.standard_normal((6, 6))
        a = b @ b.T + np.eye(6)
        f = chol_spd(a)
        _, ref = np.linalg.slogdet(a + f.jitter_used * np.eye(6))
        np.testing.assert_allclose(f.log_det, ref, rtol=1e-12)

    def test_singular_matrix_gets_jitter(self):
        g = np.array([[1.0], [2.0], [3.0]])
        a = g @ g.T  # rank 1, p = 3
        f = chol_spd(a, base_jitter=1e-8)
        assert f.jitter_used > 0

    def test_negative_definite_fails(self):
        with pytest.raises(NotPositiveDefiniteError):
            chol_spd(-np.eye(3), base_jitter=1e-8)

    def test_asymmetric_rejected(self):
        a = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError, match="asymmetric"):
            chol_spd(a)

    def test_solve_consistent_with_factor(self):
        rng = np.random.default_rng(11)
        b = rng.standard_normal((5, 5))
        a = b @ b.T + np.eye(5)
        f = chol_spd(a)
        x = f.solve(np.ones(5))
        np.testing.assert_allclose(a @ x, np.ones(5), atol=1e-10)


class TestSpdInverse:
    def test_identity(self):
        np.testing.assert_allclose(spd_inverse(np.eye(3), 0.0), np.eye(3), atol=1e-14)

    def test_two_by_two_adjugate(self):
        # [[1, r], [r, 1]]^{-1} = (1/(1-r^2)) [[1, -r], [-r, 1]]
        r = 0.5
        a = np.array([[1.0, r], [r, 1.0]])
        expected = np.array([[1.0, -r], [-r, 1.0]]) / 0.75
        np.testing.assert_allclose(spd_inverse(a, 0.0), expected, rtol=1e-14)

    def test_inverse_product_is_identity(self):
        rng = np.random.default_rng(3)
        b = rng.standard_normal((8, 8))
        a = b @ b.T + np.eye(8)
        inv = spd_inverse(a, 0.0)
        err = np.abs(a @ inv - np.eye(8)).max()
        assert err < 1e-8

    def test_involution_on_well_conditioned(self):
        rng = np.random.default_rng(4)
        b = rng.standard_normal((6, 6))
        a = b @ b.T + 2 * np.eye(6)
        back = spd_inverse(spd_inverse(a, 0.0), 0.0)
        err = np.linalg.norm(back - a) / np.linalg.norm(a)
        assert err < 1e-6

    def test_result_symmetric(self):
        rng = np.random.default_rng(5)
        b = rng.standard_normal((7, 7))
        a = b @ b.T + np.eye(7)
        inv = spd_inverse(a)
        assert np.abs(inv - inv.T).max() < 1e-12


class TestGram:
    def test_identity(self):
        np.testing.assert_array_equal(gram(np.eye(4)), np.eye(4))

    def test_outer_product(self):
        g = np.array([[1.0], [2.0]])
        np.testing.assert_array_equal(gram(g), [[1.0, 2.0], [2.0, 4.0]])

    def test_psd_cholesky_pivots(self):
        rng = np.random.default_rng(6)
        g = rng.standard_normal((5, 3))
        a = gram(g)
        eigs = np.linalg.eigvalsh(a)
        assert eigs.min() >= -1e-10 * np.trace(a)

    def test_exact_symmetry(self):
        rng = np.random.default_rng(9)
        g = rng.standard_normal((12, 5))
        a = gram(g)
        assert np.array_equal(a, a.T)
