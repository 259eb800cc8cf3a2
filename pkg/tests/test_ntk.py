"""Jacobian assembly, kernel spectra, and the rank-preservation predicate."""

import numpy as np
import pytest

from conftest import fd_jacobian, max_rel_err, random_small_config

from twophase.network import (
    NetworkSpec,
    forward_hidden,
    params_zero,
    random_params,
)
from twophase.ntk import (
    assert_rank_preserved,
    compute_jacobian,
    compute_ntk,
    compute_ntk_streamed,
)


class TestComputeNtk:
    def test_identity_jacobian(self):
        snap = compute_ntk(np.eye(5))
        np.testing.assert_allclose(snap.kernel, np.eye(5), atol=1e-14)
        assert snap.rank == 5

    def test_repeated_row_drops_rank(self, rng):
        j = rng.standard_normal((4, 7))
        j[2] = j[0]
        snap = compute_ntk(j)
        assert snap.rank < 4

    def test_sign_flip_invariance(self, rng):
        j = rng.standard_normal((5, 9))
        a = compute_ntk(j)
        b = compute_ntk(-j)
        np.testing.assert_allclose(a.kernel, b.kernel, atol=1e-12)
        assert a.rank == b.rank

    def test_kernel_symmetric_psd(self, rng):
        j = rng.standard_normal((6, 11))
        snap = compute_ntk(j)
        k = snap.kernel
        assert np.max(np.abs(k - k.T)) <= 1e-10 * max(1.0, np.abs(k).max())
        assert snap.kernel_spectrum.min() >= -1e-8 * np.abs(k).max()

    def test_rank_paths_agree(self, rng):
        for _ in range(50):
            rows, cols = int(rng.integers(2, 7)), int(rng.integers(2, 12))
            j = rng.standard_normal((rows, cols))
            if rng.random() < 0.3 and rows >= 2:
                j[-1] = j[0]
            a = compute_ntk(j, rank_via="kernel")
            b = compute_ntk(j, rank_via="jacobian")
            assert a.rank == b.rank

    def test_block_diagonal_head_jacobian_rank(self, rng):
        # J restricted to the head block: rank([h, 1]) = n lifts to n * m_y
        n, m_h, m_y = 5, 7, 3
        h = rng.standard_normal((n, m_h))
        aug = np.hstack([h, np.ones((n, 1))])
        assert np.linalg.matrix_rank(aug) == n
        j = np.zeros((n * m_y, m_y * (m_h + 1)))
        for i in range(n):
            j[i * m_y : (i + 1) * m_y] = np.kron(np.eye(m_y), aug[i])
        snap = compute_ntk(j)
        assert snap.rank == n * m_y


class TestComputeJacobian:
    def test_head_columns_are_kron_blocks(self, rng):
        spec = NetworkSpec((3, 4, 6), 2, sharpness=10.0)
        p = random_params(spec, rng, 0.8)
        x = rng.standard_normal((4, 3))
        jac = compute_jacobian(spec, p, x)
        h = forward_hidden(spec, p, x).hidden
        head = spec.head_param_count()
        for i in range(4):
            want = np.kron(np.eye(2), np.append(h[i], 1.0))
            np.testing.assert_allclose(jac[i * 2 : (i + 1) * 2, -head:], want, atol=1e-12)

    def test_zero_network_hidden_columns_vanish(self):
        # with a zero head the chain to every hidden parameter is cut
        spec = NetworkSpec((3, 4, 5), 2, sharpness=10.0)
        p = params_zero(spec)
        x = np.random.default_rng(3).standard_normal((3, 3))
        jac = compute_jacobian(spec, p, x)
        head = spec.head_param_count()
        np.testing.assert_array_equal(jac[:, :-head], 0.0)
        h_const = np.log(2.0) / 10.0
        want_row = np.kron(np.eye(2), np.append(np.full(5, h_const), 1.0))
        for i in range(3):
            np.testing.assert_allclose(jac[i * 2 : (i + 1) * 2, -head:], want_row, atol=1e-14)

    def test_matches_finite_differences(self, rng):
        spec = NetworkSpec((3, 4, 4), 2, sharpness=10.0, bn_flags=(True, False))
        p = random_params(spec, rng, 0.7)
        x = rng.standard_normal((4, 3))
        jac = compute_jacobian(spec, p, x)
        fd = fd_jacobian(spec, p, x)
        assert max_rel_err(jac, fd) < 1e-5

    def test_random_configurations_vs_fd(self):
        rng = np.random.default_rng(99)
        for _ in range(8):
            spec, p, x = random_small_config(rng)
            jac = compute_jacobian(spec, p, x)
            fd = fd_jacobian(spec, p, x)
            assert max_rel_err(jac, fd) < 1e-5

    def test_size_cap(self, rng):
        spec = NetworkSpec((3, 4), 2)
        p = random_params(spec, rng, 1.0)
        with pytest.raises(MemoryError, match="compute_ntk_streamed"):
            compute_jacobian(spec, p, rng.standard_normal((4, 3)), max_entries=10)

    def test_streamed_kernel_matches_materialized(self, rng):
        spec = NetworkSpec((3, 5, 4), 2, sharpness=10.0, bn_flags=(False, True))
        p = random_params(spec, rng, 0.8)
        x = rng.standard_normal((4, 3))
        jac = compute_jacobian(spec, p, x)
        direct = compute_ntk(jac)
        streamed = compute_ntk_streamed(spec, p, x, block=7)
        np.testing.assert_allclose(streamed.kernel, direct.kernel, atol=1e-10)
        assert streamed.rank == direct.rank


class TestRankPreserved:
    def test_reflexive(self, rng):
        snap = compute_ntk(rng.standard_normal((4, 9)))
        assert assert_rank_preserved(snap, snap)

    def test_rank_drop_detected(self, rng):
        j = rng.standard_normal((4, 9))
        ref = compute_ntk(j)
        j2 = j.copy()
        j2[3] = j2[0]
        assert not assert_rank_preserved(ref, compute_ntk(j2))

    def test_dimension_mismatch_errors(self, rng):
        a = compute_ntk(rng.standard_normal((4, 9)))
        b = compute_ntk(rng.standard_normal((5, 9)))
        with pytest.raises(ValueError, match="dimensions differ"):
            assert_rank_preserved(a, b)

    def test_reference_tolerance_shared(self, rng):
        j = rng.standard_normal((4, 9))
        ref = compute_ntk(j, tol=1e-6)
        cur = compute_ntk(1e-4 * j)  # scaled down, same mathematical rank
        # at the reference's absolute threshold the scaled kernel loses rank
        assert cur.rank == 4
        assert not assert_rank_preserved(ref, cur)
