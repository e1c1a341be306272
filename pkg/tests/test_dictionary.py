"""
Tests for dictionary initialization, dictionary updates and sparse coding.
"""
import pytest
import sys
from pathlib import Path

import numpy as np
import scipy.linalg

# Add parent directory to path to import modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.model import CoeffMatrix, Dictionary, SvdFailure, orthogonality_error
from sparse.dictionary import (
    SvdWorkspace,
    hard_threshold,
    init_dct_dictionary,
    l0_threshold,
    polar_factor,
    sparse_code_amm,
    sparse_code_palm,
    update_dictionary_amm,
    update_dictionary_palm,
)


def _random_unitary(rng, size):
    Q, R = scipy.linalg.qr(rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size)))
    return Q * (np.diag(R) / np.abs(np.diag(R)))


def _random_pair(rng, l=16, d=49):
    P = rng.standard_normal((l, d)) + 1j * rng.standard_normal((l, d))
    alpha = rng.standard_normal((l, d)) + 1j * rng.standard_normal((l, d))
    return P, alpha


def _skew_hermitian(rng, size):
    X = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    return X - X.conj().T


class TestDictionary:
    """Test suite for dictionary updates."""

    @pytest.mark.unit
    @pytest.mark.high
    def test_4_1_dct_dictionary_orthonormal(self):
        """Test Case 4.1: DCT Initialization Is Orthonormal with a Flat First Atom"""
        D = init_dct_dictionary(8)
        assert D.matrix.shape == (64, 64)
        assert orthogonality_error(D.matrix) < 1e-12
        assert np.allclose(D.matrix[:, 0], 1.0 / 8)
        with pytest.raises(ValueError):
            init_dct_dictionary(1)

    @pytest.mark.unit
    @pytest.mark.high
    def test_4_2_amm_update_beats_random_orthogonal(self):
        """Test Case 4.2: Polar Factor Minimizes ||D alpha - P|| over Orthogonal D"""
        rng = np.random.default_rng(11)
        for _ in range(20):
            P, alpha = _random_pair(rng)
            D = update_dictionary_amm(P, alpha)
            assert orthogonality_error(D.matrix) <= 1e-10
            best = np.linalg.norm(D.matrix @ alpha - P) ** 2
            for _ in range(50):
                Q = _random_unitary(rng, 16)
                assert best <= np.linalg.norm(Q @ alpha - P) ** 2 + 1e-9

    @pytest.mark.unit
    @pytest.mark.medium
    def test_4_3_zero_coefficients_keep_dictionary(self):
        """Test Case 4.3: alpha = 0 Keeps the Previous Dictionary"""
        previous = init_dct_dictionary(4)
        P = np.ones((16, 25))
        assert update_dictionary_amm(P, np.zeros((16, 25)), previous=previous) is previous
        identity = update_dictionary_amm(P, np.zeros((16, 25)))
        assert np.array_equal(identity.matrix, np.eye(16))

    @pytest.mark.unit
    @pytest.mark.high
    def test_4_4_palm_update_orthogonal_and_proximal(self):
        """Test Case 4.4: PALM Dictionary Step Stays Orthogonal, Freezes for Large d_k"""
        rng = np.random.default_rng(2)
        P, alpha = _random_pair(rng)
        D0 = Dictionary(_random_unitary(rng, 16), 4)
        D1 = update_dictionary_palm(D0, P, alpha, d_k=50.0)
        assert orthogonality_error(D1.matrix) <= 1e-10
        frozen = update_dictionary_palm(D0, P, alpha, d_k=1e12)
        assert np.linalg.norm(frozen.matrix - D0.matrix) < 1e-6
        with pytest.raises(ValueError):
            update_dictionary_palm(D0, P, alpha, d_k=0.0)

    @pytest.mark.unit
    @pytest.mark.medium
    def test_4_5_truncated_warmup(self):
        """Test Case 4.5: Truncated Warm-Up Still Returns an Orthogonal Matrix"""
        rng = np.random.default_rng(9)
        P, alpha = _random_pair(rng)
        workspace = SvdWorkspace(truncate=True, warmup_iters=2)
        D = update_dictionary_amm(P, alpha, workspace=workspace, iteration=0)
        assert orthogonality_error(D.matrix) <= 1e-10
        assert workspace.singular_values is not None
        assert workspace.active(1) and not workspace.active(2)

    @pytest.mark.unit
    @pytest.mark.low
    def test_4_6_svd_failure_on_non_finite(self):
        """Test Case 4.6: Non-Finite Update Matrix Raises SvdFailure"""
        M = np.eye(4)
        M[0, 0] = np.nan
        with pytest.raises(SvdFailure):
            polar_factor(M)


class TestSparseCoding:
    """Test suite for hard thresholding."""

    @pytest.mark.unit
    @pytest.mark.high
    def test_4_7_hard_threshold_modes(self):
        """Test Case 4.7: Isotropic and Anisotropic Thresholding"""
        M = np.array([[0.5 + 0.05j, 0.05 + 0.05j], [0.2j, 0.09]])
        iso = hard_threshold(M, 0.1, "isotropic").matrix
        assert np.array_equal(iso, np.array([[0.5 + 0.05j, 0], [0.2j, 0]]))
        aniso = hard_threshold(M, 0.1, "anisotropic").matrix
        assert np.array_equal(aniso, np.array([[0.5, 0], [0.2j, 0]]))
        with pytest.raises(ValueError):
            hard_threshold(M, -1.0)

    @pytest.mark.unit
    @pytest.mark.medium
    def test_4_8_threshold_levels(self):
        """Test Case 4.8: Printed and Exact-Prox Threshold Levels"""
        assert l0_threshold(4.5e-4) == 4.5e-4
        assert l0_threshold(0.3, 1.5) == pytest.approx(0.2)
        assert l0_threshold(0.5, 1.0, standard=True) == pytest.approx(1.0)

    @pytest.mark.unit
    @pytest.mark.medium
    def test_4_9_sparse_code_amm(self):
        """Test Case 4.9: alpha = Thresh(D* P); Huge tau Zeroes Everything"""
        rng = np.random.default_rng(4)
        D = init_dct_dictionary(4)
        P = rng.standard_normal((16, 9))
        alpha = sparse_code_amm(D, P, tau=0.0)
        assert np.allclose(D.matrix @ alpha.matrix, P)
        assert not np.any(sparse_code_amm(D, P, tau=1e6).matrix)

    @pytest.mark.unit
    @pytest.mark.medium
    def test_4_10_sparse_code_palm(self):
        """Test Case 4.10: PALM Coding Blends Previous Coefficients"""
        rng = np.random.default_rng(6)
        D = init_dct_dictionary(4)
        P = rng.standard_normal((16, 9))
        previous = CoeffMatrix(np.ones((16, 9)))
        alpha = sparse_code_palm(previous, D, P, tau=0.0, e_k=2.0)
        assert np.allclose(alpha.matrix, 0.5 * previous.matrix + 0.5 * D.matrix.conj().T @ P)
        with pytest.raises(ValueError):
            sparse_code_palm(previous, D, P, tau=0.1, e_k=0.5)

    @pytest.mark.unit
    @pytest.mark.high
    @pytest.mark.parametrize("mode", ["isotropic", "anisotropic"])
    def test_4_11_hard_threshold_idempotent(self, mode):
        """Test Case 4.11: Thresholding Twice Changes Nothing; Kept Entries Are Untouched"""
        rng = np.random.default_rng(41)
        M = rng.standard_normal((16, 40)) + 1j * rng.standard_normal((16, 40))
        once = hard_threshold(M, 0.8, mode).matrix
        assert np.array_equal(hard_threshold(once, 0.8, mode).matrix, once)
        real = M.real
        assert np.array_equal(hard_threshold(real, 0.8, mode).matrix, hard_threshold(real, 0.8, "isotropic").matrix)
        if mode == "isotropic":
            kept = once != 0
            assert np.array_equal(once[kept], M[kept])
        else:
            for part in (np.real, np.imag):
                kept = part(once) != 0
                assert np.array_equal(part(once)[kept], part(M)[kept])

    @pytest.mark.unit
    @pytest.mark.medium
    @pytest.mark.parametrize("s", [3.0, 0.01, 0.5 - 2j])
    def test_4_12_amm_update_scale_invariant(self, s):
        """Test Case 4.12: Scaling P and alpha Together Leaves the Polar Factor Unchanged"""
        P, alpha = _random_pair(np.random.default_rng(42))
        reference = update_dictionary_amm(P, alpha).matrix
        assert np.allclose(update_dictionary_amm(s * P, s * alpha).matrix, reference, atol=1e-10)

    @pytest.mark.unit
    @pytest.mark.high
    @pytest.mark.parametrize("e_k", [0.6, 0.9, 1.5, 4.0])
    def test_4_13_palm_coefficients_stay_bounded(self, e_k):
        """Test Case 4.13: Repeated PALM Coding Stays Within ||P|| / min(1, 2 e_k - 1)"""
        rng = np.random.default_rng(43)
        D = _random_unitary(rng, 16)
        P = rng.standard_normal((16, 30)) + 1j * rng.standard_normal((16, 30))
        alpha = CoeffMatrix(np.zeros((16, 30), dtype=complex))
        bound = np.linalg.norm(P) / min(1.0, 2.0 * e_k - 1.0)
        for _ in range(200):
            alpha = sparse_code_palm(alpha, D, P, tau=0.05, e_k=e_k)
            assert np.linalg.norm(alpha.matrix) <= bound * (1 + 1e-12)


class TestBlockOracles:
    """Randomized optimality checks for the alpha and D block steps."""

    @pytest.mark.unit
    @pytest.mark.high
    def test_4_14_sparse_code_amm_minimizes_block(self):
        """Test Case 4.14: Exact-Prox Coding Beats Random Coefficients and Supports"""
        rng = np.random.default_rng(44)
        D = _random_unitary(rng, 16)
        P = rng.standard_normal((16, 20)) + 1j * rng.standard_normal((16, 20))
        tau = 0.4

        def block(alpha):
            return 0.5 * np.linalg.norm(D @ alpha - P) ** 2 + tau * np.count_nonzero(alpha)

        best = block(sparse_code_amm(D, P, tau, standard_prox=True).matrix)
        coeffs = D.conj().T @ P
        for _ in range(500):
            support = rng.random(coeffs.shape) < rng.random()
            assert best <= block(np.where(support, coeffs, 0)) + 1e-10
            noisy = coeffs + 0.3 * (rng.standard_normal(coeffs.shape) + 1j * rng.standard_normal(coeffs.shape))
            assert best <= block(np.where(support, noisy, 0)) + 1e-10

    @pytest.mark.unit
    @pytest.mark.high
    def test_4_15_palm_dictionary_minimizes_block(self):
        """Test Case 4.15: PALM Dictionary Step Beats Random Orthogonal Matrices"""
        rng = np.random.default_rng(45)
        P, alpha = _random_pair(rng, l=16, d=30)
        D_prev = _random_unitary(rng, 16)
        d_k = 80.0
        gradient = (D_prev @ alpha - P) @ alpha.conj().T

        def block(D):
            step = D - D_prev
            return np.real(np.vdot(gradient, step)) + 0.5 * d_k * np.linalg.norm(step) ** 2

        D_new = update_dictionary_palm(D_prev, P, alpha, d_k).matrix
        best = block(D_new)
        for _ in range(500):
            assert best <= block(_random_unitary(rng, 16)) + 1e-9
        for _ in range(200):
            nearby = D_new @ scipy.linalg.expm(0.01 * _skew_hermitian(rng, 16))
            assert best <= block(nearby) + 1e-9
