"""
Orthogonal dictionary initialization and updates, and hard-thresholding
sparse coding.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft
import scipy.linalg

from core.model import L0_MODES, CoeffMatrix, Dictionary, SvdFailure, unwrap


@dataclass
class SvdWorkspace:
    """
    Holds the last SVD and the truncated warm-up switch.

    During the first `warmup_iters` outer iterations (when `truncate` is on)
    only the top `rank_fraction` singular pairs of P alpha* fix the update;
    the rest of D is completed to an orthogonal matrix by QR.
    """
    truncate: bool = False
    rank_fraction: float = 0.5
    warmup_iters: int = 3
    U: Optional[np.ndarray] = field(default=None, repr=False)
    singular_values: Optional[np.ndarray] = field(default=None, repr=False)
    Vh: Optional[np.ndarray] = field(default=None, repr=False)

    def active(self, iteration: Optional[int]) -> bool:
        return self.truncate and iteration is not None and iteration < self.warmup_iters


def _svd(M: np.ndarray):
    try:
        return scipy.linalg.svd(M, lapack_driver="gesdd")
    except (np.linalg.LinAlgError, ValueError):
        pass
    try:
        return scipy.linalg.svd(M, lapack_driver="gesvd")
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SvdFailure(f"SVD of the {M.shape[0]}x{M.shape[1]} update matrix failed: {e}")


def _complement(basis: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of the columns of `basis`."""
    l, h = basis.shape
    Q, _ = scipy.linalg.qr(np.hstack([basis, np.eye(l, dtype=basis.dtype)]), mode="economic")
    return Q[:, h:l]


def polar_factor(M: np.ndarray, workspace: Optional[SvdWorkspace] = None, iteration: Optional[int] = None) -> np.ndarray:
    """
    Nearest orthogonal matrix U V* to M, where M = U S V*.

    Raises:
        SvdFailure: If both LAPACK drivers fail (non-finite input included)
    """
    if not np.all(np.isfinite(M)):
        raise SvdFailure("Dictionary update matrix contains non-finite entries")
    U, s, Vh = _svd(M)
    if workspace is not None:
        workspace.U, workspace.singular_values, workspace.Vh = U, s, Vh
        if workspace.active(iteration):
            h = max(1, int(round(workspace.rank_fraction * M.shape[0])))
            U_top, V_top = U[:, :h], Vh[:h, :].conj().T
            return U_top @ V_top.conj().T + _complement(U_top) @ _complement(V_top).conj().T
    return U @ Vh


def init_dct_dictionary(patch_side: int) -> Dictionary:
    """
    Orthonormal separable 2-D DCT-II basis; atom (k1, k2) sits in column
    k1 * patch_side + k2.
    """
    if patch_side < 2:
        raise ValueError(f"patch_side must be at least 2, got {patch_side}")
    basis_1d = scipy.fft.dct(np.eye(patch_side), norm="ortho", axis=0).T
    return Dictionary(np.kron(basis_1d, basis_1d).astype(complex), patch_side)


def update_dictionary_amm(
    P: np.ndarray,
    alpha,
    previous: Optional[Dictionary] = None,
    workspace: Optional[SvdWorkspace] = None,
    iteration: Optional[int] = None,
) -> Dictionary:
    """
    Solve min ||D alpha - P||^2 over D*D = I: D = U V* with P alpha* = U S V*.

    When P alpha* vanishes every orthogonal D is optimal and `previous` is
    returned unchanged (identity when no previous dictionary is given).
    """
    P = np.asarray(P)
    alpha = unwrap(alpha)
    if P.shape[0] != alpha.shape[0] or P.shape[1] != alpha.shape[1]:
        raise ValueError(f"Patch matrix {P.shape} and coefficients {alpha.shape} must both be l x d with l = c")
    patch_side = int(round(np.sqrt(P.shape[0])))
    M = P @ alpha.conj().T
    if not np.any(M):
        if previous is not None:
            return previous
        return Dictionary(np.eye(P.shape[0], dtype=complex), patch_side)
    return Dictionary(polar_factor(M, workspace, iteration), patch_side)


def update_dictionary_palm(
    D_prev,
    P: np.ndarray,
    alpha,
    d_k: float,
    workspace: Optional[SvdWorkspace] = None,
    iteration: Optional[int] = None,
) -> Dictionary:
    """
    Proximal-linearized dictionary step: project
    D_hat = D_prev (I - alpha alpha*/d_k) + P alpha*/d_k onto D*D = I.
    """
    if not d_k > 0:
        raise ValueError(f"d_k must be positive, got {d_k}")
    D = unwrap(D_prev)
    alpha = unwrap(alpha)
    P = np.asarray(P)
    gram = alpha @ alpha.conj().T
    D_hat = D @ (np.eye(gram.shape[0]) - gram / d_k) + (P @ alpha.conj().T) / d_k
    patch_side = D_prev.patch_side if isinstance(D_prev, Dictionary) else int(round(np.sqrt(D.shape[0])))
    return Dictionary(polar_factor(D_hat, workspace, iteration), patch_side)


def hard_threshold(M: np.ndarray, thresh: float, mode: str = "isotropic") -> CoeffMatrix:
    """
    Keep entries with |M(s,t)| >= thresh, zero the rest. The anisotropic rule
    thresholds real and imaginary parts separately.
    """
    if thresh < 0:
        raise ValueError(f"Threshold must be nonnegative, got {thresh}")
    M = np.asarray(M, dtype=complex)
    if mode == "isotropic":
        return CoeffMatrix(np.where(np.abs(M) >= thresh, M, 0))
    if mode == "anisotropic":
        real = np.where(np.abs(M.real) >= thresh, M.real, 0.0)
        imag = np.where(np.abs(M.imag) >= thresh, M.imag, 0.0)
        return CoeffMatrix(real + 1j * imag)
    raise ValueError(f"Unknown L0 mode {mode!r}; expected one of {L0_MODES}")


def l0_threshold(tau: float, step: float = 1.0, standard: bool = False) -> float:
    """Threshold for tau*||.||_0 with proximal weight `step`: tau/step as printed, sqrt(2 tau/step) for the exact prox."""
    return float(np.sqrt(2.0 * tau / step)) if standard else tau / step


def sparse_code_amm(D, P: np.ndarray, tau: float, mode: str = "isotropic", standard_prox: bool = False) -> CoeffMatrix:
    """alpha = Thresh_tau(D* P)."""
    D = unwrap(D)
    return hard_threshold(D.conj().T @ np.asarray(P), l0_threshold(tau, 1.0, standard_prox), mode)


def sparse_code_palm(
    alpha_prev,
    D,
    P: np.ndarray,
    tau: float,
    e_k: float,
    mode: str = "isotropic",
    standard_prox: bool = False,
) -> CoeffMatrix:
    """alpha = Thresh_{tau/e_k}((1 - 1/e_k) alpha_prev + (1/e_k) D* P)."""
    if e_k <= 0.5:
        raise ValueError(f"e_k must exceed 1/2, got {e_k}")
    D = unwrap(D)
    alpha_prev = unwrap(alpha_prev)
    alpha_hat = (1.0 - 1.0 / e_k) * alpha_prev + (D.conj().T @ np.asarray(P)) / e_k
    return hard_threshold(alpha_hat, l0_threshold(tau, e_k, standard_prox), mode)
