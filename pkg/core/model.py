"""
Domain types, error classes and the terms of the dictionary-regularized
Poisson phase retrieval objective.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from patches.patch_ops import PatchConfig, extract


L0_MODES = ("isotropic", "anisotropic")

# ||D*D - I||_F beyond this makes the indicator I_K infinite
ORTHO_TOL = 1e-8


class DomainError(ValueError):
    """Raised when log(h) is needed at h = 0 with a positive count."""


class SingularSystemError(ArithmeticError):
    """Raised when a diagonal u-system has a zero (or negative) entry."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative kernel hits its iteration cap."""


class SvdFailure(RuntimeError):
    """Raised when LAPACK cannot factor a dictionary update matrix."""


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class ComplexImage:
    """Complex image stored as a lexicographic (row-major) vector."""
    data: np.ndarray
    shape: Tuple[int, int]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex).ravel()
        n1, n2 = (int(s) for s in self.shape)
        if data.size != n1 * n2:
            raise ValueError(
                f"Image data has {data.size} entries but shape {n1}x{n2} needs {n1 * n2}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("Image data contains non-finite entries")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "shape", (n1, n2))

    @classmethod
    def from_array(cls, array: np.ndarray) -> "ComplexImage":
        array = np.asarray(array)
        if array.ndim != 2:
            raise ValueError(f"Expected a 2-D array, got {array.ndim} dimensions")
        return cls(array.ravel(), array.shape)

    @property
    def n(self) -> int:
        return self.shape[0] * self.shape[1]

    def as_array(self) -> np.ndarray:
        return self.data.reshape(self.shape)


@dataclass(frozen=True)
class MeasurementVector:
    """Nonnegative intensities (photon counts), length m."""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float).ravel()
        if not np.all(np.isfinite(data)):
            raise ValueError("Measurements contain non-finite entries")
        if np.any(data < 0):
            raise ValueError("Measurements must be nonnegative")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def m(self) -> int:
        return self.data.size


@dataclass(frozen=True)
class Dictionary:
    """Square complex dictionary whose columns are vectorized patch atoms."""
    matrix: np.ndarray
    patch_side: int

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=complex)
        l = int(self.patch_side) ** 2
        if matrix.ndim != 2 or matrix.shape[0] != l:
            raise ValueError(
                f"Dictionary must have {l} rows for patch side {self.patch_side}, got shape {matrix.shape}"
            )
        object.__setattr__(self, "matrix", _frozen(matrix))
        object.__setattr__(self, "patch_side", int(self.patch_side))

    @property
    def num_atoms(self) -> int:
        return self.matrix.shape[1]

    def orthogonality_error(self) -> float:
        return orthogonality_error(self.matrix)


@dataclass(frozen=True)
class CoeffMatrix:
    """Sparse coefficient matrix alpha (c x d)."""
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=complex)
        if matrix.ndim != 2:
            raise ValueError(f"Coefficient matrix must be 2-D, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("Coefficient matrix contains non-finite entries")
        object.__setattr__(self, "matrix", _frozen(matrix))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def sparsity(self) -> float:
        return sparsity_level(self.matrix)


@dataclass(frozen=True)
class ModelParams:
    """
    Model and solver weights.

    Args:
        tau: L0 weight (also the printed hard-threshold level)
        eta: Poisson fidelity weight
        r: ADMM penalty
        l0_mode: "isotropic" or "anisotropic"
        inner_iters: ADMM iterations per outer step
        outer_iters: outer iterations T
        c_k, d_k, e_k: PALM proximal steps for u, D, alpha
        l0_prox_standard: threshold at sqrt(2*tau) (exact L0 prox) instead of tau
        eta_pr: Fidelity weight of the unregularized PR baseline
        r_pr: ADMM penalty of the PR baseline; eta_pr/r_pr near 10 keeps it close
            to alternating projections
    """
    tau: float = 4.5e-4
    eta: float = 8.0e-6
    r: float = 1e-3
    l0_mode: str = "isotropic"
    inner_iters: int = 5
    outer_iters: int = 100
    c_k: float = 10.0
    d_k: float = 50.0
    e_k: float = 1.5
    l0_prox_standard: bool = False
    eta_pr: float = 1.0
    r_pr: float = 0.1

    def __post_init__(self):
        for name in ("tau", "eta", "r", "c_k", "d_k", "e_k", "eta_pr", "r_pr"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value}")
        if self.e_k <= 0.5:
            raise ValueError(f"e_k must exceed 1/2 for bounded PALM iterates, got {self.e_k}")
        if self.l0_mode not in L0_MODES:
            raise ValueError(f"l0_mode must be one of {L0_MODES}, got {self.l0_mode!r}")
        if self.inner_iters < 1:
            raise ValueError(f"inner_iters must be at least 1, got {self.inner_iters}")
        if self.outer_iters < 0:
            raise ValueError(f"outer_iters must be nonnegative, got {self.outer_iters}")


@dataclass
class TraceRecord:
    """One completed outer iteration."""
    iteration: int
    objective: float
    snr: float = float("nan")
    err_u: float = float("nan")
    err_D: float = float("nan")
    sparsity: float = float("nan")
    seconds: float = 0.0
    eps_inner: float = 0.0
    # PALM monitor fields; nan for other solvers
    lambda_plus: float = float("nan")
    decrease: float = float("nan")
    required_decrease: float = float("nan")
    subgrad_norm: float = float("nan")
    subgrad_bound: float = float("nan")


@dataclass
class SolverTrace:
    records: List[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError(
                f"Trace iterations must increase: {record.iteration} after {self.records[-1].iteration}"
            )
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(rec, name) for rec in self.records], dtype=float)


ArrayLike = Union[np.ndarray, ComplexImage, Dictionary, CoeffMatrix, MeasurementVector]


def unwrap(value: ArrayLike) -> np.ndarray:
    """Return the numpy payload of a domain type (images come back 2-D)."""
    if isinstance(value, ComplexImage):
        return value.as_array()
    if isinstance(value, (Dictionary, CoeffMatrix)):
        return value.matrix
    if isinstance(value, MeasurementVector):
        return value.data
    return np.asarray(value)


def orthogonality_error(matrix: np.ndarray) -> float:
    matrix = np.asarray(matrix)
    gram = matrix.conj().T @ matrix
    return float(np.linalg.norm(gram - np.eye(gram.shape[0]), "fro"))


def kl_divergence(h: Sequence[float], f: Sequence[float]) -> float:
    """
    Poisson fidelity B(h, f) = 1/2 * sum(h - f*log h), with 0*log 0 = 0.

    Raises:
        ValueError: If h and f differ in length or h has negative entries
        DomainError: If h(j) = 0 where f(j) > 0
    """
    h = np.asarray(h, dtype=float).ravel()
    f = np.asarray(f, dtype=float).ravel()
    if h.shape != f.shape:
        raise ValueError(f"Dimension mismatch: h has {h.size} entries, f has {f.size}")
    if np.any(h < 0):
        raise ValueError("h must be nonnegative")
    positive = f > 0
    if np.any(h[positive] == 0):
        j = int(np.flatnonzero(positive & (h == 0))[0])
        raise DomainError(f"log(h) undefined: h({j}) = 0 while f({j}) = {f[j]}")
    log_term = np.zeros_like(h)
    log_term[positive] = f[positive] * np.log(h[positive])
    return 0.5 * float(np.sum(h - log_term))


def l0_norm(alpha: ArrayLike, mode: str = "isotropic") -> int:
    """Count nonzero entries (isotropic) or nonzero real plus imaginary parts (anisotropic)."""
    alpha = unwrap(alpha)
    if mode == "isotropic":
        return int(np.count_nonzero(alpha))
    if mode == "anisotropic":
        return int(np.count_nonzero(np.real(alpha)) + np.count_nonzero(np.imag(alpha)))
    raise ValueError(f"Unknown L0 mode {mode!r}; expected one of {L0_MODES}")


def sparsity_level(alpha: ArrayLike) -> float:
    """Percentage of nonzero entries of alpha."""
    alpha = unwrap(alpha)
    if alpha.size == 0:
        return 0.0
    return 100.0 * l0_norm(alpha, "isotropic") / alpha.size


def objective(
    u: ArrayLike,
    D: ArrayLike,
    alpha: ArrayLike,
    A,
    f: ArrayLike,
    params: ModelParams,
    patch_cfg: Optional[PatchConfig] = None,
) -> float:
    """
    Evaluate 1/2||D alpha - R(u)||^2 + eta*B(|Au|^2, f) + I_K(D) + tau*||alpha||_0.

    Returns +inf when D is not orthogonal within ORTHO_TOL or when |Au|^2
    vanishes where a photon was counted.
    """
    patch_cfg = patch_cfg or PatchConfig()
    u = unwrap(u)
    D = unwrap(D)
    alpha = unwrap(alpha)
    f = unwrap(f)
    if u.shape != tuple(A.shape):
        raise ValueError(f"Image shape {u.shape} does not match operator shape {A.shape}")
    if f.size != A.m:
        raise ValueError(f"Measurement length {f.size} does not match operator m = {A.m}")
    patches = extract(u, patch_cfg)
    if D.shape[0] != patches.shape[0] or D.shape[1] != alpha.shape[0] or alpha.shape[1] != patches.shape[1]:
        raise ValueError(
            f"Shape mismatch: D {D.shape}, alpha {alpha.shape}, patches {patches.shape}"
        )
    if orthogonality_error(D) > ORTHO_TOL:
        return float("inf")

    fit = 0.5 * float(np.sum(np.abs(D @ alpha - patches) ** 2))
    try:
        fidelity = params.eta * kl_divergence(np.abs(A.forward(u)) ** 2, f)
    except DomainError:
        return float("inf")
    return fit + fidelity + params.tau * l0_norm(alpha, params.l0_mode)
