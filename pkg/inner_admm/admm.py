"""
ADMM for the u-subproblem: u-solves (block/CG, diagonal, proximal-linearized),
the Poisson proximal map, and the inner iteration loop.
"""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from core.model import (
    ConvergenceError,
    DomainError,
    ModelParams,
    SingularSystemError,
    kl_divergence,
    unwrap,
)
from patches.patch_ops import PatchConfig, adjoint_accumulate, coverage_weights, extract


INNER_VARIANTS = ("amm", "palm")
CG_RTOL = 1e-10
CG_MAXITER = 2000


@dataclass
class AdmmState:
    """Iterates of the splitting z = A u with multiplier Lambda."""
    u: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"ADMM penalty r must be positive, got {self.r}")
        if self.z.shape != self.lam.shape:
            raise ValueError(f"z {self.z.shape} and Lambda {self.lam.shape} must have the same shape")


@dataclass
class InnerResult:
    u: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    residuals: List[float] = field(default_factory=list)
    # u-subproblem objective at entry/exit; slack = max(0, exit - entry)
    start_value: float = float("nan")
    end_value: float = float("nan")

    @property
    def slack(self) -> float:
        if not (np.isfinite(self.start_value) and np.isfinite(self.end_value)):
            return 0.0
        return max(0.0, self.end_value - self.start_value)


def poisson_prox(w: np.ndarray, f: np.ndarray, eta: float, r: float) -> np.ndarray:
    """
    argmin_z eta*B(|z|^2, f) + r/2 ||z - w||^2, elementwise:

        z = (r|w| + sqrt(r^2|w|^2 + 4 eta (eta + r) f)) / (2 (eta + r)) * sign(w)

    with sign(0) := 1.
    """
    w = np.asarray(w, dtype=complex)
    f = np.asarray(f, dtype=float).reshape(w.shape)
    magnitude = np.abs(w)
    rho = (r * magnitude + np.sqrt((r * magnitude) ** 2 + 4.0 * eta * (eta + r) * f)) / (2.0 * (eta + r))
    phase = np.ones_like(w)
    nonzero = magnitude > 0
    phase[nonzero] = w[nonzero] / magnitude[nonzero]
    return rho * phase


def _solve_normal_system(A, r: float, weight: np.ndarray, rhs: np.ndarray, x0: Optional[np.ndarray], real_valued: bool) -> np.ndarray:
    """CG on (r A*A + diag(weight)) u = rhs, in the real/imaginary block form."""
    n = A.n
    shape = A.shape
    weight = np.broadcast_to(np.asarray(weight, dtype=float), shape)

    def normal(u):
        return r * A.adjoint(A.forward(u)) + weight * u

    if real_valued:
        def apply(x):
            return np.real(normal(x.reshape(shape))).ravel()

        operator = LinearOperator((n, n), matvec=apply, dtype=float)
        b = np.real(rhs).ravel()
        start = None if x0 is None else np.real(x0).ravel()
    else:
        def apply(x):
            out = normal((x[:n] + 1j * x[n:]).reshape(shape)).ravel()
            return np.concatenate([out.real, out.imag])

        operator = LinearOperator((2 * n, 2 * n), matvec=apply, dtype=float)
        b = np.concatenate([rhs.real.ravel(), rhs.imag.ravel()])
        start = None if x0 is None else np.concatenate([x0.real.ravel(), x0.imag.ravel()])

    if not np.any(b):
        return np.zeros(shape, dtype=complex)
    x, info = cg(operator, b, x0=start, rtol=CG_RTOL, atol=0.0, maxiter=CG_MAXITER)
    if info != 0:
        raise ConvergenceError(
            f"CG did not reach relative residual {CG_RTOL} in {CG_MAXITER} iterations; "
            f"r*A*A + W may be near-singular"
        )
    if real_valued:
        return x.reshape(shape).astype(complex)
    return (x[:n] + 1j * x[n:]).reshape(shape)


def solve_u_general(
    Y: np.ndarray,
    A,
    v: np.ndarray,
    r: float,
    cfg: PatchConfig,
    u0: Optional[np.ndarray] = None,
    real_valued: bool = False,
) -> np.ndarray:
    """
    Solve (r A*A + W) u = r A* v + sum_t R_t^T Y(t) for a general linear A.

    Raises:
        ConvergenceError: If CG does not converge within its cap
    """
    W = coverage_weights(cfg, A.shape)
    rhs = r * A.adjoint(v) + adjoint_accumulate(Y, cfg, A.shape)
    return _solve_normal_system(A, r, W, rhs, u0, real_valued)


def _diagonal_solve(numerator: np.ndarray, denominator: np.ndarray, real_valued: bool) -> np.ndarray:
    if np.any(denominator <= 0):
        j = int(np.flatnonzero(denominator.ravel() <= 0)[0])
        raise SingularSystemError(f"u-system is singular: diagonal entry {j} is {denominator.ravel()[j]}")
    u = numerator / denominator
    return u.real.astype(complex) if real_valued else u


def solve_u_diagonal(
    Y: np.ndarray,
    A,
    v: np.ndarray,
    r: float,
    cfg: Optional[PatchConfig] = None,
    real_valued: bool = False,
) -> np.ndarray:
    """
    u = (r A*A + W)^{-1} (r A* v + sum_t R_t^T Y(t)) for operators with diagonal A*A.

    Raises:
        SingularSystemError: If r*diag(A*A) + W has a zero entry
    """
    cfg = cfg or PatchConfig()
    numerator = r * A.adjoint(v) + adjoint_accumulate(Y, cfg, A.shape)
    denominator = r * A.normal_diag() + coverage_weights(cfg, A.shape)
    return _diagonal_solve(numerator, denominator, real_valued)


def solve_u_palm(
    Y: np.ndarray,
    A,
    v: np.ndarray,
    r: float,
    u_k: np.ndarray,
    c_k: float,
    W: np.ndarray,
    cfg: Optional[PatchConfig] = None,
    real_valued: bool = False,
) -> np.ndarray:
    """
    u = (r A*A + c_k I)^{-1} (r A* v + sum_t R_t^T Y(t) + (c_k I - W) u_k).

    Raises:
        ValueError: If c_k is not positive
        SingularSystemError: If r*diag(A*A) + c_k has a zero entry
    """
    if not c_k > 0:
        raise ValueError(f"c_k must be positive, got {c_k}")
    cfg = cfg or PatchConfig()
    rhs = r * A.adjoint(v) + adjoint_accumulate(Y, cfg, A.shape) + (c_k - W) * u_k
    if not A.has_diagonal_normal:
        return _solve_normal_system(A, r, np.full(A.shape, float(c_k)), rhs, u_k, real_valued)
    return _diagonal_solve(rhs, r * A.normal_diag() + c_k, real_valued)


def _fidelity(A, u: np.ndarray, f: np.ndarray, eta: float) -> float:
    try:
        return eta * kl_divergence(np.abs(A.forward(u)) ** 2, f)
    except DomainError:
        return float("inf")


def subproblem_value(
    u: np.ndarray,
    Y: np.ndarray,
    A,
    f: np.ndarray,
    eta: float,
    cfg: PatchConfig,
    variant: str = "amm",
    u_anchor: Optional[np.ndarray] = None,
    c_k: Optional[float] = None,
) -> float:
    """
    Objective the u-step minimizes.

    amm:  1/2 ||Y - R(u)||^2 + eta B(|Au|^2, f)
    palm: Re<grad_u H(u_anchor), u - u_anchor> + c_k/2 ||u - u_anchor||^2 + eta B(|Au|^2, f)
    """
    fidelity = _fidelity(A, u, f, eta)
    if variant == "amm":
        return 0.5 * float(np.sum(np.abs(Y - extract(u, cfg)) ** 2)) + fidelity
    W = coverage_weights(cfg, A.shape)
    grad = W * u_anchor - adjoint_accumulate(Y, cfg, A.shape)
    step = u - u_anchor
    return float(np.real(np.vdot(grad, step))) + 0.5 * c_k * float(np.sum(np.abs(step) ** 2)) + fidelity


def run_inner(
    Y: np.ndarray,
    A,
    f,
    params: ModelParams,
    u_init: np.ndarray,
    variant: str = "amm",
    cfg: Optional[PatchConfig] = None,
    c_k: Optional[float] = None,
    z_init: Optional[np.ndarray] = None,
    lam_init: Optional[np.ndarray] = None,
    real_valued: bool = False,
    tol: Optional[float] = None,
    iterations: Optional[int] = None,
) -> InnerResult:
    """
    ADMM iterations for the u-subproblem.

    Each iteration solves u with v = z + Lambda/r, sets z = poisson_prox(Au - Lambda/r),
    then Lambda += r (z - Au). z starts at A u_init and Lambda at 0 unless warm-start
    values are supplied. For variant="palm", u_init is also the linearization point u^k.

    Args:
        Y: Patch targets D alpha (l x d)
        tol: Optional early exit once ||z - Au|| <= tol (off by default)
        iterations: Overrides params.inner_iters

    Returns:
        InnerResult with final (u, z, Lambda), per-iteration ||z - Au|| and the
        u-subproblem objective at entry and exit
    """
    if variant not in INNER_VARIANTS:
        raise ValueError(f"Unknown inner variant {variant!r}; expected one of {INNER_VARIANTS}")
    cfg = cfg or PatchConfig()
    if variant == "palm" and c_k is None:
        c_k = params.c_k
    r, eta = params.r, params.eta
    f = unwrap(f).reshape(A.data_shape)
    u = np.asarray(u_init, dtype=complex)
    u_anchor = u.copy()
    z = A.forward(u) if z_init is None else np.array(z_init, dtype=complex).reshape(A.data_shape)
    lam = np.zeros(A.data_shape, dtype=complex) if lam_init is None else np.array(lam_init, dtype=complex).reshape(A.data_shape)
    W = coverage_weights(cfg, A.shape)

    result = InnerResult(u=u, z=z, lam=lam)
    result.start_value = subproblem_value(u, Y, A, f, eta, cfg, variant, u_anchor, c_k)

    for _ in range(params.inner_iters if iterations is None else iterations):
        v = z + lam / r
        if variant == "palm":
            u = solve_u_palm(Y, A, v, r, u_anchor, c_k, W, cfg, real_valued)
        elif A.has_diagonal_normal:
            u = solve_u_diagonal(Y, A, v, r, cfg, real_valued)
        else:
            u = solve_u_general(Y, A, v, r, cfg, u0=u, real_valued=real_valued)
        Au = A.forward(u)
        z = poisson_prox(Au - lam / r, f, eta, r)
        lam = lam + r * (z - Au)
        result.residuals.append(float(np.linalg.norm(z - Au)))
        if tol is not None and result.residuals[-1] <= tol:
            break

    result.u, result.z, result.lam = u, z, lam
    result.end_value = subproblem_value(u, Y, A, f, eta, cfg, variant, u_anchor, c_k)
    return result
