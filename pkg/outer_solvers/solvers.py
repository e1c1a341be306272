"""
Outer solvers: alternating minimization (AMM), proximal alternating
linearized minimization (PALM), and the unregularized ADMM phase retrieval
baseline used to initialize both.
"""
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from core.model import (
    CoeffMatrix,
    ConvergenceError,
    DomainError,
    Dictionary,
    ModelParams,
    SingularSystemError,
    SolverTrace,
    TraceRecord,
    kl_divergence,
    objective,
    orthogonality_error,
    unwrap,
)
from inner_admm.admm import _solve_normal_system, poisson_prox, run_inner
from measurement.operators import make_rng
from metrics.metrics import snr, successive_errors
from patches.patch_ops import PatchConfig, adjoint_accumulate, coverage_weights, extract
from sparse.dictionary import (
    SvdWorkspace,
    init_dct_dictionary,
    sparse_code_amm,
    sparse_code_palm,
    update_dictionary_amm,
    update_dictionary_palm,
)


ALGORITHMS = ("amm", "palm", "pr_baseline")
INIT_MODES = ("zeros", "adjoint_spectral", "from_baseline")
POWER_ITERS = 1000
POWER_TOL = 1e-12
# Relative slack on monitored descent checks
MONITOR_RTOL = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    """
    Outer solver settings.

    Args:
        algorithm: "amm", "palm" or "pr_baseline"
        params: Model weights and iteration counts
        init_u: "zeros", "adjoint_spectral" or "from_baseline"
        trace_every: Record every n-th outer iteration (the last one always)
        seed: Seed for spectral-init and power-iteration start vectors
        patch: Patch size and stride
        baseline_iters: ADMM iterations of the PR baseline
        spectral_iters: Power iterations of the spectral initializer
        warm_start: Carry (z, Lambda) across PALM outer iterations
        truncated_warmup: Truncated-SVD dictionary updates in the first iterations
        real_valued: Restrict u to real images
        monitor: Compute PALM Lipschitz/decrease/subgradient diagnostics
        timing: Fill the trace `seconds` column with wall time
        verbose: Print one line per traced iteration
    """
    algorithm: str = "amm"
    params: ModelParams = field(default_factory=ModelParams)
    init_u: str = "from_baseline"
    trace_every: int = 1
    seed: int = 0
    patch: PatchConfig = field(default_factory=PatchConfig)
    baseline_iters: int = 100
    spectral_iters: int = 50
    warm_start: bool = True
    truncated_warmup: bool = False
    real_valued: bool = False
    monitor: bool = True
    timing: bool = False
    verbose: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.init_u not in INIT_MODES:
            raise ValueError(f"init_u must be one of {INIT_MODES}, got {self.init_u!r}")
        if self.trace_every < 1:
            raise ValueError(f"trace_every must be at least 1, got {self.trace_every}")
        if self.baseline_iters < 0 or self.spectral_iters < 1:
            raise ValueError("baseline_iters must be >= 0 and spectral_iters >= 1")


@dataclass
class SolverResult:
    u: np.ndarray
    D: Optional[Dictionary]
    alpha: Optional[CoeffMatrix]
    trace: SolverTrace
    # Image the outer loop started from
    u_init: Optional[np.ndarray] = None

    def __iter__(self):
        return iter((self.u, self.D, self.alpha, self.trace))


def grad_H(u, D, alpha, cfg: Optional[PatchConfig] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of H(u, D, alpha) = 1/2 ||D alpha - R(u)||^2.

    Returns:
        (W*u - R^T(D alpha), (D alpha - R(u)) alpha*, D*(D alpha - R(u)))

    Raises:
        ValueError: On inconsistent shapes
    """
    cfg = cfg or PatchConfig()
    u = np.asarray(unwrap(u), dtype=complex)
    D = np.asarray(unwrap(D))
    alpha = np.asarray(unwrap(alpha))
    patches = extract(u, cfg)
    if D.shape[0] != patches.shape[0] or D.shape[1] != alpha.shape[0] or alpha.shape[1] != patches.shape[1]:
        raise ValueError(f"Shape mismatch: D {D.shape}, alpha {alpha.shape}, patches {patches.shape}")
    Y = D @ alpha
    residual = Y - patches
    grad_u = coverage_weights(cfg, u.shape) * u - adjoint_accumulate(Y, cfg, u.shape)
    return grad_u, residual @ alpha.conj().T, D.conj().T @ residual


def _power_iteration(apply, dim: int, power_iters: int, seed: int, tol: float) -> float:
    """Largest eigenvalue of a Hermitian PSD operator."""
    rng = make_rng(seed)
    x = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(power_iters):
        y = apply(x)
        value = float(np.linalg.norm(y))
        if value == 0.0:
            return 0.0
        if abs(value - estimate) <= tol * value:
            return value
        estimate = value
        x = y / value
    raise ConvergenceError(f"Power iteration did not reach relative tolerance {tol} in {power_iters} iterations")


def estimate_lipschitz(
    u,
    D,
    alpha,
    power_iters: int = POWER_ITERS,
    cfg: Optional[PatchConfig] = None,
    seed: int = 0,
    tol: float = POWER_TOL,
) -> Tuple[float, float, float]:
    """
    Blockwise Lipschitz moduli of grad H.

    Args:
        u: Image, or its shape
        power_iters: Maximum power iterations for ||alpha alpha*||

    Returns:
        (max W, ||alpha alpha*||_2, ||D*D||_2), the last exactly 1 for orthogonal D

    Raises:
        ValueError: If power_iters < 1
        ConvergenceError: If the power iteration does not converge
    """
    if power_iters < 1:
        raise ValueError(f"power_iters must be at least 1, got {power_iters}")
    cfg = cfg or PatchConfig()
    shape = tuple(u) if isinstance(u, tuple) else np.shape(unwrap(u))
    lam_u = float(coverage_weights(cfg, shape).max())

    alpha = np.asarray(unwrap(alpha))
    if not np.any(alpha):
        lam_D = 0.0
    else:
        gram = alpha @ alpha.conj().T
        lam_D = _power_iteration(lambda x: gram @ x, gram.shape[0], power_iters, seed, tol)

    D = np.asarray(unwrap(D))
    if orthogonality_error(D) <= 1e-10:
        lam_alpha = 1.0
    else:
        lam_alpha = float(np.linalg.norm(D.conj().T @ D, 2))
    return lam_u, lam_D, lam_alpha


def spectral_init(f, A, iterations: int = 50, seed: int = 0, real_valued: bool = False) -> np.ndarray:
    """
    Leading eigenvector of A* diag(f) A, scaled so that ||Au||^2 = sum(f).
    """
    f = unwrap(f).reshape(A.data_shape)
    total = float(np.sum(f))
    if total <= 0:
        return np.zeros(A.shape, dtype=complex)
    rng = make_rng(seed)
    x = rng.standard_normal(A.shape) + 1j * rng.standard_normal(A.shape)
    for _ in range(iterations):
        x = A.adjoint(f * A.forward(x))
        norm = np.linalg.norm(x)
        if norm == 0:
            return np.zeros(A.shape, dtype=complex)
        x /= norm
    if real_valued:
        s = np.sum(x)
        if abs(s) > 0:
            x = x * (np.conj(s) / abs(s))
        x = x.real.astype(complex)
    energy = float(np.sum(np.abs(A.forward(x)) ** 2))
    if energy == 0:
        return np.zeros(A.shape, dtype=complex)
    return x * np.sqrt(total / energy)


def _pr_objective(A, u, f, eta: float) -> float:
    try:
        return eta * kl_divergence(np.abs(A.forward(u)) ** 2, f)
    except DomainError:
        return float("inf")


def _snr_or_nan(u, truth) -> float:
    if truth is None:
        return float("nan")
    try:
        return snr(u, truth).snr_db
    except ValueError:
        return float("nan")


def _successive_or_nan(u_new, u_old, D_new, D_old) -> Tuple[float, float]:
    try:
        return successive_errors(u_new, u_old, D_new, D_old)
    except ValueError:
        return float("nan"), float("nan")


def _should_trace(k: int, total: int, every: int) -> bool:
    return (k + 1) % every == 0 or k + 1 == total


def _progress(cfg: SolverConfig, record: TraceRecord, total: int) -> None:
    if cfg.verbose:
        print(
            f"   iter {record.iteration}/{total}: objective={record.objective:.6e} "
            f"snr={record.snr:.2f} dB sparsity={record.sparsity:.2f}%"
        )


def run_pr_baseline(
    f,
    A,
    cfg: Optional[SolverConfig] = None,
    truth=None,
    u_init: Optional[np.ndarray] = None,
) -> SolverResult:
    """
    ADMM for min_u eta_pr*B(|Au|^2, f) with z = Au:
    u = (A*A)^{-1} A* v, z = poisson_prox(Au - Lambda/r_pr), Lambda += r_pr (z - Au).

    Uses params.eta_pr and params.r_pr, not the regularized model weights.

    Args:
        f: Nonnegative photon counts
        A: Measurement operator
        cfg: Solver settings; baseline_iters sets the iteration count
        truth: Optional ground truth (same units as u) for the SNR column
        u_init: Start image; otherwise the spectral initializer (zeros for init_u="zeros")

    Returns:
        SolverResult with D and alpha set to None

    Raises:
        ValueError: If f has negative entries
        SingularSystemError: If diag(A*A) has a zero entry
    """
    cfg = cfg or SolverConfig(algorithm="pr_baseline")
    params = cfg.params
    f = unwrap(f).reshape(A.data_shape)
    if np.any(f < 0):
        raise ValueError("Photon counts f must be nonnegative")
    if u_init is not None:
        u = np.array(u_init, dtype=complex)
    elif cfg.init_u == "zeros":
        u = np.zeros(A.shape, dtype=complex)
    else:
        u = spectral_init(f, A, cfg.spectral_iters, cfg.seed, cfg.real_valued)
    start = u.copy()

    r, eta = params.r_pr, params.eta_pr
    if A.has_diagonal_normal:
        diag = A.normal_diag()
        if np.any(diag <= 0):
            j = int(np.flatnonzero(diag.ravel() <= 0)[0])
            raise SingularSystemError(f"A*A has a zero diagonal entry at pixel {j}")
    z = A.forward(u)
    lam = np.zeros(A.data_shape, dtype=complex)
    trace = SolverTrace()
    t0 = time.perf_counter()
    total = cfg.baseline_iters

    for k in range(total):
        v = z + lam / r
        if A.has_diagonal_normal:
            u = A.adjoint(v) / diag
            if cfg.real_valued:
                u = u.real.astype(complex)
        else:
            u = _solve_normal_system(A, 1.0, np.zeros(A.shape), A.adjoint(v), u, cfg.real_valued)
        Au = A.forward(u)
        z = poisson_prox(Au - lam / r, f, eta, r)
        lam = lam + r * (z - Au)

        if _should_trace(k, total, cfg.trace_every):
            record = TraceRecord(
                iteration=k + 1,
                objective=_pr_objective(A, u, f, eta),
                snr=_snr_or_nan(u, truth),
                seconds=time.perf_counter() - t0 if cfg.timing else 0.0,
            )
            trace.append(record)
            _progress(cfg, record, total)

    return SolverResult(u=u, D=None, alpha=None, trace=trace, u_init=start)


def _initial_image(f, A, cfg: SolverConfig, u_init: Optional[np.ndarray]) -> np.ndarray:
    if u_init is not None:
        return np.array(u_init, dtype=complex)
    if cfg.init_u == "zeros":
        return np.zeros(A.shape, dtype=complex)
    if cfg.init_u == "adjoint_spectral":
        return spectral_init(f, A, cfg.spectral_iters, cfg.seed, cfg.real_valued)
    return run_pr_baseline(f, A, cfg).u


def _warn_once(issued: set, kind: str, message: str) -> None:
    if kind not in issued:
        issued.add(kind)
        warnings.warn(message, RuntimeWarning, stacklevel=3)


def run_amm(
    f,
    A,
    cfg: Optional[SolverConfig] = None,
    truth=None,
    u_init: Optional[np.ndarray] = None,
) -> SolverResult:
    """
    Alternating minimization: for k = 0..T-1,
    u^{k+1} from the inner ADMM with Y = D^k alpha^k,
    D^{k+1} = polar factor of R(u^{k+1}) alpha^k*,
    alpha^{k+1} = Thresh(D^{k+1}* R(u^{k+1})).

    The objective may rise by at most the inner-solve slack per step when
    the exact L0 prox is used; larger rises emit one RuntimeWarning.
    """
    cfg = cfg or SolverConfig(algorithm="amm")
    params = cfg.params
    pc = cfg.patch
    f = unwrap(f).reshape(A.data_shape)
    if np.any(f < 0):
        raise ValueError("Photon counts f must be nonnegative")

    u = _initial_image(f, A, cfg, u_init)
    start = u.copy()
    D = init_dct_dictionary(pc.patch_side)
    alpha = sparse_code_amm(D, extract(u, pc), params.tau, params.l0_mode, params.l0_prox_standard)
    workspace = SvdWorkspace(truncate=cfg.truncated_warmup)
    trace = SolverTrace()
    issued: set = set()
    previous_value = objective(u, D, alpha, A, f, params, pc)
    t0 = time.perf_counter()
    total = params.outer_iters

    for k in range(total):
        inner = run_inner(D.matrix @ alpha.matrix, A, f, params, u, "amm", pc, real_valued=cfg.real_valued)
        u_new = inner.u
        P = extract(u_new, pc)
        D_new = update_dictionary_amm(P, alpha, previous=D, workspace=workspace, iteration=k)
        alpha_new = sparse_code_amm(D_new, P, params.tau, params.l0_mode, params.l0_prox_standard)
        value = objective(u_new, D_new, alpha_new, A, f, params, pc)

        if params.l0_prox_standard and np.isfinite(previous_value):
            allowed = previous_value + inner.slack + MONITOR_RTOL * max(1.0, abs(previous_value))
            if value > allowed:
                _warn_once(
                    issued,
                    "amm_descent",
                    f"AMM objective rose from {previous_value:.6e} to {value:.6e} at iteration {k + 1}, "
                    f"beyond the inner-solve slack {inner.slack:.3e}",
                )

        if _should_trace(k, total, cfg.trace_every):
            err_u, err_D = _successive_or_nan(u_new, u, D_new, D)
            record = TraceRecord(
                iteration=k + 1,
                objective=value,
                snr=_snr_or_nan(u_new, truth),
                err_u=err_u,
                err_D=err_D,
                sparsity=alpha_new.sparsity(),
                seconds=time.perf_counter() - t0 if cfg.timing else 0.0,
                eps_inner=inner.slack,
            )
            trace.append(record)
            _progress(cfg, record, total)

        u, D, alpha, previous_value = u_new, D_new, alpha_new, value

    return SolverResult(u=u, D=D, alpha=alpha, trace=trace, u_init=start)


def _monitor_moduli(shape, D: Dictionary, alpha: CoeffMatrix, pc: PatchConfig, seed: int) -> Tuple[float, float, float]:
    try:
        return estimate_lipschitz(shape, D, alpha, cfg=pc, seed=seed)
    except ConvergenceError:
        # Clustered top eigenvalues; the Gram matrix is only c x c
        lam_u, _, lam_alpha = estimate_lipschitz(shape, D, np.zeros_like(alpha.matrix), cfg=pc)
        gram = alpha.matrix @ alpha.matrix.conj().T
        return lam_u, float(np.linalg.eigvalsh(gram).max()), lam_alpha


def _gradient_norm(*arrays) -> float:
    return float(np.sqrt(sum(np.sum(np.abs(a) ** 2) for a in arrays)))


def run_palm(
    f,
    A,
    cfg: Optional[SolverConfig] = None,
    truth=None,
    u_init: Optional[np.ndarray] = None,
) -> SolverResult:
    """
    Proximal alternating linearized minimization with fixed steps (c_k, d_k, e_k).

    Each outer step runs the inner ADMM on the linearized u-problem around u^k,
    then the proximal dictionary step and the proximal hard-thresholding step.
    With cfg.monitor on, every traced record carries lambda_plus, the measured
    and required decrease, and the subgradient residual with its bound.
    A RuntimeWarning is emitted once when a step size does not exceed its
    measured modulus, and once when the sufficient-decrease check fails.
    """
    cfg = cfg or SolverConfig(algorithm="palm")
    params = cfg.params
    pc = cfg.patch
    c_k, d_k, e_k = params.c_k, params.d_k, params.e_k
    f = unwrap(f).reshape(A.data_shape)
    if np.any(f < 0):
        raise ValueError("Photon counts f must be nonnegative")

    u = _initial_image(f, A, cfg, u_init)
    start = u.copy()
    D = init_dct_dictionary(pc.patch_side)
    alpha = sparse_code_amm(D, extract(u, pc), params.tau, params.l0_mode, params.l0_prox_standard)
    workspace = SvdWorkspace(truncate=cfg.truncated_warmup)
    trace = SolverTrace()
    issued: set = set()
    z = lam = None
    previous_value = objective(u, D, alpha, A, f, params, pc)
    t0 = time.perf_counter()
    total = params.outer_iters

    for k in range(total):
        inner = run_inner(
            D.matrix @ alpha.matrix, A, f, params, u, "palm", pc, c_k=c_k,
            z_init=z if cfg.warm_start else None,
            lam_init=lam if cfg.warm_start else None,
            real_valued=cfg.real_valued,
        )
        if cfg.warm_start:
            z, lam = inner.z, inner.lam
        u_new = inner.u
        P = extract(u_new, pc)
        D_new = update_dictionary_palm(D, P, alpha, d_k, workspace=workspace, iteration=k)
        alpha_new = sparse_code_palm(alpha, D_new, P, params.tau, e_k, params.l0_mode, params.l0_prox_standard)
        value = objective(u_new, D_new, alpha_new, A, f, params, pc)

        monitor = {}
        if cfg.monitor:
            lam_u, lam_D, lam_alpha = _monitor_moduli(A.shape, D_new, alpha, pc, cfg.seed)
            lambda_plus = min(c_k - lam_u, d_k - lam_D, e_k - lam_alpha)
            du = u_new - u
            dD = D_new.matrix - D.matrix
            da = alpha_new.matrix - alpha.matrix
            step_norm = _gradient_norm(du, dD, da)
            decrease = previous_value - value if np.isfinite(previous_value) else float("nan")
            required = 0.5 * lambda_plus * step_norm ** 2

            # Subgradient residual at Z^{k+1}
            gu_new, gD_new, ga_new = grad_H(u_new, D_new, alpha_new, pc)
            gu_old, _, _ = grad_H(u, D, alpha, pc)
            _, gD_mid, _ = grad_H(u_new, D, alpha, pc)
            _, _, ga_mid = grad_H(u_new, D_new, alpha, pc)
            diffs = (gu_new - gu_old, gD_new - gD_mid, ga_new - ga_mid)
            A_u = -c_k * du + diffs[0]
            A_D = -d_k * dD + diffs[1]
            A_a = -e_k * da + diffs[2]
            subgrad = _gradient_norm(A_u, A_D, A_a)
            gradient_gap = sum(_gradient_norm(d) for d in diffs)
            lam_tilde = max(c_k, d_k, e_k, lam_D, lam_alpha)
            m_hat = gradient_gap / step_norm if step_norm > 0 else 0.0
            bound = (3.0 * lam_tilde + m_hat) * step_norm

            if lambda_plus <= 0:
                _warn_once(
                    issued,
                    "palm_steps",
                    f"PALM step sizes (c={c_k}, d={d_k}, e={e_k}) do not exceed the measured moduli "
                    f"(L_u={lam_u:.4g}, L_D={lam_D:.4g}, L_alpha={lam_alpha:.4g}) at iteration {k + 1}",
                )
            elif np.isfinite(decrease):
                tolerance = inner.slack + MONITOR_RTOL * max(1.0, abs(previous_value))
                if decrease < required - tolerance:
                    _warn_once(
                        issued,
                        "palm_decrease",
                        f"PALM sufficient decrease failed at iteration {k + 1}: "
                        f"decrease {decrease:.6e} < required {required:.6e}",
                    )
            monitor = dict(
                lambda_plus=lambda_plus,
                decrease=decrease,
                required_decrease=required,
                subgrad_norm=subgrad,
                subgrad_bound=bound,
            )

        if _should_trace(k, total, cfg.trace_every):
            err_u, err_D = _successive_or_nan(u_new, u, D_new, D)
            record = TraceRecord(
                iteration=k + 1,
                objective=value,
                snr=_snr_or_nan(u_new, truth),
                err_u=err_u,
                err_D=err_D,
                sparsity=alpha_new.sparsity(),
                seconds=time.perf_counter() - t0 if cfg.timing else 0.0,
                eps_inner=inner.slack,
                **monitor,
            )
            trace.append(record)
            _progress(cfg, record, total)

        u, D, alpha, previous_value = u_new, D_new, alpha_new, value

    return SolverResult(u=u, D=D, alpha=alpha, trace=trace, u_init=start)


def run_solver(f, A, cfg: SolverConfig, truth=None, u_init: Optional[np.ndarray] = None) -> SolverResult:
    """Dispatch on cfg.algorithm."""
    runners = {"amm": run_amm, "palm": run_palm, "pr_baseline": run_pr_baseline}
    return runners[cfg.algorithm](f, A, cfg, truth=truth, u_init=u_init)
