"""
Reconstruction quality and convergence metrics, and trace CSV emission.
"""
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Tuple, Union

import numpy as np

from core.model import SolverTrace, TraceRecord, unwrap


SNR_CAP_DB = 300.0
SNR_DENOMINATORS = ("estimate", "truth")
TRACE_COLUMNS = ("iter", "objective", "snr", "err_u", "err_D", "sparsity", "seconds")
_COLUMN_FIELDS = {"iter": "iteration"}


@dataclass(frozen=True)
class SnrReport:
    snr_db: float
    phase: complex

    def __post_init__(self):
        if abs(abs(self.phase) - 1.0) > 1e-12:
            raise ValueError(f"Aligning phase must have unit modulus, got |phase| = {abs(self.phase)}")


def snr(u_hat, u_true, denominator: str = "estimate") -> SnrReport:
    """
    Phase-aligned SNR: -20 log10(||s*u_hat - u_true|| / ||u_hat||) at the best
    unit-modulus s, s = <u_hat, u_true>/|<u_hat, u_true>|. denominator="truth"
    divides by ||u_true|| instead. Exact matches report SNR_CAP_DB.

    Raises:
        ValueError: On shape mismatch or a zero estimate
    """
    if denominator not in SNR_DENOMINATORS:
        raise ValueError(f"denominator must be one of {SNR_DENOMINATORS}, got {denominator!r}")
    u_hat = np.asarray(unwrap(u_hat), dtype=complex)
    u_true = np.asarray(unwrap(u_true), dtype=complex)
    if u_hat.shape != u_true.shape:
        raise ValueError(f"Shape mismatch: estimate {u_hat.shape}, truth {u_true.shape}")
    norm_hat = np.linalg.norm(u_hat)
    if norm_hat == 0:
        raise ValueError("SNR undefined for a zero estimate")

    inner = np.vdot(u_hat, u_true)
    phase = inner / abs(inner) if abs(inner) > 0 else 1.0 + 0j
    error = np.linalg.norm(phase * u_hat - u_true)
    scale = norm_hat if denominator == "estimate" else np.linalg.norm(u_true)
    if error == 0 or scale == 0:
        return SnrReport(SNR_CAP_DB, complex(phase))
    value = -20.0 * np.log10(error / scale)
    return SnrReport(float(min(value, SNR_CAP_DB)), complex(phase))


def successive_errors(u_k, u_prev, D_k, D_prev) -> Tuple[float, float]:
    """Relative successive changes ||u^k - u^{k-1}|| / ||u^k|| and the same for D."""
    errors = []
    for current, previous, name in ((u_k, u_prev, "u"), (D_k, D_prev, "D")):
        current = np.asarray(unwrap(current))
        norm = np.linalg.norm(current)
        if norm == 0:
            raise ValueError(f"Successive error undefined: current {name} iterate is zero")
        errors.append(float(np.linalg.norm(current - np.asarray(unwrap(previous))) / norm))
    return errors[0], errors[1]


def _format(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def assemble_trace(
    records: Iterable[Union[TraceRecord, dict]],
    csv_path: Optional[Union[str, Path]] = None,
) -> SolverTrace:
    """
    Collect records into a SolverTrace and optionally write its CSV.

    Dict records without an "iteration" key are numbered after the previous
    record. Floats are written with repr() so parsing back is exact.
    """
    trace = SolverTrace()
    for record in records:
        if isinstance(record, dict):
            values = dict(record)
            if "iteration" not in values:
                values["iteration"] = trace.records[-1].iteration + 1 if trace.records else 1
            record = TraceRecord(**values)
        trace.append(record)

    if csv_path is not None:
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for rec in trace.records:
                writer.writerow([_format(getattr(rec, _COLUMN_FIELDS.get(col, col))) for col in TRACE_COLUMNS])
    return trace


def read_trace_csv(csv_path: Union[str, Path]) -> SolverTrace:
    """Parse a CSV written by assemble_trace."""
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise FileNotFoundError(f"Trace CSV not found: {csv_path}")
    with open(csv_path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != TRACE_COLUMNS:
            raise ValueError(f"{csv_path}: unexpected header {header}")
        records = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(TRACE_COLUMNS):
                raise ValueError(f"{csv_path}:{line_no}: expected {len(TRACE_COLUMNS)} columns, got {len(row)}")
            values = {_COLUMN_FIELDS.get(col, col): float(cell) for col, cell in zip(TRACE_COLUMNS, row)}
            values["iteration"] = int(values["iteration"])
            records.append(TraceRecord(**values))
    return assemble_trace(records)
