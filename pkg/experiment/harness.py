"""
Sweep harness: simulate measurements, run solvers per cell, write artifacts,
summary tables and the run manifest, resume interrupted sweeps.
"""
import csv
import os
import re
import warnings
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.model import ComplexImage, MeasurementVector, sparsity_level
from experiment.config import ExperimentSpec
from measurement.operators import (
    CdpOperator,
    MeasurementOperator,
    NoiseSpec,
    PtychoOperator,
    generate_illumination,
    generate_octanary_masks,
    sample_poisson,
)
from metrics.metrics import assemble_trace, snr
from outer_solvers.solvers import SolverConfig, run_solver
from patches.patch_ops import PatchConfig
from utils.containers import MASK_MAGIC, read_container, write_container
from utils.image_io import load_image, save_dictionary, save_reconstruction
from utils.processing_state import (
    cell_id as make_cell_id,
    create_initial_state,
    is_cell_done,
    load_sweep_state,
    save_sweep_state,
    update_sweep_state,
    write_manifest,
)


SOLVER_NAMES = {"pr": "pr_baseline", "amm": "amm", "palm": "palm", "amm_aniso": "amm", "palm_aniso": "palm"}
SUMMARY_COLUMNS = (
    "cell", "image", "pattern", "delta", "algorithm", "slide_dist", "seed", "eta", "tau",
    "snr_db", "sparsity", "sparsity_re", "sparsity_im", "iterations", "status",
)


@dataclass(frozen=True)
class Cell:
    image: str
    delta: float
    algorithm: str
    seed: int
    slide_dist: Optional[int] = None
    eta_scale: float = 1.0
    tau_scale: float = 1.0

    @property
    def image_tag(self) -> str:
        stem = self.image.split("+", 1)[0]
        if not stem.startswith("phantom:"):
            stem = Path(stem).stem
        return re.sub(r"[^\w-]+", "-", stem).strip("-")

    @property
    def cell_id(self) -> str:
        tag = self.image_tag if self.slide_dist is None else f"{self.image_tag}_sd{self.slide_dist}"
        algorithm = self.algorithm
        if self.eta_scale != 1.0 or self.tau_scale != 1.0:
            algorithm = f"{algorithm}_e{self.eta_scale:g}_t{self.tau_scale:g}"
        return make_cell_id(tag, self.delta, algorithm, self.seed)


def sweep_cells(spec: ExperimentSpec) -> List[Cell]:
    """All cells of a spec in a fixed order."""
    slide_dists = spec.slide_dists if spec.pattern == "ptycho" else (None,)
    return [
        Cell(image, delta, algorithm, seed, slide, eta_scale, tau_scale)
        for image in spec.images
        for slide in slide_dists
        for delta in spec.deltas
        for seed in spec.seeds
        for algorithm in spec.algorithms
        for eta_scale in spec.eta_scales
        for tau_scale in spec.tau_scales
    ]


def _mask_seed(seed: int) -> int:
    return 2 * seed


def _noise_seed(seed: int) -> int:
    return 2 * seed + 1


def build_operator(spec: ExperimentSpec, shape: Tuple[int, int], seed: int, slide_dist: Optional[int] = None) -> MeasurementOperator:
    """
    CDP masks come from `spec.masks` (a CPRM of K stacked n1 x n2 masks) or are
    drawn with seed 2*seed; the ptycho illumination is synthetic or read from a CPRM.
    """
    if spec.pattern == "cdp":
        if spec.masks:
            stacked = read_container(spec.masks, MASK_MAGIC)
            if stacked.shape[1] != shape[1] or stacked.shape[0] % shape[0]:
                raise ValueError(f"{spec.masks}: mask stack {stacked.shape} does not fit image shape {shape}")
            masks = stacked.reshape(-1, shape[0], shape[1])
        else:
            masks = generate_octanary_masks(shape, spec.K, _mask_seed(seed))
        return CdpOperator(masks, spec.fft_normalization)

    if spec.illumination == "zoneplate_synthetic":
        illumination = generate_illumination(spec.frame_side)
    else:
        illumination = generate_illumination(spec.frame_side, "from_file", spec.illumination)
    return PtychoOperator(illumination, shape, slide_dist or spec.slide_dists[0], spec.fft_normalization)


def simulate_measurements(spec: ExperimentSpec, cell: Cell) -> Tuple[ComplexImage, MeasurementOperator, MeasurementVector]:
    """
    Load the cell's image and draw Poisson counts of |A(delta*u)|^2 with seed 2*seed + 1.

    Returns:
        (ground truth u, operator, counts f)
    """
    truth = load_image(cell.image, crop=spec.crop)
    A = build_operator(spec, truth.shape, cell.seed, cell.slide_dist)
    f = sample_poisson(A, truth.as_array(), NoiseSpec(peak=cell.delta, rng_seed=_noise_seed(cell.seed)))
    return truth, A, f


def solver_config(spec: ExperimentSpec, cell: Cell) -> SolverConfig:
    return SolverConfig(
        algorithm=SOLVER_NAMES[cell.algorithm],
        params=spec.params_for(cell.delta, cell.algorithm, cell.eta_scale, cell.tau_scale),
        init_u=spec.init_u,
        trace_every=spec.trace_every,
        seed=cell.seed,
        patch=PatchConfig(spec.patch_side, spec.stride),
        baseline_iters=spec.baseline_iters,
        warm_start=spec.warm_start,
        truncated_warmup=spec.truncated_warmup,
        real_valued=spec.real_valued,
        monitor=spec.monitor,
        timing=spec.timing,
    )


def run_cell(spec: ExperimentSpec, cell: Cell, out_dir: Path) -> Dict:
    """
    Run one sweep cell and write its artifacts under out_dir/<cell id>/.

    Returns:
        Result dictionary (snr_db, sparsities, iterations, files relative to out_dir, warnings)

    Raises:
        Whatever simulation or the solver raises; the sweep loop records it
    """
    out_dir = Path(out_dir)
    cell_dir = out_dir / cell.cell_id

    print(f"🔬 Step 1: Simulating measurements (delta={cell.delta:g}, seed={cell.seed})...")
    truth, A, f = simulate_measurements(spec, cell)
    print(f"✅ {A.m} measurements for a {truth.shape[0]}x{truth.shape[1]} image ({f.data.sum():.0f} photons)")

    cfg = solver_config(spec, cell)
    print(f"🧮 Step 2: Running {cell.algorithm}...")
    scaled_truth = cell.delta * truth.as_array()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = run_solver(f, A, cfg, truth=scaled_truth)
    messages = [str(w.message) for w in caught]
    for message in messages:
        print(f"⚠️  {message}")

    print("📁 Step 3: Writing artifacts...")
    trace_path = cell_dir / "trace.csv"
    assemble_trace(result.trace.records, trace_path)
    files = [str(trace_path)] + save_reconstruction(cell_dir, "recon", result.u)
    alpha = None
    if result.D is not None:
        files += save_dictionary(cell_dir, "dictionary", result.D)
        alpha = result.alpha.matrix

    report = snr(result.u, scaled_truth, denominator=spec.snr_denominator)
    params = cfg.params
    outcome = {
        "snr_db": report.snr_db,
        "sparsity": sparsity_level(alpha) if alpha is not None else float("nan"),
        "sparsity_re": sparsity_level(alpha.real) if alpha is not None else float("nan"),
        "sparsity_im": sparsity_level(alpha.imag) if alpha is not None else float("nan"),
        "iterations": len(result.trace),
        "eta": params.eta,
        "tau": params.tau,
        "files": sorted(Path(p).relative_to(out_dir).as_posix() for p in files),
        "warnings": messages,
    }
    print(f"✅ SNR = {report.snr_db:.2f} dB")
    return outcome


def _cell_job(spec: ExperimentSpec, cell: Cell, out_dir: Path) -> Tuple[str, Dict]:
    """Pool entry point; failures come back as values so one bad cell can't stop the pool."""
    try:
        return "success", run_cell(spec, cell, out_dir)
    except Exception as e:
        return "failed", {"error": f"{type(e).__name__}: {e}"}


def resolve_workers(spec: ExperimentSpec, workers: Optional[int] = None) -> int:
    if workers is None:
        workers = spec.workers
    if workers is None:
        workers = int(os.getenv("DICPR_WORKERS", "1"))
    return max(1, workers)


def resolve_output_dir(spec: ExperimentSpec, out_dir: Optional[str] = None) -> Path:
    base = out_dir or spec.output_dir or os.getenv("DICPR_OUTPUT_DIR", "output")
    return Path(base) / re.sub(r"[^\w-]+", "_", spec.name)


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if np.isnan(value) else repr(value)
    return "" if value is None else str(value)


def write_summary(spec: ExperimentSpec, cells: List[Cell], results: Dict[str, Dict], out_dir: Path) -> List[Path]:
    """
    summary.csv: one row per cell. summary.md: per (slide distance, delta), an
    SNR table (images x algorithms, mean over seeds) and a sparsity table
    with S(alpha), S(Re alpha) and S(Im alpha).
    """
    csv_path = out_dir / "summary.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for cell in cells:
            info = results.get(cell.cell_id, {})
            outcome = info.get("result", {})
            writer.writerow([_fmt(v) for v in (
                cell.cell_id, cell.image, spec.pattern, cell.delta, cell.algorithm, cell.slide_dist, cell.seed,
                outcome.get("eta"), outcome.get("tau"), outcome.get("snr_db"), outcome.get("sparsity"),
                outcome.get("sparsity_re"), outcome.get("sparsity_im"), outcome.get("iterations"),
                info.get("status", "failed"),
            )])

    def mean_of(group: List[Cell], key: str) -> str:
        values = [results.get(c.cell_id, {}).get("result", {}).get(key) for c in group]
        values = [v for v in values if isinstance(v, float) and not np.isnan(v)]
        return f"{np.mean(values):.2f}" if values else "n/a"

    lines = [f"# {spec.name}: {spec.pattern.upper()} summary", ""]
    algorithms = [a for a in spec.algorithms]
    groups = sorted({(c.slide_dist or 0, c.delta, c.eta_scale, c.tau_scale) for c in cells})
    for slide, delta, eta_scale, tau_scale in groups:
        heading = f"## delta = {delta:g}"
        if slide:
            heading += f", slide distance = {slide}"
        if eta_scale != 1.0 or tau_scale != 1.0:
            heading += f", eta x{eta_scale:g}, tau x{tau_scale:g}"
        lines += [heading, "", "SNR (dB)", "", "| Image | " + " | ".join(algorithms) + " |",
                  "|---" * (len(algorithms) + 1) + "|"]
        for image in spec.images:
            row = []
            for algorithm in algorithms:
                group = [c for c in cells if c.image == image and c.algorithm == algorithm and c.delta == delta
                         and (c.slide_dist or 0) == slide and c.eta_scale == eta_scale and c.tau_scale == tau_scale]
                row.append(mean_of(group, "snr_db"))
            lines.append(f"| {Cell(image, delta, '', 0).image_tag} | " + " | ".join(row) + " |")
        lines += ["", "Sparsity (%)", "", "| Image | Algorithm | S(alpha) | S(Re alpha) | S(Im alpha) |", "|---|---|---|---|---|"]
        for image in spec.images:
            for algorithm in algorithms:
                if algorithm == "pr":
                    continue
                group = [c for c in cells if c.image == image and c.algorithm == algorithm and c.delta == delta
                         and (c.slide_dist or 0) == slide and c.eta_scale == eta_scale and c.tau_scale == tau_scale]
                lines.append(
                    f"| {Cell(image, delta, '', 0).image_tag} | {algorithm} | {mean_of(group, 'sparsity')} | "
                    f"{mean_of(group, 'sparsity_re')} | {mean_of(group, 'sparsity_im')} |"
                )
        lines.append("")
    md_path = out_dir / "summary.md"
    md_path.write_text("\n".join(lines), encoding="utf-8")
    return [csv_path, md_path]


def run_experiment(
    spec: ExperimentSpec,
    out_dir: Optional[str] = None,
    workers: Optional[int] = None,
    resume: bool = False,
) -> int:
    """
    Run every cell of a spec.

    A failing cell is reported and recorded; the sweep continues.

    Args:
        spec: Validated experiment
        out_dir: Base output directory (default: spec.output_dir, then DICPR_OUTPUT_DIR, then "output")
        workers: Process pool size (default: spec.workers, then DICPR_WORKERS, then 1)
        resume: Skip cells whose recorded outputs still exist

    Returns:
        0 if every cell succeeded, 1 otherwise
    """
    experiment_dir = resolve_output_dir(spec, out_dir)
    experiment_dir.mkdir(parents=True, exist_ok=True)
    cells = sweep_cells(spec)
    workers = resolve_workers(spec, workers)

    print("=" * 70)
    print(f"EXPERIMENT: {spec.name} ({spec.pattern}, {len(cells)} cells)")
    print("=" * 70)
    print(f"📁 Output: {experiment_dir}")

    config_hash = spec.config_hash()
    state = load_sweep_state(experiment_dir) if resume else None
    if state is not None and state.get("config_hash") != config_hash:
        print("⚠️  Sweep state belongs to a different configuration, starting fresh")
        state = None
    if state is None:
        state = create_initial_state(spec.name, config_hash)
        save_sweep_state(experiment_dir, state)
        print("📝 Created new sweep state file")
    else:
        print(f"📝 Loaded sweep state: {state.get('total_succeeded', 0)} cells done")

    pending = []
    skipped = 0
    for cell in cells:
        if resume and is_cell_done(cell.cell_id, state, experiment_dir):
            print(f"⏭️  Skipping {cell.cell_id} (outputs present)")
            skipped += 1
        else:
            pending.append(cell)

    succeeded = failed = 0

    def record(cell: Cell, status: str, outcome: Dict) -> None:
        nonlocal succeeded, failed
        if status == "success":
            succeeded += 1
            print(f"✅ {cell.cell_id}: SNR {outcome['snr_db']:.2f} dB")
            update_sweep_state(state, cell.cell_id, "success", outcome["files"], outcome)
        else:
            failed += 1
            print(f"❌ {cell.cell_id} failed: {outcome['error']}")
            update_sweep_state(state, cell.cell_id, "failed", error=outcome["error"])
        save_sweep_state(experiment_dir, state)

    if workers > 1 and len(pending) > 1:
        print(f"⚙️  Running {len(pending)} cells on {workers} workers")
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_cell_job, spec, cell, experiment_dir): cell for cell in pending}
            for future in as_completed(futures):
                record(futures[future], *future.result())
    else:
        for i, cell in enumerate(pending, start=1):
            print(f"\n{'=' * 70}")
            print(f"🔬 Cell {i}/{len(pending)}: {cell.cell_id}")
            print("=" * 70)
            record(cell, *_cell_job(spec, cell, experiment_dir))

    summary_files = write_summary(spec, cells, state["cells"], experiment_dir)
    manifest = write_manifest(experiment_dir)

    print("\n" + "=" * 70)
    print("EXPERIMENT SUMMARY")
    print("=" * 70)
    print(f"Total cells: {len(cells)}")
    print(f"✅ Successful: {succeeded}")
    print(f"⏭️  Skipped: {skipped}")
    print(f"❌ Failed: {failed}")
    for path in summary_files:
        print(f"📝 {path}")
    print(f"📁 Manifest: {manifest}")
    print("=" * 70)
    return 1 if failed else 0


def run_simulation(spec: ExperimentSpec, out_dir: Optional[str] = None) -> int:
    """
    Write measurements only: for each image/slide/delta/seed, the counts
    (reshaped to 2-D), the scaled ground truth and the masks or illumination
    as CPRM containers, plus the manifest.

    Returns:
        0 on success, 1 if any simulation failed
    """
    experiment_dir = resolve_output_dir(spec, out_dir) / "measurements"
    experiment_dir.mkdir(parents=True, exist_ok=True)
    print("=" * 70)
    print(f"SIMULATION: {spec.name} ({spec.pattern})")
    print("=" * 70)

    seen = set()
    failed = 0
    for cell in sweep_cells(spec):
        key = (cell.image, cell.slide_dist, cell.delta, cell.seed)
        if key in seen:
            continue
        seen.add(key)
        stem = Cell(cell.image, cell.delta, "data", cell.seed, cell.slide_dist).cell_id
        try:
            truth, A, f = simulate_measurements(spec, cell)
            rows = int(np.prod(A.data_shape[:-1]))
            write_container(experiment_dir / f"{stem}_counts.cprm", f.data.reshape(rows, A.data_shape[-1]))
            write_container(experiment_dir / f"{stem}_truth.cprm", cell.delta * truth.as_array())
            if isinstance(A, CdpOperator):
                masks = A.masks
                write_container(experiment_dir / f"{stem}_masks.cprm", masks.reshape(-1, masks.shape[-1]))
            else:
                write_container(experiment_dir / f"{stem}_illumination.cprm", A.illumination)
            print(f"✅ {stem}: {A.m} counts")
        except Exception as e:
            failed += 1
            print(f"❌ {stem} failed: {e}")

    manifest = write_manifest(experiment_dir)
    print(f"📁 Manifest: {manifest}")
    return 1 if failed else 0
