"""
Sweep state for resuming experiment runs, and the run manifest of emitted files.
"""
import hashlib
import json
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple


STATE_FILE = ".sweep_state.json"
MANIFEST_FILE = "manifest.json"
CELL_STATUSES = ("success", "failed", "skipped")


def load_sweep_state(out_dir: Path) -> Optional[Dict]:
    """
    Load sweep state from JSON file.

    Args:
        out_dir: Experiment output directory

    Returns:
        State dictionary or None if the file doesn't exist or is unreadable
    """
    state_file = Path(out_dir) / STATE_FILE
    if not state_file.exists():
        return None

    try:
        with open(state_file, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (json.JSONDecodeError, IOError) as e:
        print(f"⚠️  Warning: Failed to load sweep state: {e}")
        return None


def _atomic_json(path: Path, payload: Dict) -> bool:
    temp_file = path.with_name(f"{path.name}.tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(temp_file, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2, ensure_ascii=False, sort_keys=True)
        temp_file.replace(path)
        return True
    except IOError as e:
        print(f"⚠️  Warning: Failed to write {path.name}: {e}")
        if temp_file.exists():
            temp_file.unlink()
        return False


def save_sweep_state(out_dir: Path, state: Dict) -> bool:
    """Save sweep state (atomic write). Returns True on success."""
    return _atomic_json(Path(out_dir) / STATE_FILE, state)


def create_initial_state(experiment_name: str, config_hash: str) -> Dict:
    """
    Create initial sweep state structure.

    Args:
        experiment_name: Name of the experiment or preset
        config_hash: sha256 of the resolved configuration; a resumed run must match it
    """
    return {
        "experiment": experiment_name,
        "config_hash": config_hash,
        "last_updated": None,
        "cells": {},
        "total_succeeded": 0,
        "total_skipped": 0,
        "total_failed": 0,
    }


def cell_id(image_tag: str, delta: float, algorithm: str, seed: int) -> str:
    """Stable identifier of one sweep cell, also its output subdirectory name."""
    return f"{image_tag}_d{delta:g}_{algorithm}_s{seed}"


def is_cell_done(cell: str, state: Optional[Dict], out_dir: Path) -> bool:
    """
    A cell counts as done when the state records success and all of its
    recorded files still exist.
    """
    if not state or cell not in state.get("cells", {}):
        return False
    info = state["cells"][cell]
    if info.get("status") != "success":
        return False
    return all((Path(out_dir) / name).exists() for name in info.get("files", []))


def update_sweep_state(state: Dict, cell: str, status: str, files: Iterable[str] = (), result: Optional[Dict] = None, error: Optional[str] = None) -> Dict:
    """
    Record the outcome of one cell.

    Args:
        state: Current state dictionary
        cell: Cell identifier
        status: "success", "failed" or "skipped"
        files: Output paths relative to the experiment directory
        result: Summary numbers (snr, sparsity, ...) reused on resume
        error: Failure message
    """
    if status not in CELL_STATUSES:
        raise ValueError(f"status must be one of {CELL_STATUSES}, got {status!r}")
    state["cells"][cell] = {
        "status": status,
        "files": sorted(files),
        "result": result or {},
        "error": error,
        "processed_at": datetime.now().isoformat(),
    }
    state["last_updated"] = datetime.now().isoformat()
    key = {"success": "total_succeeded", "failed": "total_failed", "skipped": "total_skipped"}[status]
    state[key] = state.get(key, 0) + 1
    return state


def sha256_file(path: Path, chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, exclude: Tuple[str, ...] = (STATE_FILE, MANIFEST_FILE)) -> Path:
    """
    List every file under out_dir with its size and sha256 in manifest.json.
    Paths are relative and sorted.
    """
    out_dir = Path(out_dir)
    entries = {}
    for path in sorted(p for p in out_dir.rglob("*") if p.is_file()):
        rel = path.relative_to(out_dir).as_posix()
        if rel in exclude or rel.endswith(".tmp"):
            continue
        entries[rel] = {"sha256": sha256_file(path), "bytes": path.stat().st_size}
    manifest_path = out_dir / MANIFEST_FILE
    if not _atomic_json(manifest_path, {"files": entries}):
        raise IOError(f"Could not write {manifest_path}")
    return manifest_path


def verify_manifest(out_dir: Path) -> Dict[str, str]:
    """
    Re-hash files listed in the manifest.

    Returns:
        Mapping of relative path -> problem ("missing" or "hash mismatch"); empty when all match
    """
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_FILE
    if not manifest_path.exists():
        raise FileNotFoundError(f"Manifest not found: {manifest_path}")
    with open(manifest_path, 'r', encoding='utf-8') as f:
        manifest = json.load(f)
    problems = {}
    for rel, info in manifest.get("files", {}).items():
        path = out_dir / rel
        if not path.exists():
            problems[rel] = "missing"
        elif sha256_file(path) != info["sha256"]:
            problems[rel] = "hash mismatch"
    return problems
