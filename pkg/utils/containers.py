"""
Little-endian binary container for complex 2-D arrays.

Layout: 4-byte magic, u32 rows, u32 cols, then rows*cols interleaved
float64 (re, im) pairs in row-major order. "CPRM" holds masks, illuminations
and images; "CPRD" holds dictionaries.
"""
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np


MASK_MAGIC = b"CPRM"
DICTIONARY_MAGIC = b"CPRD"
KNOWN_MAGICS = (MASK_MAGIC, DICTIONARY_MAGIC)

HEADER = struct.Struct("<4sII")


def write_container(path: Union[str, Path], array: np.ndarray, magic: bytes = MASK_MAGIC) -> str:
    """
    Write a 2-D complex array (atomic: temp file then rename).

    Returns:
        Path of the written file
    """
    if magic not in KNOWN_MAGICS:
        raise ValueError(f"Unknown container magic {magic!r}")
    array = np.asarray(array, dtype=complex)
    if array.ndim != 2:
        raise ValueError(f"Containers hold 2-D arrays, got shape {array.shape}")
    rows, cols = array.shape
    payload = np.empty((rows, cols, 2), dtype="<f8")
    payload[..., 0] = array.real
    payload[..., 1] = array.imag

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = path.with_name(path.name + ".tmp")
    try:
        with open(temp_file, "wb") as f:
            f.write(HEADER.pack(magic, rows, cols))
            f.write(payload.tobytes())
        temp_file.replace(path)
    except IOError:
        if temp_file.exists():
            temp_file.unlink()
        raise
    return str(path)


def read_container(path: Union[str, Path], magic: Optional[bytes] = None) -> np.ndarray:
    """
    Read a container written by write_container.

    Args:
        path: Container file
        magic: Required magic; None accepts any known magic

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: On a bad header or truncated payload (message carries the byte offset)
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Container not found: {path}")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise ValueError(f"{path}: truncated header at byte offset {len(raw)} (need {HEADER.size} bytes)")
    found, rows, cols = HEADER.unpack_from(raw, 0)
    if found not in KNOWN_MAGICS:
        raise ValueError(f"{path}: bad magic {found!r} at byte offset 0")
    if magic is not None and found != magic:
        raise ValueError(f"{path}: expected magic {magic!r}, found {found!r} at byte offset 0")

    expected = HEADER.size + rows * cols * 16
    if len(raw) != expected:
        raise ValueError(
            f"{path}: payload size mismatch at byte offset {min(len(raw), expected)} "
            f"(header declares {rows}x{cols}, file has {len(raw)} bytes, expected {expected})"
        )
    payload = np.frombuffer(raw, dtype="<f8", offset=HEADER.size).reshape(rows, cols, 2)
    return payload[..., 0] + 1j * payload[..., 1]
