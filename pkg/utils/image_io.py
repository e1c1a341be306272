"""
Image input/output: PGM (P2/P5, 8/16-bit), paired re+im PGMs, CPRM containers,
synthetic phantoms, reconstruction and dictionary montage export.
"""
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from core.model import ComplexImage, Dictionary, unwrap
from utils.containers import DICTIONARY_MAGIC, MASK_MAGIC, read_container, write_container
from utils.phantoms import make_phantom


PGM_MAGICS = (b"P2", b"P5")
_WHITESPACE = b" \t\r\n\v\f"


def _header_tokens(data: bytes, count: int, path: str) -> Tuple[List[bytes], int]:
    """Read `count` whitespace-separated header tokens, skipping '#' comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos] in _WHITESPACE:
            pos += 1
        if pos >= len(data):
            raise ValueError(f"{path}: truncated PGM header at byte offset {pos}")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in _WHITESPACE and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """
    Read an 8- or 16-bit grayscale PGM and scale it to [0, 1] by maxval.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValueError: On malformed headers or pixel data, with the byte offset
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Image not found: {path}")
    data = path.read_bytes()
    tokens, pos = _header_tokens(data, 4, str(path))
    magic = tokens[0]
    if magic not in PGM_MAGICS:
        raise ValueError(f"{path}: bad magic {magic!r} at byte offset 0, expected P2 or P5")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: non-integer width/height/maxval in header ending at byte offset {pos}")
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ValueError(f"{path}: invalid header values {width}x{height} maxval={maxval}")

    count = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates header and raster
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        needed = count * dtype.itemsize
        if len(data) - pos < needed:
            raise ValueError(
                f"{path}: raster truncated at byte offset {len(data)}; expected {needed} bytes from offset {pos}"
            )
        pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.int64)
    else:
        fields = data[pos:].split()
        if len(fields) < count:
            raise ValueError(f"{path}: expected {count} samples after byte offset {pos}, found {len(fields)}")
        try:
            pixels = np.array([int(v) for v in fields[:count]], dtype=np.int64)
        except ValueError:
            raise ValueError(f"{path}: non-integer sample in ASCII raster after byte offset {pos}")
    if np.any(pixels > maxval):
        raise ValueError(f"{path}: sample exceeds maxval {maxval}")
    return pixels.reshape(height, width).astype(float) / maxval


def write_pgm(path: Union[str, Path], image: np.ndarray, maxval: int = 255, binary: bool = True) -> str:
    """
    Write values in [0, 1] (clipped) as a PGM with the given maxval.

    Returns:
        Path to the written file
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {image.shape}")
    if not 0 < maxval < 65536:
        raise ValueError(f"maxval must be in 1..65535, got {maxval}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.rint(np.clip(image, 0.0, 1.0) * maxval).astype(np.int64)
    height, width = image.shape
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        payload = f"P5\n{width} {height}\n{maxval}\n".encode("ascii") + pixels.astype(dtype).tobytes()
    else:
        rows = "\n".join(" ".join(str(v) for v in row) for row in pixels)
        payload = f"P2\n{width} {height}\n{maxval}\n{rows}\n".encode("ascii")
    path.write_bytes(payload)
    return str(path)


def _rescale(values: np.ndarray) -> np.ndarray:
    low, high = float(values.min()), float(values.max())
    if high == low:
        return np.zeros_like(values)
    return (values - low) / (high - low)


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    """Central size x size window."""
    n1, n2 = image.shape
    if size > min(n1, n2):
        raise ValueError(f"Crop size {size} exceeds image shape {image.shape}")
    top, left = (n1 - size) // 2, (n2 - size) // 2
    return image[top:top + size, left:left + size]


def load_image(path: Union[str, Path], crop: Optional[int] = None) -> ComplexImage:
    """
    Load an image as a ComplexImage.

    Accepted forms:
        "x.pgm"                   real image, scaled to [0, 1]
        "re.pgm+im.pgm"           real and imaginary parts from two PGMs
        "x.cprm"                  complex 2-D CPRM container, bit-exact
        "phantom:<name>[:size]"   synthetic image (see utils.phantoms)

    Args:
        path: One of the forms above
        crop: Optional central crop side

    Raises:
        FileNotFoundError: If a file doesn't exist
        ValueError: On parse failures or mismatched paired images
    """
    spec = str(path)
    if spec.startswith("phantom:"):
        parts = spec.split(":")
        size = int(parts[2]) if len(parts) > 2 else 128
        array = make_phantom(parts[1], size)
    elif "+" in spec and not Path(spec).exists():
        re_path, im_path = spec.split("+", 1)
        real, imag = read_pgm(re_path), read_pgm(im_path)
        if real.shape != imag.shape:
            raise ValueError(f"Paired images differ in shape: {real.shape} vs {imag.shape}")
        array = real + 1j * imag
    elif spec.lower().endswith(".cprm"):
        array = read_container(spec, MASK_MAGIC)
        if array.ndim != 2:
            raise ValueError(f"{spec}: image container must be 2-D, got shape {array.shape}")
    else:
        array = read_pgm(spec)
    if crop is not None:
        array = center_crop(array, crop)
    return ComplexImage.from_array(np.asarray(array, dtype=complex))


def save_reconstruction(out_dir: Union[str, Path], stem: str, u) -> List[str]:
    """
    Write |u| (scaled by its max), Re u and Im u (each min-max rescaled) as
    8-bit PGMs plus the exact complex image as CPRM.

    Returns:
        Written paths
    """
    u = np.asarray(unwrap(u), dtype=complex)
    out_dir = Path(out_dir)
    magnitude = np.abs(u)
    peak = magnitude.max()
    written = [
        write_pgm(out_dir / f"{stem}_abs.pgm", magnitude / peak if peak > 0 else magnitude),
        write_pgm(out_dir / f"{stem}_re.pgm", _rescale(u.real)),
        write_pgm(out_dir / f"{stem}_im.pgm", _rescale(u.imag)),
        write_container(out_dir / f"{stem}.cprm", u, MASK_MAGIC),
    ]
    return written


def dictionary_montage(D, border: int = 1) -> np.ndarray:
    """
    Tile the real parts of the atoms, each min-max rescaled, in a square grid
    separated by `border` pixels of white.
    """
    matrix = np.asarray(unwrap(D))
    side = D.patch_side if isinstance(D, Dictionary) else int(round(np.sqrt(matrix.shape[0])))
    count = matrix.shape[1]
    cols = int(np.ceil(np.sqrt(count)))
    rows = int(np.ceil(count / cols))
    montage = np.ones((rows * (side + border) + border, cols * (side + border) + border))
    for j in range(count):
        row, col = divmod(j, cols)
        top = border + row * (side + border)
        left = border + col * (side + border)
        montage[top:top + side, left:left + side] = _rescale(matrix[:, j].real.reshape(side, side))
    return montage


def save_dictionary(out_dir: Union[str, Path], stem: str, D) -> List[str]:
    """Write the atom montage as a plain (P2) PGM and the full matrix as CPRD."""
    out_dir = Path(out_dir)
    return [
        write_pgm(out_dir / f"{stem}_atoms.pgm", dictionary_montage(D), binary=False),
        write_container(out_dir / f"{stem}.cprd", np.asarray(unwrap(D)), DICTIONARY_MAGIC),
    ]
