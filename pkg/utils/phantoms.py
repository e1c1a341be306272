"""
Deterministic synthetic test images.

    disks        complex: disks of varying amplitude, each with its own linear phase ramp
    disks_equal  complex with identical real and imaginary parts (a real disks image times (1+i)/sqrt(2))
    smooth       real, piecewise smooth: shaded background, ellipse, rectangle and a soft ring
"""
import numpy as np


PHANTOM_NAMES = ("disks", "disks_equal", "smooth")

# (center y, center x, radius) as fractions of the side, amplitude, phase slope
_DISKS = (
    (0.30, 0.30, 0.16, 0.90, 1.5),
    (0.28, 0.72, 0.12, 0.60, -2.0),
    (0.68, 0.35, 0.14, 0.75, 2.5),
    (0.70, 0.70, 0.18, 1.00, -1.0),
    (0.50, 0.52, 0.07, 0.45, 3.0),
)


def _grid(size: int):
    coords = (np.arange(size) + 0.5) / size
    return coords[:, None], coords[None, :]


def _disk_amplitude(size: int) -> np.ndarray:
    y, x = _grid(size)
    image = np.zeros((size, size))
    for cy, cx, radius, amplitude, _ in _DISKS:
        image[(y - cy) ** 2 + (x - cx) ** 2 <= radius ** 2] = amplitude
    return image


def disks_phantom(size: int = 128) -> np.ndarray:
    y, x = _grid(size)
    image = np.zeros((size, size), dtype=complex)
    for cy, cx, radius, amplitude, slope in _DISKS:
        inside = (y - cy) ** 2 + (x - cx) ** 2 <= radius ** 2
        phase = slope * np.pi * ((x - cx) + 0.5 * (y - cy)) / radius
        image = np.where(inside, amplitude * np.exp(1j * phase), image)
    return image


def disks_equal_phantom(size: int = 128) -> np.ndarray:
    return _disk_amplitude(size) * (1 + 1j) / np.sqrt(2)


def smooth_phantom(size: int = 128) -> np.ndarray:
    y, x = _grid(size)
    image = 0.25 + 0.2 * x + 0.1 * np.sin(2 * np.pi * y)
    image = np.where(((y - 0.35) / 0.22) ** 2 + ((x - 0.4) / 0.3) ** 2 <= 1.0, 0.8 - 0.3 * y, image)
    image = np.where((np.abs(y - 0.72) <= 0.1) & (np.abs(x - 0.7) <= 0.18), 0.55 + 0.3 * x, image)
    ring = np.sqrt((y - 0.7) ** 2 + (x - 0.25) ** 2)
    image = image + 0.15 * np.exp(-((ring - 0.12) / 0.025) ** 2)
    return np.clip(image, 0.0, 1.0)


def make_phantom(name: str, size: int = 128) -> np.ndarray:
    """
    Build a named phantom.

    Raises:
        ValueError: For unknown names or sizes below 16
    """
    if size < 16:
        raise ValueError(f"Phantom size must be at least 16, got {size}")
    builders = {"disks": disks_phantom, "disks_equal": disks_equal_phantom, "smooth": smooth_phantom}
    if name not in builders:
        raise ValueError(f"Unknown phantom {name!r}; expected one of {PHANTOM_NAMES}")
    return np.asarray(builders[name](size), dtype=complex)
