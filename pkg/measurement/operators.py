"""
Measurement operators A (coded diffraction patterns, ptychography, dense
matrices), their adjoints and normal diagonals, and Poisson data synthesis.
"""
import abc
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import scipy.fft

from core.model import MeasurementVector
from utils.containers import MASK_MAGIC, read_container


FFT_NORMALIZATIONS = ("unitary", "unnormalized")

_S2 = np.sqrt(2.0) / 2.0
_S3 = np.sqrt(3.0)
OCTANARY_ALPHABET = np.array([_S2, -_S2, 1j * _S2, -1j * _S2, _S3, -_S3, 1j * _S3, -1j * _S3])

ILLUMINATION_KINDS = ("zoneplate_synthetic", "from_file")
# Synthetic zone plate: support radius as a fraction of the frame side, and
# lambda_f as a multiple of that radius (keeps the rim phase slope at pi/2 per pixel).
ZONEPLATE_RADIUS_FRACTION = 0.45
ZONEPLATE_FOCAL_FACTOR = 4.0


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; identical streams on every platform."""
    return np.random.Generator(np.random.Philox(int(seed)))


class MeasurementOperator(abc.ABC):
    """Linear map A: C^n -> C^m acting on 2-D images."""

    has_diagonal_normal = True

    def __init__(self, shape: Tuple[int, int]):
        self.shape = (int(shape[0]), int(shape[1]))

    @property
    def n(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    @abc.abstractmethod
    def data_shape(self) -> Tuple[int, ...]:
        """Shape of forward() output; m = prod(data_shape)."""

    @property
    def m(self) -> int:
        return int(np.prod(self.data_shape))

    def forward(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=complex)
        if u.shape != self.shape:
            raise ValueError(f"Image shape {u.shape} does not match operator shape {self.shape}")
        return self._forward(u)

    def adjoint(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        if z.size != self.m:
            raise ValueError(f"Adjoint input has {z.size} entries, operator m = {self.m}")
        return self._adjoint(z.reshape(self.data_shape))

    @abc.abstractmethod
    def normal_diag(self) -> np.ndarray:
        """Diagonal of A*A as a real image."""

    @abc.abstractmethod
    def _forward(self, u: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def _adjoint(self, z: np.ndarray) -> np.ndarray:
        ...


def _block_scale(normalization: str, block_size: int) -> float:
    if normalization not in FFT_NORMALIZATIONS:
        raise ValueError(f"fft_normalization must be one of {FFT_NORMALIZATIONS}, got {normalization!r}")
    return 1.0 if normalization == "unitary" else float(np.sqrt(block_size))


class CdpOperator(MeasurementOperator):
    """
    Coded diffraction patterns: A u = [F(I_0 o u); ...; F(I_{K-1} o u)].

    With fft_normalization="unitary", F is the unitary 2-D DFT and
    A*A = sum_k |I_k|^2. "unnormalized" uses the plain DFT sum, which scales
    A*A by n.
    """

    def __init__(self, masks: np.ndarray, fft_normalization: str = "unitary"):
        masks = np.array(masks, dtype=complex)
        if masks.ndim == 2:
            masks = masks[np.newaxis]
        if masks.ndim != 3 or masks.shape[0] < 1:
            raise ValueError(f"Masks must have shape (K, n1, n2) with K >= 1, got {masks.shape}")
        super().__init__(masks.shape[1:])
        self.masks = masks
        self.masks.flags.writeable = False
        self.fft_normalization = fft_normalization
        self._scale = _block_scale(fft_normalization, self.n)

    @property
    def num_masks(self) -> int:
        return self.masks.shape[0]

    @property
    def data_shape(self) -> Tuple[int, ...]:
        return self.masks.shape

    def _forward(self, u):
        return self._scale * scipy.fft.fft2(self.masks * u, norm="ortho")

    def _adjoint(self, z):
        back = self._scale * scipy.fft.ifft2(z, norm="ortho")
        return np.sum(np.conj(self.masks) * back, axis=0)

    def normal_diag(self) -> np.ndarray:
        return self._scale ** 2 * np.sum(np.abs(self.masks) ** 2, axis=0)


class PtychoOperator(MeasurementOperator):
    """
    Ptychography: each frame is the unitary 2-D DFT of the illumination times
    a frame_side x frame_side window of the image, windows translated by
    slide_dist with periodic wrap. There are (n1 // slide_dist) x
    (n2 // slide_dist) frames.
    """

    def __init__(
        self,
        illumination: np.ndarray,
        shape: Tuple[int, int],
        slide_dist: int,
        fft_normalization: str = "unitary",
    ):
        super().__init__(shape)
        illumination = np.array(illumination, dtype=complex)
        if illumination.ndim != 2 or illumination.shape[0] != illumination.shape[1]:
            raise ValueError(f"Illumination must be a square frame, got shape {illumination.shape}")
        frame_side = illumination.shape[0]
        if frame_side > min(self.shape):
            raise ValueError(f"Frame side {frame_side} exceeds image shape {self.shape}")
        if slide_dist < 1:
            raise ValueError(f"slide_dist must be positive, got {slide_dist}")
        self.illumination = illumination
        self.illumination.flags.writeable = False
        self.frame_side = frame_side
        self.slide_dist = int(slide_dist)
        self.fft_normalization = fft_normalization
        self._scale = _block_scale(fft_normalization, frame_side * frame_side)

        n1, n2 = self.shape
        self.frame_origins: List[Tuple[int, int]] = [
            (oy, ox)
            for oy in range(0, (n1 // self.slide_dist) * self.slide_dist, self.slide_dist)
            for ox in range(0, (n2 // self.slide_dist) * self.slide_dist, self.slide_dist)
        ]
        offsets = np.arange(frame_side)
        origins = np.array(self.frame_origins)
        rows = (origins[:, 0, None] + offsets[None, :]) % n1
        cols = (origins[:, 1, None] + offsets[None, :]) % n2
        # flat pixel index of frame f, position (a, b)
        self._index = rows[:, :, None] * n2 + cols[:, None, :]

    @property
    def num_frames(self) -> int:
        return len(self.frame_origins)

    @property
    def data_shape(self) -> Tuple[int, ...]:
        return (self.num_frames, self.frame_side, self.frame_side)

    def _forward(self, u):
        frames = u.ravel()[self._index]
        return self._scale * scipy.fft.fft2(self.illumination * frames, norm="ortho")

    def _adjoint(self, z):
        back = self._scale * np.conj(self.illumination) * scipy.fft.ifft2(z, norm="ortho")
        flat = self._index.ravel()
        real = np.bincount(flat, weights=back.real.ravel(), minlength=self.n)
        imag = np.bincount(flat, weights=back.imag.ravel(), minlength=self.n)
        return (real + 1j * imag).reshape(self.shape)

    def normal_diag(self) -> np.ndarray:
        power = np.broadcast_to(np.abs(self.illumination) ** 2, self.data_shape)
        diag = np.bincount(self._index.ravel(), weights=power.ravel(), minlength=self.n)
        return self._scale ** 2 * diag.reshape(self.shape)


class MatrixOperator(MeasurementOperator):
    """Dense general A (m x n); A*A is not diagonal, so u-steps go through CG."""

    has_diagonal_normal = False

    def __init__(self, matrix: np.ndarray, shape: Tuple[int, int]):
        super().__init__(shape)
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.ndim != 2 or matrix.shape[1] != self.n:
            raise ValueError(f"Matrix must have {self.n} columns, got shape {matrix.shape}")
        self.matrix = matrix

    @property
    def data_shape(self) -> Tuple[int, ...]:
        return (self.matrix.shape[0],)

    def _forward(self, u):
        return self.matrix @ u.ravel()

    def _adjoint(self, z):
        return (self.matrix.conj().T @ z.ravel()).reshape(self.shape)

    def normal_diag(self) -> np.ndarray:
        return np.sum(np.abs(self.matrix) ** 2, axis=0).reshape(self.shape)


def generate_octanary_masks(shape: Tuple[int, int], K: int, seed: int) -> np.ndarray:
    """
    Draw K masks with i.i.d. uniform entries from
    {+-sqrt(2)/2, +-sqrt(2)i/2, +-sqrt(3), +-sqrt(3)i}.

    Returns:
        Complex array of shape (K, n1, n2)
    """
    if K < 1:
        raise ValueError(f"Need at least one mask, got K={K}")
    symbols = make_rng(seed).integers(0, OCTANARY_ALPHABET.size, size=(K,) + tuple(shape))
    return OCTANARY_ALPHABET[symbols]


def generate_illumination(
    frame_side: int,
    kind: str = "zoneplate_synthetic",
    path: Optional[Union[str, Path]] = None,
) -> np.ndarray:
    """
    Build or load the ptychographic illumination frame.

    zoneplate_synthetic: exp(i*pi*rho^2/lambda_f) on the disk rho <= R centred
    in the frame, zero outside, R = 0.45*frame_side, lambda_f = 4R (pixel
    units), max |omega| = 1.
    from_file: CPRM container holding a frame_side x frame_side frame.

    Raises:
        ValueError: If frame_side < 8, kind is unknown, or the file does not parse
        FileNotFoundError: If the illumination file is missing
    """
    if frame_side < 8:
        raise ValueError(f"frame_side must be at least 8, got {frame_side}")
    if kind == "from_file":
        if path is None:
            raise ValueError("kind='from_file' needs a path")
        omega = read_container(path, MASK_MAGIC)
        if omega.shape != (frame_side, frame_side):
            raise ValueError(
                f"{path}: illumination is {omega.shape[0]}x{omega.shape[1]}, expected {frame_side}x{frame_side}"
            )
        return omega
    if kind != "zoneplate_synthetic":
        raise ValueError(f"Unknown illumination kind {kind!r}; expected one of {ILLUMINATION_KINDS}")

    centre = (frame_side - 1) / 2.0
    y, x = np.mgrid[0:frame_side, 0:frame_side]
    rho2 = (y - centre) ** 2 + (x - centre) ** 2
    radius = ZONEPLATE_RADIUS_FRACTION * frame_side
    focal = ZONEPLATE_FOCAL_FACTOR * radius
    omega = np.exp(1j * np.pi * rho2 / focal) * (rho2 <= radius ** 2)
    return omega / np.max(np.abs(omega))


@dataclass(frozen=True)
class NoiseSpec:
    """Peak level delta (data are Poisson(|A(delta*u)|^2)) and RNG seed."""
    peak: float
    rng_seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.peak) and self.peak > 0):
            raise ValueError(f"Peak level must be positive, got {self.peak}")


def sample_poisson(A: MeasurementOperator, u: np.ndarray, noise: NoiseSpec) -> MeasurementVector:
    """
    Draw f(j) ~ Poisson(|A(delta*u)(j)|^2) independently, reproducibly per seed.

    Raises:
        ValueError: If the intensities are not finite
    """
    intensities = np.abs(A.forward(noise.peak * np.asarray(u))) ** 2
    if not np.all(np.isfinite(intensities)):
        raise ValueError("Intensities are not finite; cannot sample Poisson counts")
    counts = make_rng(noise.rng_seed).poisson(intensities.ravel())
    return MeasurementVector(counts.astype(float))
