"""
Patch extraction R, its adjoint (overlap-add) and the coverage weights W.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class PatchConfig:
    """Square patches placed on the image interior (no wrap)."""
    patch_side: int = 8
    stride: int = 1

    def __post_init__(self):
        if self.patch_side < 1:
            raise ValueError(f"patch_side must be positive, got {self.patch_side}")
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")

    @property
    def l(self) -> int:
        return self.patch_side * self.patch_side

    def grid(self, shape: Tuple[int, int]) -> Tuple[int, int]:
        """Number of placements along each axis."""
        n1, n2 = shape
        p = self.patch_side
        if n1 < p or n2 < p:
            raise ValueError(f"Image {n1}x{n2} is smaller than the {p}x{p} patch")
        return (n1 - p) // self.stride + 1, (n2 - p) // self.stride + 1

    def num_patches(self, shape: Tuple[int, int]) -> int:
        rows, cols = self.grid(shape)
        return rows * cols


def extract(u: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """
    Build the l x d patch matrix R(u).

    Column t is the row-major vectorized patch whose top-left corner is the
    t-th placement in row-major order.

    Raises:
        ValueError: If the image is smaller than one patch
    """
    u = np.asarray(u)
    if u.ndim != 2:
        raise ValueError(f"Expected a 2-D image, got {u.ndim} dimensions")
    cfg.grid(u.shape)
    p, s = cfg.patch_side, cfg.stride
    windows = sliding_window_view(u, (p, p))[::s, ::s]
    return np.ascontiguousarray(windows.reshape(-1, p * p).T)


def adjoint_accumulate(P: np.ndarray, cfg: PatchConfig, shape: Tuple[int, int]) -> np.ndarray:
    """
    Scatter patch columns back onto the image and sum overlaps: sum_t R_t^T P(t).

    Raises:
        ValueError: If P does not have l rows and one column per placement
    """
    P = np.asarray(P)
    rows, cols = cfg.grid(shape)
    p, s = cfg.patch_side, cfg.stride
    if P.shape != (cfg.l, rows * cols):
        raise ValueError(
            f"Patch matrix shape {P.shape} does not match {(cfg.l, rows * cols)} for image {shape}"
        )
    blocks = P.T.reshape(rows, cols, p, p)
    out = np.zeros(shape, dtype=np.result_type(P.dtype, float))
    row_span = s * (rows - 1) + 1
    col_span = s * (cols - 1) + 1
    for a in range(p):
        for b in range(p):
            out[a:a + row_span:s, b:b + col_span:s] += blocks[:, :, a, b]
    return out


def coverage_weights(cfg: PatchConfig, shape: Tuple[int, int]) -> np.ndarray:
    """Diagonal of W = sum_t R_t^T R_t, i.e. how many patches cover each pixel."""
    rows, cols = cfg.grid(shape)
    ones = np.ones((cfg.l, rows * cols))
    return adjoint_accumulate(ones, cfg, shape)
